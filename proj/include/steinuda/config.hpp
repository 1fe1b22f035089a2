#pragma once

// Strict JSON configuration handling. The DOM parser in the bundled JSON
// library silently keeps the last of two duplicate keys and ignores nothing,
// so a config typo would shadow a real setting without a trace; this layer
// adds the two missing checks (duplicate keys via a SAX pre-scan, unknown
// keys via per-object whitelists) and converts TrainConfig to and from the
// resolved-echo shape the command line tool writes next to its results.

#include "steinuda/core.hpp"
#include "steinuda/inference.hpp"
#include "steinuda/kernels.hpp"
#include "steinuda/uda.hpp"

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace steinuda {

namespace detail {

// SAX walker that only records object keys. It builds nothing; the DOM pass
// has already validated syntax, so the only way this can stop early is a
// repeated key inside one object scope.
class DuplicateKeyScan {
 public:
  bool null() { return true; }
  bool boolean(bool) { return true; }
  bool number_integer(std::int64_t) { return true; }
  bool number_unsigned(std::uint64_t) { return true; }
  bool number_float(double, const std::string&) { return true; }
  bool string(std::string&) { return true; }
  bool binary(nlohmann::json::binary_t&) { return true; }
  bool start_object(std::size_t) {
    scopes_.emplace_back();
    return true;
  }
  bool key(std::string& k) {
    if (!scopes_.back().insert(k).second) {
      duplicate_ = k;
      return false;
    }
    return true;
  }
  bool end_object() {
    scopes_.pop_back();
    return true;
  }
  bool start_array(std::size_t) { return true; }
  bool end_array() { return true; }
  bool parse_error(std::size_t, const std::string&, const nlohmann::json::exception&) {
    return false;
  }

  const std::string& duplicate() const { return duplicate_; }

 private:
  std::vector<std::set<std::string>> scopes_;
  std::string duplicate_;
};

}  // namespace detail

inline nlohmann::ordered_json parse_json_strict(const std::string& text,
                                                const std::string& origin) {
  nlohmann::ordered_json parsed;
  try {
    parsed = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("ParseError: " + origin + ": " + e.what());
  }
  detail::DuplicateKeyScan scan;
  if (!nlohmann::json::sax_parse(text, &scan) && !scan.duplicate().empty())
    throw DataError("ParseError: duplicate key '" + scan.duplicate() + "' in " + origin);
  return parsed;
}

inline nlohmann::ordered_json load_json_strict(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("FileError: cannot open '" + path + "' for reading");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_json_strict(buf.str(), path);
}

// Rejects any key outside the whitelist. Callers that accept nested objects
// whitelist the outer key here and validate the inner object themselves.
inline void require_known_keys(const nlohmann::ordered_json& j, const std::string& context,
                               std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw DataError("ParseError: " + context + " must be a JSON object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (item.key() == k) {
        known = true;
        break;
      }
    if (!known) throw DataError("UnknownKey: '" + item.key() + "' in " + context);
  }
}

// Optional-field readers: absent keys leave the default in place, present
// keys must have the right JSON type. Doubles accept integer literals;
// integers do not accept floats, so "epochs": 4.5 fails loudly.
namespace detail {

inline void wrong_type(const std::string& context, const char* key, const char* want) {
  throw DataError("ParseError: field '" + std::string(key) + "' in " + context +
                  " must be " + want);
}

inline void read_field(const nlohmann::ordered_json& j, const std::string& context,
                       const char* key, int& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number_integer() && !it->is_number_unsigned())
    wrong_type(context, key, "an integer");
  out = it->get<int>();
}

inline void read_field(const nlohmann::ordered_json& j, const std::string& context,
                       const char* key, std::uint64_t& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  const bool neg = it->is_number_integer() && it->get<std::int64_t>() < 0;
  if (neg || (!it->is_number_integer() && !it->is_number_unsigned()))
    wrong_type(context, key, "a non-negative integer");
  out = it->get<std::uint64_t>();
}

inline void read_field(const nlohmann::ordered_json& j, const std::string& context,
                       const char* key, double& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number()) wrong_type(context, key, "a number");
  out = it->get<double>();
}

inline void read_field(const nlohmann::ordered_json& j, const std::string& context,
                       const char* key, std::string& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_string()) wrong_type(context, key, "a string");
  out = it->get<std::string>();
}

inline void read_field(const nlohmann::ordered_json& j, const std::string& context,
                       const char* key, bool& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_boolean()) wrong_type(context, key, "a boolean");
  out = it->get<bool>();
}

}  // namespace detail

inline nlohmann::ordered_json kernel_spec_to_json(const KernelSpec& k) {
  nlohmann::ordered_json j;
  j["family"] = kernel_name(k);
  j["bandwidth"] = k.bandwidth;
  return j;
}

inline KernelSpec kernel_spec_from_json(const nlohmann::ordered_json& j,
                                        const std::string& context) {
  require_known_keys(j, context, {"family", "bandwidth"});
  KernelSpec k;
  std::string family = kernel_name(k);
  detail::read_field(j, context, "family", family);
  k.family = kernel_family_from_name(family);
  detail::read_field(j, context, "bandwidth", k.bandwidth);
  return k;
}

inline nlohmann::ordered_json score_fit_to_json(const ScoreFitSpec& s) {
  nlohmann::ordered_json j;
  j["family"] = fit_family_name(s.family);
  j["components"] = s.components;
  j["em_iters"] = s.em_iters;
  j["hidden"] = s.hidden;
  j["latent"] = s.latent;
  j["mc_samples"] = s.mc_samples;
  j["vae_epochs"] = s.vae_epochs;
  j["vae_batch"] = s.vae_batch;
  j["vae_lr"] = s.vae_lr;
  return j;
}

inline ScoreFitSpec score_fit_from_json(const nlohmann::ordered_json& j,
                                        const std::string& context) {
  require_known_keys(j, context,
                     {"family", "components", "em_iters", "hidden", "latent", "mc_samples",
                      "vae_epochs", "vae_batch", "vae_lr"});
  ScoreFitSpec s;
  std::string family = fit_family_name(s.family);
  detail::read_field(j, context, "family", family);
  s.family = fit_family_from_name(family);
  detail::read_field(j, context, "components", s.components);
  detail::read_field(j, context, "em_iters", s.em_iters);
  detail::read_field(j, context, "hidden", s.hidden);
  detail::read_field(j, context, "latent", s.latent);
  detail::read_field(j, context, "mc_samples", s.mc_samples);
  detail::read_field(j, context, "vae_epochs", s.vae_epochs);
  detail::read_field(j, context, "vae_batch", s.vae_batch);
  detail::read_field(j, context, "vae_lr", s.vae_lr);
  return s;
}

// The resolved echo lists every field in declaration order so a reader can
// diff two runs line by line; serializing and re-parsing is a fixpoint.
inline nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["clip_norm"] = c.clip_norm;
  j["lambda_max"] = c.lambda_max;
  j["gamma"] = c.gamma;
  j["warmup_epochs"] = c.warmup_epochs;
  j["target_budget"] = c.target_budget;
  j["seed"] = c.seed;
  j["form"] = transfer_form_name(c.form);
  j["kernel"] = kernel_spec_to_json(c.kernel);
  j["score"] = score_fit_to_json(c.score_fit);
  j["score_lr"] = c.score_lr;
  j["score_update_every"] = c.score_update_every;
  j["cov_shrinkage"] = c.cov_shrinkage;
  j["hidden_dim"] = c.hidden_dim;
  j["feature_dim"] = c.feature_dim;
  j["ascent_steps"] = c.ascent_steps;
  j["critic_hidden"] = c.critic_hidden;
  j["critic_lr"] = c.critic_lr;
  j["critic_momentum"] = c.critic_momentum;
  j["critic_weight_decay"] = c.critic_weight_decay;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::ordered_json& j,
                                          const std::string& context = "train config") {
  require_known_keys(
      j, context,
      {"epochs", "batch_size", "lr", "momentum", "weight_decay", "clip_norm", "lambda_max",
       "gamma", "warmup_epochs", "target_budget", "seed", "form", "kernel", "score",
       "score_lr", "score_update_every", "cov_shrinkage", "hidden_dim", "feature_dim",
       "ascent_steps", "critic_hidden", "critic_lr", "critic_momentum",
       "critic_weight_decay"});
  TrainConfig c;
  detail::read_field(j, context, "epochs", c.epochs);
  detail::read_field(j, context, "batch_size", c.batch_size);
  detail::read_field(j, context, "lr", c.lr);
  detail::read_field(j, context, "momentum", c.momentum);
  detail::read_field(j, context, "weight_decay", c.weight_decay);
  detail::read_field(j, context, "clip_norm", c.clip_norm);
  detail::read_field(j, context, "lambda_max", c.lambda_max);
  detail::read_field(j, context, "gamma", c.gamma);
  detail::read_field(j, context, "warmup_epochs", c.warmup_epochs);
  detail::read_field(j, context, "target_budget", c.target_budget);
  detail::read_field(j, context, "seed", c.seed);
  std::string form = transfer_form_name(c.form);
  detail::read_field(j, context, "form", form);
  c.form = transfer_form_from_name(form);
  if (const auto it = j.find("kernel"); it != j.end())
    c.kernel = kernel_spec_from_json(*it, context + ".kernel");
  if (const auto it = j.find("score"); it != j.end())
    c.score_fit = score_fit_from_json(*it, context + ".score");
  detail::read_field(j, context, "score_lr", c.score_lr);
  detail::read_field(j, context, "score_update_every", c.score_update_every);
  detail::read_field(j, context, "cov_shrinkage", c.cov_shrinkage);
  detail::read_field(j, context, "hidden_dim", c.hidden_dim);
  detail::read_field(j, context, "feature_dim", c.feature_dim);
  detail::read_field(j, context, "ascent_steps", c.ascent_steps);
  detail::read_field(j, context, "critic_hidden", c.critic_hidden);
  detail::read_field(j, context, "critic_lr", c.critic_lr);
  detail::read_field(j, context, "critic_momentum", c.critic_momentum);
  detail::read_field(j, context, "critic_weight_decay", c.critic_weight_decay);
  c.validate();
  return c;
}

inline TrainConfig load_train_config(const std::string& path) {
  return train_config_from_json(load_json_strict(path), path);
}

}  // namespace steinuda
