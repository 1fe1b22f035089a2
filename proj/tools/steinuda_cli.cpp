// Command line front end for the library. The subcommands cover dataset
// generation, discrepancy estimation, the statistical harnesses, and the
// scarce-target domain-adaptation trainer. Every run resolves its parameters
// in three layers (built-in defaults, then a JSON config file, then explicit
// flags), writes the resolved set to config.resolved.json next to
// result.json, and derives all randomness from the one recorded seed, so
// running a subcommand again from its own echo reproduces result.json byte
// for byte. Exit codes: 0 success, 1 usage error, 2 bad data or config,
// 3 numeric failure.

#include "steinuda/config.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace {

using namespace steinuda;
using nlohmann::ordered_json;

// Incomplete or contradictory input that CLI11 cannot catch on its own, for
// example neither --model nor --fit-target given after the config merge.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("FileError: cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw DataError("FileError: write failed for '" + path + "'");
}

std::string ensure_out_dir(const std::string& dir) {
  const std::string target = dir.empty() ? "." : dir;
  std::error_code ec;
  std::filesystem::create_directories(target, ec);
  if (ec)
    throw DataError("FileError: cannot create output directory '" + target +
                    "': " + ec.message());
  return target;
}

void write_artifacts(const std::string& out_dir, const ordered_json& resolved,
                     const ordered_json& result, const std::string& trace = "") {
  const std::string dir = ensure_out_dir(out_dir);
  write_text(dir + "/config.resolved.json", resolved.dump(2) + "\n");
  write_text(dir + "/result.json", result.dump(2) + "\n");
  if (!trace.empty()) write_text(dir + "/trace.csv", trace);
}

// Loads a config file and checks it belongs to the invoked subcommand, so a
// rate echo cannot silently drive a sweep run.
ordered_json load_cfg(const std::string& path, const std::string& subcommand) {
  if (path.empty()) return ordered_json::object();
  ordered_json j = load_json_strict(path);
  if (!j.is_object()) throw DataError("ParseError: " + path + " must be a JSON object");
  std::string declared = subcommand;
  steinuda::detail::read_field(j, path, "subcommand", declared);
  if (declared != subcommand)
    throw DataError("ConfigMismatch: '" + path + "' holds a config for '" + declared +
                    "', but the invoked subcommand is '" + subcommand + "'");
  return j;
}

// Per-field precedence: an explicit flag beats the config file, the config
// file beats the built-in default already sitting in `value`.
template <class T>
void merge_field(const ordered_json& cfg, const std::string& ctx, const char* key,
                 const CLI::Option* opt, T& value) {
  if (opt != nullptr && opt->count() > 0) return;
  steinuda::detail::read_field(cfg, ctx, key, value);
}

void read_grid(const ordered_json& j, const std::string& ctx, const char* key,
               std::vector<int>& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  const std::string what =
      "ParseError: field '" + std::string(key) + "' in " + ctx + " must be an integer array";
  if (!it->is_array()) throw DataError(what);
  std::vector<int> vals;
  for (const auto& v : *it) {
    if (!v.is_number_integer() && !v.is_number_unsigned()) throw DataError(what);
    vals.push_back(v.get<int>());
  }
  out = vals;
}

void merge_grid(const ordered_json& cfg, const std::string& ctx, const char* key,
                const CLI::Option* opt, std::vector<int>& value) {
  if (opt != nullptr && opt->count() > 0) return;
  read_grid(cfg, ctx, key, value);
}

// Randomized subcommands fall back to seed 0 when neither the flag nor the
// config provides one.
std::uint64_t merge_seed(const ordered_json& cfg, const std::string& ctx,
                         const CLI::Option* opt, std::uint64_t flag_value) {
  if (opt != nullptr && opt->count() > 0) return flag_value;
  std::uint64_t seed = 0;
  steinuda::detail::read_field(cfg, ctx, "seed", seed);
  return seed;
}

KernelSpec merge_kernel(const ordered_json& cfg, const std::string& ctx,
                        const CLI::Option* fam_opt, const std::string& fam_flag,
                        const CLI::Option* bw_opt, double bw_flag) {
  KernelSpec k;
  if (const auto it = cfg.find("kernel"); it != cfg.end())
    k = kernel_spec_from_json(*it, ctx + ".kernel");
  if (fam_opt != nullptr && fam_opt->count() > 0) k.family = kernel_family_from_name(fam_flag);
  if (bw_opt != nullptr && bw_opt->count() > 0) k.bandwidth = bw_flag;
  return k;
}

// A bandwidth of 0 requests the median heuristic on the given sample; the
// resolved echo then records the number actually used.
void resolve_bandwidth(KernelSpec& k, const Mat& sample, const std::string& who) {
  if (k.bandwidth < 0.0)
    throw DataError(who + ": bandwidth must be positive (0 requests the median heuristic)");
  if (k.bandwidth == 0.0) k.bandwidth = median_heuristic(sample);
}

ScoreFitSpec merge_score(const ordered_json& cfg, const std::string& ctx,
                         const CLI::Option* fam_opt, const std::string& fam_flag) {
  ScoreFitSpec s;
  if (const auto it = cfg.find("score"); it != cfg.end())
    s = score_fit_from_json(*it, ctx + ".score");
  if (fam_opt != nullptr && fam_opt->count() > 0) s.family = fit_family_from_name(fam_flag);
  return s;
}

std::string score_model_family(const ScoreModel& m) {
  if (std::holds_alternative<GaussianModel>(m)) return "gaussian";
  if (std::holds_alternative<GmmModel>(m)) return "gmm";
  return std::get<VaeModel>(m).variant == VaeModel::ScoreVariant::Corrected ? "vae-corrected"
                                                                            : "vae-paper";
}

// Score model for ksd and the identity diagnostic: either a pre-built model
// file or a fresh fit on a CSV sample, never both.
struct ResolvedScore {
  ScoreModel model;
  std::string family;
  int m_fit = 0;  // rows behind a fresh fit; 0 for a model loaded from disk
};

ResolvedScore resolve_score_model(const std::string& model_path, const std::string& fit_path,
                                  const ScoreFitSpec& spec, RngStream fit_rng) {
  if (model_path.empty() == fit_path.empty())
    throw UsageError("provide exactly one of --model and --fit-target");
  ResolvedScore out;
  if (!model_path.empty()) {
    out.model = score_model_from_json(load_json_strict(model_path));
    out.family = score_model_family(out.model);
  } else {
    const Dataset fit_data = read_dataset_csv(fit_path);
    out.model = spec.fit(fit_data.features, fit_rng);
    out.family = fit_family_name(spec.family);
    out.m_fit = fit_data.n();
  }
  return out;
}

ordered_json rate_fit_json(const RateFit& f) {
  ordered_json j;
  j["sizes"] = f.sizes;
  j["rmse"] = f.rmse;
  j["slope"] = f.slope;
  j["slope_se"] = f.slope_se;
  j["intercept"] = f.intercept;
  return j;
}

// ---------------------------------------------------------------------------
// ksd: one discrepancy number for a sample against a score model.

struct KsdArgs {
  std::string config, out = ".";
  std::string data, model, fit_target;
  std::string statistic = "u", score_family = "gaussian", kernel_family = "rbf";
  double bandwidth = 1.0, reg_lambda = 1e-3;
  std::uint64_t seed = 0;
  CLI::Option *o_data = nullptr, *o_model = nullptr, *o_fit = nullptr, *o_stat = nullptr,
              *o_score = nullptr, *o_kernel = nullptr, *o_bw = nullptr, *o_reg = nullptr,
              *o_seed = nullptr;
};

void run_ksd(KsdArgs& a) {
  const std::string ctx = a.config.empty() ? std::string("ksd config") : a.config;
  const ordered_json cfg = load_cfg(a.config, "ksd");
  require_known_keys(cfg, ctx,
                     {"subcommand", "data", "model", "fit_target", "score", "statistic",
                      "reg_lambda", "kernel", "seed"});
  merge_field(cfg, ctx, "data", a.o_data, a.data);
  merge_field(cfg, ctx, "model", a.o_model, a.model);
  merge_field(cfg, ctx, "fit_target", a.o_fit, a.fit_target);
  merge_field(cfg, ctx, "statistic", a.o_stat, a.statistic);
  merge_field(cfg, ctx, "reg_lambda", a.o_reg, a.reg_lambda);
  const ScoreFitSpec spec = merge_score(cfg, ctx, a.o_score, a.score_family);
  KernelSpec kernel = merge_kernel(cfg, ctx, a.o_kernel, a.kernel_family, a.o_bw, a.bandwidth);
  const std::uint64_t seed = merge_seed(cfg, ctx, a.o_seed, a.seed);
  if (a.data.empty()) throw UsageError("ksd needs --data (or a 'data' config entry)");
  if (a.model.empty() == a.fit_target.empty())
    throw UsageError("provide exactly one of --model and --fit-target");

  const Dataset data = read_dataset_csv(a.data);
  const RngStream master(seed);
  const ResolvedScore score =
      resolve_score_model(a.model, a.fit_target, spec, master.split(2));
  if (score_model_dim(score.model) != data.dim())
    throw DataError("DimMismatch: score model dimension " +
                    std::to_string(score_model_dim(score.model)) + " vs data dimension " +
                    std::to_string(data.dim()));
  resolve_bandwidth(kernel, data.features, "ksd");
  RngStream eval_rng = master.split(1);
  const ScoreEval eval(score.model, &eval_rng);

  ordered_json resolved;
  resolved["subcommand"] = "ksd";
  resolved["data"] = a.data;
  if (!a.model.empty()) resolved["model"] = a.model;
  if (!a.fit_target.empty()) {
    resolved["fit_target"] = a.fit_target;
    resolved["score"] = score_fit_to_json(spec);
  }
  resolved["statistic"] = a.statistic;
  resolved["reg_lambda"] = a.reg_lambda;
  resolved["kernel"] = kernel_spec_to_json(kernel);
  resolved["seed"] = seed;

  ordered_json result;
  result["subcommand"] = "ksd";
  result["statistic"] = a.statistic;
  if (a.statistic == "u") {
    const SteinEstimate est = ksd_u_statistic(kernel, eval, data.features, score.m_fit);
    result["value"] = est.value;
    result["std_error"] = est.std_error;
    result["u_variance"] = est.u_variance;
  } else if (a.statistic == "v") {
    result["value"] = ksd_v_statistic(kernel, eval, data.features);
  } else if (a.statistic == "regularized") {
    result["value"] = regularized_ksd(kernel, eval, data.features, a.reg_lambda);
    result["reg_lambda"] = a.reg_lambda;
  } else {
    throw DataError("ksd: unknown statistic '" + a.statistic +
                    "' (expected u, v or regularized)");
  }
  result["n"] = data.n();
  result["dim"] = data.dim();
  result["kernel"] = kernel_spec_to_json(kernel);
  result["score_family"] = score.family;
  if (score.m_fit > 0) result["m_fit"] = score.m_fit;
  write_artifacts(a.out, resolved, result);
}

// ---------------------------------------------------------------------------
// diag stein-identity: the estimator on the model's own samples should be
// zero up to noise; reports the pooled z-score over replicates.

struct DiagArgs {
  std::string config, out = ".";
  std::string model, fit_target;
  std::string score_family = "gaussian", kernel_family = "rbf";
  double bandwidth = 1.0;
  int n = 5000, seeds = 10;
  std::uint64_t seed = 0;
  CLI::Option *o_model = nullptr, *o_fit = nullptr, *o_score = nullptr, *o_kernel = nullptr,
              *o_bw = nullptr, *o_n = nullptr, *o_seeds = nullptr, *o_seed = nullptr;
};

void run_diag(DiagArgs& a) {
  const std::string ctx = a.config.empty() ? std::string("diag config") : a.config;
  const ordered_json cfg = load_cfg(a.config, "diag stein-identity");
  require_known_keys(
      cfg, ctx, {"subcommand", "model", "fit_target", "score", "n", "seeds", "kernel", "seed"});
  merge_field(cfg, ctx, "model", a.o_model, a.model);
  merge_field(cfg, ctx, "fit_target", a.o_fit, a.fit_target);
  merge_field(cfg, ctx, "n", a.o_n, a.n);
  merge_field(cfg, ctx, "seeds", a.o_seeds, a.seeds);
  const ScoreFitSpec spec = merge_score(cfg, ctx, a.o_score, a.score_family);
  const KernelSpec kernel =
      merge_kernel(cfg, ctx, a.o_kernel, a.kernel_family, a.o_bw, a.bandwidth);
  if (kernel.bandwidth <= 0.0)
    throw DataError("diag stein-identity: bandwidth must be positive");
  const std::uint64_t seed = merge_seed(cfg, ctx, a.o_seed, a.seed);

  const RngStream master(seed);
  const ResolvedScore score =
      resolve_score_model(a.model, a.fit_target, spec, master.split(2));
  const SamplerFn sampler = [&score](int nn, RngStream& r) {
    return sample_matrix(score.model, nn, r);
  };
  const DiagnosticReport report =
      stein_identity_diagnostic(score.model, kernel, sampler, a.n, a.seeds, master.split(1));

  ordered_json resolved;
  resolved["subcommand"] = "diag stein-identity";
  if (!a.model.empty()) resolved["model"] = a.model;
  if (!a.fit_target.empty()) {
    resolved["fit_target"] = a.fit_target;
    resolved["score"] = score_fit_to_json(spec);
  }
  resolved["n"] = a.n;
  resolved["seeds"] = a.seeds;
  resolved["kernel"] = kernel_spec_to_json(kernel);
  resolved["seed"] = seed;

  ordered_json result;
  result["subcommand"] = "diag stein-identity";
  result["pooled_estimate"] = report.pooled_estimate;
  result["pooled_se"] = report.pooled_se;
  result["pooled_z"] = report.pooled_z;
  result["pass"] = report.pass;
  result["n"] = a.n;
  result["seeds"] = a.seeds;
  result["kernel"] = kernel_spec_to_json(kernel);
  result["score_family"] = score.family;

  std::string trace = "replicate,estimate,std_error\n";
  for (std::size_t i = 0; i < report.estimates.size(); ++i)
    trace += std::to_string(i) + "," + fmt(report.estimates[i]) + "," +
             fmt(report.std_errors[i]) + "\n";
  write_artifacts(a.out, resolved, result, trace);
}

// ---------------------------------------------------------------------------
// test two-sample: Monte-Carlo calibrated asymmetric test of source sample
// against the law fitted on the target sample.

struct TestArgs {
  std::string config, out = ".";
  std::string source, target;
  std::string score_family = "gaussian", kernel_family = "rbf";
  double alpha = 0.05, bandwidth = 1.0;
  int null_draws = 200;
  std::uint64_t seed = 0;
  CLI::Option *o_source = nullptr, *o_target = nullptr, *o_score = nullptr,
              *o_alpha = nullptr, *o_draws = nullptr, *o_kernel = nullptr, *o_bw = nullptr,
              *o_seed = nullptr;
};

void run_test(TestArgs& a) {
  const std::string ctx = a.config.empty() ? std::string("test config") : a.config;
  const ordered_json cfg = load_cfg(a.config, "test two-sample");
  require_known_keys(cfg, ctx,
                     {"subcommand", "source", "target", "score", "alpha", "null_draws",
                      "kernel", "seed"});
  merge_field(cfg, ctx, "source", a.o_source, a.source);
  merge_field(cfg, ctx, "target", a.o_target, a.target);
  merge_field(cfg, ctx, "alpha", a.o_alpha, a.alpha);
  merge_field(cfg, ctx, "null_draws", a.o_draws, a.null_draws);
  const ScoreFitSpec spec = merge_score(cfg, ctx, a.o_score, a.score_family);
  KernelSpec kernel = merge_kernel(cfg, ctx, a.o_kernel, a.kernel_family, a.o_bw, a.bandwidth);
  const std::uint64_t seed = merge_seed(cfg, ctx, a.o_seed, a.seed);
  if (a.source.empty() || a.target.empty())
    throw UsageError("test two-sample needs --source and --target (or config entries)");

  const Dataset src = read_dataset_csv(a.source);
  const Dataset tgt = read_dataset_csv(a.target);
  check_dims(src.dim() == tgt.dim(), "two-sample feature widths");
  Mat pooled(src.n() + tgt.n(), src.dim());
  pooled << src.features, tgt.features;
  resolve_bandwidth(kernel, pooled, "test two-sample");

  const RngStream master(seed);
  const TestResult res = two_sample_test(kernel, src.features, tgt.features, spec, a.alpha,
                                         a.null_draws, master.split(1));

  ordered_json resolved;
  resolved["subcommand"] = "test two-sample";
  resolved["source"] = a.source;
  resolved["target"] = a.target;
  resolved["score"] = score_fit_to_json(spec);
  resolved["alpha"] = a.alpha;
  resolved["null_draws"] = a.null_draws;
  resolved["kernel"] = kernel_spec_to_json(kernel);
  resolved["seed"] = seed;

  ordered_json result;
  result["subcommand"] = "test two-sample";
  result["statistic"] = res.statistic;
  result["null_quantile"] = res.null_quantile;
  result["p_value"] = res.p_value;
  result["alpha"] = res.alpha;
  result["reject"] = res.reject;
  result["null_draws"] = res.null_draws;
  result["n"] = res.n;
  result["m"] = res.m;
  result["kernel"] = kernel_spec_to_json(kernel);
  result["score_family"] = fit_family_name(spec.family);

  std::string trace = "index,null_stat\n";
  for (std::size_t i = 0; i < res.null_stats.size(); ++i)
    trace += std::to_string(i) + "," + fmt(res.null_stats[i]) + "\n";
  write_artifacts(a.out, resolved, result, trace);
}

// ---------------------------------------------------------------------------
// rate: two-phase convergence experiment on 1D Gaussians against the
// quadrature ground truth.

struct RateArgs {
  std::string config, out = ".";
  std::string kernel_family = "rbf";
  double p_mean = 0.5, p_var = 1.0, q_mean = 0.0, q_var = 1.0, bandwidth = 1.0;
  std::vector<int> n_grid{50, 100, 200, 400}, m_grid{50, 100, 200, 400};
  int reps = 50, n_fixed = 0;
  std::uint64_t seed = 0;
  CLI::Option *o_pm = nullptr, *o_pv = nullptr, *o_qm = nullptr, *o_qv = nullptr,
              *o_ngrid = nullptr, *o_mgrid = nullptr, *o_reps = nullptr, *o_nfixed = nullptr,
              *o_kernel = nullptr, *o_bw = nullptr, *o_seed = nullptr;
};

void run_rate(RateArgs& a) {
  const std::string ctx = a.config.empty() ? std::string("rate config") : a.config;
  const ordered_json cfg = load_cfg(a.config, "rate");
  require_known_keys(cfg, ctx,
                     {"subcommand", "p_mean", "p_var", "q_mean", "q_var", "n_grid", "m_grid",
                      "reps", "n_fixed", "kernel", "seed"});
  merge_field(cfg, ctx, "p_mean", a.o_pm, a.p_mean);
  merge_field(cfg, ctx, "p_var", a.o_pv, a.p_var);
  merge_field(cfg, ctx, "q_mean", a.o_qm, a.q_mean);
  merge_field(cfg, ctx, "q_var", a.o_qv, a.q_var);
  merge_grid(cfg, ctx, "n_grid", a.o_ngrid, a.n_grid);
  merge_grid(cfg, ctx, "m_grid", a.o_mgrid, a.m_grid);
  merge_field(cfg, ctx, "reps", a.o_reps, a.reps);
  merge_field(cfg, ctx, "n_fixed", a.o_nfixed, a.n_fixed);
  const KernelSpec kernel =
      merge_kernel(cfg, ctx, a.o_kernel, a.kernel_family, a.o_bw, a.bandwidth);
  if (kernel.bandwidth <= 0.0) throw DataError("rate: bandwidth must be positive");
  const std::uint64_t seed = merge_seed(cfg, ctx, a.o_seed, a.seed);
  if (a.p_var <= 0.0 || a.q_var <= 0.0)
    throw DataError("rate: variances must be positive");

  const auto gauss1d = [](double mean, double var) {
    return GaussianModel::from_moments(Vec::Constant(1, mean), Mat::Constant(1, 1, var));
  };
  const RngStream master(seed);
  const ConvergenceResult res =
      convergence_experiment(gauss1d(a.p_mean, a.p_var), gauss1d(a.q_mean, a.q_var), kernel,
                             a.n_grid, a.m_grid, a.reps, master.split(1), a.n_fixed);

  ordered_json resolved;
  resolved["subcommand"] = "rate";
  resolved["p_mean"] = a.p_mean;
  resolved["p_var"] = a.p_var;
  resolved["q_mean"] = a.q_mean;
  resolved["q_var"] = a.q_var;
  resolved["n_grid"] = a.n_grid;
  resolved["m_grid"] = a.m_grid;
  resolved["reps"] = a.reps;
  resolved["n_fixed"] = res.n_fixed;  // the auto choice is resolved, like the seed
  resolved["kernel"] = kernel_spec_to_json(kernel);
  resolved["seed"] = seed;

  ordered_json result;
  result["subcommand"] = "rate";
  result["truth"] = res.truth;
  result["n_fixed"] = res.n_fixed;
  result["by_n"] = rate_fit_json(res.by_n);
  result["by_m"] = rate_fit_json(res.by_m);

  std::string trace = "phase,size,rep,estimate,error\n";
  for (const RateRecord& r : res.records)
    trace += std::to_string(r.phase) + "," + std::to_string(r.size) + "," +
             std::to_string(r.rep) + "," + fmt(r.estimate) + "," + fmt(r.error) + "\n";
  write_artifacts(a.out, resolved, result, trace);
}

// ---------------------------------------------------------------------------
// sweep imbalance: type-1 error and power of the calibrated Stein test
// against the symmetric MMD permutation test as the target side shrinks.

struct SweepArgs {
  std::string config, out = ".";
  std::string kernel_family = "rbf";
  int d = 2, n_fixed = 1000, trials = 200, null_draws = 100, permutations = 200;
  std::vector<int> m_grid{25, 50};  // the sweep needs at least two sizes
  double alpha = 0.05, shift = 0.5, bandwidth = 1.0;
  std::uint64_t seed = 0;
  CLI::Option *o_d = nullptr, *o_nfixed = nullptr, *o_mgrid = nullptr, *o_trials = nullptr,
              *o_alpha = nullptr, *o_draws = nullptr, *o_perms = nullptr, *o_shift = nullptr,
              *o_kernel = nullptr, *o_bw = nullptr, *o_seed = nullptr;
};

void run_sweep(SweepArgs& a) {
  const std::string ctx = a.config.empty() ? std::string("sweep config") : a.config;
  const ordered_json cfg = load_cfg(a.config, "sweep imbalance");
  require_known_keys(cfg, ctx,
                     {"subcommand", "d", "n_fixed", "m_grid", "trials", "alpha", "null_draws",
                      "permutations", "shift", "kernel", "seed"});
  merge_field(cfg, ctx, "d", a.o_d, a.d);
  merge_field(cfg, ctx, "n_fixed", a.o_nfixed, a.n_fixed);
  merge_grid(cfg, ctx, "m_grid", a.o_mgrid, a.m_grid);
  merge_field(cfg, ctx, "trials", a.o_trials, a.trials);
  merge_field(cfg, ctx, "alpha", a.o_alpha, a.alpha);
  merge_field(cfg, ctx, "null_draws", a.o_draws, a.null_draws);
  merge_field(cfg, ctx, "permutations", a.o_perms, a.permutations);
  merge_field(cfg, ctx, "shift", a.o_shift, a.shift);
  const KernelSpec kernel =
      merge_kernel(cfg, ctx, a.o_kernel, a.kernel_family, a.o_bw, a.bandwidth);
  if (kernel.bandwidth <= 0.0) throw DataError("sweep imbalance: bandwidth must be positive");
  const std::uint64_t seed = merge_seed(cfg, ctx, a.o_seed, a.seed);

  const RngStream master(seed);
  const SweepResult res =
      imbalance_sweep(a.d, a.n_fixed, a.m_grid, a.trials, master.split(1), a.alpha,
                      a.null_draws, a.permutations, a.shift, kernel);

  ordered_json resolved;
  resolved["subcommand"] = "sweep imbalance";
  resolved["d"] = a.d;
  resolved["n_fixed"] = a.n_fixed;
  resolved["m_grid"] = a.m_grid;
  resolved["trials"] = a.trials;
  resolved["alpha"] = a.alpha;
  resolved["null_draws"] = a.null_draws;
  resolved["permutations"] = a.permutations;
  resolved["shift"] = a.shift;
  resolved["kernel"] = kernel_spec_to_json(kernel);
  resolved["seed"] = seed;

  ordered_json rows = ordered_json::array();
  for (const SweepRow& r : res.rows) {
    ordered_json row;
    row["m"] = r.m;
    row["ksd_type1"] = r.ksd_type1;
    row["ksd_power"] = r.ksd_power;
    row["mmd_type1"] = r.mmd_type1;
    row["mmd_power"] = r.mmd_power;
    row["trials"] = r.trials;
    rows.push_back(row);
  }
  ordered_json result;
  result["subcommand"] = "sweep imbalance";
  result["alpha"] = res.alpha;
  result["shift"] = res.shift;
  result["n_fixed"] = res.n_fixed;
  result["null_draws"] = res.null_draws;
  result["permutations"] = res.permutations;
  result["rows"] = rows;

  std::string trace = "m,trial,alternative,ksd_stat,ksd_reject,mmd_stat,mmd_reject\n";
  for (const SweepRecord& r : res.records)
    trace += std::to_string(r.m) + "," + std::to_string(r.trial) + "," +
             std::to_string(r.alternative ? 1 : 0) + "," + fmt(r.ksd_stat) + "," +
             std::to_string(r.ksd_reject ? 1 : 0) + "," + fmt(r.mmd_stat) + "," +
             std::to_string(r.mmd_reject ? 1 : 0) + "\n";
  write_artifacts(a.out, resolved, result, trace);
}

// ---------------------------------------------------------------------------
// gen: synthetic datasets to CSV. Here --out names the dataset file itself
// and the run artifacts land in that file's directory.

// Content summary only. Output paths stay out of result.json so a rerun from
// the resolved config into a fresh directory reproduces it bitwise.
ordered_json dataset_summary(const Dataset& ds) {
  ordered_json j;
  j["rows"] = ds.n();
  j["dim"] = ds.dim();
  j["labeled"] = ds.labeled();
  j["classes"] = ds.labeled() ? ds.classes() : 0;
  j["domain"] = domain_name(ds.domain);
  return j;
}

std::string csv_parent_dir(const std::string& csv_path) {
  const std::string dir = std::filesystem::path(csv_path).parent_path().string();
  return dir.empty() ? "." : dir;
}

struct MoonsArgs {
  std::string config;
  std::string out_csv, domain = "source";
  int n = 2000;
  double noise = 0.1, rotation = 0.0;
  bool drop_labels = false;
  std::uint64_t seed = 0;
  CLI::Option *o_out = nullptr, *o_n = nullptr, *o_noise = nullptr, *o_rot = nullptr,
              *o_domain = nullptr, *o_drop = nullptr, *o_seed = nullptr;
};

void run_moons(MoonsArgs& a) {
  const std::string ctx = a.config.empty() ? std::string("gen config") : a.config;
  const ordered_json cfg = load_cfg(a.config, "gen two-moons");
  require_known_keys(cfg, ctx,
                     {"subcommand", "n", "noise", "rotation", "domain", "drop_labels", "seed",
                      "out_csv"});
  merge_field(cfg, ctx, "n", a.o_n, a.n);
  merge_field(cfg, ctx, "noise", a.o_noise, a.noise);
  merge_field(cfg, ctx, "rotation", a.o_rot, a.rotation);
  merge_field(cfg, ctx, "domain", a.o_domain, a.domain);
  merge_field(cfg, ctx, "drop_labels", a.o_drop, a.drop_labels);
  merge_field(cfg, ctx, "out_csv", a.o_out, a.out_csv);
  const std::uint64_t seed = merge_seed(cfg, ctx, a.o_seed, a.seed);
  if (a.out_csv.empty()) throw UsageError("gen two-moons needs --out CSV path");

  const RngStream master(seed);
  RngStream gen_rng = master.split(1);
  Dataset ds = make_two_moons(a.n, a.noise, a.rotation, gen_rng);
  ds.domain = domain_from_name(a.domain);
  if (a.drop_labels) ds.labels.clear();
  ensure_out_dir(csv_parent_dir(a.out_csv));
  write_dataset_csv(a.out_csv, ds);

  ordered_json resolved;
  resolved["subcommand"] = "gen two-moons";
  resolved["n"] = a.n;
  resolved["noise"] = a.noise;
  resolved["rotation"] = a.rotation;
  resolved["domain"] = a.domain;
  resolved["drop_labels"] = a.drop_labels;
  resolved["seed"] = seed;
  resolved["out_csv"] = a.out_csv;

  ordered_json result;
  result["subcommand"] = "gen two-moons";
  result["dataset"] = dataset_summary(ds);
  write_artifacts(csv_parent_dir(a.out_csv), resolved, result);
}

struct BlobArgs {
  std::string config;
  std::string source_out, target_out;
  int n = 300, d = 2, classes = 3;
  double shift = 1.0, cov_scale = 2.0;
  bool drop_target_labels = false;
  std::uint64_t seed = 0;
  CLI::Option *o_src = nullptr, *o_tgt = nullptr, *o_n = nullptr, *o_d = nullptr,
              *o_classes = nullptr, *o_shift = nullptr, *o_cov = nullptr, *o_drop = nullptr,
              *o_seed = nullptr;
};

void run_blobs(BlobArgs& a) {
  const std::string ctx = a.config.empty() ? std::string("gen config") : a.config;
  const ordered_json cfg = load_cfg(a.config, "gen blob-shift");
  require_known_keys(cfg, ctx,
                     {"subcommand", "n", "d", "classes", "shift", "cov_scale",
                      "drop_target_labels", "seed", "source_out", "target_out"});
  merge_field(cfg, ctx, "n", a.o_n, a.n);
  merge_field(cfg, ctx, "d", a.o_d, a.d);
  merge_field(cfg, ctx, "classes", a.o_classes, a.classes);
  merge_field(cfg, ctx, "shift", a.o_shift, a.shift);
  merge_field(cfg, ctx, "cov_scale", a.o_cov, a.cov_scale);
  merge_field(cfg, ctx, "drop_target_labels", a.o_drop, a.drop_target_labels);
  merge_field(cfg, ctx, "source_out", a.o_src, a.source_out);
  merge_field(cfg, ctx, "target_out", a.o_tgt, a.target_out);
  const std::uint64_t seed = merge_seed(cfg, ctx, a.o_seed, a.seed);
  if (a.source_out.empty() || a.target_out.empty())
    throw UsageError("gen blob-shift needs --source-out and --target-out CSV paths");

  const RngStream master(seed);
  RngStream gen_rng = master.split(1);
  auto [src, tgt] = make_blob_shift(a.n, a.d, a.shift, a.cov_scale, a.classes, gen_rng);
  if (a.drop_target_labels) tgt.labels.clear();
  ensure_out_dir(csv_parent_dir(a.source_out));
  ensure_out_dir(csv_parent_dir(a.target_out));
  write_dataset_csv(a.source_out, src);
  write_dataset_csv(a.target_out, tgt);

  ordered_json resolved;
  resolved["subcommand"] = "gen blob-shift";
  resolved["n"] = a.n;
  resolved["d"] = a.d;
  resolved["classes"] = a.classes;
  resolved["shift"] = a.shift;
  resolved["cov_scale"] = a.cov_scale;
  resolved["drop_target_labels"] = a.drop_target_labels;
  resolved["seed"] = seed;
  resolved["source_out"] = a.source_out;
  resolved["target_out"] = a.target_out;

  ordered_json result;
  result["subcommand"] = "gen blob-shift";
  result["source"] = dataset_summary(src);
  result["target"] = dataset_summary(tgt);
  write_artifacts(csv_parent_dir(a.source_out), resolved, result);
}

// ---------------------------------------------------------------------------
// uda train / uda eval.

struct TrainArgs {
  std::string config, out = ".";
  std::string source, target_train, target_test;
  std::string score_family = "gaussian", form = "kernelized", kernel_family = "rbf";
  double target_percent = 1.0, bandwidth = 1.0, lambda_max = 1.0;
  int target_min = 2;
  std::uint64_t seed = 0;
  CLI::Option *o_source = nullptr, *o_ttrain = nullptr, *o_ttest = nullptr,
              *o_percent = nullptr, *o_min = nullptr, *o_score = nullptr, *o_form = nullptr,
              *o_kernel = nullptr, *o_bw = nullptr, *o_lmax = nullptr, *o_seed = nullptr;
};

void run_train(TrainArgs& a) {
  const std::string ctx = a.config.empty() ? std::string("uda train config") : a.config;
  const ordered_json cfg = load_cfg(a.config, "uda train");
  require_known_keys(
      cfg, ctx,
      {"subcommand", "source", "target_train", "target_test", "target_percent", "target_min",
       "epochs", "batch_size", "lr", "momentum", "weight_decay", "clip_norm", "lambda_max",
       "gamma", "warmup_epochs", "target_budget", "seed", "form", "kernel", "score",
       "score_lr", "score_update_every", "cov_shrinkage", "hidden_dim", "feature_dim",
       "ascent_steps", "critic_hidden", "critic_lr", "critic_momentum",
       "critic_weight_decay"});
  merge_field(cfg, ctx, "source", a.o_source, a.source);
  merge_field(cfg, ctx, "target_train", a.o_ttrain, a.target_train);
  merge_field(cfg, ctx, "target_test", a.o_ttest, a.target_test);
  merge_field(cfg, ctx, "target_percent", a.o_percent, a.target_percent);
  merge_field(cfg, ctx, "target_min", a.o_min, a.target_min);

  ordered_json train_part = cfg;
  for (const char* key : {"subcommand", "source", "target_train", "target_test",
                          "target_percent", "target_min"})
    train_part.erase(key);
  TrainConfig tc = train_config_from_json(train_part, ctx);
  if (a.o_seed->count() > 0)
    tc.seed = a.seed;
  else if (!cfg.contains("seed"))
    tc.seed = 0;  // command line default, not the library default
  if (a.o_score->count() > 0) tc.score_fit.family = fit_family_from_name(a.score_family);
  if (a.o_form->count() > 0) tc.form = transfer_form_from_name(a.form);
  if (a.o_kernel->count() > 0) tc.kernel.family = kernel_family_from_name(a.kernel_family);
  if (a.o_bw->count() > 0) tc.kernel.bandwidth = a.bandwidth;
  if (a.o_lmax->count() > 0) tc.lambda_max = a.lambda_max;
  tc.validate();
  if (a.source.empty() || a.target_train.empty() || a.target_test.empty())
    throw UsageError(
        "uda train needs --source, --target-train and --target-test (or config entries)");

  const Dataset src = read_dataset_csv(a.source);
  Dataset ttrain = read_dataset_csv(a.target_train);
  const Dataset ttest = read_dataset_csv(a.target_test);
  if (a.target_percent < 1.0) {
    // Scarce-target protocol: thin the unlabeled pool before the trainer's
    // own budget cap. Stream tag 9 is unused inside the trainer.
    RngStream sub_rng = RngStream(tc.seed).split(9);
    ttrain = subsample_target(ttrain, a.target_percent, a.target_min, sub_rng);
  }

  ordered_json resolved;
  resolved["subcommand"] = "uda train";
  resolved["source"] = a.source;
  resolved["target_train"] = a.target_train;
  resolved["target_test"] = a.target_test;
  resolved["target_percent"] = a.target_percent;
  resolved["target_min"] = a.target_min;
  const ordered_json train_json = train_config_to_json(tc);
  for (const auto& item : train_json.items()) resolved[item.key()] = item.value();

  const UdaResult res = run_uda(src, ttrain, ttest, tc);

  ordered_json epochs = ordered_json::array();
  for (const EpochLog& log : res.epochs) {
    ordered_json e;
    e["epoch"] = log.epoch;
    e["loss_c"] = log.loss_c;
    e["loss_d_raw"] = log.loss_d_raw;
    e["loss_d_scaled"] = log.loss_d_scaled;
    e["lambda"] = log.lambda;
    e["target_acc"] = log.target_acc;
    epochs.push_back(e);
  }
  ordered_json result;
  result["config"] = resolved;
  result["epochs"] = epochs;
  result["best_epoch"] = res.best_epoch;
  result["best_acc"] = res.best_acc;

  std::string trace = "epoch,loss_c,loss_d_raw,loss_d_scaled,lambda,target_acc\n";
  for (const EpochLog& log : res.epochs)
    trace += std::to_string(log.epoch) + "," + fmt(log.loss_c) + "," + fmt(log.loss_d_raw) +
             "," + fmt(log.loss_d_scaled) + "," + fmt(log.lambda) + "," +
             fmt(log.target_acc) + "\n";
  write_artifacts(a.out, resolved, result, trace);
  write_text(ensure_out_dir(a.out) + "/model.json",
             uda_model_to_json(res.best_model).dump(2) + "\n");
}

struct EvalArgs {
  std::string config, out = ".";
  std::string model, data;
  CLI::Option *o_model = nullptr, *o_data = nullptr;
};

void run_eval(EvalArgs& a) {
  const std::string ctx = a.config.empty() ? std::string("uda eval config") : a.config;
  const ordered_json cfg = load_cfg(a.config, "uda eval");
  require_known_keys(cfg, ctx, {"subcommand", "model", "data"});
  merge_field(cfg, ctx, "model", a.o_model, a.model);
  merge_field(cfg, ctx, "data", a.o_data, a.data);
  if (a.model.empty() || a.data.empty())
    throw UsageError("uda eval needs --model and --data (or config entries)");

  const UdaModel model = uda_model_from_json(load_json_strict(a.model));
  const Dataset data = read_dataset_csv(a.data);
  const EvalReport rep = evaluate(model, data);

  ordered_json resolved;
  resolved["subcommand"] = "uda eval";
  resolved["model"] = a.model;
  resolved["data"] = a.data;

  ordered_json result;
  result["subcommand"] = "uda eval";
  result["model"] = a.model;
  result["data"] = a.data;
  result["accuracy"] = rep.accuracy;
  result["error"] = rep.error;
  result["correct"] = rep.correct;
  result["total"] = rep.total;
  write_artifacts(a.out, resolved, result);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Stein-discrepancy toolkit: dataset generation, discrepancy estimation, "
      "calibration harnesses and scarce-target domain adaptation"};
  app.require_subcommand(1);

  const std::vector<std::string> score_names{"gaussian", "gmm", "vae", "vae-corrected",
                                             "vae-paper"};
  const std::vector<std::string> kernel_names{"rbf", "imq"};

  KsdArgs ksd;
  {
    auto* cmd = app.add_subcommand(
        "ksd", "Estimate a Stein discrepancy for a sample against a score model");
    cmd->add_option("--config", ksd.config, "JSON config file; explicit flags override it");
    cmd->add_option("--out", ksd.out, "Output directory (default .)");
    ksd.o_data = cmd->add_option("--data", ksd.data, "Evaluation sample CSV");
    ksd.o_model = cmd->add_option("--model", ksd.model, "Score model JSON file");
    ksd.o_fit =
        cmd->add_option("--fit-target", ksd.fit_target, "CSV sample to fit the score model on");
    ksd.o_score = cmd->add_option("--score", ksd.score_family, "Score family for --fit-target")
                      ->check(CLI::IsMember(score_names));
    ksd.o_stat = cmd->add_option("--statistic", ksd.statistic, "u, v or regularized")
                     ->check(CLI::IsMember({"u", "v", "regularized"}));
    ksd.o_kernel = cmd->add_option("--kernel", ksd.kernel_family, "Kernel family")
                       ->check(CLI::IsMember(kernel_names));
    ksd.o_bw =
        cmd->add_option("--bandwidth", ksd.bandwidth, "Kernel bandwidth; 0 = median heuristic");
    ksd.o_reg = cmd->add_option("--reg-lambda", ksd.reg_lambda,
                                "Spectral regularizer for --statistic regularized");
    ksd.o_seed = cmd->add_option("--seed", ksd.seed, "Random seed (default 0)");
    cmd->callback([&ksd] { run_ksd(ksd); });
  }

  DiagArgs diag;
  {
    auto* parent = app.add_subcommand("diag", "Statistical self-checks");
    parent->require_subcommand(1);
    auto* cmd = parent->add_subcommand(
        "stein-identity", "Estimator on the model's own samples; pooled z-score near 0");
    cmd->add_option("--config", diag.config, "JSON config file; explicit flags override it");
    cmd->add_option("--out", diag.out, "Output directory (default .)");
    diag.o_model = cmd->add_option("--model", diag.model, "Score model JSON file");
    diag.o_fit = cmd->add_option("--fit-target", diag.fit_target,
                                 "CSV sample to fit the score model on");
    diag.o_score =
        cmd->add_option("--score", diag.score_family, "Score family for --fit-target")
            ->check(CLI::IsMember(score_names));
    diag.o_n = cmd->add_option("--n", diag.n, "Sample size per replicate");
    diag.o_seeds = cmd->add_option("--seeds", diag.seeds, "Number of replicates");
    diag.o_kernel = cmd->add_option("--kernel", diag.kernel_family, "Kernel family")
                        ->check(CLI::IsMember(kernel_names));
    diag.o_bw = cmd->add_option("--bandwidth", diag.bandwidth, "Kernel bandwidth");
    diag.o_seed = cmd->add_option("--seed", diag.seed, "Random seed (default 0)");
    cmd->callback([&diag] { run_diag(diag); });
  }

  TestArgs tst;
  {
    auto* parent = app.add_subcommand("test", "Hypothesis tests");
    parent->require_subcommand(1);
    auto* cmd = parent->add_subcommand(
        "two-sample", "Monte-Carlo calibrated Stein test of source against fitted target law");
    cmd->add_option("--config", tst.config, "JSON config file; explicit flags override it");
    cmd->add_option("--out", tst.out, "Output directory (default .)");
    tst.o_source = cmd->add_option("--source", tst.source, "Source sample CSV");
    tst.o_target = cmd->add_option("--target", tst.target, "Target sample CSV");
    tst.o_score = cmd->add_option("--score", tst.score_family, "Score family fitted on target")
                      ->check(CLI::IsMember(score_names));
    tst.o_alpha = cmd->add_option("--alpha", tst.alpha, "Test level");
    tst.o_draws = cmd->add_option("--null-draws", tst.null_draws, "Monte-Carlo null size");
    tst.o_kernel = cmd->add_option("--kernel", tst.kernel_family, "Kernel family")
                       ->check(CLI::IsMember(kernel_names));
    tst.o_bw =
        cmd->add_option("--bandwidth", tst.bandwidth, "Kernel bandwidth; 0 = median heuristic");
    tst.o_seed = cmd->add_option("--seed", tst.seed, "Random seed (default 0)");
    cmd->callback([&tst] { run_test(tst); });
  }

  RateArgs rate;
  {
    auto* cmd = app.add_subcommand(
        "rate", "Convergence-rate experiment on 1D Gaussians with quadrature ground truth");
    cmd->add_option("--config", rate.config, "JSON config file; explicit flags override it");
    cmd->add_option("--out", rate.out, "Output directory (default .)");
    rate.o_pm = cmd->add_option("--p-mean", rate.p_mean, "Sampling distribution mean");
    rate.o_pv = cmd->add_option("--p-var", rate.p_var, "Sampling distribution variance");
    rate.o_qm = cmd->add_option("--q-mean", rate.q_mean, "Model distribution mean");
    rate.o_qv = cmd->add_option("--q-var", rate.q_var, "Model distribution variance");
    rate.o_ngrid = cmd->add_option("--n-grid", rate.n_grid, "Phase-1 sample sizes")
                       ->delimiter(',');
    rate.o_mgrid = cmd->add_option("--m-grid", rate.m_grid, "Phase-2 fit sample sizes")
                       ->delimiter(',');
    rate.o_reps = cmd->add_option("--reps", rate.reps, "Repetitions per grid point");
    rate.o_nfixed =
        cmd->add_option("--n-fixed", rate.n_fixed, "Phase-2 evaluation sample size; 0 = auto");
    rate.o_kernel = cmd->add_option("--kernel", rate.kernel_family, "Kernel family")
                        ->check(CLI::IsMember(kernel_names));
    rate.o_bw = cmd->add_option("--bandwidth", rate.bandwidth, "Kernel bandwidth");
    rate.o_seed = cmd->add_option("--seed", rate.seed, "Random seed (default 0)");
    cmd->callback([&rate] { run_rate(rate); });
  }

  SweepArgs sweep;
  {
    auto* parent = app.add_subcommand("sweep", "Parameter sweeps");
    parent->require_subcommand(1);
    auto* cmd = parent->add_subcommand(
        "imbalance", "Error rate and power versus target sample size, Stein test against MMD");
    cmd->add_option("--config", sweep.config, "JSON config file; explicit flags override it");
    cmd->add_option("--out", sweep.out, "Output directory (default .)");
    sweep.o_d = cmd->add_option("--d", sweep.d, "Feature dimension");
    sweep.o_nfixed = cmd->add_option("--n-fixed", sweep.n_fixed, "Source sample size");
    sweep.o_mgrid = cmd->add_option("--m-grid", sweep.m_grid, "Target sample sizes")
                        ->delimiter(',');
    sweep.o_trials = cmd->add_option("--trials", sweep.trials, "Trials per grid point");
    sweep.o_alpha = cmd->add_option("--alpha", sweep.alpha, "Test level");
    sweep.o_draws =
        cmd->add_option("--null-draws", sweep.null_draws, "Monte-Carlo null size per trial");
    sweep.o_perms =
        cmd->add_option("--permutations", sweep.permutations, "MMD permutation count");
    sweep.o_shift =
        cmd->add_option("--shift", sweep.shift, "Per-coordinate mean shift under H1");
    sweep.o_kernel = cmd->add_option("--kernel", sweep.kernel_family, "Kernel family")
                         ->check(CLI::IsMember(kernel_names));
    sweep.o_bw = cmd->add_option("--bandwidth", sweep.bandwidth, "Kernel bandwidth");
    sweep.o_seed = cmd->add_option("--seed", sweep.seed, "Random seed (default 0)");
    cmd->callback([&sweep] { run_sweep(sweep); });
  }

  MoonsArgs moons;
  BlobArgs blobs;
  {
    auto* parent = app.add_subcommand("gen", "Synthetic dataset generators");
    parent->require_subcommand(1);
    auto* m = parent->add_subcommand("two-moons", "Interleaved half-circles, optionally rotated");
    m->add_option("--config", moons.config, "JSON config file; explicit flags override it");
    moons.o_out = m->add_option("--out", moons.out_csv, "Output CSV path");
    moons.o_n = m->add_option("--n", moons.n, "Total rows (even)");
    moons.o_noise = m->add_option("--noise", moons.noise, "Gaussian noise level");
    moons.o_rot = m->add_option("--rotation", moons.rotation, "Rotation in degrees");
    moons.o_domain = m->add_option("--domain", moons.domain, "Domain tag for the rows")
                         ->check(CLI::IsMember({"source", "target"}));
    moons.o_drop = m->add_flag("--drop-labels", moons.drop_labels,
                               "Write empty label cells (unlabeled pool)");
    moons.o_seed = m->add_option("--seed", moons.seed, "Random seed (default 0)");
    m->callback([&moons] { run_moons(moons); });

    auto* b = parent->add_subcommand("blob-shift",
                                     "Gaussian class blobs plus a mean-shifted target copy");
    b->add_option("--config", blobs.config, "JSON config file; explicit flags override it");
    blobs.o_src = b->add_option("--source-out", blobs.source_out, "Source CSV path");
    blobs.o_tgt = b->add_option("--target-out", blobs.target_out, "Target CSV path");
    blobs.o_n = b->add_option("--n", blobs.n, "Rows per domain (multiple of classes)");
    blobs.o_d = b->add_option("--d", blobs.d, "Feature dimension");
    blobs.o_classes = b->add_option("--classes", blobs.classes, "Class count");
    blobs.o_shift = b->add_option("--shift", blobs.shift, "Per-coordinate target mean shift");
    blobs.o_cov = b->add_option("--cov-scale", blobs.cov_scale, "Target noise variance scale");
    blobs.o_drop = b->add_flag("--drop-target-labels", blobs.drop_target_labels,
                               "Write the target CSV without labels");
    blobs.o_seed = b->add_option("--seed", blobs.seed, "Random seed (default 0)");
    b->callback([&blobs] { run_blobs(blobs); });
  }

  TrainArgs train;
  EvalArgs eval;
  {
    auto* parent = app.add_subcommand("uda", "Domain-adaptation trainer");
    parent->require_subcommand(1);
    auto* t = parent->add_subcommand("train",
                                     "Train feature extractor and classifier with the "
                                     "ramped transfer loss; checkpoint the best epoch");
    t->add_option("--config", train.config, "JSON config file; explicit flags override it");
    t->add_option("--out", train.out, "Output directory (default .)");
    train.o_source = t->add_option("--source", train.source, "Labeled source CSV");
    train.o_ttrain =
        t->add_option("--target-train", train.target_train, "Unlabeled target pool CSV");
    train.o_ttest = t->add_option("--target-test", train.target_test, "Labeled target CSV");
    train.o_percent = t->add_option("--target-percent", train.target_percent,
                                    "Keep this fraction of the target pool");
    train.o_min = t->add_option("--target-min", train.target_min,
                                "Keep at least this many target rows");
    train.o_score = t->add_option("--score", train.score_family, "Target score family")
                        ->check(CLI::IsMember(score_names));
    train.o_form = t->add_option("--form", train.form, "Transfer loss form")
                       ->check(CLI::IsMember({"kernelized", "adversarial"}));
    train.o_kernel = t->add_option("--kernel", train.kernel_family, "Kernel family")
                         ->check(CLI::IsMember(kernel_names));
    train.o_bw = t->add_option("--bandwidth", train.bandwidth, "Kernel bandwidth");
    train.o_lmax = t->add_option("--lambda-max", train.lambda_max, "Transfer weight ceiling");
    train.o_seed = t->add_option("--seed", train.seed, "Random seed (default 0)");
    t->callback([&train] { run_train(train); });

    auto* e = parent->add_subcommand("eval", "Accuracy of a saved model on a labeled CSV");
    e->add_option("--config", eval.config, "JSON config file; explicit flags override it");
    e->add_option("--out", eval.out, "Output directory (default .)");
    eval.o_model = e->add_option("--model", eval.model, "Model JSON from uda train");
    eval.o_data = e->add_option("--data", eval.data, "Labeled dataset CSV");
    e->callback([&eval] { run_eval(eval); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: ParseError: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
