#pragma once

// Desk-scale domain-adaptation trainer. A small feature extractor g and linear
// classifier c are trained on labeled source data while a transfer loss pulls
// the source feature distribution toward a score model fitted on (scarce)
// target features. Two transfer forms: kernelized (tanh of the Stein
// V-statistic, analytic feature gradient) and adversarial (critic ascent on
// the Stein operator, then a descent step with the critic frozen). The score
// model is refreshed every batch but never receives gradients from the
// transfer loss; only g and c are trained on it.

#include "steinuda/core.hpp"
#include "steinuda/datasets.hpp"
#include "steinuda/discrepancy.hpp"
#include "steinuda/inference.hpp"
#include "steinuda/kernels.hpp"
#include "steinuda/nnet.hpp"
#include "steinuda/score_models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace steinuda {

enum class TransferForm { Kernelized, Adversarial };

inline std::string transfer_form_name(TransferForm f) {
  return f == TransferForm::Kernelized ? "kernelized" : "adversarial";
}

inline TransferForm transfer_form_from_name(const std::string& s) {
  if (s == "kernelized") return TransferForm::Kernelized;
  if (s == "adversarial") return TransferForm::Adversarial;
  throw DataError("unknown transfer form '" + s + "'");
}

struct TrainConfig {
  int epochs = 40;
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double clip_norm = 5.0;
  double lambda_max = 1.0;
  double gamma = 10.0;
  int warmup_epochs = 1;
  int target_budget = 32;  // at most this many target rows are ever seen
  std::uint64_t seed = 1;
  TransferForm form = TransferForm::Kernelized;
  KernelSpec kernel{KernelFamily::Rbf, 1.0};
  ScoreFitSpec score_fit{};    // family and initial-fit parameters
  double score_lr = 1e-2;      // per-batch GMM/VAE update rate
  int score_update_every = 1;  // batches between score refreshes
  // Shrink the refitted Gaussian covariance toward its average variance.
  // Features of a low-dimensional input manifold give a nearly rank-deficient
  // covariance whose inverse explodes the scores and saturates the tanh
  // rescale; shrinkage keeps the transfer loss in the responsive range.
  double cov_shrinkage = 0.1;
  int hidden_dim = 16;
  int feature_dim = 8;
  int ascent_steps = 5;  // adversarial form only
  int critic_hidden = 8;
  double critic_lr = 0.05;
  double critic_momentum = 0.9;
  double critic_weight_decay = 1e-3;

  void validate() const {
    if (epochs < 1) throw DataError("TrainConfig: epochs must be at least 1");
    if (batch_size < 2) throw DataError("TrainConfig: batch size must be at least 2");
    if (target_budget < 2) throw DataError("TrainConfig: target budget must be at least 2");
    if (warmup_epochs < 0) throw DataError("TrainConfig: warmup epochs must be >= 0");
    if (lr <= 0.0 || score_lr <= 0.0 || critic_lr <= 0.0)
      throw DataError("TrainConfig: learning rates must be positive");
    if (momentum < 0.0 || momentum >= 1.0 || critic_momentum < 0.0 || critic_momentum >= 1.0)
      throw DataError("TrainConfig: momentum must lie in [0, 1)");
    if (weight_decay < 0.0 || critic_weight_decay < 0.0)
      throw DataError("TrainConfig: weight decay must be >= 0");
    if (clip_norm <= 0.0) throw DataError("TrainConfig: clip norm must be positive");
    if (lambda_max < 0.0) throw DataError("TrainConfig: lambda_max must be >= 0");
    if (gamma <= 0.0) throw DataError("TrainConfig: gamma must be positive");
    if (kernel.bandwidth <= 0.0) throw DataError("TrainConfig: kernel bandwidth must be positive");
    if (hidden_dim < 1 || feature_dim < 1 || critic_hidden < 1)
      throw DataError("TrainConfig: network widths must be at least 1");
    if (ascent_steps < 0) throw DataError("TrainConfig: ascent steps must be >= 0");
    if (score_update_every < 1) throw DataError("TrainConfig: score update cadence must be >= 1");
    if (cov_shrinkage < 0.0 || cov_shrinkage >= 1.0)
      throw DataError("TrainConfig: covariance shrinkage must lie in [0, 1)");
  }
};

// Feature extractor + classifier, plus the target score model and whichever
// of {kernel, critic} the transfer form needs.
struct UdaModel {
  Mlp g;
  Mlp c;
  TransferForm form = TransferForm::Kernelized;
  ScoreModel score;
  KernelSpec kernel{KernelFamily::Rbf, 1.0};
  Mlp critic;  // empty unless adversarial

  int feature_dim() const { return g.out_dim(); }
  int classes() const { return c.out_dim(); }

  void check_shapes() const {
    check_dims(g.out_dim() == c.in_dim(), "UdaModel feature/classifier width");
    check_dims(score_model_dim(score) == g.out_dim(), "UdaModel score-model width");
    if (form == TransferForm::Adversarial) {
      if (critic.layers.empty()) throw DataError("UdaModel: adversarial form needs a critic");
      check_dims(critic.in_dim() == g.out_dim() && critic.out_dim() == g.out_dim(),
                 "UdaModel critic width");
    }
  }
};

// Zero before the warm-up, then a sigmoid ramp toward lambda_max:
//   lambda_max * (2 / (1 + exp(-gamma * progress)) - 1),
// progress = (epoch - warmup) / total_epochs.
inline double lambda_schedule(int epoch, int warmup, double gamma, double lambda_max,
                              int total_epochs) {
  if (total_epochs < 1) throw DataError("lambda_schedule: total epochs must be at least 1");
  if (warmup < 0) throw DataError("lambda_schedule: warmup must be >= 0");
  if (gamma <= 0.0) throw DataError("lambda_schedule: gamma must be positive");
  if (lambda_max < 0.0) throw DataError("lambda_schedule: lambda_max must be >= 0");
  if (epoch < 0) throw DataError("lambda_schedule: epoch must be >= 0");
  if (epoch < warmup) return 0.0;
  const double progress = static_cast<double>(epoch - warmup) / total_epochs;
  return lambda_max * (2.0 / (1.0 + std::exp(-gamma * progress)) - 1.0);
}

// Ring buffer over the most recent target feature rows; the Gaussian score
// model refits from its contents so scarce targets stay stable while abundant
// targets still track the moving features.
struct FeatureBuffer {
  int capacity = 512;
  Mat store;
  int count = 0;
  int next = 0;

  void push(const Mat& rows) {
    if (store.size() == 0) store = Mat::Zero(capacity, rows.cols());
    check_dims(rows.cols() == store.cols(), "FeatureBuffer row width");
    for (int i = 0; i < rows.rows(); ++i) {
      store.row(next) = rows.row(i);
      next = (next + 1) % capacity;
      count = std::min(count + 1, capacity);
    }
  }

  // Rows in storage order (insertion order once the ring has wrapped it is
  // cyclic, but the contents are exactly the last `count` pushes).
  Mat contents() const { return store.topRows(count); }
};

struct EpochLog {
  int epoch = 0;
  double loss_c = 0.0;
  double loss_d_raw = 0.0;     // mean pre-tanh transfer loss over batches
  double loss_d_scaled = 0.0;  // mean tanh(transfer loss)
  double lambda = 0.0;
  double target_acc = std::numeric_limits<double>::quiet_NaN();
};

// Everything one training run mutates: the model, optimizer velocities, the
// Gaussian feature buffer, and the seed-derived random stream.
struct TrainState {
  TrainConfig cfg;
  UdaModel model;
  SgdState opt_g;
  SgdState opt_c;
  SgdState opt_critic;
  FeatureBuffer buffer;
  Mat target_rows;  // budgeted raw target features, frozen for the run
  // Standard normal in feature space; the whitened Gaussian transfer loss
  // scores against this fixed reference.
  ScoreModel std_normal;
  RngStream root{0};
  int epoch = 0;
};

namespace detail {

inline std::vector<int> shuffled_indices(int n, RngStream& rng) {
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(i + 1)]);
  return order;
}

// Gaussian refit with the covariance pulled toward its average variance:
// (1 - rho) Sigma + rho (tr Sigma / d) I. The mean is untouched.
inline GaussianModel shrunk_gaussian_fit(const Mat& z, double rho) {
  const GaussianModel raw = fit_gaussian(z);
  if (rho == 0.0) return raw;
  const int d = raw.dim();
  Mat cov = (1.0 - rho) * raw.cov;
  cov.diagonal().array() += rho * raw.cov.trace() / d;
  return GaussianModel::from_moments(raw.mean, cov);
}

// Concatenated reshuffles of the target rows, long enough to cover every
// batch; this is how m = 32 target samples fill batch-sized slots alongside a
// larger source epoch.
inline std::vector<int> cycled_target_indices(int m, int needed, RngStream& rng) {
  std::vector<int> out;
  out.reserve(needed);
  while (static_cast<int>(out.size()) < needed) {
    const std::vector<int> pass = shuffled_indices(m, rng);
    for (int idx : pass) {
      if (static_cast<int>(out.size()) == needed) break;
      out.push_back(idx);
    }
  }
  return out;
}

}  // namespace detail

// Build the initial model and training state. Stream layout off the seed:
// 1 = g init, 2 = c init, 3 = critic init, 4 = initial score fit,
// 5 = per-epoch source shuffles, 6 = target batch cycling, 7 = per-batch
// score updates, 8 = target budget subsample.
inline TrainState init_training(const TrainConfig& cfg, const Dataset& source,
                                const Dataset& target_train) {
  cfg.validate();
  if (!source.labeled()) throw DataError("MissingLabels: training needs source labels");
  if (source.n() < cfg.batch_size)
    throw DataError("TooFewSamples: source smaller than one batch");
  if (target_train.n() < 2) throw DataError("TooFewSamples: target needs at least 2 rows");
  check_dims(source.dim() == target_train.dim(), "init_training feature width");
  const int classes = source.classes();
  if (classes < 2) throw DataError("init_training: need at least 2 source classes");

  TrainState st;
  st.cfg = cfg;
  st.root = RngStream(cfg.seed);
  st.model.form = cfg.form;
  st.model.kernel = cfg.kernel;
  st.model.g = Mlp::make({source.dim(), cfg.hidden_dim, cfg.feature_dim},
                         {Act::Tanh, Act::Tanh}, st.root.split(1));
  st.model.c = Mlp::make({cfg.feature_dim, classes}, {Act::Identity}, st.root.split(2));
  if (cfg.form == TransferForm::Adversarial)
    st.model.critic = Mlp::make({cfg.feature_dim, cfg.critic_hidden, cfg.feature_dim},
                                {Act::Tanh, Act::Tanh}, st.root.split(3));

  if (target_train.n() > cfg.target_budget) {
    RngStream sub = st.root.split(8);
    const std::vector<int> keep =
        sub.sample_without_replacement(target_train.n(), cfg.target_budget);
    st.target_rows.resize(cfg.target_budget, target_train.dim());
    for (int i = 0; i < cfg.target_budget; ++i)
      st.target_rows.row(i) = target_train.features.row(keep[i]);
  } else {
    st.target_rows = target_train.features;
  }

  RngStream score_rng = st.root.split(4);
  const Mat z0 = mlp_eval(st.model.g, st.target_rows);
  if (cfg.score_fit.family == ScoreFitSpec::Family::Gaussian)
    st.model.score = detail::shrunk_gaussian_fit(z0, cfg.cov_shrinkage);
  else
    st.model.score = cfg.score_fit.fit(z0, score_rng);
  st.std_normal = GaussianModel::from_moments(
      Vec::Zero(cfg.feature_dim), Mat::Identity(cfg.feature_dim, cfg.feature_dim));

  st.opt_g = SgdState{cfg.lr, cfg.momentum, cfg.weight_decay, {}, {}};
  st.opt_c = SgdState{cfg.lr, cfg.momentum, cfg.weight_decay, {}, {}};
  st.opt_critic = SgdState{cfg.critic_lr, cfg.critic_momentum, cfg.critic_weight_decay, {}, {}};
  return st;
}

namespace detail {

// Refresh the score model from one batch of target features. The Gaussian
// family refits from the ring buffer (batch plus the last few hundred rows);
// GMM and VAE take a single gradient-style step.
inline void update_score_model(TrainState& st, const Mat& feats_t, RngStream& rng) {
  switch (st.cfg.score_fit.family) {
    case ScoreFitSpec::Family::Gaussian:
      st.buffer.push(feats_t);
      st.model.score = shrunk_gaussian_fit(st.buffer.contents(), st.cfg.cov_shrinkage);
      break;
    case ScoreFitSpec::Family::Gmm:
      st.model.score =
          gmm_sgd_step(std::get<GmmModel>(st.model.score), feats_t, st.cfg.score_lr);
      break;
    case ScoreFitSpec::Family::VaeCorrected:
    case ScoreFitSpec::Family::VaePaper:
      vae_elbo_step(std::get<VaeModel>(st.model.score), feats_t, st.cfg.score_lr, rng);
      break;
  }
}

// One pass over the source set. The transfer gradient is added to the
// classifier's feature gradient only when lambda > 0, so warm-up epochs are
// bitwise identical to plain ERM; the transfer loss itself is still computed
// for the log. The score model and (adversarial) critic are updated every
// batch regardless of lambda but never receive gradients from the g/c step.
inline EpochLog run_epoch(TrainState& st, const Dataset& source) {
  const TrainConfig& cfg = st.cfg;
  const int e = st.epoch;
  const int n = source.n();
  const int batch = cfg.batch_size;
  const int n_batches = n / batch;
  const int m = static_cast<int>(st.target_rows.rows());
  const double lambda =
      lambda_schedule(e, cfg.warmup_epochs, cfg.gamma, cfg.lambda_max, cfg.epochs);

  RngStream shuffle_rng = st.root.split(5).split(e + 1);
  const std::vector<int> order = shuffled_indices(n, shuffle_rng);
  RngStream target_rng = st.root.split(6).split(e + 1);
  const std::vector<int> t_order = cycled_target_indices(m, n_batches * batch, target_rng);
  RngStream score_epoch_rng = st.root.split(7).split(e + 1);

  double sum_ce = 0.0, sum_raw = 0.0, sum_scaled = 0.0;
  for (int b = 0; b < n_batches; ++b) {
    Mat xs(batch, source.dim());
    std::vector<int> ys(batch);
    Mat xt(batch, source.dim());
    for (int i = 0; i < batch; ++i) {
      const int si = order[b * batch + i];
      xs.row(i) = source.features.row(si);
      ys[i] = source.labels[si];
      xt.row(i) = st.target_rows.row(t_order[b * batch + i]);
    }

    auto [feats_s, tape_g] = mlp_forward(st.model.g, xs);
    RngStream score_rng = score_epoch_rng.split(b + 1);
    if (b % cfg.score_update_every == 0) {
      const Mat feats_t = mlp_eval(st.model.g, xt);
      update_score_model(st, feats_t, score_rng);
    }
    RngStream eval_rng = score_rng.split(1);
    const ScoreEval eval(st.model.score, &eval_rng);

    auto [logits, tape_c] = mlp_forward(st.model.c, feats_s);
    auto [ce, dlogits] = softmax_cross_entropy(logits, ys);
    auto [c_grads, d_feats] = mlp_backward(st.model.c, tape_c, dlogits);

    double raw = 0.0;
    if (st.model.form == TransferForm::Kernelized) {
      if (const auto* gm = std::get_if<GaussianModel>(&st.model.score)) {
        // Evaluate the V-statistic in the fitted model's whitened coordinates
        // (an RBF over the Mahalanobis metric, same null). The raw trace then
        // stays comparable across epochs even as the feature scale drifts,
        // and the tanh rescale keeps a usable gradient.
        const auto lower = gm->factor.lower.triangularView<Eigen::Lower>();
        const Mat centered = feats_s.rowwise() - gm->mean.transpose();
        const Mat whitened = lower.solve(centered.transpose()).transpose();
        const ScoreEval eval_std(st.std_normal);
        if (lambda > 0.0) {
          auto [value, d_white] = ksd_v_with_grad(cfg.kernel, eval_std, whitened);
          raw = value;
          const double scaled = std::tanh(raw);
          const Mat d_value =
              lower.transpose().solve(d_white.transpose()).transpose();
          d_feats += (lambda * (1.0 - scaled * scaled)) * d_value;
        } else {
          raw = ksd_v_statistic(cfg.kernel, eval_std, whitened);
        }
      } else if (lambda > 0.0) {
        auto [value, d_value] = ksd_v_with_grad(cfg.kernel, eval, feats_s);
        raw = value;
        const double scaled = std::tanh(raw);
        d_feats += (lambda * (1.0 - scaled * scaled)) * d_value;
      } else {
        raw = ksd_v_statistic(cfg.kernel, eval, feats_s);
      }
    } else {
      raw = adversarial_stein_estimate(eval, st.model.critic, feats_s, cfg.ascent_steps,
                                       st.opt_critic);
      if (lambda > 0.0) {
        const double scaled = std::tanh(raw);
        const double coef = lambda * (1.0 - scaled * scaled) / batch;
        for (int i = 0; i < batch; ++i)
          d_feats.row(i) += coef * stein_operator_feature_grad(eval, st.model.critic,
                                                              feats_s.row(i).transpose())
                                       .transpose();
      }
    }
    if (!std::isfinite(ce) || !std::isfinite(raw))
      throw NumericError("NonFiniteLoss: epoch " + std::to_string(e) + " batch " +
                         std::to_string(b) + " (loss_c=" + std::to_string(ce) +
                         ", loss_d=" + std::to_string(raw) + ")");

    auto [g_grads, dx] = mlp_backward(st.model.g, tape_g, d_feats);
    (void)dx;
    clip_gradients({&g_grads, &c_grads}, cfg.clip_norm);
    sgd_step(st.opt_g, st.model.g, g_grads);
    sgd_step(st.opt_c, st.model.c, c_grads);

    sum_ce += ce;
    sum_raw += raw;
    sum_scaled += std::tanh(raw);
  }

  st.epoch += 1;
  EpochLog log;
  log.epoch = e;
  log.loss_c = sum_ce / n_batches;
  log.loss_d_raw = sum_raw / n_batches;
  log.loss_d_scaled = sum_scaled / n_batches;
  log.lambda = lambda;
  return log;
}

}  // namespace detail

inline EpochLog train_epoch_kernelized(TrainState& st, const Dataset& source) {
  if (st.model.form != TransferForm::Kernelized)
    throw DataError("train_epoch_kernelized: model was built for the adversarial form");
  return detail::run_epoch(st, source);
}

inline EpochLog train_epoch_adversarial(TrainState& st, const Dataset& source) {
  if (st.model.form != TransferForm::Adversarial)
    throw DataError("train_epoch_adversarial: model was built for the kernelized form");
  return detail::run_epoch(st, source);
}

struct EvalReport {
  double accuracy = 0.0;
  double error = 0.0;
  int correct = 0;
  int total = 0;
};

inline EvalReport evaluate(const Mlp& g, const Mlp& c, const Dataset& data) {
  if (!data.labeled()) throw DataError("MissingLabels: evaluation needs labels");
  const Mat logits = mlp_eval(c, mlp_eval(g, data.features));
  const int k = static_cast<int>(logits.cols());
  int correct = 0;
  for (int i = 0; i < data.n(); ++i) {
    int arg = 0;
    for (int j = 1; j < k; ++j)
      if (logits(i, j) > logits(i, arg)) arg = j;  // ties keep the lowest class
    if (arg == data.labels[i]) ++correct;
  }
  EvalReport r;
  r.correct = correct;
  r.total = data.n();
  r.accuracy = static_cast<double>(correct) / data.n();
  r.error = 1.0 - r.accuracy;
  return r;
}

inline EvalReport evaluate(const UdaModel& model, const Dataset& data) {
  return evaluate(model.g, model.c, data);
}

struct UdaResult {
  std::vector<EpochLog> epochs;
  int best_epoch = -1;
  double best_acc = 0.0;
  UdaModel model;       // after the final epoch
  UdaModel best_model;  // checkpoint at best_epoch
};

// Full training run: per-epoch logs with target-test accuracy, best-epoch
// checkpointing on that accuracy (earliest epoch wins ties), and the final
// model. Identical configs reproduce the result bitwise.
inline UdaResult run_uda(const Dataset& source, const Dataset& target_train,
                         const Dataset& target_test, const TrainConfig& cfg) {
  if (!target_test.labeled()) throw DataError("MissingLabels: target test set needs labels");
  TrainState st = init_training(cfg, source, target_train);
  UdaResult result;
  result.best_acc = -1.0;
  for (int e = 0; e < cfg.epochs; ++e) {
    EpochLog log = cfg.form == TransferForm::Kernelized
                       ? train_epoch_kernelized(st, source)
                       : train_epoch_adversarial(st, source);
    log.target_acc = evaluate(st.model, target_test).accuracy;
    if (log.target_acc > result.best_acc) {
      result.best_acc = log.target_acc;
      result.best_epoch = e;
      result.best_model = st.model;
    }
    result.epochs.push_back(log);
  }
  result.model = st.model;
  return result;
}

inline nlohmann::ordered_json uda_model_to_json(const UdaModel& model) {
  nlohmann::ordered_json j;
  j["form"] = transfer_form_name(model.form);
  j["kernel"] = {{"family", kernel_name(model.kernel)},
                 {"bandwidth", model.kernel.bandwidth}};
  j["g"] = mlp_to_json(model.g);
  j["c"] = mlp_to_json(model.c);
  j["score"] = score_model_to_json(model.score);
  if (model.form == TransferForm::Adversarial)
    j["critic"] = mlp_to_json(model.critic);
  else
    j["critic"] = nullptr;
  return j;
}

inline UdaModel uda_model_from_json(const nlohmann::json& j) {
  UdaModel model;
  model.form = transfer_form_from_name(j.at("form").get<std::string>());
  model.kernel.family =
      kernel_family_from_name(j.at("kernel").at("family").get<std::string>());
  model.kernel.bandwidth = j.at("kernel").at("bandwidth").get<double>();
  model.g = mlp_from_json(j.at("g"));
  model.c = mlp_from_json(j.at("c"));
  model.score = score_model_from_json(j.at("score"));
  if (model.form == TransferForm::Adversarial) model.critic = mlp_from_json(j.at("critic"));
  model.check_shapes();
  return model;
}

}  // namespace steinuda
