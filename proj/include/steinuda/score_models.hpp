#pragma once

// Score functions d log q(z) / dz for the three target-model families:
// a full-covariance Gaussian, a diagonal-covariance mixture, and a small
// VAE whose score is a Monte Carlo average over the encoder posterior.
// Each family also carries fitting, sampling, densities where tractable,
// analytic score Jacobians, and JSON serialization.

#include "steinuda/core.hpp"
#include "steinuda/linalg.hpp"
#include "steinuda/nnet.hpp"

#include <json.hpp>

#include <cmath>
#include <string>
#include <variant>
#include <vector>

namespace steinuda {

inline constexpr double kLog2Pi = 1.8378770664093454836;

// ---------------------------------------------------------------------------
// Gaussian

struct GaussianModel {
  Vec mean;
  Mat cov;  // includes any jitter that was needed to factor it
  SpdFactor factor;

  int dim() const { return static_cast<int>(mean.size()); }

  static GaussianModel from_moments(const Vec& mean, const Mat& cov) {
    GaussianModel g;
    g.mean = mean;
    g.factor = spd_factor(cov);
    g.cov = cov;
    if (g.factor.jitter > 0.0)
      g.cov.diagonal().array() += g.factor.jitter;
    return g;
  }
};

// Maximum-likelihood fit: sample mean and 1/m covariance. Degenerate
// covariances pick up the escalating jitter from spd_factor, and the jittered
// matrix is what the model stores so score, density, and sampling agree.
inline GaussianModel fit_gaussian(const Mat& z) {
  const int m = static_cast<int>(z.rows());
  if (m < 2) throw DataError("TooFewSamples: fit_gaussian needs at least 2 rows");
  if (!z.allFinite()) throw NumericError("NonFiniteEval: fit_gaussian input");
  const Vec mu = z.colwise().mean().transpose();
  const Mat centered = z.rowwise() - mu.transpose();
  const Mat sigma = (centered.transpose() * centered) / static_cast<double>(m);
  return GaussianModel::from_moments(mu, sigma);
}

inline Vec gaussian_score(const GaussianModel& g, const Vec& z) {
  check_dims(z.size() == g.dim(), "gaussian_score point width");
  return -spd_solve(g.factor, Vec(z - g.mean));
}

inline Mat gaussian_score_jacobian(const GaussianModel& g) {
  return -spd_inverse(g.factor);
}

inline double gaussian_log_density(const GaussianModel& g, const Vec& z) {
  check_dims(z.size() == g.dim(), "gaussian_log_density point width");
  const Vec r = z - g.mean;
  return -0.5 * (g.dim() * kLog2Pi + g.factor.log_det + r.dot(spd_solve(g.factor, r)));
}

inline Vec gaussian_sample(const GaussianModel& g, RngStream& rng) {
  return g.mean + g.factor.lower * rng.normal_vec(g.dim());
}

// ---------------------------------------------------------------------------
// Diagonal-covariance Gaussian mixture

struct GmmModel {
  static constexpr double kVarFloor = 1e-6;

  Vec weights;              // simplex
  std::vector<Vec> means;   // one per component
  std::vector<Vec> vars;    // per-dimension variances, floored

  int components() const { return static_cast<int>(weights.size()); }
  int dim() const { return static_cast<int>(means.front().size()); }
};

namespace detail {

inline double diag_gauss_log_density(const Vec& mu, const Vec& var, const Vec& z) {
  double quad = 0.0, logdet = 0.0;
  for (int j = 0; j < z.size(); ++j) {
    const double r = z[j] - mu[j];
    quad += r * r / var[j];
    logdet += std::log(var[j]);
  }
  return -0.5 * (z.size() * kLog2Pi + logdet + quad);
}

// log weights + component log densities, plus their log-sum-exp
inline std::pair<Vec, double> gmm_log_joint(const GmmModel& m, const Vec& z) {
  const int k = m.components();
  Vec lj(k);
  for (int i = 0; i < k; ++i)
    lj[i] = std::log(m.weights[i]) + diag_gauss_log_density(m.means[i], m.vars[i], z);
  const double mx = lj.maxCoeff();
  double sum = 0.0;
  for (int i = 0; i < k; ++i) sum += std::exp(lj[i] - mx);
  return {lj, mx + std::log(sum)};
}

}  // namespace detail

inline Vec gmm_responsibilities(const GmmModel& m, const Vec& z) {
  check_dims(z.size() == m.dim(), "gmm_responsibilities point width");
  const auto [lj, lse] = detail::gmm_log_joint(m, z);
  Vec g(m.components());
  for (int i = 0; i < m.components(); ++i) g[i] = std::exp(lj[i] - lse);
  return g;
}

inline double gmm_log_density(const GmmModel& m, const Vec& z) {
  check_dims(z.size() == m.dim(), "gmm_log_density point width");
  return detail::gmm_log_joint(m, z).second;
}

// Score of the mixture: responsibility-weighted component scores.
inline Vec gmm_score(const GmmModel& m, const Vec& z) {
  const Vec gamma = gmm_responsibilities(m, z);
  Vec s = Vec::Zero(z.size());
  for (int i = 0; i < m.components(); ++i)
    s -= gamma[i] * ((z - m.means[i]).array() / m.vars[i].array()).matrix();
  return s;
}

// d score / dz: sum_i gamma_i (J_i + s_i s_i^T) - s s^T with J_i = -diag(1/var_i).
inline Mat gmm_score_jacobian(const GmmModel& m, const Vec& z) {
  const int d = static_cast<int>(z.size());
  const Vec gamma = gmm_responsibilities(m, z);
  Mat jac = Mat::Zero(d, d);
  Vec s = Vec::Zero(d);
  for (int i = 0; i < m.components(); ++i) {
    const Vec si = -((z - m.means[i]).array() / m.vars[i].array()).matrix();
    jac += gamma[i] * (si * si.transpose());
    jac.diagonal() -= gamma[i] * m.vars[i].cwiseInverse();
    s += gamma[i] * si;
  }
  jac -= s * s.transpose();
  return jac;
}

inline Vec gmm_sample(const GmmModel& m, RngStream& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int comp = m.components() - 1;
  for (int i = 0; i < m.components(); ++i) {
    acc += m.weights[i];
    if (u < acc) {
      comp = i;
      break;
    }
  }
  const Vec eta = rng.normal_vec(m.dim());
  return m.means[comp] + m.vars[comp].cwiseSqrt().cwiseProduct(eta);
}

// EM with a distance-weighted (k-means++ style) seeding. Stops when the mean
// log-likelihood gain drops below 1e-8 or after max_iters sweeps. The
// per-iteration likelihood trace is exposed for monotonicity audits.
inline GmmModel fit_gmm_em(const Mat& z, int k, int max_iters, RngStream& rng,
                           std::vector<double>* ll_trace = nullptr) {
  const int m = static_cast<int>(z.rows());
  const int d = static_cast<int>(z.cols());
  if (k < 1) throw DataError("fit_gmm_em: need at least one component");
  if (m < k) throw DataError("TooFewSamples: fit_gmm_em needs rows >= components");
  if (!z.allFinite()) throw NumericError("NonFiniteEval: fit_gmm_em input");

  GmmModel model;
  model.weights = Vec::Constant(k, 1.0 / k);
  const Vec data_mean = z.colwise().mean().transpose();
  Vec data_var(d);
  for (int j = 0; j < d; ++j)
    data_var[j] = std::max((z.col(j).array() - data_mean[j]).square().mean(),
                           GmmModel::kVarFloor);

  model.means.push_back(z.row(rng.uniform_int(m)).transpose());
  while (static_cast<int>(model.means.size()) < k) {
    Vec d2(m);
    for (int r = 0; r < m; ++r) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec& c : model.means)
        best = std::min(best, (z.row(r).transpose() - c).squaredNorm());
      d2[r] = best;
    }
    const double total = d2.sum();
    int pick;
    if (total <= 0.0) {
      pick = rng.uniform_int(m);
    } else {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      pick = m - 1;
      for (int r = 0; r < m; ++r) {
        acc += d2[r];
        if (u < acc) {
          pick = r;
          break;
        }
      }
    }
    model.means.push_back(z.row(pick).transpose());
  }
  model.vars.assign(k, data_var);

  Mat gamma(m, k);
  double prev_ll = -std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < max_iters; ++iter) {
    std::vector<double> row_ll(m);
    for (int r = 0; r < m; ++r) {
      const auto [lj, lse] = detail::gmm_log_joint(model, z.row(r).transpose());
      for (int i = 0; i < k; ++i) gamma(r, i) = std::exp(lj[i] - lse);
      row_ll[r] = lse;
    }
    const double ll = pairwise_sum(row_ll) / m;
    if (!std::isfinite(ll)) throw NumericError("NonFiniteLoss: fit_gmm_em likelihood");
    if (ll_trace) ll_trace->push_back(ll);
    if (ll - prev_ll < 1e-8) break;
    prev_ll = ll;

    for (int i = 0; i < k; ++i) {
      const double ni = gamma.col(i).sum();
      if (ni < 1e-10) continue;  // starved component keeps its parameters
      model.weights[i] = ni / m;
      const Vec mu = (gamma.col(i).transpose() * z).transpose() / ni;
      Vec var(d);
      for (int j = 0; j < d; ++j) {
        var[j] = std::max(
            (gamma.col(i).array() * (z.col(j).array() - mu[j]).square()).sum() / ni,
            GmmModel::kVarFloor);
      }
      model.means[i] = mu;
      model.vars[i] = var;
    }
    model.weights /= model.weights.sum();
  }
  return model;
}

// One ascent step on the batch mean log-likelihood, parameterized so the
// constraints survive the update: softmax logits for the weights and
// log-variances clamped at the floor.
inline GmmModel gmm_sgd_step(const GmmModel& model, const Mat& z, double lr) {
  const int m = static_cast<int>(z.rows());
  const int k = model.components();
  const int d = model.dim();
  check_dims(z.cols() == d, "gmm_sgd_step batch width");
  if (m < 1) throw DataError("EmptyDataset: gmm_sgd_step");

  Vec g_alpha = Vec::Zero(k);
  std::vector<Vec> g_mean(k, Vec::Zero(d)), g_logvar(k, Vec::Zero(d));
  for (int r = 0; r < m; ++r) {
    const Vec zr = z.row(r).transpose();
    const Vec gamma = gmm_responsibilities(model, zr);
    g_alpha += gamma - model.weights;
    for (int i = 0; i < k; ++i) {
      const Vec r_over_var = ((zr - model.means[i]).array() / model.vars[i].array()).matrix();
      g_mean[i] += gamma[i] * r_over_var;
      g_logvar[i] += 0.5 * gamma[i] *
                     ((zr - model.means[i]).cwiseProduct(r_over_var).array() - 1.0).matrix();
    }
  }

  GmmModel out = model;
  Vec alpha = model.weights.array().log().matrix();
  alpha += (lr / m) * g_alpha;
  const double mx = alpha.maxCoeff();
  const Vec expa = (alpha.array() - mx).exp().matrix();
  out.weights = expa / expa.sum();
  for (int i = 0; i < k; ++i) {
    out.means[i] += (lr / m) * g_mean[i];
    Vec logvar = model.vars[i].array().log().matrix();
    logvar += (lr / m) * g_logvar[i];
    out.vars[i] = logvar.array()
                      .max(std::log(GmmModel::kVarFloor))
                      .exp()
                      .max(GmmModel::kVarFloor)
                      .matrix();
  }
  return out;
}

// ---------------------------------------------------------------------------
// VAE with a unit-variance Gaussian likelihood

struct VaeModel {
  enum class ScoreVariant { Paper, Corrected };

  Mlp encoder;  // d -> hidden -> 2 latent (mean, log-variance)
  Mlp decoder;  // latent -> hidden -> d
  int latent_dim = 0;
  int mc_samples = 8;
  ScoreVariant variant = ScoreVariant::Corrected;

  int dim() const { return encoder.layers.front().in_dim(); }
};

inline VaeModel make_vae(int feature_dim, int hidden, int latent, const RngStream& rng,
                         VaeModel::ScoreVariant variant = VaeModel::ScoreVariant::Corrected,
                         int mc_samples = 8) {
  VaeModel v;
  v.encoder = Mlp::make({feature_dim, hidden, 2 * latent}, {Act::Tanh, Act::Identity},
                        rng.split(0));
  v.decoder = Mlp::make({latent, hidden, feature_dim}, {Act::Tanh, Act::Identity},
                        rng.split(1));
  v.latent_dim = latent;
  v.mc_samples = mc_samples;
  v.variant = variant;
  return v;
}

namespace detail {

struct VaeEncOut {
  Mat mu, logvar, sigma;  // batch x latent each
};

inline VaeEncOut split_encoder_output(const VaeModel& v, const Mat& enc) {
  VaeEncOut e;
  const int latent = v.latent_dim;
  e.mu = enc.leftCols(latent);
  e.logvar = enc.rightCols(latent);
  e.sigma = (0.5 * e.logvar.array()).exp().matrix();
  return e;
}

}  // namespace detail

// Evidence lower bound on a batch with the reparameterization noise pinned,
// so the value is a smooth deterministic function of data and parameters.
inline double vae_elbo(const VaeModel& v, const Mat& z, const Mat& eps) {
  const int n = static_cast<int>(z.rows());
  const int d = static_cast<int>(z.cols());
  check_dims(d == v.dim(), "vae_elbo batch width");
  check_dims(eps.rows() == n && eps.cols() == v.latent_dim, "vae_elbo noise shape");
  const auto e = detail::split_encoder_output(v, mlp_eval(v.encoder, z));
  const Mat xi = e.mu + e.sigma.cwiseProduct(eps);
  const Mat dec = mlp_eval(v.decoder, xi);
  std::vector<double> terms(n);
  for (int i = 0; i < n; ++i) {
    const double recon =
        -0.5 * d * kLog2Pi - 0.5 * (z.row(i) - dec.row(i)).squaredNorm();
    const double kl = 0.5 * (e.mu.row(i).squaredNorm() +
                             e.sigma.row(i).squaredNorm() - v.latent_dim -
                             e.logvar.row(i).sum());
    terms[i] = recon - kl;
  }
  return pairwise_sum(terms) / n;
}

struct VaeElboGrads {
  double elbo = 0;
  MlpGrads encoder;
  MlpGrads decoder;
};

// Gradients of the frozen-noise elbo with respect to both networks.
inline VaeElboGrads vae_elbo_grads(const VaeModel& v, const Mat& z, const Mat& eps) {
  const int n = static_cast<int>(z.rows());
  const int d = static_cast<int>(z.cols());
  check_dims(d == v.dim(), "vae_elbo_grads batch width");
  check_dims(eps.rows() == n && eps.cols() == v.latent_dim, "vae_elbo_grads noise shape");

  auto [enc_out, enc_tape] = mlp_forward(v.encoder, z);
  const auto e = detail::split_encoder_output(v, enc_out);
  const Mat xi = e.mu + e.sigma.cwiseProduct(eps);
  auto [dec_out, dec_tape] = mlp_forward(v.decoder, xi);

  std::vector<double> terms(n);
  for (int i = 0; i < n; ++i) {
    const double recon =
        -0.5 * d * kLog2Pi - 0.5 * (z.row(i) - dec_out.row(i)).squaredNorm();
    const double kl = 0.5 * (e.mu.row(i).squaredNorm() +
                             e.sigma.row(i).squaredNorm() - v.latent_dim -
                             e.logvar.row(i).sum());
    terms[i] = recon - kl;
  }

  VaeElboGrads out;
  out.elbo = pairwise_sum(terms) / n;
  if (!std::isfinite(out.elbo)) throw NumericError("NonFiniteLoss: vae_elbo_grads");

  // gradients of the negative elbo scaled by 1/n, then flipped at the end
  const Mat d_dec = (dec_out - z) / n;
  auto [dec_grads, d_xi] = mlp_backward(v.decoder, dec_tape, d_dec);
  const Mat d_mu = d_xi + e.mu / n;
  const Mat d_logvar = 0.5 * d_xi.cwiseProduct(e.sigma).cwiseProduct(eps) +
                       (e.sigma.array().square() - 1.0).matrix() / (2.0 * n);
  Mat d_enc(n, 2 * v.latent_dim);
  d_enc << d_mu, d_logvar;
  auto [enc_grads, d_z] = mlp_backward(v.encoder, enc_tape, d_enc);
  (void)d_z;
  dec_grads.scale(-1.0);
  enc_grads.scale(-1.0);
  out.decoder = std::move(dec_grads);
  out.encoder = std::move(enc_grads);
  return out;
}

// One plain-SGD ascent step on the elbo with fresh reparameterization noise;
// returns the pre-step elbo on that noise.
inline double vae_elbo_step(VaeModel& v, const Mat& z, double lr, RngStream& rng) {
  const Mat eps = rng.normal_mat(static_cast<int>(z.rows()), v.latent_dim);
  VaeElboGrads g = vae_elbo_grads(v, z, eps);
  g.encoder.scale(-1.0);  // sgd_step descends
  g.decoder.scale(-1.0);
  SgdState enc_state{lr, 0.0, 0.0, {}, {}};
  SgdState dec_state{lr, 0.0, 0.0, {}, {}};
  sgd_step(enc_state, v.encoder, g.encoder);
  sgd_step(dec_state, v.decoder, g.decoder);
  return g.elbo;
}

// Monte Carlo score with pinned noise, one row of eps per posterior draw.
//   corrected: mean_m [ D(xi_m) - z ]
//   paper:     mean_m [ ((2 pi)^(-d/2) exp(-||z - D(xi_m)||^2 / 2))^2 (D(xi_m) - z) ]
inline Vec vae_score_frozen(const VaeModel& v, const Vec& z, const Mat& eps) {
  const int d = static_cast<int>(z.size());
  check_dims(d == v.dim(), "vae_score point width");
  check_dims(eps.cols() == v.latent_dim && eps.rows() >= 1, "vae_score noise shape");
  const auto e = detail::split_encoder_output(v, mlp_eval(v.encoder, Mat(z.transpose())));
  const int mc = static_cast<int>(eps.rows());
  Mat xi(mc, v.latent_dim);
  for (int m = 0; m < mc; ++m)
    xi.row(m) = e.mu.row(0) + e.sigma.row(0).cwiseProduct(eps.row(m));
  const Mat dec = mlp_eval(v.decoder, xi);
  Vec s = Vec::Zero(d);
  for (int m = 0; m < mc; ++m) {
    const Vec diff = (dec.row(m).transpose() - z);
    if (v.variant == VaeModel::ScoreVariant::Corrected) {
      s += diff;
    } else {
      const double w = std::exp(-d * kLog2Pi - diff.squaredNorm());
      s += w * diff;
    }
  }
  return s / mc;
}

inline Vec vae_score(const VaeModel& v, const Vec& z, RngStream& rng) {
  return vae_score_frozen(v, z, rng.normal_mat(v.mc_samples, v.latent_dim));
}

// d score / dz for the frozen-noise score. With A_m = J_D(xi_m) J_xi_m and
// J_xi_m = J_mu + 0.5 diag(sigma o eps_m) J_logvar:
//   corrected: mean_m A_m - I
//   paper:     mean_m [ w_m (A_m - I) + (D_m - z) grad_z(w_m)^T ]
inline Mat vae_score_jacobian_frozen(const VaeModel& v, const Vec& z, const Mat& eps) {
  const int d = static_cast<int>(z.size());
  check_dims(d == v.dim(), "vae_score_jacobian point width");
  const int latent = v.latent_dim;
  const Mat enc_jac = mlp_jacobian(v.encoder, z);  // 2 latent x d
  const Mat j_mu = enc_jac.topRows(latent);
  const Mat j_logvar = enc_jac.bottomRows(latent);
  const auto e = detail::split_encoder_output(v, mlp_eval(v.encoder, Mat(z.transpose())));

  const int mc = static_cast<int>(eps.rows());
  Mat jac = Mat::Zero(d, d);
  for (int m = 0; m < mc; ++m) {
    const Vec se = e.sigma.row(0).cwiseProduct(eps.row(m)).transpose();
    const Vec xi = e.mu.row(0).transpose() + se;
    const Mat j_xi = j_mu + 0.5 * se.asDiagonal() * j_logvar;
    const Mat a = mlp_jacobian(v.decoder, xi) * j_xi;
    if (v.variant == VaeModel::ScoreVariant::Corrected) {
      jac += a;
    } else {
      const Vec diff = mlp_eval_vec(v.decoder, xi) - z;
      const double w = std::exp(-d * kLog2Pi - diff.squaredNorm());
      // grad_z w = -w grad_z r2 with r2 = ||z - D||^2 and d(z - D)/dz = I - A
      const Vec grad_w = 2.0 * w * ((Mat::Identity(d, d) - a).transpose() * diff);
      jac += w * (a - Mat::Identity(d, d)) + diff * grad_w.transpose();
    }
  }
  jac /= mc;
  if (v.variant == VaeModel::ScoreVariant::Corrected) jac -= Mat::Identity(d, d);
  return jac;
}

// Generative draw: latent prior through the decoder plus unit-variance noise.
inline Vec vae_sample(const VaeModel& v, RngStream& rng) {
  const Vec xi = rng.normal_vec(v.latent_dim);
  return mlp_eval_vec(v.decoder, xi) + rng.normal_vec(v.dim());
}

// ---------------------------------------------------------------------------
// Tagged union and the evaluation context used by the estimators

using ScoreModel = std::variant<GaussianModel, GmmModel, VaeModel>;

inline int score_model_dim(const ScoreModel& m) {
  return std::visit([](const auto& x) { return x.dim(); }, m);
}

inline std::string score_model_name(const ScoreModel& m) {
  if (std::holds_alternative<GaussianModel>(m)) return "gaussian";
  if (std::holds_alternative<GmmModel>(m)) return "gmm";
  const auto& v = std::get<VaeModel>(m);
  return v.variant == VaeModel::ScoreVariant::Corrected ? "vae-corrected" : "vae-paper";
}

inline double log_density(const ScoreModel& m, const Vec& z) {
  if (const auto* g = std::get_if<GaussianModel>(&m)) return gaussian_log_density(*g, z);
  if (const auto* g = std::get_if<GmmModel>(&m)) return gmm_log_density(*g, z);
  throw DataError("UnsupportedVariant: VAE log-density is intractable");
}

inline Vec sample(const ScoreModel& m, RngStream& rng) {
  if (const auto* g = std::get_if<GaussianModel>(&m)) return gaussian_sample(*g, rng);
  if (const auto* g = std::get_if<GmmModel>(&m)) return gmm_sample(*g, rng);
  return vae_sample(std::get<VaeModel>(m), rng);
}

inline Mat sample_matrix(const ScoreModel& m, int n, RngStream& rng) {
  Mat out(n, score_model_dim(m));
  for (int i = 0; i < n; ++i) out.row(i) = sample(m, rng).transpose();
  return out;
}

// Frozen evaluation context: for the VAE the reparameterization noise is drawn
// once and shared by every score and Jacobian query, so one estimator
// evaluation sees a single smooth score function.
class ScoreEval {
 public:
  explicit ScoreEval(const ScoreModel& model, RngStream* rng = nullptr) : model_(&model) {
    if (const auto* v = std::get_if<VaeModel>(&model)) {
      if (rng == nullptr)
        throw DataError("ScoreEval: VAE models need an RngStream for the score noise");
      eps_ = rng->normal_mat(v->mc_samples, v->latent_dim);
    }
  }

  ScoreEval(const ScoreModel& model, Mat eps) : model_(&model), eps_(std::move(eps)) {}

  int dim() const { return score_model_dim(*model_); }
  const ScoreModel& model() const { return *model_; }

  Vec score(const Vec& z) const {
    if (const auto* g = std::get_if<GaussianModel>(model_)) return gaussian_score(*g, z);
    if (const auto* g = std::get_if<GmmModel>(model_)) return gmm_score(*g, z);
    return vae_score_frozen(std::get<VaeModel>(*model_), z, eps_);
  }

  // n x d matrix of scores, one row per sample row
  Mat score_matrix(const Mat& z) const {
    Mat s(z.rows(), z.cols());
    for (int i = 0; i < z.rows(); ++i) s.row(i) = score(z.row(i).transpose()).transpose();
    return s;
  }

  Mat jacobian(const Vec& z) const {
    if (const auto* g = std::get_if<GaussianModel>(model_)) {
      return gaussian_score_jacobian(*g);
    }
    if (const auto* g = std::get_if<GmmModel>(model_)) return gmm_score_jacobian(*g, z);
    return vae_score_jacobian_frozen(std::get<VaeModel>(*model_), z, eps_);
  }

 private:
  const ScoreModel* model_;
  Mat eps_;
};

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::ordered_json score_model_to_json(const ScoreModel& m) {
  nlohmann::ordered_json j;
  if (const auto* g = std::get_if<GaussianModel>(&m)) {
    j["type"] = "gaussian";
    j["mean"] = std::vector<double>(g->mean.data(), g->mean.data() + g->mean.size());
    j["cov"] = std::vector<double>(g->cov.data(), g->cov.data() + g->cov.size());
  } else if (const auto* g = std::get_if<GmmModel>(&m)) {
    j["type"] = "gmm";
    j["weights"] =
        std::vector<double>(g->weights.data(), g->weights.data() + g->weights.size());
    auto pack = [](const std::vector<Vec>& vs) {
      std::vector<std::vector<double>> out;
      for (const Vec& v : vs) out.emplace_back(v.data(), v.data() + v.size());
      return out;
    };
    j["means"] = pack(g->means);
    j["variances"] = pack(g->vars);
  } else {
    const auto& v = std::get<VaeModel>(m);
    j["type"] = "vae";
    j["latent_dim"] = v.latent_dim;
    j["mc_samples"] = v.mc_samples;
    j["variant"] = v.variant == VaeModel::ScoreVariant::Corrected ? "corrected" : "paper";
    j["encoder"] = mlp_to_json(v.encoder);
    j["decoder"] = mlp_to_json(v.decoder);
  }
  return j;
}

inline ScoreModel score_model_from_json(const nlohmann::json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "gaussian") {
    const auto mean = j.at("mean").get<std::vector<double>>();
    const auto cov = j.at("cov").get<std::vector<double>>();
    const int d = static_cast<int>(mean.size());
    if (static_cast<int>(cov.size()) != d * d)
      throw DataError("ParseError: gaussian covariance must be dim^2 values");
    return GaussianModel::from_moments(Eigen::Map<const Vec>(mean.data(), d),
                                       Eigen::Map<const Mat>(cov.data(), d, d));
  }
  if (type == "gmm") {
    GmmModel g;
    const auto w = j.at("weights").get<std::vector<double>>();
    g.weights = Eigen::Map<const Vec>(w.data(), w.size());
    for (const auto& mj : j.at("means")) {
      const auto v = mj.get<std::vector<double>>();
      g.means.push_back(Eigen::Map<const Vec>(v.data(), v.size()));
    }
    for (const auto& vj : j.at("variances")) {
      const auto v = vj.get<std::vector<double>>();
      g.vars.push_back(Eigen::Map<const Vec>(v.data(), v.size()));
    }
    if (g.means.size() != g.vars.size() ||
        g.means.size() != static_cast<std::size_t>(g.weights.size()) || g.means.empty())
      throw DataError("ParseError: gmm component lists disagree");
    if (std::abs(g.weights.sum() - 1.0) > 1e-8 || g.weights.minCoeff() <= 0.0)
      throw DataError("ParseError: gmm weights must be a positive simplex");
    for (const Vec& v : g.vars)
      if (v.minCoeff() < GmmModel::kVarFloor * (1.0 - 1e-12))
        throw DataError("ParseError: gmm variance below the floor");
    return g;
  }
  if (type == "vae") {
    VaeModel v;
    v.latent_dim = j.at("latent_dim").get<int>();
    v.mc_samples = j.at("mc_samples").get<int>();
    const std::string variant = j.at("variant").get<std::string>();
    if (variant == "corrected") {
      v.variant = VaeModel::ScoreVariant::Corrected;
    } else if (variant == "paper") {
      v.variant = VaeModel::ScoreVariant::Paper;
    } else {
      throw DataError("UnsupportedVariant: vae score variant '" + variant + "'");
    }
    v.encoder = mlp_from_json(j.at("encoder"));
    v.decoder = mlp_from_json(j.at("decoder"));
    if (v.encoder.out_dim() != 2 * v.latent_dim ||
        v.decoder.layers.front().in_dim() != v.latent_dim ||
        v.decoder.out_dim() != v.encoder.layers.front().in_dim())
      throw DataError("DimMismatch: vae encoder/decoder widths");
    if (v.latent_dim < 1 || v.mc_samples < 1)
      throw DataError("ParseError: vae latent_dim and mc_samples must be positive");
    return v;
  }
  throw DataError("UnsupportedVariant: score model type '" + type + "'");
}

}  // namespace steinuda
