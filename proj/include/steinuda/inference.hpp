#pragma once

// Statistical harnesses around the discrepancy estimators: quadrature ground
// truth for the 1D Gaussian case, Stein-identity diagnostics, Monte-Carlo
// calibrated two-sample testing, convergence-rate fits, and the
// sample-imbalance sweep against an MMD permutation baseline.

#include "steinuda/core.hpp"
#include "steinuda/discrepancy.hpp"
#include "steinuda/kernels.hpp"
#include "steinuda/linalg.hpp"
#include "steinuda/score_models.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace steinuda {

// ---------------------------------------------------------------------------
// Gauss-Hermite quadrature (physicists' convention: integral of exp(-t^2) f).

struct QuadratureRule {
  Vec nodes;
  Vec weights;
};

// Golub-Welsch: nodes are eigenvalues of the symmetric tridiagonal Jacobi
// matrix with off-diagonal sqrt(k/2); weights come from the first eigenvector
// components scaled by the zeroth moment sqrt(pi).
inline QuadratureRule gauss_hermite(int n) {
  if (n < 1) throw DataError("gauss_hermite: need at least one node");
  Mat jacobi = Mat::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    const double off = std::sqrt(k / 2.0);
    jacobi(k - 1, k) = off;
    jacobi(k, k - 1) = off;
  }
  const auto [evals, evecs] = sym_eigen(jacobi);
  QuadratureRule rule;
  rule.nodes = evals;
  rule.weights.resize(n);
  const double sqrt_pi = std::sqrt(M_PI);
  for (int i = 0; i < n; ++i)
    rule.weights[i] = sqrt_pi * evecs(0, i) * evecs(0, i);
  return rule;
}

// E[f(X)] for X ~ N(mu, sigma^2) via substitution x = mu + sqrt(2) sigma t.
template <class F>
double gauss_expect(const QuadratureRule& rule, F&& f, double mu, double sigma) {
  const int n = static_cast<int>(rule.nodes.size());
  std::vector<double> terms(n);
  const double inv_sqrt_pi = 1.0 / std::sqrt(M_PI);
  for (int i = 0; i < n; ++i)
    terms[i] = rule.weights[i] * inv_sqrt_pi * f(mu + std::sqrt(2.0) * sigma * rule.nodes[i]);
  return pairwise_sum(terms);
}

// Ground-truth discrepancy E_{x,y ~ p}[u_q(x, y)] on a tensor node grid.
// Only the 1D Gaussian case has this oracle.
inline double ksd_quadrature_truth(const KernelSpec& kernel, const GaussianModel& p,
                                   const GaussianModel& q, int nodes_per_axis = 80) {
  if (p.dim() != 1 || q.dim() != 1)
    throw DataError("OracleUnavailable: quadrature ground truth needs 1D Gaussians");
  if (nodes_per_axis < 64)
    throw DataError("OracleUnavailable: need at least 64 nodes per axis");
  const QuadratureRule rule = gauss_hermite(nodes_per_axis);
  const double mu = p.mean[0];
  const double sigma = std::sqrt(p.cov(0, 0));
  const ScoreModel q_model = q;
  const ScoreEval eval(q_model);
  const double inv_pi = 1.0 / M_PI;
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(nodes_per_axis) * nodes_per_axis);
  Vec x(1), y(1);
  for (int i = 0; i < nodes_per_axis; ++i) {
    x[0] = mu + std::sqrt(2.0) * sigma * rule.nodes[i];
    for (int j = 0; j < nodes_per_axis; ++j) {
      y[0] = mu + std::sqrt(2.0) * sigma * rule.nodes[j];
      terms.push_back(rule.weights[i] * rule.weights[j] * inv_pi *
                      stein_kernel_u(kernel, eval, x, y));
    }
  }
  return pairwise_sum(terms);
}

// ---------------------------------------------------------------------------
// Stein-identity diagnostic: per-seed discrepancy estimates on fresh target
// draws; under a correct score the pooled z-score is standard-normal-ish.

using SamplerFn = std::function<Mat(int, RngStream&)>;

struct DiagnosticReport {
  std::vector<double> estimates;
  std::vector<double> std_errors;
  double pooled_estimate = 0;
  double pooled_se = 0;
  double pooled_z = 0;
  bool pass = false;  // |pooled_z| <= 3
};

inline DiagnosticReport stein_identity_diagnostic(const ScoreModel& score,
                                                  const KernelSpec& kernel,
                                                  const SamplerFn& sampler, int n,
                                                  int seeds, const RngStream& rng) {
  if (seeds < 1) throw DataError("stein_identity_diagnostic: need at least one seed");
  if (n < 2) throw DataError("TooFewSamples: diagnostic needs n >= 2");
  DiagnosticReport report;
  std::vector<double> se2(seeds);
  for (int k = 0; k < seeds; ++k) {
    RngStream child = rng.split(k + 1);
    const Mat x = sampler(n, child);
    RngStream eval_rng = child.split(1);
    const ScoreEval eval(score, &eval_rng);
    const SteinEstimate est = ksd_u_statistic(kernel, eval, x);
    report.estimates.push_back(est.value);
    report.std_errors.push_back(est.std_error);
    se2[k] = est.std_error * est.std_error;
  }
  report.pooled_estimate = pairwise_sum(report.estimates) / seeds;
  report.pooled_se = std::sqrt(pairwise_sum(se2)) / seeds;
  report.pooled_z = report.pooled_se > 0
                        ? report.pooled_estimate / report.pooled_se
                        : std::numeric_limits<double>::infinity();
  report.pass = std::abs(report.pooled_z) <= 3.0;
  return report;
}

// ---------------------------------------------------------------------------
// Score-model fitting recipe shared by the test harnesses and the CLI.

struct ScoreFitSpec {
  enum class Family { Gaussian, Gmm, VaeCorrected, VaePaper };
  Family family = Family::Gaussian;
  int components = 2;  // GMM
  int em_iters = 50;
  int hidden = 32;  // VAE
  int latent = 2;
  int mc_samples = 8;
  int vae_epochs = 30;
  int vae_batch = 32;
  double vae_lr = 1e-2;

  ScoreModel fit(const Mat& z, RngStream& rng) const {
    switch (family) {
      case Family::Gaussian:
        return fit_gaussian(z);
      case Family::Gmm:
        return fit_gmm_em(z, components, em_iters, rng);
      case Family::VaeCorrected:
      case Family::VaePaper: {
        const auto variant = family == Family::VaeCorrected
                                 ? VaeModel::ScoreVariant::Corrected
                                 : VaeModel::ScoreVariant::Paper;
        RngStream init = rng.split(1);
        VaeModel v = make_vae(static_cast<int>(z.cols()), hidden, latent, init, variant,
                              mc_samples);
        const int n = static_cast<int>(z.rows());
        const int batch = std::min(vae_batch, n);
        for (int epoch = 0; epoch < vae_epochs; ++epoch) {
          std::vector<int> order(n);
          for (int i = 0; i < n; ++i) order[i] = i;
          for (int i = n - 1; i > 0; --i)
            std::swap(order[i], order[rng.uniform_int(i + 1)]);
          for (int start = 0; start + batch <= n; start += batch) {
            Mat zb(batch, z.cols());
            for (int b = 0; b < batch; ++b) zb.row(b) = z.row(order[start + b]);
            vae_elbo_step(v, zb, vae_lr, rng);
          }
        }
        return v;
      }
    }
    throw DataError("ScoreFitSpec: unknown family");
  }
};

inline std::string fit_family_name(ScoreFitSpec::Family f) {
  switch (f) {
    case ScoreFitSpec::Family::Gaussian: return "gaussian";
    case ScoreFitSpec::Family::Gmm: return "gmm";
    case ScoreFitSpec::Family::VaeCorrected: return "vae-corrected";
    case ScoreFitSpec::Family::VaePaper: return "vae-paper";
  }
  return "unknown";
}

// "vae" is accepted as shorthand for the corrected variant, which is the one
// whose score actually matches the fitted density.
inline ScoreFitSpec::Family fit_family_from_name(const std::string& s) {
  if (s == "gaussian") return ScoreFitSpec::Family::Gaussian;
  if (s == "gmm") return ScoreFitSpec::Family::Gmm;
  if (s == "vae" || s == "vae-corrected") return ScoreFitSpec::Family::VaeCorrected;
  if (s == "vae-paper") return ScoreFitSpec::Family::VaePaper;
  throw DataError("unknown score family '" + s + "'");
}

// ---------------------------------------------------------------------------
// Monte-Carlo calibrated tests.

struct TestResult {
  double statistic = 0;
  double null_quantile = 0;
  double p_value = 0;
  double alpha = 0;
  bool reject = false;
  int null_draws = 0;
  int n = 0;
  int m = 0;
  std::vector<double> null_stats;  // sorted ascending
};

namespace detail {

// Empirical (1 - alpha) quantile with the +1 convention; the index clamps to
// -inf / +inf so alpha = 1 always rejects and alpha = 0 never does.
inline TestResult finish_test(double stat, std::vector<double> nulls, double alpha) {
  const int b = static_cast<int>(nulls.size());
  std::sort(nulls.begin(), nulls.end());
  int exceed = 0;
  for (double v : nulls)
    if (v >= stat) ++exceed;
  TestResult res;
  res.statistic = stat;
  res.alpha = alpha;
  res.null_draws = b;
  res.p_value = (1.0 + exceed) / (b + 1.0);
  const int idx = static_cast<int>(std::ceil((1.0 - alpha) * (b + 1))) - 1;
  if (idx < 0)
    res.null_quantile = -std::numeric_limits<double>::infinity();
  else if (idx >= b)
    res.null_quantile = std::numeric_limits<double>::infinity();
  else
    res.null_quantile = nulls[idx];
  res.reject = stat > res.null_quantile;
  res.null_stats = std::move(nulls);
  return res;
}

inline void check_test_args(double alpha, int null_draws) {
  if (alpha < 0.0 || alpha > 1.0) throw DataError("test level alpha must be in [0, 1]");
  if (null_draws < 1) throw DataError("need at least one null draw");
}

}  // namespace detail

// Null calibration with a known (exact-score) target: both the statistic's
// sample and every null replicate are drawn from q itself.
inline TestResult mc_null_test(const KernelSpec& kernel, const ScoreModel& q, const Mat& x,
                               double alpha, int null_draws, const RngStream& rng) {
  detail::check_test_args(alpha, null_draws);
  const int n = static_cast<int>(x.rows());
  RngStream eval_rng = rng.split(1);
  const ScoreEval eval(q, &eval_rng);
  const double stat = ksd_u_statistic(kernel, eval, x).value;
  std::vector<double> nulls(null_draws);
  RngStream null_rng = rng.split(2);
  for (int b = 0; b < null_draws; ++b) {
    RngStream child = null_rng.split(b);
    const Mat xb = sample_matrix(q, n, child);
    nulls[b] = ksd_u_statistic(kernel, eval, xb).value;
  }
  TestResult res = detail::finish_test(stat, std::move(nulls), alpha);
  res.n = n;
  res.m = 0;
  return res;
}

// Parametric Monte-Carlo two-sample test. The target enters only through the
// fitted score, so the null replicates redraw both the fit sample (size m)
// and the test sample (size n) from q-hat and refit, which bakes the
// score-estimation noise into the null distribution.
inline TestResult two_sample_test(const KernelSpec& kernel, const Mat& x_source,
                                  const Mat& z_target, const ScoreFitSpec& family,
                                  double alpha, int null_draws, const RngStream& rng) {
  detail::check_test_args(alpha, null_draws);
  const int n = static_cast<int>(x_source.rows());
  const int m = static_cast<int>(z_target.rows());
  if (n < 2 || m < 2) throw DataError("TooFewSamples: two_sample_test needs 2 rows per side");
  check_dims(x_source.cols() == z_target.cols(), "two_sample_test feature widths");

  RngStream fit_rng = rng.split(1);
  const ScoreModel q_hat = family.fit(z_target, fit_rng);
  RngStream eval_rng = rng.split(2);
  const ScoreEval eval(q_hat, &eval_rng);
  const double stat = ksd_u_statistic(kernel, eval, x_source, m).value;

  std::vector<double> nulls(null_draws);
  RngStream null_rng = rng.split(3);
  for (int b = 0; b < null_draws; ++b) {
    RngStream child = null_rng.split(b);
    const Mat zb = sample_matrix(q_hat, m, child);
    const Mat xb = sample_matrix(q_hat, n, child);
    RngStream refit_rng = child.split(1);
    const ScoreModel qb = family.fit(zb, refit_rng);
    RngStream eval_b = child.split(2);
    const ScoreEval eval_null(qb, &eval_b);
    nulls[b] = ksd_u_statistic(kernel, eval_null, xb, m).value;
  }
  TestResult res = detail::finish_test(stat, std::move(nulls), alpha);
  res.n = n;
  res.m = m;
  return res;
}

// MMD permutation baseline: one pooled Gram matrix, then each permutation is
// a membership re-partition evaluated with one matrix-vector product.
inline TestResult mmd_permutation_test(const KernelSpec& kernel, const Mat& x, const Mat& y,
                                       double alpha, int permutations,
                                       const RngStream& rng) {
  detail::check_test_args(alpha, permutations);
  const int n = static_cast<int>(x.rows());
  const int m = static_cast<int>(y.rows());
  if (n < 2 || m < 2)
    throw DataError("TooFewSamples: mmd_permutation_test needs 2 rows per side");
  check_dims(x.cols() == y.cols(), "mmd_permutation_test feature widths");
  const int total = n + m;
  Mat pooled(total, x.cols());
  pooled.topRows(n) = x;
  pooled.bottomRows(m) = y;
  const Mat gram = gram_matrix(kernel, pooled);
  const Vec diag = gram.diagonal();
  const double total_sum = gram.sum();
  const double diag_sum = diag.sum();

  auto mmd_for = [&](const std::vector<int>& y_side) {
    Vec t = Vec::Zero(total);
    for (int idx : y_side) t[idx] = 1.0;
    const Vec kt = gram * t;
    const double yy_full = t.dot(kt);
    const double diag_y = t.dot(diag);
    const double cross = kt.sum() - yy_full;
    const double xx_full = total_sum - 2.0 * cross - yy_full;
    const double diag_x = diag_sum - diag_y;
    return (xx_full - diag_x) / (static_cast<double>(n) * (n - 1)) +
           (yy_full - diag_y) / (static_cast<double>(m) * (m - 1)) -
           2.0 * cross / (static_cast<double>(n) * m);
  };

  std::vector<int> observed(m);
  for (int i = 0; i < m; ++i) observed[i] = n + i;
  const double stat = mmd_for(observed);

  RngStream perm_rng = rng.split(1);
  std::vector<double> nulls(permutations);
  for (int b = 0; b < permutations; ++b)
    nulls[b] = mmd_for(perm_rng.sample_without_replacement(total, m));
  TestResult res = detail::finish_test(stat, std::move(nulls), alpha);
  res.n = n;
  res.m = m;
  return res;
}

// ---------------------------------------------------------------------------
// Convergence-rate experiment against the quadrature ground truth.

struct RateFit {
  std::vector<int> sizes;
  std::vector<double> rmse;
  double slope = 0;
  double slope_se = 0;
  double intercept = 0;
};

struct RateRecord {
  int phase = 0;  // 1 varies n (exact score), 2 varies m (fitted score)
  int size = 0;
  int rep = 0;
  double estimate = 0;
  double error = 0;
};

struct ConvergenceResult {
  RateFit by_n;
  RateFit by_m;
  double truth = 0;
  int n_fixed = 0;
  std::vector<RateRecord> records;
};

namespace detail {

inline void fit_loglog(RateFit& fit) {
  const int k = static_cast<int>(fit.sizes.size());
  if (k < 2) throw DataError("rate fit needs at least two grid points");
  double mx = 0, my = 0;
  std::vector<double> lx(k), ly(k);
  for (int i = 0; i < k; ++i) {
    lx[i] = std::log(static_cast<double>(fit.sizes[i]));
    ly[i] = std::log(fit.rmse[i]);
    mx += lx[i] / k;
    my += ly[i] / k;
  }
  double sxx = 0, sxy = 0;
  for (int i = 0; i < k; ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
  }
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  if (k > 2) {
    double rss = 0;
    for (int i = 0; i < k; ++i) {
      const double r = ly[i] - (fit.intercept + fit.slope * lx[i]);
      rss += r * r;
    }
    fit.slope_se = std::sqrt(rss / (k - 2) / sxx);
  } else {
    fit.slope_se = std::numeric_limits<double>::infinity();
  }
}

inline void check_grid(const std::vector<int>& grid, const char* what) {
  if (grid.size() < 2) throw DataError(std::string(what) + ": need at least two sizes");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 2) throw DataError(std::string(what) + ": sizes must be at least 2");
    if (i > 0 && grid[i] <= grid[i - 1])
      throw DataError(std::string(what) + ": sizes must be strictly increasing");
  }
}

}  // namespace detail

// Phase 1 isolates the n^{-1/2} estimation error with the exact score; phase
// 2 fixes a large n and varies the score-fit sample size m. Both report RMSE
// against the quadrature truth and a log-log OLS slope. n_fixed = 0 picks
// twice the largest n in the grid.
inline ConvergenceResult convergence_experiment(const GaussianModel& p,
                                                const GaussianModel& q,
                                                const KernelSpec& kernel,
                                                const std::vector<int>& n_grid,
                                                const std::vector<int>& m_grid, int reps,
                                                const RngStream& rng, int n_fixed = 0) {
  if (p.dim() != 1 || q.dim() != 1)
    throw DataError("OracleUnavailable: convergence_experiment needs 1D Gaussians");
  detail::check_grid(n_grid, "n_grid");
  detail::check_grid(m_grid, "m_grid");
  if (reps < 1) throw DataError("convergence_experiment: reps must be positive");

  ConvergenceResult out;
  out.truth = ksd_quadrature_truth(kernel, p, q, 80);
  out.n_fixed = n_fixed > 0 ? n_fixed : 2 * n_grid.back();
  const ScoreModel p_model = p;
  const ScoreModel q_model = q;
  const ScoreEval exact_eval(q_model);

  const RngStream phase1 = rng.split(1);
  out.by_n.sizes = n_grid;
  for (std::size_t gi = 0; gi < n_grid.size(); ++gi) {
    const RngStream grid_rng = phase1.split(gi);
    std::vector<double> sq_errs(reps);
    for (int r = 0; r < reps; ++r) {
      RngStream child = grid_rng.split(r);
      const Mat x = sample_matrix(p_model, n_grid[gi], child);
      const double est = ksd_u_statistic(kernel, exact_eval, x).value;
      const double err = est - out.truth;
      sq_errs[r] = err * err;
      out.records.push_back({1, n_grid[gi], r, est, err});
    }
    out.by_n.rmse.push_back(std::sqrt(pairwise_sum(sq_errs) / reps));
  }
  detail::fit_loglog(out.by_n);

  const RngStream phase2 = rng.split(2);
  out.by_m.sizes = m_grid;
  for (std::size_t gi = 0; gi < m_grid.size(); ++gi) {
    const RngStream grid_rng = phase2.split(gi);
    std::vector<double> sq_errs(reps);
    for (int r = 0; r < reps; ++r) {
      RngStream child = grid_rng.split(r);
      const Mat zm = sample_matrix(q_model, m_grid[gi], child);
      const ScoreModel q_hat = fit_gaussian(zm);
      const ScoreEval fitted_eval(q_hat);
      const Mat x = sample_matrix(p_model, out.n_fixed, child);
      const double est = ksd_u_statistic(kernel, fitted_eval, x, m_grid[gi]).value;
      const double err = est - out.truth;
      sq_errs[r] = err * err;
      out.records.push_back({2, m_grid[gi], r, est, err});
    }
    out.by_m.rmse.push_back(std::sqrt(pairwise_sum(sq_errs) / reps));
  }
  detail::fit_loglog(out.by_m);
  return out;
}

// ---------------------------------------------------------------------------
// Imbalance sweep: calibration and power of the Monte-Carlo test versus the
// MMD permutation test as the target sample shrinks.

struct SweepRow {
  int m = 0;
  double ksd_type1 = 0;
  double ksd_power = 0;
  double mmd_type1 = 0;
  double mmd_power = 0;
  int trials = 0;
};

struct SweepRecord {
  int m = 0;
  int trial = 0;
  bool alternative = false;  // false: H0, true: shifted source
  double ksd_stat = 0;
  bool ksd_reject = false;
  double mmd_stat = 0;
  bool mmd_reject = false;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::vector<SweepRecord> records;
  int n_fixed = 0;
  double alpha = 0;
  double shift = 0;
  int null_draws = 0;
  int permutations = 0;
};

inline SweepResult imbalance_sweep(int d, int n_fixed, const std::vector<int>& m_grid,
                                   int trials, const RngStream& rng, double alpha = 0.05,
                                   int null_draws = 100, int permutations = 200,
                                   double shift = 0.5,
                                   const KernelSpec& kernel = {KernelFamily::Rbf, 1.0}) {
  detail::check_grid(m_grid, "m_grid");
  if (trials < 1) throw DataError("imbalance_sweep: trials must be positive");
  if (d < 1) throw DataError("imbalance_sweep: dimension must be positive");
  ScoreFitSpec family;  // Gaussian target family matches the generating law

  SweepResult out;
  out.n_fixed = n_fixed;
  out.alpha = alpha;
  out.shift = shift;
  out.null_draws = null_draws;
  out.permutations = permutations;

  for (std::size_t gi = 0; gi < m_grid.size(); ++gi) {
    const int m = m_grid[gi];
    const RngStream grid_rng = rng.split(gi);
    SweepRow row;
    row.m = m;
    row.trials = trials;
    int ksd_h0 = 0, ksd_h1 = 0, mmd_h0 = 0, mmd_h1 = 0;
    for (int t = 0; t < trials; ++t) {
      RngStream child = grid_rng.split(t);
      Mat x0 = child.normal_mat(n_fixed, d);
      Mat z0 = child.normal_mat(m, d);
      Mat x1 = child.normal_mat(n_fixed, d);
      x1.array() += shift;
      Mat z1 = child.normal_mat(m, d);

      const TestResult k0 =
          two_sample_test(kernel, x0, z0, family, alpha, null_draws, child.split(1));
      const TestResult k1 =
          two_sample_test(kernel, x1, z1, family, alpha, null_draws, child.split(2));
      const TestResult m0 =
          mmd_permutation_test(kernel, x0, z0, alpha, permutations, child.split(3));
      const TestResult m1 =
          mmd_permutation_test(kernel, x1, z1, alpha, permutations, child.split(4));
      ksd_h0 += k0.reject ? 1 : 0;
      ksd_h1 += k1.reject ? 1 : 0;
      mmd_h0 += m0.reject ? 1 : 0;
      mmd_h1 += m1.reject ? 1 : 0;
      out.records.push_back({m, t, false, k0.statistic, k0.reject, m0.statistic, m0.reject});
      out.records.push_back({m, t, true, k1.statistic, k1.reject, m1.statistic, m1.reject});
    }
    row.ksd_type1 = static_cast<double>(ksd_h0) / trials;
    row.ksd_power = static_cast<double>(ksd_h1) / trials;
    row.mmd_type1 = static_cast<double>(mmd_h0) / trials;
    row.mmd_power = static_cast<double>(mmd_h1) / trials;
    out.rows.push_back(row);
  }
  return out;
}

}  // namespace steinuda
