#pragma once

// Stein discrepancy estimators. The kernelized path evaluates the Stein
// kernel
//   u_q(x, x') = s(x)^T s(x') k + s(x)^T grad_x' k + grad_x k^T s(x')
//                + tr d2k/dx dx'
// over sample pairs; the adversarial path maximizes the Langevin-Stein
// operator A_q f = f^T s + div f over a small network critic.
//
// Pair sums are accumulated with ExactSum, so estimates are bitwise
// reproducible and exactly invariant under row permutations, and the terms
// of u are grouped so that u(x, x') == u(x', x) holds bitwise.

#include "steinuda/core.hpp"
#include "steinuda/kernels.hpp"
#include "steinuda/linalg.hpp"
#include "steinuda/nnet.hpp"
#include "steinuda/score_models.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace steinuda {

// Single-pair Stein kernel.
inline double stein_kernel_u(const KernelSpec& spec, const ScoreEval& eval, const Vec& x,
                             const Vec& xp) {
  check_dims(x.size() == xp.size() && x.size() == eval.dim(), "stein_kernel_u widths");
  const Vec sx = eval.score(x);
  const Vec sy = eval.score(xp);
  const Vec delta = x - xp;
  const double r2 = delta.squaredNorm();
  const RadialProfile p = radial_profile(spec, r2);
  const int d = static_cast<int>(x.size());
  const double t1 = p.g * sx.dot(sy);
  const double t2 = -2.0 * p.g1 * sx.dot(delta);
  const double t3 = 2.0 * p.g1 * delta.dot(sy);
  const double t4 = -2.0 * d * p.g1 - 4.0 * p.g2 * r2;
  // grouping (t2 + t3) keeps the evaluation exactly symmetric in x and x'
  return (t1 + (t2 + t3)) + t4;
}

namespace detail {

struct ProfileArrays {
  Eigen::ArrayXd g, g1, g2;
};

inline ProfileArrays profile_arrays(const KernelSpec& spec, const Eigen::ArrayXd& r2) {
  const double s2 = spec.bandwidth * spec.bandwidth;
  ProfileArrays p;
  switch (spec.family) {
    case KernelFamily::Rbf:
      // scalar exp per entry: Eigen's vectorized exp rounds packet lanes and
      // tail entries differently, which would break exact pair symmetry
      p.g.resize(r2.size());
      for (Eigen::Index i = 0; i < r2.size(); ++i)
        p.g[i] = std::exp(-r2[i] / (2.0 * s2));
      p.g1 = -p.g / (2.0 * s2);
      p.g2 = p.g / (4.0 * s2 * s2);
      break;
    case KernelFamily::Imq: {
      const Eigen::ArrayXd b = 1.0 + r2 / (2.0 * s2);
      const Eigen::ArrayXd b12 = b.sqrt();
      p.g = 1.0 / b12;
      p.g1 = -1.0 / (4.0 * s2 * b * b12);
      p.g2 = 3.0 / (16.0 * s2 * s2 * b * b * b12);
      break;
    }
  }
  return p;
}

// Shared batched evaluation: scores and inner products are precomputed once,
// then each row of the Stein kernel matrix comes from four GEMVs and
// elementwise profile arrays.
struct SteinRows {
  const KernelSpec spec;
  const Mat& x;
  Mat s;
  Vec xn2;   // ||x_i||^2
  Vec ddot;  // x_i . s_i

  SteinRows(const KernelSpec& spec_, const ScoreEval& eval, const Mat& x_)
      : spec(spec_), x(x_) {
    const int n = static_cast<int>(x.rows());
    if (n < 1) throw DataError("EmptyDataset: Stein estimator input");
    check_dims(static_cast<int>(x.cols()) == eval.dim(), "Stein estimator feature width");
    if (!x.allFinite()) throw NumericError("NonFiniteEval: Stein estimator input");
    s = eval.score_matrix(x);
    if (!s.allFinite()) throw NumericError("NonFiniteEval: score evaluations");
    xn2 = x.rowwise().squaredNorm();
    ddot = (x.cwiseProduct(s)).rowwise().sum();
  }

  int n() const { return static_cast<int>(x.rows()); }
  int d() const { return static_cast<int>(x.cols()); }

  // u(x_i, x_j) for every j, in one vector.
  Eigen::ArrayXd row(int i) const {
    const Vec xi = x.row(i).transpose();
    const Vec si = s.row(i).transpose();
    const Eigen::ArrayXd xxt = (x * xi).array();   // x_j . x_i
    const Eigen::ArrayXd sxt = (x * si).array();   // x_j . s_i
    const Eigen::ArrayXd ssx = (s * xi).array();   // s_j . x_i
    const Eigen::ArrayXd sst = (s * si).array();   // s_j . s_i
    const Eigen::ArrayXd r2 = xn2[i] + xn2.array() - 2.0 * xxt;
    const ProfileArrays p = profile_arrays(spec, r2);
    const Eigen::ArrayXd t1 = sst * p.g;
    const Eigen::ArrayXd t2 = -2.0 * p.g1 * (ddot[i] - sxt);
    const Eigen::ArrayXd t3 = 2.0 * p.g1 * (ssx - ddot.array());
    const Eigen::ArrayXd t4 = -2.0 * d() * p.g1 - 4.0 * p.g2 * r2;
    return (t1 + (t2 + t3)) + t4;
  }
};

}  // namespace detail

// Full Stein kernel matrix, diagonal included.
inline Mat stein_gram(const KernelSpec& spec, const ScoreEval& eval, const Mat& x) {
  const detail::SteinRows rows(spec, eval, x);
  const int n = rows.n();
  Mat g(n, n);
  for (int i = 0; i < n; ++i) g.row(i) = rows.row(i).transpose();
  return g;
}

struct SteinEstimate {
  double value = 0;
  double u_variance = 0;  // sample variance of the off-diagonal Stein kernel
  double std_error = 0;   // sqrt(2 u_variance / n)
  int n = 0;
  int m = 0;  // model-fit sample count; 0 when the score is exact
};

// U-statistic estimate of the discrepancy: mean of u over distinct pairs.
inline SteinEstimate ksd_u_statistic(const KernelSpec& spec, const ScoreEval& eval,
                                     const Mat& x, int m_fit = 0) {
  const detail::SteinRows rows(spec, eval, x);
  const int n = rows.n();
  if (n < 2) throw DataError("TooFewSamples: ksd_u_statistic needs at least 2 rows");
  ExactSum sum_u, sum_u2;
  for (int i = 0; i < n; ++i) {
    const Eigen::ArrayXd u = rows.row(i);
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      sum_u.add(u[j]);
      sum_u2.add(u[j] * u[j]);
    }
  }
  const double npairs = static_cast<double>(n) * (n - 1);
  const double total = sum_u.result();
  const double total2 = sum_u2.result();
  check_finite(total, "ksd_u_statistic pair sum");
  SteinEstimate est;
  est.value = total / npairs;
  est.u_variance = std::max((total2 - total * total / npairs) / (npairs - 1.0), 0.0);
  est.std_error = std::sqrt(2.0 * est.u_variance / n);
  est.n = n;
  est.m = m_fit;
  return est;
}

// V-statistic: mean of u over all pairs, diagonal included.
inline double ksd_v_statistic(const KernelSpec& spec, const ScoreEval& eval, const Mat& x) {
  const detail::SteinRows rows(spec, eval, x);
  const int n = rows.n();
  ExactSum sum_u;
  for (int i = 0; i < n; ++i) {
    const Eigen::ArrayXd u = rows.row(i);
    for (int j = 0; j < n; ++j) sum_u.add(u[j]);
  }
  const double total = sum_u.result();
  check_finite(total, "ksd_v_statistic pair sum");
  return total / (static_cast<double>(n) * n);
}

// V-statistic together with its gradient in the sample locations. By the
// symmetry of u,
//   d V / d x_a = (2 / n^2) sum_j d1u(x_a, x_j)
// where d1u is the partial derivative of u in its first argument:
//   d1u(x, y) = J_s(x)^T (g s(y) - 2 g' delta) + 2 g' (s(y) - s(x))
//             + delta [ 2 g' s(x).s(y) - 4 g'' s(x).delta + 4 g'' delta.s(y)
//                       - 4 d g'' - 8 g''' r2 - 8 g'' ]
inline std::pair<double, Mat> ksd_v_with_grad(const KernelSpec& spec,
                                              const ScoreEval& eval, const Mat& x) {
  const detail::SteinRows rows(spec, eval, x);
  const int n = rows.n();
  const int d = rows.d();
  ExactSum sum_u;
  Mat grad = Mat::Zero(n, d);
  for (int a = 0; a < n; ++a) {
    const Eigen::ArrayXd u = rows.row(a);
    for (int j = 0; j < n; ++j) sum_u.add(u[j]);

    const Vec xa = x.row(a).transpose();
    const Vec sa = rows.s.row(a).transpose();
    const Mat jac_a = eval.jacobian(xa);
    Vec acc = Vec::Zero(d);
    for (int j = 0; j < n; ++j) {
      const Vec xj = x.row(j).transpose();
      const Vec sj = rows.s.row(j).transpose();
      const Vec delta = xa - xj;
      const double r2 = delta.squaredNorm();
      const RadialProfile p = radial_profile(spec, r2);
      acc += jac_a.transpose() * (p.g * sj - 2.0 * p.g1 * delta);
      acc += 2.0 * p.g1 * (sj - sa);
      const double radial = 2.0 * p.g1 * sa.dot(sj) - 4.0 * p.g2 * sa.dot(delta) +
                            4.0 * p.g2 * delta.dot(sj) - 4.0 * d * p.g2 -
                            8.0 * p.g3 * r2 - 8.0 * p.g2;
      acc += radial * delta;
    }
    grad.row(a) = (2.0 / (static_cast<double>(n) * n)) * acc.transpose();
  }
  const double total = sum_u.result();
  check_finite(total, "ksd_v_with_grad pair sum");
  return {total / (static_cast<double>(n) * n), std::move(grad)};
}

// Spectral-regularized discrepancy: with A = G/n and eigenpairs (s_i, v_i),
//   value = (1/n) sum_i s_i^2 / (s_i + lambda) (1^T v_i)^2.
// At lambda = 0 this telescopes back to the V-statistic; negative eigenvalues
// (possible with estimated scores) are clipped to zero.
inline double regularized_ksd(const KernelSpec& spec, const ScoreEval& eval, const Mat& x,
                              double lambda) {
  if (lambda < 0.0) throw DataError("regularized_ksd: lambda must be non-negative");
  const Mat g = stein_gram(spec, eval, x);
  const int n = static_cast<int>(g.rows());
  const Mat a = g / n;
  const auto [evals, evecs] = sym_eigen(a);
  const Vec ones = Vec::Ones(n);
  double value = 0.0;
  for (int i = 0; i < n; ++i) {
    const double s = std::max(evals[i], 0.0);
    if (s == 0.0) continue;
    const double proj = evecs.col(i).dot(ones);
    value += s * s / (s + lambda) * proj * proj;
  }
  return value / n;
}

// Two-sample MMD U-statistic for an arbitrary symmetric kernel, which may be
// an ordinary kernel or a Stein kernel closure.
template <class KernelFn>
double mmd_u_statistic(KernelFn&& kernel, const Mat& x, const Mat& y) {
  const int n = static_cast<int>(x.rows());
  const int m = static_cast<int>(y.rows());
  if (n < 2 || m < 2) throw DataError("TooFewSamples: mmd_u_statistic needs 2 rows per side");
  check_dims(x.cols() == y.cols(), "mmd_u_statistic feature widths");
  ExactSum xx, yy, xy;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j) xx.add(kernel(Vec(x.row(i).transpose()), Vec(x.row(j).transpose())));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j)
      if (i != j) yy.add(kernel(Vec(y.row(i).transpose()), Vec(y.row(j).transpose())));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      xy.add(kernel(Vec(x.row(i).transpose()), Vec(y.row(j).transpose())));
  const double v = xx.result() / (static_cast<double>(n) * (n - 1)) +
                   yy.result() / (static_cast<double>(m) * (m - 1)) -
                   2.0 * xy.result() / (static_cast<double>(n) * m);
  check_finite(v, "mmd_u_statistic");
  return v;
}

// Langevin-Stein operator applied to a network critic at one point. The
// divergence is exact, one reverse pass per coordinate.
inline double apply_stein_operator(const ScoreEval& eval, const Mlp& critic, const Vec& x) {
  check_dims(critic.in_dim() == eval.dim() && critic.out_dim() == eval.dim(),
             "apply_stein_operator critic width");
  const Vec fx = mlp_eval_vec(critic, x);
  return fx.dot(eval.score(x)) + mlp_divergence(critic, x);
}

inline double stein_operator_batch_mean(const ScoreEval& eval, const Mlp& critic,
                                        const Mat& x) {
  const int n = static_cast<int>(x.rows());
  if (n < 1) throw DataError("EmptyDataset: stein_operator_batch_mean");
  std::vector<double> vals(n);
  for (int i = 0; i < n; ++i)
    vals[i] = apply_stein_operator(eval, critic, x.row(i).transpose());
  return pairwise_sum(vals) / n;
}

// Gradient of A_q f(z) in the input:
//   J_f(z)^T s(z) + J_s(z)^T f(z) + grad_z div f(z).
inline Vec stein_operator_feature_grad(const ScoreEval& eval, const Mlp& critic,
                                       const Vec& z) {
  const Vec fz = mlp_eval_vec(critic, z);
  const DivergenceGrads dg = mlp_divergence_grads(critic, z);
  return mlp_jacobian(critic, z).transpose() * eval.score(z) +
         eval.jacobian(z).transpose() * fz + dg.d_input;
}

namespace detail {

// Batch objective mean_i A_q f(x_i) and its critic-parameter gradient.
inline std::pair<double, MlpGrads> stein_operator_param_grads(const Mlp& critic,
                                                              const Mat& x,
                                                              const Mat& scores) {
  const int n = static_cast<int>(x.rows());
  auto [out, tape] = mlp_forward(critic, x);
  std::vector<double> fs_terms(n);
  for (int i = 0; i < n; ++i) fs_terms[i] = out.row(i).dot(scores.row(i));
  auto [grads, dx] = mlp_backward(critic, tape, Mat(scores / n));
  (void)dx;
  std::vector<double> div_terms(n);
  for (int i = 0; i < n; ++i) {
    DivergenceGrads dg = mlp_divergence_grads(critic, x.row(i).transpose());
    div_terms[i] = dg.divergence;
    grads.accumulate(dg.d_params, 1.0 / n);
  }
  const double value = (pairwise_sum(fs_terms) + pairwise_sum(div_terms)) / n;
  if (!std::isfinite(value)) throw NumericError("NonFiniteLoss: Stein operator objective");
  return {value, std::move(grads)};
}

}  // namespace detail

// Adversarial estimate: run ascent_steps of SGD ascent on the critic over the
// batch objective mean A_q f, then report the post-update objective. The
// optimizer state handles learning rate, momentum, and weight decay; the trace
// (when requested) records the objective before each step and after the last.
inline double adversarial_stein_estimate(const ScoreEval& eval, Mlp& critic, const Mat& x,
                                         int ascent_steps, SgdState& opt,
                                         std::vector<double>* trace = nullptr) {
  check_dims(critic.in_dim() == eval.dim() && critic.out_dim() == eval.dim(),
             "adversarial_stein_estimate critic width");
  if (x.rows() < 1) throw DataError("EmptyDataset: adversarial_stein_estimate");
  if (ascent_steps < 0) throw DataError("adversarial_stein_estimate: negative steps");
  const Mat scores = eval.score_matrix(x);
  for (int step = 0; step < ascent_steps; ++step) {
    auto [value, grads] = detail::stein_operator_param_grads(critic, x, scores);
    if (trace) trace->push_back(value);
    grads.scale(-1.0);  // sgd_step descends; the critic ascends
    sgd_step(opt, critic, grads);
  }
  const double final_value = detail::stein_operator_param_grads(critic, x, scores).first;
  if (trace) trace->push_back(final_value);
  return final_value;
}

}  // namespace steinuda
