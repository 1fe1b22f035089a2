#pragma once

// Radial kernels and the derivative pieces the Stein estimators consume.
// Every kernel here has the form k(x, x') = g(r2) with r2 = ||x - x'||^2, so
// the derivatives reduce to scalar profiles:
//   grad_x k        =  2 g'(r2) (x - x')
//   grad_x' k       = -2 g'(r2) (x - x')
//   tr d2k/dx dx'   = -2 d g'(r2) - 4 g''(r2) r2
// The third profile derivative g''' feeds the analytic gradient of the
// V-statistic with respect to the sample locations.

#include "steinuda/core.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace steinuda {

enum class KernelFamily { Rbf, Imq };

struct KernelSpec {
  KernelFamily family = KernelFamily::Rbf;
  double bandwidth = 1.0;
};

inline std::string kernel_name(const KernelSpec& spec) {
  switch (spec.family) {
    case KernelFamily::Rbf: return "rbf";
    case KernelFamily::Imq: return "imq";
  }
  return "?";
}

inline KernelFamily kernel_family_from_name(const std::string& s) {
  if (s == "rbf") return KernelFamily::Rbf;
  if (s == "imq") return KernelFamily::Imq;
  throw DataError("unknown kernel family '" + s + "'");
}

// g and its first three derivatives with respect to r2.
struct RadialProfile {
  double g = 0, g1 = 0, g2 = 0, g3 = 0;
};

inline RadialProfile radial_profile(const KernelSpec& spec, double r2) {
  const double s2 = spec.bandwidth * spec.bandwidth;
  RadialProfile p;
  switch (spec.family) {
    case KernelFamily::Rbf: {
      // g(u) = exp(-u / 2s2)
      p.g = std::exp(-r2 / (2.0 * s2));
      p.g1 = -p.g / (2.0 * s2);
      p.g2 = p.g / (4.0 * s2 * s2);
      p.g3 = -p.g / (8.0 * s2 * s2 * s2);
      break;
    }
    case KernelFamily::Imq: {
      // g(u) = (1 + u / 2s2)^(-1/2)
      const double b = 1.0 + r2 / (2.0 * s2);
      const double b12 = std::sqrt(b);
      p.g = 1.0 / b12;
      p.g1 = -1.0 / (4.0 * s2 * b * b12);
      p.g2 = 3.0 / (16.0 * s2 * s2 * b * b * b12);
      p.g3 = -15.0 / (64.0 * s2 * s2 * s2 * b * b * b * b12);
      break;
    }
  }
  return p;
}

inline double kernel_eval(const KernelSpec& spec, const Vec& x, const Vec& xp) {
  check_dims(x.size() == xp.size(), "kernel_eval point dimensions");
  return radial_profile(spec, (x - xp).squaredNorm()).g;
}

struct KernelDerivatives {
  double value = 0;      // k(x, x')
  Vec grad_x;            // d k / d x
  Vec grad_xp;           // d k / d x'
  double trace_mixed = 0;  // tr of the mixed second derivative d2k / dx dx'
};

inline KernelDerivatives kernel_derivatives(const KernelSpec& spec, const Vec& x,
                                            const Vec& xp) {
  check_dims(x.size() == xp.size(), "kernel_derivatives point dimensions");
  const Vec delta = x - xp;
  const double r2 = delta.squaredNorm();
  const RadialProfile p = radial_profile(spec, r2);
  KernelDerivatives kd;
  kd.value = p.g;
  kd.grad_x = 2.0 * p.g1 * delta;
  kd.grad_xp = -2.0 * p.g1 * delta;
  kd.trace_mixed = -2.0 * static_cast<double>(x.size()) * p.g1 - 4.0 * p.g2 * r2;
  return kd;
}

// Symmetric kernel matrix with an exact unit diagonal.
inline Mat gram_matrix(const KernelSpec& spec, const Mat& x) {
  const int n = static_cast<int>(x.rows());
  if (n == 0) throw DataError("EmptyDataset: gram_matrix");
  Mat k(n, n);
  for (int i = 0; i < n; ++i) {
    k(i, i) = 1.0;
    for (int j = i + 1; j < n; ++j) {
      const double r2 = (x.row(i) - x.row(j)).squaredNorm();
      const double v = radial_profile(spec, r2).g;
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

// Median pairwise distance divided by sqrt(2); the usual bandwidth default.
inline double median_heuristic(const Mat& x) {
  const int n = static_cast<int>(x.rows());
  if (n < 2) throw DataError("TooFewSamples: median_heuristic needs at least 2 rows");
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      dist.push_back((x.row(i) - x.row(j)).norm());
  std::sort(dist.begin(), dist.end());
  const std::size_t m = dist.size();
  const double med = (m % 2 == 1) ? dist[m / 2] : 0.5 * (dist[m / 2 - 1] + dist[m / 2]);
  if (med <= 0.0)
    throw DataError("DegenerateData: median_heuristic on coincident points");
  return med / std::sqrt(2.0);
}

}  // namespace steinuda
