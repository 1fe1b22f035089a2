#pragma once

// Helpers shared across test files: parameter-space finite differences and
// gradient comparison utilities. These are oracle-side tools and must stay
// independent of the analytic gradient code they check.

#include "steinuda/nnet.hpp"

#include <cmath>

namespace steinuda::testing {

// Finite-difference gradient of a scalar functional of a network with respect
// to every weight and bias, entry by entry.
template <class F>
MlpGrads fd_param_grads(Mlp net, F&& f, double h) {
  MlpGrads g = MlpGrads::zeros_like(net);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    Mat& w = net.layers[l].w;
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) {
        const double orig = w(i, j);
        w(i, j) = orig + h;
        const double fp = f(net);
        w(i, j) = orig - h;
        const double fm = f(net);
        w(i, j) = orig;
        g.w[l](i, j) = (fp - fm) / (2 * h);
      }
    Vec& b = net.layers[l].b;
    for (int i = 0; i < b.size(); ++i) {
      const double orig = b[i];
      b[i] = orig + h;
      const double fp = f(net);
      b[i] = orig - h;
      const double fm = f(net);
      b[i] = orig;
      g.b[l][i] = (fp - fm) / (2 * h);
    }
  }
  return g;
}

inline double max_abs_diff(const MlpGrads& a, const MlpGrads& b) {
  double m = 0.0;
  for (std::size_t l = 0; l < a.w.size(); ++l) {
    m = std::max(m, (a.w[l] - b.w[l]).cwiseAbs().maxCoeff());
    m = std::max(m, Vec(a.b[l] - b.b[l]).cwiseAbs().maxCoeff());
  }
  return m;
}

}  // namespace steinuda::testing
