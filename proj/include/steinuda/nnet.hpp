#pragma once

// Small dense networks with explicit reverse-mode differentiation. Besides
// the usual forward/backward pair this header exposes second-order pieces
// that the adversarial Stein estimator needs: the divergence of a network
// with matching input and output width, and the gradients of that divergence
// with respect to both the input and the parameters.

#include "steinuda/core.hpp"

#include <json.hpp>

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace steinuda {

enum class Act { Tanh, Relu, Identity };

inline std::string act_name(Act a) {
  switch (a) {
    case Act::Tanh: return "tanh";
    case Act::Relu: return "relu";
    case Act::Identity: return "identity";
  }
  return "?";
}

inline Act act_from_name(const std::string& s) {
  if (s == "tanh") return Act::Tanh;
  if (s == "relu") return Act::Relu;
  if (s == "identity") return Act::Identity;
  throw DataError("UnsupportedVariant: unknown activation '" + s + "'");
}

namespace detail {

inline double act_val(Act a, double p) {
  switch (a) {
    case Act::Tanh: return std::tanh(p);
    case Act::Relu: return p > 0.0 ? p : 0.0;
    case Act::Identity: return p;
  }
  return 0.0;
}

inline double act_d1(Act a, double p) {
  switch (a) {
    case Act::Tanh: {
      const double t = std::tanh(p);
      return 1.0 - t * t;
    }
    case Act::Relu: return p > 0.0 ? 1.0 : 0.0;
    case Act::Identity: return 1.0;
  }
  return 0.0;
}

inline double act_d2(Act a, double p) {
  switch (a) {
    case Act::Tanh: {
      const double t = std::tanh(p);
      return -2.0 * t * (1.0 - t * t);
    }
    case Act::Relu: return 0.0;
    case Act::Identity: return 0.0;
  }
  return 0.0;
}

template <class F>
Mat apply_elementwise(const Mat& m, Act a, F&& f) {
  Mat out(m.rows(), m.cols());
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) out(i, j) = f(a, m(i, j));
  return out;
}

}  // namespace detail

struct Layer {
  Mat w;  // out x in
  Vec b;
  Act act = Act::Tanh;

  int in_dim() const { return static_cast<int>(w.cols()); }
  int out_dim() const { return static_cast<int>(w.rows()); }
};

struct Mlp {
  std::vector<Layer> layers;

  int in_dim() const { return layers.front().in_dim(); }
  int out_dim() const { return layers.back().out_dim(); }

  // Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  // Each layer draws from its own child stream so inserting a layer does not
  // reshuffle the others.
  static Mlp make(const std::vector<int>& dims, const std::vector<Act>& acts,
                  const RngStream& rng) {
    if (dims.size() < 2 || acts.size() != dims.size() - 1)
      throw DataError("Mlp::make: need one activation per layer");
    Mlp net;
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      RngStream child = rng.split(l);
      Layer layer;
      const int fan_in = dims[l], fan_out = dims[l + 1];
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      layer.w.resize(fan_out, fan_in);
      for (int i = 0; i < fan_out; ++i)
        for (int j = 0; j < fan_in; ++j)
          layer.w(i, j) = bound * (2.0 * child.uniform() - 1.0);
      layer.b = Vec::Zero(fan_out);
      layer.act = acts[l];
      net.layers.push_back(std::move(layer));
    }
    return net;
  }
};

// Cached forward state for one batch; single-use for parameter gradients.
struct GradTape {
  Mat input;
  std::vector<Mat> pre;  // per layer, n x out
  std::vector<Mat> act;  // per layer, n x out
  bool consumed = false;
};

inline std::pair<Mat, GradTape> mlp_forward(const Mlp& net, const Mat& x) {
  check_dims(x.cols() == net.in_dim(), "mlp_forward input width");
  GradTape tape;
  tape.input = x;
  Mat a = x;
  for (const Layer& layer : net.layers) {
    Mat p = a * layer.w.transpose();
    p.rowwise() += layer.b.transpose();
    if (!p.allFinite())
      throw NumericError("NonFiniteActivation: mlp_forward pre-activation");
    Mat out = detail::apply_elementwise(p, layer.act, detail::act_val);
    tape.pre.push_back(std::move(p));
    tape.act.push_back(out);
    a = std::move(out);
  }
  return {a, std::move(tape)};
}

inline Mat mlp_eval(const Mlp& net, const Mat& x) { return mlp_forward(net, x).first; }

inline Vec mlp_eval_vec(const Mlp& net, const Vec& x) {
  return mlp_eval(net, Mat(x.transpose())).row(0);
}

struct MlpGrads {
  std::vector<Mat> w;
  std::vector<Vec> b;

  static MlpGrads zeros_like(const Mlp& net) {
    MlpGrads g;
    for (const Layer& l : net.layers) {
      g.w.push_back(Mat::Zero(l.w.rows(), l.w.cols()));
      g.b.push_back(Vec::Zero(l.b.size()));
    }
    return g;
  }

  void accumulate(const MlpGrads& other, double scale = 1.0) {
    for (std::size_t l = 0; l < w.size(); ++l) {
      w[l] += scale * other.w[l];
      b[l] += scale * other.b[l];
    }
  }

  double squared_norm() const {
    double s = 0.0;
    for (std::size_t l = 0; l < w.size(); ++l) s += w[l].squaredNorm() + b[l].squaredNorm();
    return s;
  }

  void scale(double c) {
    for (std::size_t l = 0; l < w.size(); ++l) {
      w[l] *= c;
      b[l] *= c;
    }
  }
};

namespace detail {

// Reverse pass shared by the public backward and the divergence loop: returns
// the input gradient, optionally accumulating parameter gradients.
inline Mat reverse_pass(const Mlp& net, const GradTape& tape, const Mat& upstream,
                        MlpGrads* grads) {
  const int depth = static_cast<int>(net.layers.size());
  Mat delta = upstream.cwiseProduct(
      detail::apply_elementwise(tape.pre.back(), net.layers.back().act, detail::act_d1));
  for (int l = depth - 1; l >= 0; --l) {
    const Mat& below = (l == 0) ? tape.input : tape.act[l - 1];
    if (grads) {
      grads->w[l] += delta.transpose() * below;
      grads->b[l] += delta.colwise().sum().transpose();
    }
    Mat prev = delta * net.layers[l].w;
    if (l > 0) {
      delta = prev.cwiseProduct(
          detail::apply_elementwise(tape.pre[l - 1], net.layers[l - 1].act, detail::act_d1));
    } else {
      return prev;
    }
  }
  return Mat();
}

}  // namespace detail

// Parameter and input gradients of sum_ij upstream_ij * output_ij.
inline std::pair<MlpGrads, Mat> mlp_backward(const Mlp& net, GradTape& tape,
                                             const Mat& upstream) {
  if (tape.consumed) throw DataError("TapeReuse: mlp_backward called twice on one tape");
  check_dims(upstream.rows() == tape.input.rows() && upstream.cols() == net.out_dim(),
             "mlp_backward upstream shape");
  tape.consumed = true;
  MlpGrads grads = MlpGrads::zeros_like(net);
  Mat dx = detail::reverse_pass(net, tape, upstream, &grads);
  return {std::move(grads), std::move(dx)};
}

// Jacobian d output / d input at a single point, out_dim x in_dim.
inline Mat mlp_jacobian(const Mlp& net, const Vec& x) {
  check_dims(x.size() == net.in_dim(), "mlp_jacobian input width");
  Vec a = x;
  Mat jac = Mat::Identity(net.in_dim(), net.in_dim());
  for (const Layer& layer : net.layers) {
    const Vec p = layer.w * a + layer.b;
    if (!p.allFinite()) throw NumericError("NonFiniteActivation: mlp_jacobian");
    jac = layer.w * jac;
    a.resize(p.size());
    for (int i = 0; i < p.size(); ++i) {
      jac.row(i) *= detail::act_d1(layer.act, p[i]);
      a[i] = detail::act_val(layer.act, p[i]);
    }
  }
  return jac;
}

// Divergence of a network with out_dim == in_dim, computed exactly with one
// reverse pass per coordinate.
inline double mlp_divergence(const Mlp& net, const Vec& x) {
  const int d = net.in_dim();
  check_dims(net.out_dim() == d, "mlp_divergence needs matching input/output width");
  auto [y, tape] = mlp_forward(net, Mat(x.transpose()));
  (void)y;
  double div = 0.0;
  Mat basis = Mat::Zero(1, d);
  for (int j = 0; j < d; ++j) {
    basis(0, j) = 1.0;
    const Mat dx = detail::reverse_pass(net, tape, basis, nullptr);
    div += dx(0, j);
    basis(0, j) = 0.0;
  }
  return div;
}

struct DivergenceGrads {
  double divergence = 0;
  Vec d_input;       // gradient of the divergence wrt x
  MlpGrads d_params; // gradient of the divergence wrt weights and biases
};

// Analytic gradients of div f(x). With prefix Jacobians B_l = dp_l/dx,
// C_l = da_l/dx and suffix Jacobians A_l = df/da_l, the divergence is
// tr(C_L) and its gradients are
//   d(div)/dx  = sum_l B_l^T [ act''(p_l) o diagvec(B_l A_l) ]
//   d(div)/dW_l = D_l A_l^T C_{l-1}^T  +  mu_l a_{l-1}^T
//   d(div)/db_l = mu_l
// where mu is the reverse accumulation of the act'' terms through the net.
inline DivergenceGrads mlp_divergence_grads(const Mlp& net, const Vec& x) {
  const int d = net.in_dim();
  check_dims(net.out_dim() == d, "mlp_divergence_grads needs matching width");
  const int depth = static_cast<int>(net.layers.size());

  std::vector<Vec> a(depth), p(depth), d1(depth), d2(depth);
  std::vector<Mat> bpre(depth), cpost(depth);  // B_l and C_l
  Vec cur = x;
  Mat cprev = Mat::Identity(d, d);
  for (int l = 0; l < depth; ++l) {
    const Layer& layer = net.layers[l];
    p[l] = layer.w * cur + layer.b;
    if (!p[l].allFinite()) throw NumericError("NonFiniteActivation: mlp_divergence_grads");
    const int nl = static_cast<int>(p[l].size());
    a[l].resize(nl);
    d1[l].resize(nl);
    d2[l].resize(nl);
    for (int i = 0; i < nl; ++i) {
      a[l][i] = detail::act_val(layer.act, p[l][i]);
      d1[l][i] = detail::act_d1(layer.act, p[l][i]);
      d2[l][i] = detail::act_d2(layer.act, p[l][i]);
    }
    bpre[l] = layer.w * cprev;
    cpost[l] = d1[l].asDiagonal() * bpre[l];
    cprev = cpost[l];
    cur = a[l];
  }

  std::vector<Mat> suffix(depth);  // A_l = df/da_l, d x n_l
  suffix[depth - 1] = Mat::Identity(d, d);
  for (int l = depth - 1; l > 0; --l)
    suffix[l - 1] = suffix[l] * d1[l].asDiagonal() * net.layers[l].w;

  DivergenceGrads out;
  out.divergence = cpost[depth - 1].trace();
  out.d_params = MlpGrads::zeros_like(net);
  out.d_input = Vec::Zero(d);

  std::vector<Vec> gcurv(depth);
  for (int l = 0; l < depth; ++l) {
    const int nl = static_cast<int>(p[l].size());
    gcurv[l].resize(nl);
    for (int i = 0; i < nl; ++i)
      gcurv[l][i] = d2[l][i] * bpre[l].row(i).dot(suffix[l].col(i));
    out.d_input += bpre[l].transpose() * gcurv[l];
  }

  // reverse accumulation of the curvature terms through the pre-activations
  Vec mu = gcurv[depth - 1];
  for (int l = depth - 1; l >= 0; --l) {
    const Vec& below = (l == 0) ? x : a[l - 1];
    const Mat& cbelow_t = (l == 0) ? Mat(Mat::Identity(d, d)) : Mat(cpost[l - 1].transpose());
    out.d_params.w[l] = d1[l].asDiagonal() * suffix[l].transpose() * cbelow_t;
    out.d_params.w[l] += mu * below.transpose();
    out.d_params.b[l] = mu;
    if (l > 0)
      mu = Vec(d1[l - 1].asDiagonal() * (net.layers[l].w.transpose() * mu)) + gcurv[l - 1];
  }
  return out;
}

// Mean cross-entropy of softmax(logits) against integer labels, with the
// gradient already divided by the batch size.
inline std::pair<double, Mat> softmax_cross_entropy(const Mat& logits,
                                                    const std::vector<int>& labels) {
  const int n = static_cast<int>(logits.rows());
  const int k = static_cast<int>(logits.cols());
  check_dims(static_cast<int>(labels.size()) == n, "softmax_cross_entropy label count");
  Mat grad(n, k);
  std::vector<double> losses(n);
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= k)
      throw DataError("LabelOutOfRange: label " + std::to_string(y) + " with " +
                      std::to_string(k) + " classes");
    const double mx = logits.row(i).maxCoeff();
    const Eigen::ArrayXd shifted = logits.row(i).transpose().array() - mx;
    const Eigen::ArrayXd ex = shifted.exp();
    const double z = ex.sum();
    losses[i] = -(shifted[y] - std::log(z));
    grad.row(i) = (ex / z).matrix().transpose() / n;
    grad(i, y) -= 1.0 / n;
  }
  const double loss = pairwise_sum(losses) / n;
  if (!std::isfinite(loss)) throw NumericError("NonFiniteLoss: softmax_cross_entropy");
  return {loss, std::move(grad)};
}

// Heavy-ball SGD; velocity buffers live here so one state drives one network.
struct SgdState {
  double lr = 0.01;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::vector<Mat> vw;
  std::vector<Vec> vb;
};

inline void sgd_step(SgdState& state, Mlp& net, const MlpGrads& grads) {
  if (state.vw.empty()) {
    for (const Layer& l : net.layers) {
      state.vw.push_back(Mat::Zero(l.w.rows(), l.w.cols()));
      state.vb.push_back(Vec::Zero(l.b.size()));
    }
  }
  check_dims(state.vw.size() == net.layers.size(), "sgd_step state/network layer count");
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    state.vw[l] = state.momentum * state.vw[l] -
                  state.lr * (grads.w[l] + state.weight_decay * net.layers[l].w);
    state.vb[l] = state.momentum * state.vb[l] -
                  state.lr * (grads.b[l] + state.weight_decay * net.layers[l].b);
    net.layers[l].w += state.vw[l];
    net.layers[l].b += state.vb[l];
  }
}

// Joint norm clipping across several gradient sets; returns the pre-clip norm.
inline double clip_gradients(std::vector<MlpGrads*> grads, double max_norm) {
  double sq = 0.0;
  for (const MlpGrads* g : grads) sq += g->squared_norm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double c = max_norm / norm;
    for (MlpGrads* g : grads) g->scale(c);
  }
  return norm;
}

inline double clip_gradients(MlpGrads& grads, double max_norm) {
  return clip_gradients(std::vector<MlpGrads*>{&grads}, max_norm);
}

inline nlohmann::ordered_json mlp_to_json(const Mlp& net) {
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const Layer& l : net.layers) {
    nlohmann::ordered_json j;
    j["rows"] = l.w.rows();
    j["cols"] = l.w.cols();
    j["w"] = std::vector<double>(l.w.data(), l.w.data() + l.w.size());
    j["b"] = std::vector<double>(l.b.data(), l.b.data() + l.b.size());
    j["act"] = act_name(l.act);
    layers.push_back(std::move(j));
  }
  return nlohmann::ordered_json{{"layers", std::move(layers)}};
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  if (!j.contains("layers") || !j["layers"].is_array() || j["layers"].empty())
    throw DataError("ParseError: network checkpoint needs a non-empty 'layers' array");
  Mlp net;
  for (const auto& lj : j["layers"]) {
    Layer l;
    const int rows = lj.at("rows").get<int>();
    const int cols = lj.at("cols").get<int>();
    const auto w = lj.at("w").get<std::vector<double>>();
    const auto b = lj.at("b").get<std::vector<double>>();
    if (rows <= 0 || cols <= 0 || static_cast<int>(w.size()) != rows * cols ||
        static_cast<int>(b.size()) != rows)
      throw DataError("ParseError: checkpoint layer shape mismatch");
    l.w = Eigen::Map<const Mat>(w.data(), rows, cols);
    l.b = Eigen::Map<const Vec>(b.data(), rows);
    l.act = act_from_name(lj.at("act").get<std::string>());
    net.layers.push_back(std::move(l));
  }
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l)
    if (net.layers[l].out_dim() != net.layers[l + 1].in_dim())
      throw DataError("DimMismatch: checkpoint layer widths do not chain");
  return net;
}

}  // namespace steinuda
