#pragma once

// Numeric substrate shared by every other header: matrix aliases, error
// taxonomy, a counter-based RNG with stream splitting, deterministic
// reductions, and the finite-difference oracle used throughout the tests.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace steinuda {

// Dense row-major storage; rows are samples, columns are features.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid or inconsistent inputs: dimension mismatches, bad labels,
// degenerate or empty data, malformed files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Numerical breakdown: failed factorizations, non-finite intermediates,
// iteration caps hit.
class NumericError : public Error {
 public:
  using Error::Error;
};

inline void check_dims(bool ok, const std::string& what) {
  if (!ok) throw DataError("DimMismatch: " + what);
}

inline void check_finite(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NumericError("NonFiniteEval: " + what);
}

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

}  // namespace detail

// Counter-based generator: draw i is a hash of (key, i), so streams can be
// split per component without sharing state and identical seeds reproduce
// identical sequences on any platform.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed)
      : key_(detail::mix64(seed + 0x9e3779b97f4a7c15ull)) {}

  std::uint64_t next_u64() {
    return detail::mix64(key_ + (++counter_) * 0x9e3779b97f4a7c15ull);
  }

  // Uniform in [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw DataError("uniform_int: n must be positive");
    return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n));
  }

  // Independent child stream; same (parent, tag) always yields the same child.
  RngStream split(std::uint64_t tag) const {
    RngStream child(0);
    child.key_ = detail::mix64(key_ ^ detail::mix64(tag + 0x632be59bd9b4e019ull));
    child.counter_ = 0;
    child.has_spare_ = false;
    return child;
  }

  Vec normal_vec(int d) {
    Vec v(d);
    for (int i = 0; i < d; ++i) v[i] = normal();
    return v;
  }

  Mat normal_mat(int rows, int cols) {
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }

  // Fisher-Yates draw of k distinct indices from [0, n), in ascending order.
  std::vector<int> sample_without_replacement(int n, int k) {
    if (k > n) throw DataError("sample_without_replacement: k > n");
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    for (int i = 0; i < k; ++i) {
      const int j = i + uniform_int(n - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Exact accumulator for sums of doubles. Each addend is split into 32-bit
// limbs of a wide fixed-point register, so the accumulated value is exact and
// the rounded result is independent of summation order. This is what makes
// the pair-sum estimators permutation-invariant and bitwise reproducible
// under any parallel schedule.
class ExactSum {
 public:
  ExactSum() { limb_.fill(0); }

  void add(double x) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    const std::uint32_t expf = static_cast<std::uint32_t>(bits >> 52) & 0x7ffu;
    std::uint64_t mant = bits & 0xfffffffffffffull;
    if (expf == 0x7ffu) {
      nonfinite_ = true;
      return;
    }
    int pos;  // exponent of the mantissa's unit bit, offset so pos >= 0
    if (expf == 0) {
      if (mant == 0) return;
      pos = 0;
    } else {
      mant |= 1ull << 52;
      pos = static_cast<int>(expf) - 1;
    }
    const int q = pos >> 5;
    const int r = pos & 31;
    const unsigned __int128 t = static_cast<unsigned __int128>(mant) << r;
    const auto l0 = static_cast<std::int64_t>(static_cast<std::uint64_t>(t) & 0xffffffffull);
    const auto l1 = static_cast<std::int64_t>(static_cast<std::uint64_t>(t >> 32) & 0xffffffffull);
    const auto l2 = static_cast<std::int64_t>(static_cast<std::uint64_t>(t >> 64) & 0xffffffffull);
    if (bits >> 63) {
      limb_[q] -= l0;
      limb_[q + 1] -= l1;
      limb_[q + 2] -= l2;
    } else {
      limb_[q] += l0;
      limb_[q + 1] += l1;
      limb_[q + 2] += l2;
    }
    if (++pending_ == kNormalizeEvery) normalize();
  }

  void merge(const ExactSum& other) {
    normalize();
    for (std::size_t i = 0; i < kLimbs; ++i) limb_[i] += other.limb_[i];
    pending_ = kNormalizeEvery - 1;  // force a carry pass soon
    nonfinite_ = nonfinite_ || other.nonfinite_;
    normalize();
  }

  double result() const {
    if (nonfinite_) return std::numeric_limits<double>::quiet_NaN();
    std::array<std::int64_t, kLimbs> d = limb_;
    carry_pass(d);
    // After a carry pass only the top limb can be negative, so it carries the
    // sign of the whole register. Work with non-negative digits.
    const bool neg = d[kLimbs - 1] < 0;
    if (neg) {
      for (auto& x : d) x = -x;
      carry_pass(d);
    }
    int top = static_cast<int>(kLimbs) - 1;
    while (top > 0 && d[top] == 0) --top;
    const int lo = top >= 3 ? top - 3 : 0;
    double r = 0.0;
    for (int i = top; i >= lo; --i) r = r * 4294967296.0 + static_cast<double>(d[i]);
    const double v = std::ldexp(r, 32 * lo - 1074);
    return neg ? -v : v;
  }

 private:
  // 64 limbs span the full double exponent range; 3 extra absorb carries.
  static constexpr std::size_t kLimbs = 67;
  static constexpr int kNormalizeEvery = 1 << 30;

  static void carry_pass(std::array<std::int64_t, kLimbs>& d) {
    for (std::size_t i = 0; i + 1 < kLimbs; ++i) {
      const std::int64_t c = d[i] >> 32;  // arithmetic shift: floor division
      d[i] -= c << 32;
      d[i + 1] += c;
    }
  }

  void normalize() {
    carry_pass(limb_);
    pending_ = 0;
  }

  std::array<std::int64_t, kLimbs> limb_;
  int pending_ = 0;
  bool nonfinite_ = false;
};

// Fixed-tree pairwise summation: deterministic for a given element order and
// more accurate than sequential accumulation.
inline double pairwise_sum(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t h = n / 2;
  return pairwise_sum(v.first(h)) + pairwise_sum(v.subspan(h));
}

inline double pairwise_sum(const std::vector<double>& v) {
  return pairwise_sum(std::span<const double>(v.data(), v.size()));
}

inline double pairwise_sum(const Vec& v) {
  return pairwise_sum(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())));
}

// Central-difference gradient, component i = (f(x + h e_i) - f(x - h e_i)) / 2h.
// The independent oracle for every analytic gradient in the library.
template <class F>
Vec finite_diff_grad(F&& f, const Vec& x, double h) {
  Vec g(x.size());
  Vec xp = x;
  for (int i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    xp[i] = xi + h;
    const double fp = f(xp);
    xp[i] = xi - h;
    const double fm = f(xp);
    xp[i] = xi;
    check_finite(fp, "finite_diff_grad f(x+h)");
    check_finite(fm, "finite_diff_grad f(x-h)");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace steinuda
