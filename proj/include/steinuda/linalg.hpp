#pragma once

// Symmetric positive-definite factorization with jitter escalation, triangular
// solves, and the symmetric eigendecomposition. Eigen does the heavy lifting;
// this layer fixes the failure semantics (what gets jittered, what throws).

#include "steinuda/core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <utility>

namespace steinuda {

namespace detail {

inline void check_square_symmetric(const Mat& a, const char* who) {
  check_dims(a.rows() == a.cols(), std::string(who) + ": matrix must be square");
  if (!a.allFinite()) throw NumericError(std::string("NonFiniteEval: ") + who + " input");
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * scale)
    throw DataError(std::string(who) + ": matrix not symmetric (max asymmetry " +
                    std::to_string(asym) + ")");
}

}  // namespace detail

struct SpdFactor {
  Mat lower;       // L with L L^T = a + jitter I
  double log_det;  // of the jittered matrix
  double jitter;   // jitter actually applied (0 if none was needed)

  int dim() const { return static_cast<int>(lower.rows()); }
};

// Cholesky factorization of a symmetric positive-definite matrix. If the
// factorization fails, a diagonal jitter starting at 1e-9 * trace(a)/d is
// escalated tenfold at most six times before giving up.
inline SpdFactor spd_factor(const Mat& a, double jitter = 0.0) {
  detail::check_square_symmetric(a, "spd_factor");
  const int d = static_cast<int>(a.rows());
  const Mat sym = 0.5 * (a + a.transpose());

  double j = jitter;
  for (int attempt = 0; attempt <= 6; ++attempt) {
    Mat work = sym;
    if (j > 0.0) work.diagonal().array() += j;
    Eigen::LLT<Mat> llt(work);
    if (llt.info() == Eigen::Success) {
      SpdFactor f;
      f.lower = llt.matrixL();
      // Guard against Eigen accepting a factor with non-positive pivots.
      if ((f.lower.diagonal().array() > 0.0).all()) {
        f.log_det = 2.0 * f.lower.diagonal().array().log().sum();
        f.jitter = j;
        return f;
      }
    }
    if (attempt == 6) break;
    const double base = 1e-9 * std::max(sym.trace(), 0.0) / d;
    j = (j == 0.0) ? std::max(base, 1e-300) : j * 10.0;
    if (j < base) j = base;
  }
  throw NumericError("NotSpd: spd_factor failed after jitter escalation");
}

inline Vec spd_solve(const SpdFactor& f, const Vec& b) {
  check_dims(b.size() == f.dim(), "spd_solve rhs length");
  Vec y = f.lower.triangularView<Eigen::Lower>().solve(b);
  return f.lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

inline Mat spd_solve(const SpdFactor& f, const Mat& b) {
  check_dims(b.rows() == f.dim(), "spd_solve rhs rows");
  Mat y = f.lower.triangularView<Eigen::Lower>().solve(b);
  return f.lower.transpose().triangularView<Eigen::Upper>().solve(y);
}

inline Mat spd_inverse(const SpdFactor& f) {
  Mat eye = Mat::Identity(f.dim(), f.dim());
  return spd_solve(f, eye);
}

// Eigendecomposition of a symmetric matrix: ascending eigenvalues and the
// matching orthonormal eigenvectors as columns.
inline std::pair<Vec, Mat> sym_eigen(const Mat& a) {
  detail::check_square_symmetric(a, "sym_eigen");
  const Mat sym = 0.5 * (a + a.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(sym);
  if (es.info() != Eigen::Success)
    throw NumericError("NoConverge: sym_eigen failed to converge");
  return {es.eigenvalues(), es.eigenvectors()};
}

}  // namespace steinuda
