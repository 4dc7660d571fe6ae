#include "bayesnn/linalg.hpp"

#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "bayesnn/errors.hpp"

namespace bnn {

std::optional<Eigen::LLT<Mat>> try_cholesky(const Mat& m) {
  if (m.rows() != m.cols() || m.rows() == 0) return std::nullopt;
  if (!m.allFinite()) return std::nullopt;
  Eigen::LLT<Mat> llt(m);
  if (llt.info() != Eigen::Success) return std::nullopt;
  const auto& l = llt.matrixLLT();
  for (Index i = 0; i < m.rows(); ++i) {
    if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i))) return std::nullopt;
  }
  return llt;
}

bool is_spd(const Mat& m) { return try_cholesky(m).has_value(); }

Eigen::LLT<Mat> cholesky_or_throw(const Mat& m, const char* what) {
  auto llt = try_cholesky(m);
  if (!llt) throw ManifoldExit(std::string(what) + ": matrix is not symmetric positive definite");
  return *llt;
}

Mat spd_inverse(const Mat& m) {
  auto llt = cholesky_or_throw(m, "spd_inverse");
  return symmetrize(llt.solve(Mat::Identity(m.rows(), m.cols())));
}

double spectral_norm_sym(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

bool clip_spectral_norm(Mat& m, double limit) {
  const double norm = spectral_norm_sym(m);
  if (norm <= limit) return false;
  m *= limit / norm;
  return true;
}

Mat spd_sqrt(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
    throw ManifoldExit("spd_sqrt: matrix is not positive definite");
  return symmetrize(es.operatorSqrt());
}

Mat spd_inv_sqrt(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0.0)
    throw ManifoldExit("spd_inv_sqrt: matrix is not positive definite");
  return symmetrize(es.operatorInverseSqrt());
}

double relative_asymmetry(const Mat& m) {
  const double scale = std::max(m.norm(), 1e-300);
  return (m - m.transpose()).norm() / scale;
}

}  // namespace bnn
