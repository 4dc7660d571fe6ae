#include "bayesnn/gaussian.hpp"

#include <atomic>
#include <cmath>
#include <numbers>
#include <string>

#include "bayesnn/errors.hpp"

namespace bnn {

namespace {

constexpr double kSymmetryTol = 1e-10;

void check_square_symmetric(const Mat& m, Index k, const char* what) {
  if (m.rows() != k || m.cols() != k)
    throw DimensionMismatch(std::string(what) + ": expected a " + std::to_string(k) + "x" +
                            std::to_string(k) + " matrix");
  if (!m.allFinite()) throw InvalidParameter(std::string(what) + ": non-finite entries");
  if (relative_asymmetry(m) > kSymmetryTol)
    throw InvalidParameter(std::string(what) + ": matrix is not symmetric");
}

Mat lower_factor(const Mat& spd, const char* what) {
  auto llt = try_cholesky(symmetrize(spd));
  if (!llt) throw InvalidParameter(std::string(what) + ": matrix is not positive definite");
  return Mat(llt->matrixL());
}

void check_dim(const GaussianVariational& q, const Vec& theta, const char* what) {
  if (theta.size() != q.dim())
    throw DimensionMismatch(std::string(what) + ": theta has dimension " +
                            std::to_string(theta.size()) + ", expected " +
                            std::to_string(q.dim()));
}

}  // namespace

GaussianVariational::GaussianVariational(Vec mean, CovRepr repr, Mat factor, Vec variance)
    : mean_(std::move(mean)), repr_(repr), factor_(std::move(factor)), variance_(std::move(variance)) {}

GaussianVariational GaussianVariational::from_covariance(Vec mean, const Mat& covariance) {
  check_square_symmetric(covariance, mean.size(), "from_covariance");
  if (!mean.allFinite()) throw InvalidParameter("from_covariance: non-finite mean");
  Mat l = lower_factor(covariance, "from_covariance");
  return GaussianVariational(std::move(mean), CovRepr::kFullCholeskyOfCov, std::move(l), Vec());
}

GaussianVariational GaussianVariational::from_precision(Vec mean, const Mat& precision) {
  check_square_symmetric(precision, mean.size(), "from_precision");
  if (!mean.allFinite()) throw InvalidParameter("from_precision: non-finite mean");
  Mat l = lower_factor(precision, "from_precision");
  return GaussianVariational(std::move(mean), CovRepr::kFullCholeskyOfPrecision, std::move(l),
                             Vec());
}

GaussianVariational GaussianVariational::diagonal(Vec mean, Vec variance) {
  if (variance.size() != mean.size())
    throw DimensionMismatch("diagonal: mean and variance differ in length");
  if (!mean.allFinite()) throw InvalidParameter("diagonal: non-finite mean");
  for (Index i = 0; i < variance.size(); ++i) {
    if (!(variance(i) > 0.0) || !std::isfinite(variance(i)))
      throw InvalidParameter("diagonal: variances must be positive and finite");
  }
  return GaussianVariational(std::move(mean), CovRepr::kDiagonalVariance, Mat(),
                             std::move(variance));
}

const Mat& GaussianVariational::factor() const {
  if (is_diagonal()) throw InvalidParameter("factor: diagonal representation has no matrix factor");
  return factor_;
}

const Vec& GaussianVariational::variance() const {
  if (!is_diagonal()) throw InvalidParameter("variance: not a diagonal representation");
  return variance_;
}

Mat GaussianVariational::covariance() const {
  switch (repr_) {
    case CovRepr::kFullCholeskyOfCov:
      return symmetrize(factor_ * factor_.transpose());
    case CovRepr::kFullCholeskyOfPrecision: {
      // Sigma = L^{-T} L^{-1}
      Mat linv = factor_.triangularView<Eigen::Lower>().solve(Mat::Identity(dim(), dim()));
      return symmetrize(linv.transpose() * linv);
    }
    case CovRepr::kDiagonalVariance:
      return variance_.asDiagonal();
  }
  return {};
}

Mat GaussianVariational::precision() const {
  switch (repr_) {
    case CovRepr::kFullCholeskyOfCov: {
      Mat linv = factor_.triangularView<Eigen::Lower>().solve(Mat::Identity(dim(), dim()));
      return symmetrize(linv.transpose() * linv);
    }
    case CovRepr::kFullCholeskyOfPrecision:
      return symmetrize(factor_ * factor_.transpose());
    case CovRepr::kDiagonalVariance:
      return variance_.cwiseInverse().asDiagonal();
  }
  return {};
}

Vec GaussianVariational::variance_diagonal() const {
  if (is_diagonal()) return variance_;
  return covariance().diagonal();
}

double GaussianVariational::log_det_covariance() const {
  switch (repr_) {
    case CovRepr::kFullCholeskyOfCov:
      return 2.0 * factor_.diagonal().array().log().sum();
    case CovRepr::kFullCholeskyOfPrecision:
      return -2.0 * factor_.diagonal().array().log().sum();
    case CovRepr::kDiagonalVariance:
      return variance_.array().log().sum();
  }
  return 0.0;
}

Vec GaussianVariational::scale_noise(const Vec& eps) const {
  switch (repr_) {
    case CovRepr::kFullCholeskyOfCov:
      return factor_.triangularView<Eigen::Lower>() * eps;
    case CovRepr::kFullCholeskyOfPrecision:
      // L^{-T} eps has covariance L^{-T} L^{-1} = Sigma.
      return factor_.transpose().triangularView<Eigen::Upper>().solve(eps);
    case CovRepr::kDiagonalVariance:
      return variance_.cwiseSqrt().cwiseProduct(eps);
  }
  return {};
}

Vec GaussianVariational::precision_times(const Vec& v) const {
  switch (repr_) {
    case CovRepr::kFullCholeskyOfCov: {
      Vec y = factor_.triangularView<Eigen::Lower>().solve(v);
      return factor_.transpose().triangularView<Eigen::Upper>().solve(y);
    }
    case CovRepr::kFullCholeskyOfPrecision:
      return factor_.triangularView<Eigen::Lower>() * (factor_.transpose() * v);
    case CovRepr::kDiagonalVariance:
      return v.cwiseQuotient(variance_);
  }
  return {};
}

Vec GaussianVariational::covariance_times(const Vec& v) const {
  switch (repr_) {
    case CovRepr::kFullCholeskyOfCov:
      return factor_.triangularView<Eigen::Lower>() * (factor_.transpose() * v);
    case CovRepr::kFullCholeskyOfPrecision: {
      Vec y = factor_.triangularView<Eigen::Lower>().solve(v);
      return factor_.transpose().triangularView<Eigen::Upper>().solve(y);
    }
    case CovRepr::kDiagonalVariance:
      return v.cwiseProduct(variance_);
  }
  return {};
}

double GaussianVariational::mahalanobis_sq(const Vec& theta) const {
  const Vec d = theta - mean_;
  switch (repr_) {
    case CovRepr::kFullCholeskyOfCov:
      return factor_.triangularView<Eigen::Lower>().solve(d).squaredNorm();
    case CovRepr::kFullCholeskyOfPrecision:
      return (factor_.transpose() * d).squaredNorm();
    case CovRepr::kDiagonalVariance:
      return d.cwiseAbs2().cwiseQuotient(variance_).sum();
  }
  return 0.0;
}

GaussianVariational GaussianVariational::with_mean(Vec mean) const {
  if (mean.size() != dim()) throw DimensionMismatch("with_mean: dimension changed");
  if (!mean.allFinite()) throw InvalidParameter("with_mean: non-finite mean");
  return GaussianVariational(std::move(mean), repr_, factor_, variance_);
}

GaussianVariational GaussianVariational::to_covariance_form() const {
  if (repr_ == CovRepr::kFullCholeskyOfCov) return *this;
  return from_covariance(mean_, covariance());
}

GaussianVariational GaussianVariational::to_precision_form() const {
  if (repr_ == CovRepr::kFullCholeskyOfPrecision) return *this;
  return from_precision(mean_, precision());
}

NaturalParams to_natural(const GaussianVariational& q) {
  return NaturalParams{q.precision_times(q.mean()), -0.5 * q.precision()};
}

ExpectationParams to_expectation(const GaussianVariational& q) {
  return ExpectationParams{q.mean(), symmetrize(q.covariance() + q.mean() * q.mean().transpose())};
}

GaussianVariational from_natural(const NaturalParams& lambda) {
  const Index k = lambda.lambda1.size();
  check_square_symmetric(lambda.lambda2, k, "from_natural");
  const Mat precision = symmetrize(-2.0 * lambda.lambda2);
  auto llt = try_cholesky(precision);
  if (!llt) throw InvalidParameter("from_natural: lambda2 is not negative definite");
  Vec mean = llt->solve(lambda.lambda1);
  return GaussianVariational::from_precision(std::move(mean), precision);
}

GaussianVariational from_expectation(const ExpectationParams& m) {
  const Index k = m.m1.size();
  check_square_symmetric(m.m2, k, "from_expectation");
  const Mat cov = symmetrize(m.m2 - m.m1 * m.m1.transpose());
  if (!is_spd(cov)) throw InvalidParameter("from_expectation: m2 - m1 m1^T is not positive definite");
  return GaussianVariational::from_covariance(m.m1, cov);
}

double log_partition(const NaturalParams& lambda) {
  const Mat neg2l2 = symmetrize(-2.0 * lambda.lambda2);
  auto llt = try_cholesky(neg2l2);
  if (!llt) throw InvalidParameter("log_partition: lambda2 is not negative definite");
  // -1/4 l1^T l2^{-1} l1 = 1/2 l1^T (-2 l2)^{-1} l1
  const double quad = lambda.lambda1.dot(llt->solve(lambda.lambda1));
  const double logdet = 2.0 * Mat(llt->matrixL()).diagonal().array().log().sum();
  return 0.5 * quad - 0.5 * logdet;
}

double log_pdf(const GaussianVariational& q, const Vec& theta) {
  check_dim(q, theta, "log_pdf");
  const double k = static_cast<double>(q.dim());
  return -0.5 * k * std::log(2.0 * std::numbers::pi) - 0.5 * q.log_det_covariance() -
         0.5 * q.mahalanobis_sq(theta);
}

Mat sample_reparam(const GaussianVariational& q, RngStream& rng, Index n_samples) {
  if (n_samples < 1) throw InvalidParameter("sample_reparam: n_samples must be >= 1");
  Mat out(n_samples, q.dim());
  for (Index s = 0; s < n_samples; ++s) {
    const Vec eps = rng.normal_vector(q.dim());
    out.row(s) = (q.mean() + q.scale_noise(eps)).transpose();
  }
  return out;
}

namespace {
std::atomic<bool> g_score_fault{false};
}  // namespace

void set_score_fault(bool enabled) { g_score_fault.store(enabled); }
bool score_fault_enabled() { return g_score_fault.load(); }

ScoreGradients score_gradients(const GaussianVariational& q, const Vec& theta) {
  check_dim(q, theta, "score_gradients");
  const Vec v = q.precision_times(theta - q.mean());
  Mat grad_sigma = -0.5 * (q.precision() - v * v.transpose());
  return ScoreGradients{g_score_fault.load() ? Vec(-v) : v, symmetrize(grad_sigma)};
}

double kl_gaussians(const GaussianVariational& q1, const GaussianVariational& q2) {
  if (q1.dim() != q2.dim()) throw DimensionMismatch("kl_gaussians: dimensions differ");
  const double k = static_cast<double>(q1.dim());
  const Mat p2 = q2.precision();
  const double trace = (p2 * q1.covariance()).trace();
  const double quad = q2.mahalanobis_sq(q1.mean());
  const double kl = 0.5 * (trace + quad - k + q2.log_det_covariance() - q1.log_det_covariance());
  return std::max(kl, 0.0);
}

}  // namespace bnn
