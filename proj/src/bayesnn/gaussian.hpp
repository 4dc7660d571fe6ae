#pragma once

#include "bayesnn/linalg.hpp"
#include "bayesnn/rng.hpp"

namespace bnn {

// Which factor a GaussianVariational stores. Every optimizer owns one of these
// and converts explicitly; nothing converts behind the caller's back.
enum class CovRepr { kFullCholeskyOfCov, kFullCholeskyOfPrecision, kDiagonalVariance };

// Multivariate normal N(mean, Sigma) held through a triangular factor (or a
// positive variance vector). Immutable after construction.
class GaussianVariational {
 public:
  static GaussianVariational from_covariance(Vec mean, const Mat& covariance);
  static GaussianVariational from_precision(Vec mean, const Mat& precision);
  static GaussianVariational diagonal(Vec mean, Vec variance);

  Index dim() const noexcept { return mean_.size(); }
  const Vec& mean() const noexcept { return mean_; }
  CovRepr repr() const noexcept { return repr_; }
  bool is_diagonal() const noexcept { return repr_ == CovRepr::kDiagonalVariance; }

  // Lower-triangular factor L (full representations only): L L^T is the
  // covariance or the precision depending on repr().
  const Mat& factor() const;
  // Variance vector (diagonal representation only).
  const Vec& variance() const;

  Mat covariance() const;
  Mat precision() const;
  Vec variance_diagonal() const;
  double log_det_covariance() const;

  // C * eps where C C^T = Sigma.
  Vec scale_noise(const Vec& eps) const;
  Vec precision_times(const Vec& v) const;
  Vec covariance_times(const Vec& v) const;
  // (theta - mu)^T Sigma^{-1} (theta - mu)
  double mahalanobis_sq(const Vec& theta) const;

  GaussianVariational with_mean(Vec mean) const;
  GaussianVariational to_covariance_form() const;
  GaussianVariational to_precision_form() const;

 private:
  GaussianVariational(Vec mean, CovRepr repr, Mat factor, Vec variance);

  Vec mean_;
  CovRepr repr_;
  Mat factor_;
  Vec variance_;
};

// lambda1 = Sigma^{-1} mu, lambda2 = -1/2 Sigma^{-1}.
struct NaturalParams {
  Vec lambda1;
  Mat lambda2;
};

// m1 = mu, m2 = Sigma + mu mu^T.
struct ExpectationParams {
  Vec m1;
  Mat m2;
};

NaturalParams to_natural(const GaussianVariational& q);
ExpectationParams to_expectation(const GaussianVariational& q);

// Inverse maps. from_natural returns the precision-Cholesky form,
// from_expectation the covariance-Cholesky form.
GaussianVariational from_natural(const NaturalParams& lambda);
GaussianVariational from_expectation(const ExpectationParams& m);

// Log-partition A(lambda) = -1/4 l1^T l2^{-1} l1 - 1/2 log|-2 l2| (no 2*pi term).
double log_partition(const NaturalParams& lambda);

double log_pdf(const GaussianVariational& q, const Vec& theta);

// n_s x k matrix; row s is mu + C eps_s.
Mat sample_reparam(const GaussianVariational& q, RngStream& rng, Index n_samples);

struct ScoreGradients {
  Vec grad_mu;     // Sigma^{-1}(theta - mu)
  Mat grad_sigma;  // -1/2 (Sigma^{-1} - Sigma^{-1} d d^T Sigma^{-1})
};

ScoreGradients score_gradients(const GaussianVariational& q, const Vec& theta);

// Fault injection for the verification suite: while enabled, score_gradients
// returns grad_mu with its sign flipped.
void set_score_fault(bool enabled);
bool score_fault_enabled();

// KL(q1 || q2), closed form.
double kl_gaussians(const GaussianVariational& q1, const GaussianVariational& q2);

}  // namespace bnn
