#pragma once

#include "bayesnn/gaussian.hpp"
#include "bayesnn/models.hpp"
#include "bayesnn/rng.hpp"

namespace bnn {

// Symmetric positive-definite matrix, certified by a Cholesky factorization.
class SpdPoint {
 public:
  explicit SpdPoint(Mat value);
  const Mat& value() const noexcept { return value_; }
  Index dim() const noexcept { return value_.rows(); }
  Mat inverse() const;

 private:
  Mat value_;
};

// Tangent vectors are symmetric matrices; throws when xi is not symmetric
// within 1e-12 (relative) or has the wrong size.
void check_tangent(const SpdPoint& base, const Mat& xi);

// R(xi) = zeta + xi + 1/2 xi zeta^{-1} xi. Throws ManifoldExit when the
// result is not SPD.
SpdPoint retract(const SpdPoint& base, const Mat& xi);

// E xi E^T with E = (eta zeta^{-1})^{1/2}, computed as
// zeta^{1/2} (zeta^{-1/2} eta zeta^{-1/2})^{1/2} zeta^{-1/2}.
Mat transport(const SpdPoint& from, const SpdPoint& to, const Mat& xi);
Mat transport_factor(const SpdPoint& from, const SpdPoint& to);

// Natural gradients of the MGVB chart from Euclidean ones:
// Sigma grad_mu and Sigma grad_Sigma Sigma (times 2 when `exact_factor`).
Vec mgvb_natural_mu(const Mat& sigma, const Vec& grad_mu);
Mat mgvb_natural_sigma(const Mat& sigma, const Mat& grad_sigma, bool exact_factor = false);

struct ManifoldOptions {
  Index n_samples = 64;
  double omega = 0.9;
  double clip = 100.0;        // spectral-norm limit on the natural-gradient matrix
  bool exact_factor = false;  // MGVB: use 2 Sigma grad Sigma
  bool gaussian_constants = true;  // EMGVB: closed-form prior terms, log f = log-likelihood
  // Subtract a leave-one-out mean of log f before weighting the scores.
  bool baseline = true;
  void validate() const;
};

struct ManifoldGradient {
  Vec g_mu;   // natural gradient for mu
  Mat g_mat;  // natural gradient for Sigma (MGVB) or Sigma^{-1} (EMGVB)
  bool clipped = false;
  Index dropped_draws = 0;
  double elbo = 0.0;  // mean h-function over kept draws
  double elbo_stderr = 0.0;
};

// Score-function estimate with h(theta) = log p(D, theta) - log q(theta).
ManifoldGradient mgvb_gradient(const Vec& mu, const SpdPoint& sigma, const LogDensity& log_joint,
                               const ManifoldOptions& opts, RngStream& rng);

// log_lik and log_prior give log p(D | theta) and log p(theta). With
// opts.gaussian_constants the prior must be Gaussian and `gaussian_prior`
// non-null; otherwise the h-function path is used.
ManifoldGradient emgvb_gradient(const Vec& mu, const SpdPoint& precision,
                                const LogDensity& log_lik, const LogDensity& log_prior,
                                const GaussianPrior* gaussian_prior, const ManifoldOptions& opts,
                                RngStream& rng);

// Mean plus SPD matrix (covariance for MGVB, precision for EMGVB) with
// momentum buffers.
struct ManifoldState {
  Vec mu;
  SpdPoint point;
  Vec m_mu;
  Mat m_mat;
  bool initialized = false;
  Index t = 0;

  ManifoldState(Vec mu, SpdPoint point);
  GaussianVariational as_gaussian(bool point_is_precision) const;
};

struct ManifoldReport {
  ManifoldGradient grad;  // evaluated at the updated state
  int halvings = 0;
  bool rejected = false;
};

// One iteration: move along the momentum, then refresh the momentum with a
// gradient at the new point (transporting the old buffer). The first call
// seeds the buffers with a gradient at the starting point.
void mgvb_step(ManifoldState& state, const LogDensity& log_joint, const ManifoldOptions& opts,
               RngStream& rng, double beta, ManifoldReport* report = nullptr);

void emgvb_step(ManifoldState& state, const LogDensity& log_lik, const LogDensity& log_prior,
                const GaussianPrior* gaussian_prior, const ManifoldOptions& opts, RngStream& rng,
                double beta, ManifoldReport* report = nullptr);

}  // namespace bnn
