#pragma once

#include "bayesnn/gaussian.hpp"
#include "bayesnn/models.hpp"
#include "bayesnn/rng.hpp"

namespace bnn {

// ---- Euclidean ELBO gradients in (mu, Sigma) ----------------------------

enum class GradientMode {
  kMonteCarlo,  // average over draws from q
  kAtMean       // evaluate at mu (exact for quadratic log-joints; needs a Hessian)
};

struct ElboGradients {
  Vec grad_mu;
  Mat grad_sigma;
  double elbo = 0.0;
  double elbo_stderr = 0.0;
};

// grad_mu = E[grad log p(D, theta)], grad_Sigma = 1/2 E[hess log p(D, theta)] +
// 1/2 Sigma^{-1}. The Hessian term uses the model Hessian when it has one and
// E[Sigma^{-1}(theta - mu) grad^T] otherwise. `scale` multiplies the batch
// log-likelihood.
ElboGradients elbo_gradients(const GaussianVariational& q, const ProbModel& model,
                             const GaussianPrior& prior, const Batch& batch, double scale,
                             Index n_samples, RngStream& rng,
                             GradientMode mode = GradientMode::kMonteCarlo);

// ---- NGVI ----------------------------------------------------------------

// Mean and precision; full (precision matrix) or diagonal (precision vector).
struct NgviState {
  Vec mu;
  Mat precision;       // full case
  Vec precision_diag;  // diagonal case
  bool diagonal = false;
  Index t = 0;

  static NgviState full(Vec mu, Mat precision);
  static NgviState diag(Vec mu, Vec precision);
  static NgviState from_gaussian(const GaussianVariational& q, bool diagonal);
  GaussianVariational as_gaussian() const;
};

struct StepReport {
  int halvings = 0;       // how often beta was halved to keep the precision SPD
  bool rejected = false;  // no admissible step found, state unchanged
};

// Use Sigma_{t+1} (default) or Sigma_t in the mean update.
enum class MeanUpdate { kNextCovariance, kCurrentCovariance };

// Precision <- precision - 2 beta grad_Sigma; mu <- mu + beta Sigma grad_mu.
// On a diagonal state only the diagonal of grad_sigma is used.
NgviState ngvi_step(const NgviState& state, const Vec& grad_mu, const Mat& grad_sigma, double beta,
                    MeanUpdate order = MeanUpdate::kNextCovariance, StepReport* report = nullptr);
NgviState ngvi_step_diag(const NgviState& state, const Vec& grad_mu, const Vec& grad_var,
                         double beta, MeanUpdate order = MeanUpdate::kNextCovariance,
                         StepReport* report = nullptr);

// ---- VON / VADAM / VOGN ------------------------------------------------------

// sigma^2 = 1 / (N (s + lambda_tilde)). When `full` is set the matrix S plays
// the role of s and the covariance is (N (S + lambda_tilde I))^{-1}.
struct VonState {
  Vec mu;
  Vec s;
  Mat S;
  bool full = false;
  double lambda_tilde = 0.0;
  Index n_data = 1;
  Vec m;  // first-moment buffer (VADAM, VOGN)
  Index t = 0;

  static VonState diag(Vec mu, Vec s, double lambda_tilde, Index n_data);
  static VonState full_matrix(Vec mu, Mat S, double lambda_tilde, Index n_data);
  Vec variance() const;  // diagonal case
  GaussianVariational as_gaussian() const;
};

enum class Curvature {
  kAuto,     // model Hessian if available, GGN diagonal otherwise
  kHessian,  // require the model Hessian
  kGgn       // mean squared per-sample gradients
};

struct VonOptions {
  Curvature curvature = Curvature::kAuto;
  // Evaluate g and H at the mean instead of at a draw (exact expectations
  // for quadratic models).
  bool at_mean = false;
};

struct VonReport {
  Vec g_hat;  // gradient of the mean negative log-likelihood used in the step
  Vec h_hat;  // curvature used in the step
  bool clipped = false;
};

VonState von_step(const VonState& state, const ProbModel& model, const Batch& batch,
                  RngStream& rng, double beta, const VonOptions& opts = {},
                  VonReport* report = nullptr);

// Raw buffers m and s are kept; bias correction is applied when forming the step.
VonState vadam_step(const VonState& state, const ProbModel& model, const Batch& batch,
                    RngStream& rng, double beta, double gamma1, double gamma2,
                    VonReport* report = nullptr);

VonState vogn_step(const VonState& state, const ProbModel& model, const Batch& batch,
                   RngStream& rng, double beta, double beta1, double beta2, Index n_samples,
                   VonReport* report = nullptr);

// Curvature estimates from an M x k matrix of per-sample gradients.
Vec hessian_per_sample(const Mat& per_sample_grads);     // mean of squares
Vec hessian_batch_squared(const Mat& per_sample_grads);  // square of the mean

// ---- QBVI ----------------------------------------------------------------

struct QbviOptions {
  Index n_samples = 16;
  // Subtract a leave-one-out mean of log p(D | theta_s) before weighting the
  // scores. The score has zero mean, so the estimator stays unbiased.
  bool baseline = true;
};

struct QbviReport {
  StepReport step;
  double elbo = 0.0;
  double elbo_stderr = 0.0;
  Mat g_sigma;
  Vec g_mu;
};

// Full-covariance state. log_lik is theta -> log p(D | theta).
NgviState qbvi_step(const NgviState& state, const LogDensity& log_lik, const GaussianPrior& prior,
                    const QbviOptions& opts, RngStream& rng, double beta,
                    QbviReport* report = nullptr);

// ---- 1-D example: plain gradients on (mu, sigma) vs NGVI ---------------------

struct InstabilityConfig {
  double target_mean = 2.0;
  double target_std = 0.1;
  double mu0 = 0.0;
  double sigma0 = 1.0;
  double beta = 0.05;
  Index max_iterations = 1000;
  double divergence_threshold = 1e3;
  double tolerance = 0.05;
};

struct InstabilityResult {
  bool sgd_diverged = false;
  Index sgd_iterations = 0;
  double sgd_last_sigma = 0.0;
  bool ngvi_converged = false;
  double ngvi_mu = 0.0;
  double ngvi_sigma = 0.0;
};

// Maximizes L(mu, sigma) = E_q[log N(theta | m, s^2)] + entropy with exact gradients.
InstabilityResult run_instability_example(const InstabilityConfig& cfg);

}  // namespace bnn
