#pragma once

#include <functional>
#include <vector>

#include "bayesnn/gaussian.hpp"
#include "bayesnn/models.hpp"
#include "bayesnn/rng.hpp"

namespace bnn {

enum class SampleSource { kVariational, kMcmc };

struct PosteriorSamples {
  Mat draws;  // N_s x k
  SampleSource source = SampleSource::kVariational;

  PosteriorSamples(Mat draws, SampleSource source);
  Index size() const noexcept { return draws.rows(); }
  static PosteriorSamples from_gaussian(const GaussianVariational& q, Index n, RngStream& rng);
};

struct PredictiveSummary {
  Vec mean;        // regression: averaged network output; classification: averaged class probabilities
  Mat covariance;  // empty when not requested
  Vec class_probs; // classification only
  Index predicted_class = -1;  // 0-based argmax of class_probs
  Index n_draws = 0;
};

// Summary of N_s x p network outputs (class probabilities for classification).
// Covariance uses the 1/(N_s - 1) normalization and needs N_s >= 2.
PredictiveSummary summarize_outputs(const Mat& outputs, Task task, bool with_covariance = true);

PredictiveSummary predictive_summary(const PosteriorSamples& samples, const ProbModel& model,
                                     const Vec& x, bool with_covariance = true);

// ---- MC dropout ------------------------------------------------------------

struct DropoutConfig {
  // Drop probability for the input of each layer (size = number of layers).
  std::vector<double> rates;
  bool all_layers = false;  // also drop network inputs (layer 0)
  double weight_decay = 1e-4;
  double learning_rate = 1e-2;
  Index iterations = 2000;
  Index batch_size = 32;
  Index n_passes = 100;

  static DropoutConfig uniform(const Mlp& net, double rate);
  void validate(const Mlp& net) const;
};

// Bernoulli keep-masks (no rescaling); layers without dropout get empty masks.
Mlp::Masks draw_masks(const Mlp& net, const DropoutConfig& cfg, RngStream& rng);

// Called after every step with the iteration index and the minibatch
// objective; returning true stops training.
using DropoutCallback = std::function<bool(Index, double)>;

// Minimizes the mean minibatch negative log-likelihood plus
// weight_decay * ||theta||^2 with Adam; one fresh mask set per step.
Vec mc_dropout_train(const Mlp& net, const DropoutConfig& cfg, const Dataset& data, Vec theta0,
                     RngStream& rng, const DropoutCallback& on_step = {});

// n_passes stochastic forward passes with masks on.
std::vector<PredictiveSummary> mc_dropout_predict(const Mlp& net, const Vec& theta,
                                                  const DropoutConfig& cfg, const Mat& inputs,
                                                  RngStream& rng);

// ---- ELBO ------------------------------------------------------------------

struct ElboEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  Index dropped_draws = 0;
};

// MC average of log p(theta) + log p(D | theta) - log q(theta).
ElboEstimate elbo_estimate(const GaussianVariational& q, const ProbModel& model,
                           const GaussianPrior& prior, const Dataset& data, Index n_samples,
                           RngStream& rng);

// ---- Verification helpers ---------------------------------------------------

using ScalarFn = std::function<double(const Vec&)>;

// Central differences with step 1e-6 (1 + |x_i|). Per coordinate the error is
// |fd - g| / max(|fd|, |g|); discrepancies below 1e-8 in absolute value count
// as zero. Returns the worst coordinate.
double finite_diff_check(const ScalarFn& f, const Vec& x, const Vec& analytic_grad);
Vec finite_diff_gradient(const ScalarFn& f, const Vec& x);

// Objective on Gaussian parameters (mu, Sigma).
using GaussianObjective = std::function<double(const Vec& mu, const Mat& sigma)>;

// Minimal coordinates: lambda = (lambda1, upper triangle of lambda2) and the
// dual m = (m1, diag m2, 2 x off-diagonal m2). Returns
// ||I^{-1} grad_lambda L - grad_m L|| / ||grad_m L||. For k = 1 the Fisher
// matrix is analytic, for k >= 2 it is the finite-difference Jacobian of the
// map lambda -> m (the Hessian of the log-partition function).
double fim_duality_check(const GaussianVariational& q, const GaussianObjective& objective);

// Fisher matrix of the natural parameters in the minimal coordinates above.
Mat natural_fisher(const GaussianVariational& q, bool analytic);

}  // namespace bnn
