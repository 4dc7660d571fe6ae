#pragma once

#include <vector>

#include "bayesnn/adam.hpp"
#include "bayesnn/gaussian.hpp"
#include "bayesnn/models.hpp"
#include "bayesnn/rng.hpp"

namespace bnn {

double softplus(double x);
Vec softplus(const Vec& x);
// Inverse of softplus for x > 0.
Vec softplus_inverse(const Vec& x);

// Diagonal Gaussian with sigma = softplus(rho).
struct BbbState {
  Vec mu;
  Vec rho;
  Index t = 0;

  static BbbState from_mean_std(Vec mu, const Vec& sigma);
  Vec sigma() const { return softplus(rho); }
  GaussianVariational as_gaussian() const;
};

// f(w, theta) = log q(w | theta) - log p(w) - scale * log p(batch | w) for a
// fixed noise draw eps, with its total derivatives in mu and rho.
struct BbbObjective {
  double f = 0.0;
  Vec grad_mu;
  Vec grad_rho;
};

BbbObjective bbb_objective(const BbbState& state, const ProbModel& model,
                           const GaussianPrior& prior, const Batch& batch, const Vec& eps,
                           double scale = 1.0);

struct BbbReport {
  double f = 0.0;
  bool rejected = false;    // non-finite objective, state unchanged
  int halvings = 0;         // times the step was halved to stay finite
};

// One step; scale multiplies the batch log-likelihood (N / M for minibatches).
BbbState bbb_step(const BbbState& state, const ProbModel& model, const GaussianPrior& prior,
                  const Batch& batch, RngStream& rng, double beta, double scale = 1.0,
                  BbbReport* report = nullptr);

// Parameter chart used for each factor's score function.
enum class FactorChart {
  kMeanLogStd,   // (mu_i, log sigma_i)
  kMeanVariance  // (mu_i, sigma_i^2)
};

// Mean-field Gaussian split into K diagonal blocks of consecutive coordinates.
class FactorizedPosterior {
 public:
  FactorizedPosterior(Vec mean, Vec variance, std::vector<Index> block_sizes);
  static FactorizedPosterior single_block(Vec mean, Vec variance);

  Index dim() const noexcept { return mean_.size(); }
  Index num_factors() const noexcept { return static_cast<Index>(sizes_.size()); }
  Index factor_offset(Index k) const { return offsets_[static_cast<std::size_t>(k)]; }
  Index factor_size(Index k) const { return sizes_[static_cast<std::size_t>(k)]; }
  const std::vector<Index>& block_sizes() const noexcept { return sizes_; }

  const Vec& mean() const noexcept { return mean_; }
  const Vec& variance() const noexcept { return variance_; }
  GaussianVariational factor(Index k) const;
  GaussianVariational as_gaussian() const;

  // zeta = (mu_1, log sigma_1, ..., mu_k, log sigma_k) per factor, factor by factor.
  Vec zeta() const;
  static FactorizedPosterior from_zeta(const Vec& zeta, const std::vector<Index>& block_sizes);

  // Score of factor k's log-density at the factor's coordinates theta_k.
  Vec factor_score(Index k, const Vec& theta, FactorChart chart = FactorChart::kMeanLogStd) const;
  double factor_log_pdf(Index k, const Vec& theta) const;
  // Joint score in the zeta layout.
  Vec score(const Vec& theta) const;

  Mat sample(RngStream& rng, Index n) const;

 private:
  Vec mean_;
  Vec variance_;
  std::vector<Index> sizes_;
  std::vector<Index> offsets_;
};

struct BbviReport {
  Index dropped_draws = 0;
  double elbo = 0.0;   // mean bracket over kept draws
  double elbo_stderr = 0.0;
};

// Score-function estimate of grad_zeta L in the zeta layout.
Vec bbvi_gradient(const FactorizedPosterior& post, const LogDensity& log_joint, Index n_samples,
                  RngStream& rng, BbviReport* report = nullptr);

// Robbins-Monro beta0 / (1 + t)^0.6, or beta0 when constant.
double bbvi_step_size(double beta0, Index t, bool constant);

FactorizedPosterior bbvi_step(const FactorizedPosterior& post, const LogDensity& log_joint,
                              Index n_samples, RngStream& rng, double beta, BbviReport* report);

struct NgbbviOptions {
  Index n_samples = 16;
  bool control_variate = true;
  FactorChart chart = FactorChart::kMeanLogStd;
};

struct NgbbviGradient {
  Vec natural;     // FIM^{-1} mean(f_Y), per factor, zeta layout
  Vec euclidean;   // mean(f_Y), zeta layout
  std::vector<Vec> a_star;
  std::vector<Mat> fim;
  Index ridged_factors = 0;
  Index dropped_draws = 0;
  double elbo = 0.0;
  double elbo_stderr = 0.0;
};

// Split the n_samples draws into a first half X (control-variate
// coefficients) and a second half Y (gradient and FIM estimates).
NgbbviGradient ngbbvi_gradient(const FactorizedPosterior& post, const LogDensity& log_joint,
                               const NgbbviOptions& opts, RngStream& rng);

struct NgbbviState {
  FactorizedPosterior post;
  AdamMoments adam;
};

void ngbbvi_step(NgbbviState& state, const LogDensity& log_joint, const NgbbviOptions& opts,
                 RngStream& rng, double beta, NgbbviGradient* out = nullptr);

}  // namespace bnn
