#pragma once

#include <functional>
#include <vector>

#include "bayesnn/linalg.hpp"
#include "bayesnn/models.hpp"
#include "bayesnn/rng.hpp"

namespace bnn {

struct Chain {
  Mat draws;                  // T x k, row t = state after iteration t
  Vec log_target;             // log f at each recorded state
  std::vector<char> accepted; // per iteration
  double accept_rate = 0.0;
  Index burn_in = 0;

  Index length() const noexcept { return draws.rows(); }
  Mat post_burn_in() const { return draws.bottomRows(draws.rows() - burn_in); }
};

// 20% of n, the customary fraction of discarded draws.
Index default_burn_in(Index n);

using LogTarget = std::function<double(const Vec&)>;

// A proposal kernel g(. | theta). log_density(to, from) = log g(to | from).
struct Proposal {
  std::function<Vec(const Vec& from, RngStream& rng)> draw;
  std::function<double(const Vec& to, const Vec& from)> log_density;
};

// Isotropic-per-coordinate Gaussian random walk.
Proposal gaussian_random_walk(Vec proposal_std);

// Metropolis-Hastings with the full Hastings ratio.
Chain mh_sample(const LogTarget& log_target, const Proposal& proposal, const Vec& init, Index n,
                Index burn, RngStream& rng);
Chain mh_sample(const LogTarget& log_target, const Vec& proposal_std, const Vec& init, Index n,
                Index burn, RngStream& rng);

// Potential energy V and its gradient.
struct HmcTarget {
  std::function<double(const Vec&)> potential;
  std::function<Vec(const Vec&)> grad_potential;
};

// V(theta) = -log p(theta) - log p(D | theta).
HmcTarget posterior_target(const ProbModel& model, const GaussianPrior& prior, const Dataset& data);

struct HmcConfig {
  double step_size = 0.0;
  Index leapfrog_steps = 0;
  Mat mass;  // empty = identity
  // Replace the mass matrix after burn-in by diag(1 / warm-up variances).
  bool adapt_diagonal_mass = false;

  void validate(Index dim) const;
};

// In-place leapfrog trajectory of L steps. Returns false if a non-finite
// value appeared along the way.
bool leapfrog(const HmcTarget& target, Vec& theta, Vec& rho, double step_size, Index steps,
              const Mat& inv_mass);

double hamiltonian(const HmcTarget& target, const Vec& theta, const Vec& rho, const Mat& inv_mass);

Chain hmc_sample(const HmcTarget& target, const HmcConfig& cfg, const Vec& init, Index n,
                 Index burn, RngStream& rng);
Chain hmc_sample(const ProbModel& model, const GaussianPrior& prior, const Dataset& data,
                 const HmcConfig& cfg, const Vec& init, Index n, Index burn, RngStream& rng);

struct EssResult {
  Vec ess;                 // per dimension
  bool degenerate = false; // some dimension has zero variance
};

// Initial-positive-sequence estimator on the post-burn-in draws.
EssResult effective_sample_size(const Chain& chain);
EssResult effective_sample_size(const Mat& draws);

}  // namespace bnn
