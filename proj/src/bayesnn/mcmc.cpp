#include "bayesnn/mcmc.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "bayesnn/errors.hpp"

namespace bnn {

namespace {

void check_run_lengths(Index n, Index burn) {
  if (n < 1) throw ConfigError("number of draws must be >= 1");
  if (burn < 0 || burn >= n) throw ConfigError("burn-in must satisfy 0 <= burn < n");
}

Chain finish(Mat draws, Vec lt, std::vector<char> accepted, Index burn) {
  Chain c;
  c.draws = std::move(draws);
  c.log_target = std::move(lt);
  c.burn_in = burn;
  Index count = 0;
  for (char a : accepted) count += a ? 1 : 0;
  c.accept_rate = accepted.empty() ? 0.0 : static_cast<double>(count) / static_cast<double>(accepted.size());
  c.accepted = std::move(accepted);
  return c;
}

}  // namespace

Index default_burn_in(Index n) { return n / 5; }

Proposal gaussian_random_walk(Vec proposal_std) {
  for (Index i = 0; i < proposal_std.size(); ++i)
    if (!(proposal_std(i) > 0.0)) throw ConfigError("proposal_std must be positive");
  Proposal p;
  p.draw = [std = proposal_std](const Vec& from, RngStream& rng) {
    return Vec(from + std.cwiseProduct(rng.normal_vector(from.size())));
  };
  p.log_density = [std = proposal_std](const Vec& to, const Vec& from) {
    return -0.5 * (to - from).cwiseQuotient(std).squaredNorm() - std.array().log().sum();
  };
  return p;
}

Chain mh_sample(const LogTarget& log_target, const Proposal& proposal, const Vec& init, Index n,
                Index burn, RngStream& rng) {
  check_run_lengths(n, burn);
  Vec theta = init;
  double lf = log_target(theta);
  if (!std::isfinite(lf)) throw NumericalError("log-target is not finite at the initial point");

  Mat draws(n, init.size());
  Vec lt(n);
  std::vector<char> accepted(static_cast<std::size_t>(n), 0);
  for (Index t = 0; t < n; ++t) {
    Vec cand = proposal.draw(theta, rng);
    const double lf_cand = log_target(cand);
    const double u = rng.uniform();
    if (std::isfinite(lf_cand)) {
      const double log_r = lf_cand - lf + proposal.log_density(theta, cand) -
                           proposal.log_density(cand, theta);
      if (std::log(u) < log_r) {
        theta = std::move(cand);
        lf = lf_cand;
        accepted[static_cast<std::size_t>(t)] = 1;
      }
    }
    draws.row(t) = theta.transpose();
    lt(t) = lf;
  }
  return finish(std::move(draws), std::move(lt), std::move(accepted), burn);
}

Chain mh_sample(const LogTarget& log_target, const Vec& proposal_std, const Vec& init, Index n,
                Index burn, RngStream& rng) {
  if (proposal_std.size() != init.size())
    throw DimensionMismatch("proposal_std and init differ in length");
  return mh_sample(log_target, gaussian_random_walk(proposal_std), init, n, burn, rng);
}

HmcTarget posterior_target(const ProbModel& model, const GaussianPrior& prior, const Dataset& data) {
  if (prior.dim() != model.param_dim()) throw DimensionMismatch("prior and model dimensions differ");
  HmcTarget t;
  t.potential = [&model, &prior, &data](const Vec& theta) {
    return -prior.log_density(theta) - model.log_lik(theta, Batch::full(data));
  };
  t.grad_potential = [&model, &prior, &data](const Vec& theta) {
    return Vec(-prior.grad_log_density(theta) - model.grad_sum(theta, Batch::full(data)));
  };
  return t;
}

void HmcConfig::validate(Index dim) const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ConfigError("hmc step_size must be > 0");
  if (leapfrog_steps < 1) throw ConfigError("hmc leapfrog_steps must be >= 1");
  if (mass.size() > 0) {
    if (mass.rows() != dim || mass.cols() != dim) throw ConfigError("hmc mass matrix has wrong size");
    if (!is_spd(mass)) throw ConfigError("hmc mass matrix must be SPD");
  }
}

bool leapfrog(const HmcTarget& target, Vec& theta, Vec& rho, double step_size, Index steps,
              const Mat& inv_mass) {
  Vec g = target.grad_potential(theta);
  for (Index l = 0; l < steps; ++l) {
    rho -= 0.5 * step_size * g;
    theta += step_size * (inv_mass * rho);
    g = target.grad_potential(theta);
    rho -= 0.5 * step_size * g;
    if (!theta.allFinite() || !rho.allFinite() || !g.allFinite()) return false;
  }
  return true;
}

double hamiltonian(const HmcTarget& target, const Vec& theta, const Vec& rho, const Mat& inv_mass) {
  return target.potential(theta) + 0.5 * rho.dot(inv_mass * rho);
}

Chain hmc_sample(const HmcTarget& target, const HmcConfig& cfg, const Vec& init, Index n,
                 Index burn, RngStream& rng) {
  const Index k = init.size();
  cfg.validate(k);
  check_run_lengths(n, burn);

  Mat mass = cfg.mass.size() > 0 ? cfg.mass : Mat(Mat::Identity(k, k));
  Mat inv_mass = spd_inverse(mass);
  Mat mass_chol = cholesky_or_throw(mass, "hmc mass").matrixL();

  Vec theta = init;
  double v = target.potential(theta);
  if (!std::isfinite(v)) throw NumericalError("potential is not finite at the initial point");

  Mat draws(n, k);
  Vec lt(n);
  std::vector<char> accepted(static_cast<std::size_t>(n), 0);
  for (Index t = 0; t < n; ++t) {
    if (cfg.adapt_diagonal_mass && t == burn && burn >= 10) {
      // Second half of warm-up, after the chain has left its starting point.
      const Mat warm = draws.middleRows(burn / 2, burn - burn / 2);
      const Vec mean = warm.colwise().mean().transpose();
      Vec var = (warm.rowwise() - mean.transpose()).array().square().colwise().sum().transpose() /
                static_cast<double>(std::max<Index>(warm.rows() - 1, 1));
      var = var.cwiseMax(1e-12);
      inv_mass = var.asDiagonal();
      mass = var.cwiseInverse().asDiagonal();
      mass_chol = Mat(var.cwiseInverse().cwiseSqrt().asDiagonal());
    }
    Vec rho = mass_chol * rng.normal_vector(k);
    const double h0 = v + 0.5 * rho.dot(inv_mass * rho);
    Vec cand = theta;
    const bool ok = leapfrog(target, cand, rho, cfg.step_size, cfg.leapfrog_steps, inv_mass);
    const double u = rng.uniform();
    if (ok) {
      const double v_cand = target.potential(cand);
      const double h1 = v_cand + 0.5 * rho.dot(inv_mass * rho);
      if (std::isfinite(h1) && std::log(u) < h0 - h1) {
        theta = std::move(cand);
        v = v_cand;
        accepted[static_cast<std::size_t>(t)] = 1;
      }
    }
    draws.row(t) = theta.transpose();
    lt(t) = -v;
  }
  return finish(std::move(draws), std::move(lt), std::move(accepted), burn);
}

Chain hmc_sample(const ProbModel& model, const GaussianPrior& prior, const Dataset& data,
                 const HmcConfig& cfg, const Vec& init, Index n, Index burn, RngStream& rng) {
  return hmc_sample(posterior_target(model, prior, data), cfg, init, n, burn, rng);
}

EssResult effective_sample_size(const Chain& chain) {
  return effective_sample_size(chain.post_burn_in());
}

EssResult effective_sample_size(const Mat& draws) {
  const Index n = draws.rows();
  if (n < 100) throw DataError("effective sample size needs at least 100 post-burn-in draws");
  EssResult out;
  out.ess.resize(draws.cols());
  for (Index j = 0; j < draws.cols(); ++j) {
    const Vec x = draws.col(j).array() - draws.col(j).mean();
    const double c0 = x.squaredNorm() / static_cast<double>(n);
    if (!(c0 > 0.0)) {
      out.ess(j) = 1.0;
      out.degenerate = true;
      continue;
    }
    auto rho = [&](Index lag) {
      return x.head(n - lag).dot(x.tail(n - lag)) / (static_cast<double>(n) * c0);
    };
    // Sum of consecutive-pair autocorrelations, truncated at the first
    // non-positive pair and forced monotone.
    double tau = -1.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (Index m = 0; 2 * m + 1 < n; ++m) {
      double pair = (m == 0 ? 1.0 : rho(2 * m)) + rho(2 * m + 1);
      if (pair <= 0.0) break;
      pair = std::min(pair, prev_pair);
      prev_pair = pair;
      tau += 2.0 * pair;
    }
    tau = std::max(tau, 1.0 / static_cast<double>(n));
    out.ess(j) = std::min(static_cast<double>(n) / tau, static_cast<double>(n));
  }
  return out;
}

}  // namespace bnn
