#include "bayesnn/natgrad.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "bayesnn/errors.hpp"

namespace bnn {

namespace {

constexpr int kMaxHalvings = 30;

double gaussian_entropy(const GaussianVariational& q) {
  const double k = static_cast<double>(q.dim());
  return 0.5 * k * (1.0 + std::log(2.0 * std::numbers::pi)) + 0.5 * q.log_det_covariance();
}

void mean_stderr(const std::vector<double>& v, double& mean, double& se) {
  const double n = static_cast<double>(v.size());
  mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  se = v.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
}

// Hessian of scale * log p(batch | theta), or nullopt when the model has none.
std::optional<Mat> loglik_hessian(const ProbModel& model, const Vec& theta, const Batch& batch,
                                  double scale) {
  if (batch.size() == 0) return Mat(Mat::Zero(model.param_dim(), model.param_dim()));
  auto h = model.hessian(theta, batch);
  if (!h) return std::nullopt;
  return Mat(-scale * static_cast<double>(batch.size()) * *h);
}

Vec sample_diag(const Vec& mu, const Vec& var, RngStream& rng) {
  return mu + var.cwiseSqrt().cwiseProduct(rng.normal_vector(mu.size()));
}

}  // namespace

ElboGradients elbo_gradients(const GaussianVariational& q, const ProbModel& model,
                             const GaussianPrior& prior, const Batch& batch, double scale,
                             Index n_samples, RngStream& rng, GradientMode mode) {
  const Index k = q.dim();
  if (model.param_dim() != k || prior.dim() != k)
    throw DimensionMismatch("elbo_gradients: model, prior and q dimensions differ");
  const Mat sigma_inv = q.precision();
  ElboGradients out;

  if (mode == GradientMode::kAtMean) {
    const Vec& mu = q.mean();
    auto h = loglik_hessian(model, mu, batch, scale);
    if (!h) throw ConfigError("gradients at the mean need a model with an exact Hessian");
    const Mat hess = *h - prior.precision0;
    out.grad_mu = prior.grad_log_density(mu) + scale * model.grad_sum(mu, batch);
    out.grad_sigma = symmetrize(0.5 * hess + 0.5 * sigma_inv);
    // Exact for quadratic log-joints.
    out.elbo = prior.log_density(mu) + scale * model.log_lik(mu, batch) +
               0.5 * (hess * q.covariance()).trace() + gaussian_entropy(q);
    out.elbo_stderr = 0.0;
    return out;
  }

  if (n_samples < 1) throw ConfigError("elbo_gradients needs n_s >= 1");
  const bool has_hessian = batch.size() == 0 || model.hessian(q.mean(), batch).has_value();
  out.grad_mu = Vec::Zero(k);
  Mat second = Mat::Zero(k, k);
  std::vector<double> terms;
  const Mat draws = sample_reparam(q, rng, n_samples);
  for (Index s = 0; s < n_samples; ++s) {
    const Vec theta = draws.row(s).transpose();
    const Vec g = prior.grad_log_density(theta) + scale * model.grad_sum(theta, batch);
    out.grad_mu += g;
    if (has_hessian) {
      second += *loglik_hessian(model, theta, batch, scale) - prior.precision0;
    } else {
      second += q.precision_times(theta - q.mean()) * g.transpose();
    }
    terms.push_back(prior.log_density(theta) + scale * model.log_lik(theta, batch) - log_pdf(q, theta));
  }
  const double n = static_cast<double>(n_samples);
  out.grad_mu /= n;
  out.grad_sigma = symmetrize(0.5 * second / n + 0.5 * sigma_inv);
  mean_stderr(terms, out.elbo, out.elbo_stderr);
  return out;
}

NgviState NgviState::full(Vec mu, Mat precision) {
  if (precision.rows() != mu.size() || precision.cols() != mu.size())
    throw DimensionMismatch("ngvi: precision has the wrong size");
  if (!is_spd(precision)) throw InvalidParameter("ngvi: precision must be SPD");
  NgviState s;
  s.mu = std::move(mu);
  s.precision = symmetrize(precision);
  return s;
}

NgviState NgviState::diag(Vec mu, Vec precision) {
  if (precision.size() != mu.size()) throw DimensionMismatch("ngvi: precision has the wrong size");
  if (!(precision.minCoeff() > 0.0)) throw InvalidParameter("ngvi: precision must be positive");
  NgviState s;
  s.mu = std::move(mu);
  s.precision_diag = std::move(precision);
  s.diagonal = true;
  return s;
}

NgviState NgviState::from_gaussian(const GaussianVariational& q, bool diagonal) {
  if (diagonal) return diag(q.mean(), q.variance_diagonal().cwiseInverse());
  return full(q.mean(), q.precision());
}

GaussianVariational NgviState::as_gaussian() const {
  if (diagonal) return GaussianVariational::diagonal(mu, precision_diag.cwiseInverse());
  return GaussianVariational::from_precision(mu, precision);
}

NgviState ngvi_step(const NgviState& state, const Vec& grad_mu, const Mat& grad_sigma, double beta,
                    MeanUpdate order, StepReport* report) {
  if (state.diagonal) return ngvi_step_diag(state, grad_mu, grad_sigma.diagonal(), beta, order, report);
  const Index k = state.mu.size();
  if (grad_mu.size() != k || grad_sigma.rows() != k || grad_sigma.cols() != k)
    throw DimensionMismatch("ngvi_step: gradient sizes do not match the state");
  StepReport local;
  StepReport& rep = report ? *report : local;
  rep = StepReport{};
  NgviState next = state;
  next.t = state.t + 1;
  double b = beta;
  for (int attempt = 0; attempt <= kMaxHalvings; ++attempt) {
    const Mat p = symmetrize(state.precision - 2.0 * b * grad_sigma);
    auto llt = try_cholesky(p);
    if (llt) {
      next.precision = p;
      const Vec step = order == MeanUpdate::kNextCovariance
                           ? Vec(llt->solve(grad_mu))
                           : Vec(cholesky_or_throw(state.precision, "ngvi").solve(grad_mu));
      next.mu = state.mu + b * step;
      return next;
    }
    b *= 0.5;
    ++rep.halvings;
  }
  rep.rejected = true;
  return next;
}

NgviState ngvi_step_diag(const NgviState& state, const Vec& grad_mu, const Vec& grad_var,
                         double beta, MeanUpdate order, StepReport* report) {
  if (!state.diagonal) throw InvalidParameter("ngvi_step_diag needs a diagonal state");
  const Index k = state.mu.size();
  if (grad_mu.size() != k || grad_var.size() != k)
    throw DimensionMismatch("ngvi_step_diag: gradient sizes do not match the state");
  StepReport local;
  StepReport& rep = report ? *report : local;
  rep = StepReport{};
  NgviState next = state;
  next.t = state.t + 1;
  double b = beta;
  for (int attempt = 0; attempt <= kMaxHalvings; ++attempt) {
    const Vec p = state.precision_diag - 2.0 * b * grad_var;
    if (p.allFinite() && p.minCoeff() > 0.0) {
      next.precision_diag = p;
      const Vec& scale = order == MeanUpdate::kNextCovariance ? p : state.precision_diag;
      next.mu = state.mu + b * grad_mu.cwiseQuotient(scale);
      return next;
    }
    b *= 0.5;
    ++rep.halvings;
  }
  rep.rejected = true;
  return next;
}

VonState VonState::diag(Vec mu, Vec s, double lambda_tilde, Index n_data) {
  if (s.size() != mu.size()) throw DimensionMismatch("von: s and mu differ in length");
  if (!(lambda_tilde >= 0.0)) throw InvalidParameter("von: lambda_tilde must be >= 0");
  if (n_data < 1) throw InvalidParameter("von: n_data must be >= 1");
  if (!((s.array() + lambda_tilde).minCoeff() > 0.0))
    throw InvalidParameter("von: s + lambda_tilde must be positive");
  VonState st;
  st.mu = std::move(mu);
  st.s = std::move(s);
  st.lambda_tilde = lambda_tilde;
  st.n_data = n_data;
  st.m = Vec::Zero(st.mu.size());
  return st;
}

VonState VonState::full_matrix(Vec mu, Mat S, double lambda_tilde, Index n_data) {
  const Index k = mu.size();
  if (S.rows() != k || S.cols() != k) throw DimensionMismatch("von: S has the wrong size");
  if (n_data < 1) throw InvalidParameter("von: n_data must be >= 1");
  if (!is_spd(symmetrize(S) + lambda_tilde * Mat::Identity(k, k)))
    throw InvalidParameter("von: S + lambda_tilde I must be SPD");
  VonState st;
  st.mu = std::move(mu);
  st.S = symmetrize(S);
  st.full = true;
  st.lambda_tilde = lambda_tilde;
  st.n_data = n_data;
  st.m = Vec::Zero(k);
  return st;
}

Vec VonState::variance() const {
  if (full) return as_gaussian().variance_diagonal();
  return ((s.array() + lambda_tilde) * static_cast<double>(n_data)).inverse().matrix();
}

GaussianVariational VonState::as_gaussian() const {
  if (full) {
    const Index k = mu.size();
    return GaussianVariational::from_precision(
        mu, static_cast<double>(n_data) * (S + lambda_tilde * Mat::Identity(k, k)));
  }
  return GaussianVariational::diagonal(mu, variance());
}

VonState von_step(const VonState& state, const ProbModel& model, const Batch& batch,
                  RngStream& rng, double beta, const VonOptions& opts, VonReport* report) {
  if (batch.size() == 0) throw DataError("von: empty minibatch");
  const Index k = state.mu.size();
  Vec theta = state.mu;
  if (!opts.at_mean) {
    if (state.full)
      theta = sample_reparam(state.as_gaussian(), rng, 1).row(0).transpose();
    else
      theta = sample_diag(state.mu, state.variance(), rng);
  }

  const Vec g = -model.grad(theta, batch);
  std::optional<Mat> hess;
  if (opts.curvature != Curvature::kGgn) hess = model.hessian(theta, batch);
  if (opts.curvature == Curvature::kHessian && !hess)
    throw ConfigError("von: the model has no exact Hessian");

  VonState next = state;
  next.t = state.t + 1;
  VonReport rep;
  rep.g_hat = g;
  if (state.full) {
    Mat h;
    if (hess) {
      h = *hess;
    } else {
      const Mat pg = model.per_sample_grads(theta, batch);
      h = pg.transpose() * pg / static_cast<double>(batch.size());
    }
    rep.h_hat = h.diagonal();
    next.S = symmetrize((1.0 - beta) * state.S + beta * h);
    const Mat a = next.S + state.lambda_tilde * Mat::Identity(k, k);
    auto llt = try_cholesky(a);
    if (!llt) throw ManifoldExit("von: S + lambda_tilde I left the SPD cone");
    next.mu = state.mu - beta * llt->solve(g + state.lambda_tilde * state.mu);
  } else {
    const Vec h = hess ? Vec(hess->diagonal()) : model.ggn_diag(theta, batch);
    rep.h_hat = h;
    next.s = (1.0 - beta) * state.s + beta * h;
    const double floor = 1e-12 - state.lambda_tilde;
    for (Index i = 0; i < k; ++i) {
      if (next.s(i) + state.lambda_tilde <= 0.0) {
        next.s(i) = floor;
        rep.clipped = true;
      }
    }
    next.mu = state.mu - beta * (g + state.lambda_tilde * state.mu)
                                    .cwiseQuotient((next.s.array() + state.lambda_tilde).matrix());
  }
  if (report) *report = std::move(rep);
  return next;
}

VonState vadam_step(const VonState& state, const ProbModel& model, const Batch& batch,
                    RngStream& rng, double beta, double gamma1, double gamma2, VonReport* report) {
  if (state.full) throw InvalidParameter("vadam works on the diagonal form");
  if (!(gamma1 >= 0.0 && gamma1 < 1.0) || !(gamma2 >= 0.0 && gamma2 < 1.0))
    throw ConfigError("vadam: gamma1 and gamma2 must lie in [0, 1)");
  if (batch.size() == 0) throw DataError("vadam: empty minibatch");
  const Vec theta = sample_diag(state.mu, state.variance(), rng);
  const Vec g = -model.grad(theta, batch);

  VonState next = state;
  next.t = state.t + 1;
  const double t = static_cast<double>(next.t);
  next.m = gamma1 * state.m + (1.0 - gamma1) * (g + state.lambda_tilde * state.mu);
  next.s = gamma2 * state.s + (1.0 - gamma2) * g.cwiseAbs2();
  const Vec m_hat = next.m / (1.0 - std::pow(gamma1, t));
  const Vec s_hat = next.s / (1.0 - std::pow(gamma2, t));
  next.mu = state.mu - beta * m_hat.cwiseQuotient((s_hat.array().sqrt() + state.lambda_tilde).matrix());
  if (report) {
    report->g_hat = g;
    report->h_hat = s_hat;
    report->clipped = false;
  }
  return next;
}

Vec hessian_per_sample(const Mat& per_sample_grads) {
  if (per_sample_grads.rows() == 0) throw DataError("curvature of an empty minibatch");
  return per_sample_grads.array().square().colwise().mean().transpose();
}

Vec hessian_batch_squared(const Mat& per_sample_grads) {
  if (per_sample_grads.rows() == 0) throw DataError("curvature of an empty minibatch");
  return per_sample_grads.colwise().mean().transpose().cwiseAbs2();
}

VonState vogn_step(const VonState& state, const ProbModel& model, const Batch& batch,
                   RngStream& rng, double beta, double beta1, double beta2, Index n_samples,
                   VonReport* report) {
  if (state.full) throw InvalidParameter("vogn works on the diagonal form");
  if (batch.size() == 0) throw DataError("vogn: empty minibatch");
  if (n_samples < 1) throw ConfigError("vogn: n_s must be >= 1");
  const Index k = state.mu.size();
  const Vec sigma = state.variance().cwiseSqrt();
  Vec g = Vec::Zero(k), h = Vec::Zero(k);
  for (Index s = 0; s < n_samples; ++s) {
    const Vec theta = state.mu + sigma.cwiseProduct(rng.normal_vector(k));
    // Per-sample gradients of the negative log-likelihood.
    const Mat pg = -model.per_sample_grads(theta, batch);
    g += pg.colwise().mean().transpose();
    h += hessian_per_sample(pg);
  }
  g /= static_cast<double>(n_samples);
  h /= static_cast<double>(n_samples);

  VonState next = state;
  next.t = state.t + 1;
  next.m = beta1 * state.m + (g + state.lambda_tilde * state.mu);
  next.s = (1.0 - beta2) * state.s + beta2 * h;
  next.mu = state.mu - beta * next.m.cwiseQuotient((next.s.array() + state.lambda_tilde).matrix());
  if (report) {
    report->g_hat = g;
    report->h_hat = h;
    report->clipped = false;
  }
  return next;
}

NgviState qbvi_step(const NgviState& state, const LogDensity& log_lik, const GaussianPrior& prior,
                    const QbviOptions& opts, RngStream& rng, double beta, QbviReport* report) {
  if (state.diagonal) throw InvalidParameter("qbvi works on the full-covariance form");
  if (opts.n_samples < 2) throw ConfigError("qbvi needs n_s >= 2");
  const Index k = state.mu.size();
  if (prior.dim() != k) throw DimensionMismatch("qbvi: prior dimension differs from the state");
  const GaussianVariational q = state.as_gaussian();
  const Mat draws = sample_reparam(q, rng, opts.n_samples);

  std::vector<Vec> vs;
  std::vector<double> ll, elbo_terms;
  for (Index s = 0; s < opts.n_samples; ++s) {
    const Vec theta = draws.row(s).transpose();
    const double l = log_lik(theta);
    if (!std::isfinite(l)) continue;
    vs.push_back(q.precision_times(theta - state.mu));
    ll.push_back(l);
    elbo_terms.push_back(l + prior.log_density(theta) - log_pdf(q, theta));
  }
  const std::size_t n = ll.size();
  if (n < 2) throw NumericalError("qbvi: fewer than two draws with a finite log-likelihood");
  double total = 0.0;
  for (double l : ll) total += l;

  Mat g_sigma = Mat::Zero(k, k);
  Vec g_mu = Vec::Zero(k);
  for (std::size_t i = 0; i < n; ++i) {
    const double base = opts.baseline ? (total - ll[i]) / static_cast<double>(n - 1) : 0.0;
    const double w = ll[i] - base;
    g_sigma += (state.precision - vs[i] * vs[i].transpose()) * w;
    g_mu += vs[i] * w;
  }
  g_sigma = symmetrize(g_sigma / static_cast<double>(n));
  g_mu /= static_cast<double>(n);

  QbviReport rep;
  mean_stderr(elbo_terms, rep.elbo, rep.elbo_stderr);
  rep.g_sigma = g_sigma;
  rep.g_mu = g_mu;

  NgviState next = state;
  next.t = state.t + 1;
  double b = beta;
  bool done = false;
  for (int attempt = 0; attempt <= kMaxHalvings; ++attempt) {
    const Mat p = symmetrize((1.0 - b) * state.precision + b * (prior.precision0 + g_sigma));
    auto llt = try_cholesky(p);
    if (llt) {
      next.precision = p;
      next.mu = state.mu + b * llt->solve(prior.precision0 * (prior.mean0 - state.mu) + g_mu);
      done = true;
      break;
    }
    b *= 0.5;
    ++rep.step.halvings;
  }
  rep.step.rejected = !done;
  if (report) *report = std::move(rep);
  return next;
}

InstabilityResult run_instability_example(const InstabilityConfig& cfg) {
  const double m = cfg.target_mean;
  const double inv_s2 = 1.0 / (cfg.target_std * cfg.target_std);
  InstabilityResult out;

  // Plain gradient ascent on (mu, sigma).
  double mu = cfg.mu0, sigma = cfg.sigma0;
  for (Index t = 0; t < cfg.max_iterations; ++t) {
    const double g_mu = -(mu - m) * inv_s2;
    const double g_sigma = -sigma * inv_s2 + 1.0 / sigma;
    mu += cfg.beta * g_mu;
    sigma += cfg.beta * g_sigma;
    out.sgd_iterations = t + 1;
    if (!std::isfinite(mu) || !std::isfinite(sigma) || std::abs(sigma) > cfg.divergence_threshold) {
      out.sgd_diverged = true;
      break;
    }
  }
  out.sgd_last_sigma = sigma;

  // NGVI on the same objective: grad wrt sigma^2 is -1/(2 s^2) + 1/(2 sigma^2).
  NgviState st = NgviState::diag(Vec::Constant(1, cfg.mu0), Vec::Constant(1, 1.0 / (cfg.sigma0 * cfg.sigma0)));
  for (Index t = 0; t < cfg.max_iterations; ++t) {
    const double var = 1.0 / st.precision_diag(0);
    const Vec g_mu = Vec::Constant(1, -(st.mu(0) - m) * inv_s2);
    const Vec g_var = Vec::Constant(1, -0.5 * inv_s2 + 0.5 / var);
    st = ngvi_step_diag(st, g_mu, g_var, cfg.beta);
  }
  out.ngvi_mu = st.mu(0);
  out.ngvi_sigma = 1.0 / std::sqrt(st.precision_diag(0));
  out.ngvi_converged = std::isfinite(out.ngvi_mu) && std::isfinite(out.ngvi_sigma) &&
                       std::abs(out.ngvi_mu - m) < cfg.tolerance &&
                       std::abs(out.ngvi_sigma - cfg.target_std) < cfg.tolerance;
  return out;
}

}  // namespace bnn
