#include "bayesnn/spd.hpp"

#include <cmath>
#include <vector>

#include "bayesnn/errors.hpp"

namespace bnn {

namespace {

constexpr int kMaxHalvings = 30;

struct Draws {
  std::vector<Vec> centered;  // theta_s - mu
  std::vector<double> log_f;
  std::vector<double> h;
  Index dropped = 0;
};

std::vector<double> weights(const std::vector<double>& log_f, bool baseline) {
  const std::size_t n = log_f.size();
  double total = 0.0;
  for (double v : log_f) total += v;
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double b = baseline ? (total - log_f[i]) / static_cast<double>(n - 1) : 0.0;
    w[i] = log_f[i] - b;
  }
  return w;
}

void summarize_h(const std::vector<double>& h, ManifoldGradient& g) {
  const double n = static_cast<double>(h.size());
  double mean = 0.0;
  for (double v : h) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : h) ss += (v - mean) * (v - mean);
  g.elbo = mean;
  g.elbo_stderr = h.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
}

}  // namespace

SpdPoint::SpdPoint(Mat value) : value_(std::move(value)) {
  if (value_.rows() != value_.cols() || value_.rows() == 0)
    throw DimensionMismatch("SpdPoint: matrix must be square and non-empty");
  if (relative_asymmetry(value_) > 1e-12) throw InvalidParameter("SpdPoint: matrix is not symmetric");
  value_ = symmetrize(value_);
  cholesky_or_throw(value_, "SpdPoint");
}

Mat SpdPoint::inverse() const { return spd_inverse(value_); }

void check_tangent(const SpdPoint& base, const Mat& xi) {
  if (xi.rows() != base.dim() || xi.cols() != base.dim())
    throw DimensionMismatch("tangent vector has the wrong size");
  if (!xi.allFinite()) throw NumericalError("tangent vector is not finite");
  if (xi.norm() > 0.0 && relative_asymmetry(xi) > 1e-12)
    throw InvalidParameter("tangent vector is not symmetric");
}

SpdPoint retract(const SpdPoint& base, const Mat& xi) {
  check_tangent(base, xi);
  const Mat& z = base.value();
  const Mat sym_xi = symmetrize(xi);
  const Mat zinv_xi = cholesky_or_throw(z, "retract").solve(sym_xi);
  const Mat r = symmetrize(z + sym_xi + 0.5 * sym_xi * zinv_xi);
  if (!is_spd(r)) throw ManifoldExit("retract: step leaves the SPD manifold");
  return SpdPoint(r);
}

Mat transport_factor(const SpdPoint& from, const SpdPoint& to) {
  if (from.dim() != to.dim()) throw DimensionMismatch("transport: points differ in size");
  const Mat zs = spd_sqrt(from.value());
  const Mat zis = spd_inv_sqrt(from.value());
  const Mat a = symmetrize(zis * to.value() * zis);
  return zs * spd_sqrt(a) * zis;
}

Mat transport(const SpdPoint& from, const SpdPoint& to, const Mat& xi) {
  check_tangent(from, xi);
  const Mat e = transport_factor(from, to);
  return symmetrize(e * xi * e.transpose());
}

Vec mgvb_natural_mu(const Mat& sigma, const Vec& grad_mu) { return sigma * grad_mu; }

Mat mgvb_natural_sigma(const Mat& sigma, const Mat& grad_sigma, bool exact_factor) {
  const Mat g = symmetrize(sigma * grad_sigma * sigma);
  return exact_factor ? Mat(2.0 * g) : g;
}

void ManifoldOptions::validate() const {
  if (n_samples < 2) throw ConfigError("manifold VI needs n_s >= 2");
  if (!(omega >= 0.0 && omega < 1.0)) throw ConfigError("omega must lie in [0, 1)");
  if (!(clip > 0.0)) throw ConfigError("clip must be positive");
}

namespace {

// Draws theta_s ~ N(mu, cov) and evaluates log f and h. Non-finite draws are dropped.
Draws draw_and_evaluate(const GaussianVariational& q, const LogDensity& log_f_fn,
                        const LogDensity& h_extra, Index n, RngStream& rng) {
  Draws d;
  const Mat thetas = sample_reparam(q, rng, n);
  for (Index s = 0; s < n; ++s) {
    const Vec theta = thetas.row(s).transpose();
    const double lf = log_f_fn(theta);
    const double h = lf + h_extra(theta);
    if (!std::isfinite(lf) || !std::isfinite(h)) {
      ++d.dropped;
      continue;
    }
    d.centered.push_back(theta - q.mean());
    d.log_f.push_back(lf);
    d.h.push_back(h);
  }
  if (d.log_f.size() < 2) throw NumericalError("fewer than two draws with a finite h-function");
  return d;
}

}  // namespace

ManifoldGradient mgvb_gradient(const Vec& mu, const SpdPoint& sigma, const LogDensity& log_joint,
                               const ManifoldOptions& opts, RngStream& rng) {
  opts.validate();
  if (mu.size() != sigma.dim()) throw DimensionMismatch("mgvb: mu and Sigma differ in size");
  const GaussianVariational q = GaussianVariational::from_covariance(mu, sigma.value());
  const LogDensity h_fn = [&](const Vec& t) { return log_joint(t) - log_pdf(q, t); };
  const LogDensity zero = [](const Vec&) { return 0.0; };
  const Draws d = draw_and_evaluate(q, h_fn, zero, opts.n_samples, rng);
  const std::vector<double> w = weights(d.log_f, opts.baseline);

  const Index k = mu.size();
  ManifoldGradient g;
  g.g_mu = Vec::Zero(k);
  g.g_mat = Mat::Zero(k, k);
  for (std::size_t i = 0; i < w.size(); ++i) {
    g.g_mu += d.centered[i] * w[i];
    g.g_mat += -0.5 * (sigma.value() - d.centered[i] * d.centered[i].transpose()) * w[i];
  }
  const double n = static_cast<double>(w.size());
  g.g_mu /= n;
  g.g_mat = symmetrize(g.g_mat / n);
  if (opts.exact_factor) g.g_mat *= 2.0;
  g.clipped = clip_spectral_norm(g.g_mat, opts.clip);
  g.dropped_draws = d.dropped;
  summarize_h(d.h, g);
  return g;
}

ManifoldGradient emgvb_gradient(const Vec& mu, const SpdPoint& precision,
                                const LogDensity& log_lik, const LogDensity& log_prior,
                                const GaussianPrior* gaussian_prior, const ManifoldOptions& opts,
                                RngStream& rng) {
  opts.validate();
  const Index k = mu.size();
  if (k != precision.dim()) throw DimensionMismatch("emgvb: mu and precision differ in size");
  if (opts.gaussian_constants) {
    if (!gaussian_prior) throw ConfigError("emgvb: Gaussian constants need a Gaussian prior");
    if (gaussian_prior->dim() != k) throw DimensionMismatch("emgvb: prior dimension differs");
  }
  const GaussianVariational q = GaussianVariational::from_precision(mu, precision.value());
  const Mat& p = precision.value();

  ManifoldGradient g;
  g.g_mu = Vec::Zero(k);
  g.g_mat = Mat::Zero(k, k);
  Draws d;
  if (opts.gaussian_constants) {
    const LogDensity rest = [&](const Vec& t) { return log_prior(t) - log_pdf(q, t); };
    d = draw_and_evaluate(q, log_lik, rest, opts.n_samples, rng);
    g.g_mat = gaussian_prior->precision0 - p;
    g.g_mu = -q.covariance_times(gaussian_prior->precision0 * (mu - gaussian_prior->mean0));
  } else {
    const LogDensity h_fn = [&](const Vec& t) {
      return log_lik(t) + log_prior(t) - log_pdf(q, t);
    };
    const LogDensity zero = [](const Vec&) { return 0.0; };
    d = draw_and_evaluate(q, h_fn, zero, opts.n_samples, rng);
  }
  const std::vector<double> w = weights(d.log_f, opts.baseline);
  Vec s_mu = Vec::Zero(k);
  Mat s_mat = Mat::Zero(k, k);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const Vec pv = p * d.centered[i];
    s_mu += d.centered[i] * w[i];
    s_mat += (p - pv * pv.transpose()) * w[i];
  }
  const double n = static_cast<double>(w.size());
  g.g_mu += s_mu / n;
  g.g_mat = symmetrize(g.g_mat + s_mat / n);
  g.clipped = clip_spectral_norm(g.g_mat, opts.clip);
  g.dropped_draws = d.dropped;
  summarize_h(d.h, g);
  return g;
}

ManifoldState::ManifoldState(Vec mu_in, SpdPoint point_in)
    : mu(std::move(mu_in)), point(std::move(point_in)) {
  if (mu.size() != point.dim()) throw DimensionMismatch("manifold state: mu and matrix differ in size");
}

GaussianVariational ManifoldState::as_gaussian(bool point_is_precision) const {
  return point_is_precision ? GaussianVariational::from_precision(mu, point.value())
                            : GaussianVariational::from_covariance(mu, point.value());
}

namespace {

template <typename GradFn>
void manifold_step(ManifoldState& state, const ManifoldOptions& opts, double beta,
                   ManifoldReport* report, GradFn&& grad_at) {
  opts.validate();
  if (!(beta > 0.0)) throw ConfigError("manifold VI: beta must be positive");
  ManifoldReport rep;
  if (!state.initialized) {
    const ManifoldGradient g0 = grad_at(state.mu, state.point);
    state.m_mu = g0.g_mu;
    state.m_mat = g0.g_mat;
    state.initialized = true;
  }
  double b = beta;
  std::optional<SpdPoint> next;
  for (int attempt = 0; attempt <= kMaxHalvings; ++attempt) {
    try {
      next.emplace(retract(state.point, b * state.m_mat));
      break;
    } catch (const ManifoldExit&) {
      b *= 0.5;
      ++rep.halvings;
    }
  }
  ++state.t;
  if (!next) {
    rep.rejected = true;
    rep.grad = grad_at(state.mu, state.point);
    if (report) *report = std::move(rep);
    return;
  }
  const SpdPoint old = state.point;
  state.mu += b * state.m_mu;
  state.point = *next;
  rep.grad = grad_at(state.mu, state.point);
  state.m_mu = opts.omega * state.m_mu + (1.0 - opts.omega) * rep.grad.g_mu;
  state.m_mat = symmetrize(opts.omega * transport(old, state.point, state.m_mat) +
                           (1.0 - opts.omega) * rep.grad.g_mat);
  if (report) *report = std::move(rep);
}

}  // namespace

void mgvb_step(ManifoldState& state, const LogDensity& log_joint, const ManifoldOptions& opts,
               RngStream& rng, double beta, ManifoldReport* report) {
  manifold_step(state, opts, beta, report, [&](const Vec& mu, const SpdPoint& s) {
    return mgvb_gradient(mu, s, log_joint, opts, rng);
  });
}

void emgvb_step(ManifoldState& state, const LogDensity& log_lik, const LogDensity& log_prior,
                const GaussianPrior* gaussian_prior, const ManifoldOptions& opts, RngStream& rng,
                double beta, ManifoldReport* report) {
  manifold_step(state, opts, beta, report, [&](const Vec& mu, const SpdPoint& p) {
    return emgvb_gradient(mu, p, log_lik, log_prior, gaussian_prior, opts, rng);
  });
}

}  // namespace bnn
