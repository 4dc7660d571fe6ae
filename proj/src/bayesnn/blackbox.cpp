#include "bayesnn/blackbox.hpp"

#include <cmath>
#include <numeric>

#include "bayesnn/errors.hpp"

namespace bnn {

namespace {

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void mean_and_stderr(const std::vector<double>& v, double& mean, double& stderr_out) {
  if (v.empty()) {
    mean = std::nan("");
    stderr_out = std::nan("");
    return;
  }
  const double n = static_cast<double>(v.size());
  mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() < 2) {
    stderr_out = 0.0;
    return;
  }
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  stderr_out = std::sqrt(ss / (n - 1.0) / n);
}

}  // namespace

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Vec softplus(const Vec& x) { return x.unaryExpr([](double v) { return softplus(v); }); }

Vec softplus_inverse(const Vec& x) {
  return x.unaryExpr([](double v) {
    if (!(v > 0.0)) throw InvalidParameter("softplus_inverse needs positive input");
    // log(exp(v) - 1), written to stay finite for large v
    return v > 30.0 ? v + std::log1p(-std::exp(-v)) : std::log(std::expm1(v));
  });
}

BbbState BbbState::from_mean_std(Vec mu, const Vec& sigma) {
  if (mu.size() != sigma.size()) throw DimensionMismatch("bbb: mean and std differ in length");
  return BbbState{std::move(mu), softplus_inverse(sigma), 0};
}

GaussianVariational BbbState::as_gaussian() const {
  return GaussianVariational::diagonal(mu, sigma().cwiseAbs2());
}

BbbObjective bbb_objective(const BbbState& state, const ProbModel& model,
                           const GaussianPrior& prior, const Batch& batch, const Vec& eps,
                           double scale) {
  const Index k = state.mu.size();
  if (state.rho.size() != k || eps.size() != k) throw DimensionMismatch("bbb: size mismatch");
  const Vec sigma = state.sigma();
  const Vec w = state.mu + sigma.cwiseProduct(eps);

  // log q(w | mu, sigma) with w held fixed.
  const double log_q = -0.5 * static_cast<double>(k) * 1.8378770664093453 -
                       sigma.array().log().sum() - 0.5 * eps.squaredNorm();
  BbbObjective out;
  out.f = log_q - prior.log_density(w) - scale * model.log_lik(w, batch);

  // d f / d w at fixed theta: -(w - mu)/sigma^2 - grad log p(w) - scale grad log lik.
  const Vec g_model = prior.grad_log_density(w) + scale * model.grad_sum(w, batch);
  const Vec df_dw = -eps.cwiseQuotient(sigma) - g_model;
  // Partial derivatives of log q in mu and sigma at fixed w.
  const Vec dq_dmu = eps.cwiseQuotient(sigma);
  const Vec dq_dsigma = (eps.cwiseAbs2().array() - 1.0).matrix().cwiseQuotient(sigma);
  const Vec dsigma_drho = state.rho.unaryExpr([](double r) { return logistic(r); });

  out.grad_mu = df_dw + dq_dmu;
  out.grad_rho = df_dw.cwiseProduct(eps).cwiseProduct(dsigma_drho) +
                 dq_dsigma.cwiseProduct(dsigma_drho);
  return out;
}

BbbState bbb_step(const BbbState& state, const ProbModel& model, const GaussianPrior& prior,
                  const Batch& batch, RngStream& rng, double beta, double scale, BbbReport* report) {
  BbbReport local;
  BbbReport& rep = report ? *report : local;
  rep = BbbReport{};
  const Vec eps = rng.normal_vector(state.mu.size());
  const BbbObjective obj = bbb_objective(state, model, prior, batch, eps, scale);
  rep.f = obj.f;
  BbbState next = state;
  next.t = state.t + 1;
  if (!std::isfinite(obj.f) || !obj.grad_mu.allFinite() || !obj.grad_rho.allFinite()) {
    rep.rejected = true;
    return next;
  }
  double step = beta;
  for (int attempt = 0; attempt < 30; ++attempt) {
    next.mu = state.mu - step * obj.grad_mu;
    next.rho = state.rho - step * obj.grad_rho;
    const Vec sigma = next.sigma();
    if (next.mu.allFinite() && sigma.allFinite() && sigma.minCoeff() > 0.0) return next;
    step *= 0.5;
    ++rep.halvings;
  }
  rep.rejected = true;
  next.mu = state.mu;
  next.rho = state.rho;
  return next;
}

FactorizedPosterior::FactorizedPosterior(Vec mean, Vec variance, std::vector<Index> block_sizes)
    : mean_(std::move(mean)), variance_(std::move(variance)), sizes_(std::move(block_sizes)) {
  if (mean_.size() != variance_.size())
    throw DimensionMismatch("factorized posterior: mean and variance differ in length");
  Index total = 0;
  for (Index s : sizes_) {
    if (s < 1) throw InvalidParameter("factor sizes must be positive");
    offsets_.push_back(total);
    total += s;
  }
  if (total != mean_.size()) throw DimensionMismatch("factor sizes do not partition the parameters");
  for (Index i = 0; i < variance_.size(); ++i)
    if (!(variance_(i) > 0.0) || !std::isfinite(variance_(i)))
      throw InvalidParameter("factor variances must be positive and finite");
  if (!mean_.allFinite()) throw InvalidParameter("factor means must be finite");
}

FactorizedPosterior FactorizedPosterior::single_block(Vec mean, Vec variance) {
  const Index k = mean.size();
  return FactorizedPosterior(std::move(mean), std::move(variance), {k});
}

GaussianVariational FactorizedPosterior::factor(Index k) const {
  return GaussianVariational::diagonal(mean_.segment(factor_offset(k), factor_size(k)),
                                       variance_.segment(factor_offset(k), factor_size(k)));
}

GaussianVariational FactorizedPosterior::as_gaussian() const {
  return GaussianVariational::diagonal(mean_, variance_);
}

Vec FactorizedPosterior::zeta() const {
  Vec z(2 * dim());
  for (Index k = 0; k < num_factors(); ++k) {
    const Index o = factor_offset(k), n = factor_size(k);
    z.segment(2 * o, n) = mean_.segment(o, n);
    z.segment(2 * o + n, n) = 0.5 * variance_.segment(o, n).array().log().matrix();
  }
  return z;
}

FactorizedPosterior FactorizedPosterior::from_zeta(const Vec& zeta,
                                                   const std::vector<Index>& block_sizes) {
  const Index dim = zeta.size() / 2;
  if (zeta.size() != 2 * dim) throw DimensionMismatch("zeta must have even length");
  Vec mean(dim), var(dim);
  Index o = 0;
  for (Index n : block_sizes) {
    if (o + n > dim) throw DimensionMismatch("factor sizes exceed zeta length");
    mean.segment(o, n) = zeta.segment(2 * o, n);
    var.segment(o, n) = (2.0 * zeta.segment(2 * o + n, n)).array().exp().matrix();
    o += n;
  }
  return FactorizedPosterior(std::move(mean), std::move(var), block_sizes);
}

Vec FactorizedPosterior::factor_score(Index k, const Vec& theta, FactorChart chart) const {
  const Index o = factor_offset(k), n = factor_size(k);
  if (theta.size() != n) throw DimensionMismatch("factor_score: wrong block length");
  const Vec d = theta - mean_.segment(o, n);
  const Vec var = variance_.segment(o, n);
  Vec s(2 * n);
  s.head(n) = d.cwiseQuotient(var);
  if (chart == FactorChart::kMeanLogStd) {
    s.tail(n) = (d.cwiseAbs2().cwiseQuotient(var).array() - 1.0).matrix();
  } else {
    s.tail(n) = (d.cwiseAbs2().array() / (2.0 * var.array().square()) - 0.5 / var.array()).matrix();
  }
  return s;
}

double FactorizedPosterior::factor_log_pdf(Index k, const Vec& theta) const {
  return log_pdf(factor(k), theta);
}

Vec FactorizedPosterior::score(const Vec& theta) const {
  Vec s(2 * dim());
  for (Index k = 0; k < num_factors(); ++k) {
    const Index o = factor_offset(k), n = factor_size(k);
    s.segment(2 * o, 2 * n) = factor_score(k, theta.segment(o, n));
  }
  return s;
}

Mat FactorizedPosterior::sample(RngStream& rng, Index n) const {
  return sample_reparam(as_gaussian(), rng, n);
}

Vec bbvi_gradient(const FactorizedPosterior& post, const LogDensity& log_joint, Index n_samples,
                  RngStream& rng, BbviReport* report) {
  if (n_samples < 2) throw ConfigError("bbvi needs n_s >= 2");
  const GaussianVariational q = post.as_gaussian();
  const Mat draws = post.sample(rng, n_samples);
  Vec g = Vec::Zero(2 * post.dim());
  std::vector<double> brackets;
  Index dropped = 0;
  for (Index s = 0; s < n_samples; ++s) {
    const Vec theta = draws.row(s).transpose();
    const double b = log_joint(theta) - log_pdf(q, theta);
    if (!std::isfinite(b)) {
      ++dropped;
      continue;
    }
    g += post.score(theta) * b;
    brackets.push_back(b);
  }
  if (brackets.empty()) throw NumericalError("bbvi: every draw had a non-finite log-joint");
  g /= static_cast<double>(brackets.size());
  if (report) {
    report->dropped_draws = dropped;
    mean_and_stderr(brackets, report->elbo, report->elbo_stderr);
  }
  return g;
}

double bbvi_step_size(double beta0, Index t, bool constant) {
  if (constant) return beta0;
  return beta0 / std::pow(1.0 + static_cast<double>(t), 0.6);
}

FactorizedPosterior bbvi_step(const FactorizedPosterior& post, const LogDensity& log_joint,
                              Index n_samples, RngStream& rng, double beta, BbviReport* report) {
  const Vec g = bbvi_gradient(post, log_joint, n_samples, rng, report);
  return FactorizedPosterior::from_zeta(post.zeta() + beta * g, post.block_sizes());
}

NgbbviGradient ngbbvi_gradient(const FactorizedPosterior& post, const LogDensity& log_joint,
                               const NgbbviOptions& opts, RngStream& rng) {
  if (opts.n_samples < 4) throw ConfigError("ngbbvi needs at least 4 draws per step");
  const Mat draws = post.sample(rng, opts.n_samples);
  const GaussianVariational q = post.as_gaussian();

  // Log-joint once per draw; non-finite draws are dropped.
  std::vector<Index> kept;
  std::vector<double> lj;
  std::vector<double> elbo_terms;
  NgbbviGradient out;
  for (Index s = 0; s < draws.rows(); ++s) {
    const Vec theta = draws.row(s).transpose();
    const double v = log_joint(theta);
    if (!std::isfinite(v)) {
      ++out.dropped_draws;
      continue;
    }
    kept.push_back(s);
    lj.push_back(v);
    elbo_terms.push_back(v - log_pdf(q, theta));
  }
  if (kept.size() < 4) throw NumericalError("ngbbvi: fewer than 4 draws with a finite log-joint");
  mean_and_stderr(elbo_terms, out.elbo, out.elbo_stderr);

  const std::size_t n_x = kept.size() / 2;
  const std::size_t n_y = kept.size() - n_x;
  out.natural = Vec::Zero(2 * post.dim());
  out.euclidean = Vec::Zero(2 * post.dim());

  for (Index k = 0; k < post.num_factors(); ++k) {
    const Index o = post.factor_offset(k), n = post.factor_size(k);
    const Index m = 2 * n;
    auto eval = [&](std::size_t i, Vec& h) {
      const Vec theta_k = draws.row(kept[i]).segment(o, n).transpose();
      h = post.factor_score(k, theta_k, opts.chart);
      return lj[i] - post.factor_log_pdf(k, theta_k);
    };

    // X pass with a* = 0.
    Mat hx(static_cast<Index>(n_x), m), fx(static_cast<Index>(n_x), m);
    Vec h;
    for (std::size_t i = 0; i < n_x; ++i) {
      const double b = eval(i, h);
      hx.row(static_cast<Index>(i)) = h.transpose();
      fx.row(static_cast<Index>(i)) = (h * b).transpose();
    }
    Vec a_star = Vec::Zero(m);
    if (opts.control_variate && n_x >= 2) {
      const Eigen::RowVectorXd mh = hx.colwise().mean(), mf = fx.colwise().mean();
      for (Index j = 0; j < m; ++j) {
        const Vec ch = hx.col(j).array() - mh(j);
        const Vec cf = fx.col(j).array() - mf(j);
        const double var = ch.squaredNorm();
        a_star(j) = var > 0.0 ? ch.dot(cf) / var : 0.0;
      }
    }

    // Y pass.
    Vec mean_f = Vec::Zero(m);
    Mat fim = Mat::Zero(m, m);
    for (std::size_t i = n_x; i < kept.size(); ++i) {
      const double b = eval(i, h);
      mean_f += h.cwiseProduct((b - a_star.array()).matrix());
      fim.noalias() += h * h.transpose();
    }
    mean_f /= static_cast<double>(n_y);
    fim /= static_cast<double>(n_y);

    auto llt = try_cholesky(fim);
    if (!llt) {
      const double ridge = 1e-8 * std::max(fim.trace(), 1e-300) / static_cast<double>(m);
      fim.diagonal().array() += ridge;
      llt = try_cholesky(fim);
      ++out.ridged_factors;
      if (!llt) throw NumericalError("ngbbvi: factor Fisher matrix is singular even after ridge");
    }
    out.natural.segment(2 * o, m) = llt->solve(mean_f);
    out.euclidean.segment(2 * o, m) = mean_f;
    out.a_star.push_back(a_star);
    out.fim.push_back(fim);
  }
  return out;
}

void ngbbvi_step(NgbbviState& state, const LogDensity& log_joint, const NgbbviOptions& opts,
                 RngStream& rng, double beta, NgbbviGradient* out) {
  if (opts.chart != FactorChart::kMeanLogStd)
    throw ConfigError("ngbbvi updates run in the (mean, log std) chart");
  NgbbviGradient g = ngbbvi_gradient(state.post, log_joint, opts, rng);
  const Vec dir = state.adam.direction(g.natural);
  const Vec z = state.post.zeta() + beta * dir;
  if (!z.allFinite()) throw NumericalError("ngbbvi: update produced non-finite parameters");
  state.post = FactorizedPosterior::from_zeta(z, state.post.block_sizes());
  if (out) *out = std::move(g);
}

}  // namespace bnn
