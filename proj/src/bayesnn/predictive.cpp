#include "bayesnn/predictive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "bayesnn/adam.hpp"
#include "bayesnn/errors.hpp"

namespace bnn {

PosteriorSamples::PosteriorSamples(Mat d, SampleSource s) : draws(std::move(d)), source(s) {
  if (draws.rows() < 1) throw DataError("posterior samples: need at least one draw");
  if (!draws.allFinite()) throw NumericalError("posterior samples: non-finite draw");
}

PosteriorSamples PosteriorSamples::from_gaussian(const GaussianVariational& q, Index n,
                                                 RngStream& rng) {
  if (n < 1) throw ConfigError("posterior samples: n must be >= 1");
  return PosteriorSamples(sample_reparam(q, rng, n), SampleSource::kVariational);
}

PredictiveSummary summarize_outputs(const Mat& outputs, Task task, bool with_covariance) {
  const Index n = outputs.rows();
  if (n < 1) throw DataError("predictive summary: no draws");
  if (with_covariance && n < 2)
    throw DataError("predictive summary: covariance needs at least two draws");
  PredictiveSummary out;
  out.n_draws = n;
  out.mean = outputs.colwise().mean().transpose();
  if (with_covariance) {
    const Mat centered = outputs.rowwise() - out.mean.transpose();
    out.covariance = symmetrize(centered.transpose() * centered / static_cast<double>(n - 1));
  }
  if (task != Task::kRegression) {
    out.class_probs = out.mean / out.mean.sum();
    out.class_probs.maxCoeff(&out.predicted_class);
  }
  return out;
}

PredictiveSummary predictive_summary(const PosteriorSamples& samples, const ProbModel& model,
                                     const Vec& x, bool with_covariance) {
  if (samples.draws.cols() != model.param_dim())
    throw DimensionMismatch("predictive summary: draws do not match the model dimension");
  Mat outputs;
  for (Index j = 0; j < samples.size(); ++j) {
    const Vec y = model.predict(samples.draws.row(j).transpose(), x);
    if (j == 0) outputs.resize(samples.size(), y.size());
    outputs.row(j) = y.transpose();
  }
  return summarize_outputs(outputs, model.task(), with_covariance);
}

DropoutConfig DropoutConfig::uniform(const Mlp& net, double rate) {
  DropoutConfig cfg;
  cfg.rates.assign(static_cast<std::size_t>(net.num_layers()), rate);
  return cfg;
}

void DropoutConfig::validate(const Mlp& net) const {
  if (static_cast<Index>(rates.size()) != net.num_layers())
    throw ConfigError("dropout: one rate per layer is required");
  for (std::size_t l = 0; l < rates.size(); ++l) {
    if (l == 0 && !all_layers) continue;
    if (!(rates[l] > 0.0 && rates[l] < 1.0)) throw ConfigError("dropout: rates must lie in (0, 1)");
  }
  if (!(weight_decay >= 0.0)) throw ConfigError("dropout: weight_decay must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("dropout: learning_rate must be positive");
  if (iterations < 0 || batch_size < 1) throw ConfigError("dropout: bad iteration settings");
  if (n_passes < 2) throw ConfigError("dropout: n_passes must be >= 2 for a predictive covariance");
}

Mlp::Masks draw_masks(const Mlp& net, const DropoutConfig& cfg, RngStream& rng) {
  Mlp::Masks masks(static_cast<std::size_t>(net.num_layers()));
  for (Index l = 0; l < net.num_layers(); ++l) {
    if (l == 0 && !cfg.all_layers) continue;
    const double keep = 1.0 - cfg.rates[static_cast<std::size_t>(l)];
    Vec m(net.layer_sizes()[static_cast<std::size_t>(l)]);
    for (Index i = 0; i < m.size(); ++i) m(i) = rng.uniform() < keep ? 1.0 : 0.0;
    masks[static_cast<std::size_t>(l)] = std::move(m);
  }
  return masks;
}

Vec mc_dropout_train(const Mlp& net, const DropoutConfig& cfg, const Dataset& data, Vec theta,
                     RngStream& rng, const DropoutCallback& on_step) {
  cfg.validate(net);
  if (theta.size() != net.param_dim()) throw DimensionMismatch("dropout: theta has the wrong size");
  if (data.size() == 0) throw DataError("dropout: empty training set");
  RngStream order = rng.split("minibatch-order");
  RngStream mask_rng = rng.split("dropout-masks");
  AdamMoments adam;
  std::vector<Batch> batches;
  std::size_t next = 0;
  for (Index it = 0; it < cfg.iterations; ++it) {
    if (next == batches.size()) {
      batches = epoch_partition(data, cfg.batch_size, order);
      next = 0;
    }
    const Batch& b = batches[next++];
    const Mlp::Masks masks = draw_masks(net, cfg, mask_rng);
    Vec grad = Vec::Zero(theta.size());
    Vec g(theta.size());
    double nll = 0.0;
    for (Index r : b.rows) {
      nll -= net.log_lik_row_masked(theta, data, r, masks, &g);
      grad -= g;
    }
    const double m = static_cast<double>(b.size());
    grad /= m;
    grad += 2.0 * cfg.weight_decay * theta;
    const double loss = nll / m + cfg.weight_decay * theta.squaredNorm();
    const Vec step = adam.direction(grad);
    if (!step.allFinite()) throw NumericalError("dropout: non-finite gradient");
    theta -= cfg.learning_rate * step;
    if (on_step && on_step(it, loss)) break;
  }
  return theta;
}

std::vector<PredictiveSummary> mc_dropout_predict(const Mlp& net, const Vec& theta,
                                                  const DropoutConfig& cfg, const Mat& inputs,
                                                  RngStream& rng) {
  cfg.validate(net);
  if (inputs.cols() != net.layer_sizes().front())
    throw DimensionMismatch("dropout: input width does not match the network");
  std::vector<PredictiveSummary> out;
  out.reserve(static_cast<std::size_t>(inputs.rows()));
  for (Index i = 0; i < inputs.rows(); ++i) {
    const Vec x = inputs.row(i).transpose();
    Mat outputs;
    for (Index p = 0; p < cfg.n_passes; ++p) {
      const Vec y = net.predict_masked(theta, x, draw_masks(net, cfg, rng));
      if (p == 0) outputs.resize(cfg.n_passes, y.size());
      outputs.row(p) = y.transpose();
    }
    out.push_back(summarize_outputs(outputs, net.task(), true));
  }
  return out;
}

ElboEstimate elbo_estimate(const GaussianVariational& q, const ProbModel& model,
                           const GaussianPrior& prior, const Dataset& data, Index n_samples,
                           RngStream& rng) {
  if (n_samples < 1) throw ConfigError("elbo_estimate: n_s must be >= 1");
  if (q.dim() != model.param_dim() || prior.dim() != q.dim())
    throw DimensionMismatch("elbo_estimate: dimensions differ");
  const Batch all = Batch::full(data);
  const Mat draws = sample_reparam(q, rng, n_samples);
  std::vector<double> terms;
  ElboEstimate est;
  for (Index s = 0; s < n_samples; ++s) {
    const Vec theta = draws.row(s).transpose();
    const double v = prior.log_density(theta) + model.log_lik(theta, all) - log_pdf(q, theta);
    if (std::isfinite(v))
      terms.push_back(v);
    else
      ++est.dropped_draws;
  }
  if (terms.empty()) throw NumericalError("elbo_estimate: every draw was non-finite");
  const double n = static_cast<double>(terms.size());
  double mean = 0.0;
  for (double v : terms) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : terms) ss += (v - mean) * (v - mean);
  est.value = mean;
  est.stderr_ = terms.size() > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return est;
}

Vec finite_diff_gradient(const ScalarFn& f, const Vec& x) {
  Vec g(x.size());
  Vec xp = x;
  for (Index i = 0; i < x.size(); ++i) {
    const double h = 1e-6 * (1.0 + std::abs(x(i)));
    xp(i) = x(i) + h;
    const double fp = f(xp);
    xp(i) = x(i) - h;
    const double fm = f(xp);
    xp(i) = x(i);
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

double finite_diff_check(const ScalarFn& f, const Vec& x, const Vec& analytic_grad) {
  if (analytic_grad.size() != x.size()) throw DimensionMismatch("finite_diff_check: sizes differ");
  const Vec fd = finite_diff_gradient(f, x);
  double worst = 0.0;
  for (Index i = 0; i < x.size(); ++i) {
    const double diff = std::abs(fd(i) - analytic_grad(i));
    if (!std::isfinite(diff)) return std::numeric_limits<double>::infinity();
    if (diff <= 1e-8) continue;
    worst = std::max(worst, diff / std::max(std::abs(fd(i)), std::abs(analytic_grad(i))));
  }
  return worst;
}

namespace {

std::vector<std::pair<Index, Index>> upper_pairs(Index k) {
  std::vector<std::pair<Index, Index>> p;
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i <= j; ++i) p.emplace_back(i, j);
  return p;
}

Vec lambda_coords(const NaturalParams& lam) {
  const Index k = lam.lambda1.size();
  const auto pairs = upper_pairs(k);
  Vec u(k + static_cast<Index>(pairs.size()));
  u.head(k) = lam.lambda1;
  for (std::size_t p = 0; p < pairs.size(); ++p)
    u(k + static_cast<Index>(p)) = lam.lambda2(pairs[p].first, pairs[p].second);
  return u;
}

NaturalParams lambda_from_coords(const Vec& u, Index k) {
  const auto pairs = upper_pairs(k);
  NaturalParams lam{u.head(k), Mat::Zero(k, k)};
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    lam.lambda2(i, j) = lam.lambda2(j, i) = u(k + static_cast<Index>(p));
  }
  return lam;
}

// m coordinates pair with the sufficient statistics (x, x_i^2, 2 x_i x_j).
Vec m_coords(const ExpectationParams& m) {
  const Index k = m.m1.size();
  const auto pairs = upper_pairs(k);
  Vec w(k + static_cast<Index>(pairs.size()));
  w.head(k) = m.m1;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    w(k + static_cast<Index>(p)) = (i == j ? 1.0 : 2.0) * m.m2(i, j);
  }
  return w;
}

ExpectationParams m_from_coords(const Vec& w, Index k) {
  const auto pairs = upper_pairs(k);
  ExpectationParams m{w.head(k), Mat::Zero(k, k)};
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const auto [i, j] = pairs[p];
    const double v = w(k + static_cast<Index>(p));
    if (i == j)
      m.m2(i, i) = v;
    else
      m.m2(i, j) = m.m2(j, i) = 0.5 * v;
  }
  return m;
}

double objective_at(const GaussianObjective& obj, const Vec& mu, const Mat& sigma) {
  return obj(mu, symmetrize(sigma));
}

}  // namespace

Mat natural_fisher(const GaussianVariational& q, bool analytic) {
  const Index k = q.dim();
  const auto pairs = upper_pairs(k);
  const Index n = k + static_cast<Index>(pairs.size());
  if (analytic) {
    // Covariance of the sufficient statistics (x, x_i^2, 2 x_i x_j).
    const Mat s = q.covariance();
    const Vec& mu = q.mean();
    auto cov_xx = [&](Index a, Index b, Index c, Index d) {
      return s(a, c) * s(b, d) + s(a, d) * s(b, c) + mu(a) * mu(c) * s(b, d) +
             mu(a) * mu(d) * s(b, c) + mu(b) * mu(c) * s(a, d) + mu(b) * mu(d) * s(a, c);
    };
    Mat f(n, n);
    f.topLeftCorner(k, k) = s;
    for (std::size_t p = 0; p < pairs.size(); ++p) {
      const auto [i, j] = pairs[p];
      const double wp = i == j ? 1.0 : 2.0;
      const Index rp = k + static_cast<Index>(p);
      for (Index a = 0; a < k; ++a) {
        f(a, rp) = f(rp, a) = wp * (mu(i) * s(a, j) + mu(j) * s(a, i));
      }
      for (std::size_t r = 0; r < pairs.size(); ++r) {
        const auto [c, d] = pairs[r];
        const double wr = c == d ? 1.0 : 2.0;
        f(rp, k + static_cast<Index>(r)) = wp * wr * cov_xx(i, j, c, d);
      }
    }
    return symmetrize(f);
  }
  // Jacobian of the expectation map u -> m(u) by central differences.
  const Vec u = lambda_coords(to_natural(q));
  Mat f(n, n);
  for (Index c = 0; c < n; ++c) {
    const double h = 1e-6 * (1.0 + std::abs(u(c)));
    Vec up = u, um = u;
    up(c) += h;
    um(c) -= h;
    const Vec wp = m_coords(to_expectation(from_natural(lambda_from_coords(up, k))));
    const Vec wm = m_coords(to_expectation(from_natural(lambda_from_coords(um, k))));
    f.col(c) = (wp - wm) / (2.0 * h);
  }
  return symmetrize(f);
}

double fim_duality_check(const GaussianVariational& q, const GaussianObjective& objective) {
  const Index k = q.dim();
  if (k > 3) throw ConfigError("fim_duality_check supports k <= 3");
  const Vec u = lambda_coords(to_natural(q));
  const Vec w = m_coords(to_expectation(q));

  const ScalarFn in_lambda = [&](const Vec& uu) {
    const GaussianVariational g = from_natural(lambda_from_coords(uu, k));
    return objective_at(objective, g.mean(), g.covariance());
  };
  const ScalarFn in_m = [&](const Vec& ww) {
    const ExpectationParams m = m_from_coords(ww, k);
    return objective_at(objective, m.m1, m.m2 - m.m1 * m.m1.transpose());
  };
  const Vec grad_lambda = finite_diff_gradient(in_lambda, u);
  const Vec grad_m = finite_diff_gradient(in_m, w);

  const Mat fim = natural_fisher(q, k == 1);
  auto llt = try_cholesky(fim);
  if (!llt) throw NumericalError("fim_duality_check: Fisher matrix is singular");
  const Vec natural = llt->solve(grad_lambda);
  const double scale = std::max(grad_m.norm(), 1e-300);
  return (natural - grad_m).norm() / scale;
}

}  // namespace bnn
