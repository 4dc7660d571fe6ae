#include "bayesnn/checks.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>
#include <utility>

#include "bayesnn/blackbox.hpp"
#include "bayesnn/errors.hpp"
#include "bayesnn/mcmc.hpp"
#include "bayesnn/natgrad.hpp"
#include "bayesnn/predictive.hpp"
#include "bayesnn/spd.hpp"

namespace bnn {

namespace {

constexpr int kInstances = 20;

class Recorder {
 public:
  explicit Recorder(std::string suite) : suite_(std::move(suite)) {}

  void less(const std::string& name, double measured, double threshold) {
    add(name, measured, threshold, "<", 0.0, measured < threshold);
  }
  void less_equal(const std::string& name, double measured, double threshold) {
    add(name, measured, threshold, "<=", 0.0, measured <= threshold);
  }
  void greater(const std::string& name, double measured, double threshold) {
    add(name, measured, threshold, ">", 0.0, measured > threshold);
  }
  void within(const std::string& name, double measured, double lo, double hi) {
    add(name, measured, lo, "in", hi, measured >= lo && measured <= hi);
  }
  // Runs fn and records a failure instead of propagating library errors.
  void guarded(const std::string& name, const std::function<void()>& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      add(name + " (" + e.what() + ")", std::nan(""), 0.0, "<", 0.0, false);
    }
  }
  std::vector<CheckResult> take() { return std::move(results_); }

 private:
  void add(const std::string& name, double measured, double threshold, const char* rel,
           double upper, bool passed) {
    results_.push_back(CheckResult{suite_, name, measured, threshold, rel, upper,
                                   passed && !std::isnan(measured)});
  }
  std::string suite_;
  std::vector<CheckResult> results_;
};

Mat random_spd(RngStream& rng, Index k, double jitter = 0.5) {
  const Mat a = rng.normal_matrix(k, k);
  return symmetrize(a * a.transpose() / static_cast<double>(k) + jitter * Mat::Identity(k, k));
}

Dataset regression_data(RngStream& rng, Index n, Index d) {
  return Dataset(rng.normal_matrix(n, d), rng.normal_matrix(n, 1), Task::kRegression);
}

Dataset binary_data(RngStream& rng, Index n, Index d) {
  Mat y(n, 1);
  for (Index i = 0; i < n; ++i) y(i, 0) = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return Dataset(rng.normal_matrix(n, d), y, Task::kBinary);
}

Dataset multiclass_data(RngStream& rng, Index n, Index d, Index classes) {
  Mat y(n, 1);
  for (Index i = 0; i < n; ++i) y(i, 0) = static_cast<double>(rng.uniform_index(static_cast<std::size_t>(classes)));
  return Dataset(rng.normal_matrix(n, d), y, Task::kMulticlass);
}

// Worst finite-difference error of the batch log-likelihood gradient.
double model_gradient_error(const ProbModel& model, const Dataset& data, RngStream& rng) {
  const Batch all = Batch::full(data);
  double worst = 0.0;
  for (int i = 0; i < kInstances; ++i) {
    const Vec theta = 0.5 * rng.normal_vector(model.param_dim());
    const ScalarFn f = [&](const Vec& t) { return model.log_lik(t, all); };
    worst = std::max(worst, finite_diff_check(f, theta, model.grad_sum(theta, all)));
  }
  return worst;
}

// Upper-triangle coordinates of a symmetric matrix.
std::vector<std::pair<Index, Index>> upper(Index k) {
  std::vector<std::pair<Index, Index>> p;
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i <= j; ++i) p.emplace_back(i, j);
  return p;
}

Vec sym_to_coords(const Mat& m) {
  const auto p = upper(m.rows());
  Vec u(static_cast<Index>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) u(static_cast<Index>(i)) = m(p[i].first, p[i].second);
  return u;
}

Mat coords_to_sym(const Vec& u, Index k) {
  const auto p = upper(k);
  Mat m(k, k);
  for (std::size_t i = 0; i < p.size(); ++i)
    m(p[i].first, p[i].second) = m(p[i].second, p[i].first) = u(static_cast<Index>(i));
  return m;
}

// Derivative along a symmetric perturbation of entry (i, j): G_ii or G_ij + G_ji.
Vec sym_gradient_coords(const Mat& g) {
  const auto p = upper(g.rows());
  Vec u(static_cast<Index>(p.size()));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto [a, b] = p[i];
    u(static_cast<Index>(i)) = a == b ? g(a, a) : g(a, b) + g(b, a);
  }
  return u;
}

// Closed-form ELBO of Bayesian linear regression under q = N(mu, Sigma).
double linear_elbo(const Vec& mu, const Mat& sigma, const GaussianPrior& prior, const Dataset& d,
                   double noise_var) {
  const double k = static_cast<double>(mu.size());
  const double log2pi = std::log(2.0 * std::numbers::pi);
  const Vec dm = mu - prior.mean0;
  double e_prior = -0.5 * (dm.dot(prior.precision0 * dm) + (prior.precision0 * sigma).trace()) +
                   0.5 * prior.log_det_precision0 - 0.5 * k * log2pi;
  double e_lik = 0.0;
  for (Index i = 0; i < d.size(); ++i) {
    const Vec x = d.inputs().row(i).transpose();
    const double r = d.targets()(i, 0) - x.dot(mu);
    e_lik += -0.5 * (r * r + x.dot(sigma * x)) / noise_var - 0.5 * std::log(2.0 * std::numbers::pi * noise_var);
  }
  Eigen::LLT<Mat> llt(sigma);
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double entropy = 0.5 * log_det + 0.5 * k * (1.0 + log2pi);
  return e_prior + e_lik + entropy;
}

void gradient_suite(Recorder& rec, RngStream rng) {
  const Dataset reg = regression_data(rng, 12, 3);
  const Dataset bin = binary_data(rng, 12, 3);
  const Dataset multi = multiclass_data(rng, 12, 3, 3);

  rec.guarded("linear log-likelihood gradient", [&] {
    rec.less("linear log-likelihood gradient", model_gradient_error(LinearRegression(3, 0.7), reg, rng), 1e-5);
  });
  rec.guarded("logistic log-likelihood gradient", [&] {
    rec.less("logistic log-likelihood gradient", model_gradient_error(LogisticRegression(3), bin, rng), 1e-5);
  });
  rec.guarded("mlp tanh regression gradient", [&] {
    rec.less("mlp tanh regression gradient",
             model_gradient_error(Mlp({3, 4, 1}, Activation::kTanh, Task::kRegression, 0.5), reg, rng), 1e-5);
  });
  rec.guarded("mlp relu binary gradient", [&] {
    rec.less("mlp relu binary gradient",
             model_gradient_error(Mlp({3, 5, 1}, Activation::kRelu, Task::kBinary), bin, rng), 1e-5);
  });
  rec.guarded("mlp tanh multiclass gradient", [&] {
    rec.less("mlp tanh multiclass gradient",
             model_gradient_error(Mlp({3, 4, 3, 3}, Activation::kTanh, Task::kMulticlass), multi, rng), 1e-5);
  });
  rec.guarded("mlp dropout-masked gradient", [&] {
    const Mlp net({3, 6, 1}, Activation::kTanh, Task::kRegression, 0.5);
    const DropoutConfig dc = DropoutConfig::uniform(net, 0.3);
    double worst = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      const Vec theta = 0.5 * rng.normal_vector(net.param_dim());
      Mlp::Masks masks = draw_masks(net, dc, rng);
      const Index row = static_cast<Index>(rng.uniform_index(static_cast<std::size_t>(reg.size())));
      Vec g;
      net.log_lik_row_masked(theta, reg, row, masks, &g);
      const ScalarFn f = [&](const Vec& t) { return net.log_lik_row_masked(t, reg, row, masks, nullptr); };
      worst = std::max(worst, finite_diff_check(f, theta, g));
    }
    rec.less("mlp dropout-masked gradient", worst, 1e-5);
  });
  rec.guarded("gaussian prior gradient", [&] {
    double worst = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      const GaussianPrior p = GaussianPrior::full(rng.normal_vector(3), random_spd(rng, 3));
      const Vec theta = rng.normal_vector(3);
      const ScalarFn f = [&](const Vec& t) { return p.log_density(t); };
      worst = std::max(worst, finite_diff_check(f, theta, p.grad_log_density(theta)));
    }
    rec.less("gaussian prior gradient", worst, 1e-5);
  });
  rec.guarded("linear hessian", [&] {
    const LinearRegression model(3, 0.7);
    const Batch all = Batch::full(reg);
    double worst = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      const Vec theta = rng.normal_vector(3);
      const Mat h = *model.hessian(theta, all);
      for (Index r = 0; r < 3; ++r) {
        const ScalarFn f = [&](const Vec& t) { return -model.grad(t, all)(r); };
        worst = std::max(worst, finite_diff_check(f, theta, h.row(r).transpose()));
      }
    }
    rec.less("linear hessian", worst, 1e-5);
  });

  rec.guarded("score gradient (mean)", [&] {
    double worst_mu = 0.0, worst_sigma = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      const Index k = 3;
      const Vec mu = rng.normal_vector(k);
      const Mat sigma = random_spd(rng, k);
      const Vec theta = mu + rng.normal_vector(k);
      const ScoreGradients sg = score_gradients(GaussianVariational::from_covariance(mu, sigma), theta);
      const ScalarFn fm = [&](const Vec& m) {
        return log_pdf(GaussianVariational::from_covariance(m, sigma), theta);
      };
      worst_mu = std::max(worst_mu, finite_diff_check(fm, mu, sg.grad_mu));
      const ScalarFn fs = [&](const Vec& u) {
        return log_pdf(GaussianVariational::from_covariance(mu, coords_to_sym(u, k)), theta);
      };
      worst_sigma = std::max(worst_sigma, finite_diff_check(fs, sym_to_coords(sigma),
                                                            sym_gradient_coords(sg.grad_sigma)));
    }
    rec.less("score gradient (mean)", worst_mu, 1e-5);
    rec.less("score gradient (covariance)", worst_sigma, 1e-5);
  });

  rec.guarded("bbb objective gradient", [&] {
    const LogisticRegression model(3);
    const GaussianPrior prior = GaussianPrior::isotropic(3, 1.0);
    const Batch all = Batch::full(bin);
    double worst_mu = 0.0, worst_rho = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      BbbState st{rng.normal_vector(3), rng.normal_vector(3), 0};
      const Vec eps = rng.normal_vector(3);
      const BbbObjective obj = bbb_objective(st, model, prior, all, eps, 2.0);
      const ScalarFn fm = [&](const Vec& m) {
        return bbb_objective(BbbState{m, st.rho, 0}, model, prior, all, eps, 2.0).f;
      };
      const ScalarFn fr = [&](const Vec& r) {
        return bbb_objective(BbbState{st.mu, r, 0}, model, prior, all, eps, 2.0).f;
      };
      worst_mu = std::max(worst_mu, finite_diff_check(fm, st.mu, obj.grad_mu));
      worst_rho = std::max(worst_rho, finite_diff_check(fr, st.rho, obj.grad_rho));
    }
    rec.less("bbb objective gradient (mu)", worst_mu, 1e-5);
    rec.less("bbb objective gradient (rho)", worst_rho, 1e-5);
  });

  rec.guarded("elbo gradient at the mean", [&] {
    const double noise = 0.7;
    const LinearRegression model(3, noise);
    const Batch all = Batch::full(reg);
    double worst_mu = 0.0, worst_sigma = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      const GaussianPrior prior = GaussianPrior::full(rng.normal_vector(3), random_spd(rng, 3));
      const Vec mu = rng.normal_vector(3);
      const Mat sigma = random_spd(rng, 3);
      const ElboGradients g = elbo_gradients(GaussianVariational::from_covariance(mu, sigma), model,
                                             prior, all, 1.0, 1, rng, GradientMode::kAtMean);
      const ScalarFn fm = [&](const Vec& m) { return linear_elbo(m, sigma, prior, reg, noise); };
      const ScalarFn fs = [&](const Vec& u) {
        return linear_elbo(mu, coords_to_sym(u, 3), prior, reg, noise);
      };
      worst_mu = std::max(worst_mu, finite_diff_check(fm, mu, g.grad_mu));
      worst_sigma = std::max(worst_sigma, finite_diff_check(fs, sym_to_coords(sigma),
                                                            sym_gradient_coords(g.grad_sigma)));
    }
    rec.less("elbo gradient at the mean (mu)", worst_mu, 1e-5);
    rec.less("elbo gradient at the mean (Sigma)", worst_sigma, 1e-5);
  });
}

GaussianObjective quadratic_objective(RngStream& rng, Index k) {
  const Vec c = rng.normal_vector(k);
  const Mat a = random_spd(rng, k);
  const Mat b = symmetrize(rng.normal_matrix(k, k));
  return [c, a, b](const Vec& mu, const Mat& sigma) {
    return c.dot(mu) - 0.5 * mu.dot(a * mu) + (b * sigma).trace() - 0.05 * (sigma * sigma).trace();
  };
}

void duality_suite(Recorder& rec, RngStream rng) {
  rec.guarded("duality k=1 standard normal (analytic FIM)", [&] {
    const GaussianVariational q = GaussianVariational::from_covariance(Vec::Zero(1), Mat::Identity(1, 1));
    rec.less("duality k=1 standard normal (analytic FIM)",
             fim_duality_check(q, quadratic_objective(rng, 1)), 1e-6);
  });
  rec.guarded("duality k=1 random (analytic FIM)", [&] {
    double worst = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      const GaussianVariational q =
          GaussianVariational::from_covariance(rng.normal_vector(1), random_spd(rng, 1));
      worst = std::max(worst, fim_duality_check(q, quadratic_objective(rng, 1)));
    }
    rec.less("duality k=1 random (analytic FIM)", worst, 1e-6);
  });
  rec.guarded("duality k=2 random SPD (numeric FIM)", [&] {
    double worst = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      const GaussianVariational q =
          GaussianVariational::from_covariance(rng.normal_vector(2), random_spd(rng, 2));
      worst = std::max(worst, fim_duality_check(q, quadratic_objective(rng, 2)));
    }
    rec.less("duality k=2 random SPD (numeric FIM)", worst, 1e-4);
  });
  rec.guarded("duality invariant under objective scaling", [&] {
    const GaussianVariational q =
        GaussianVariational::from_covariance(rng.normal_vector(2), random_spd(rng, 2));
    const GaussianObjective f = quadratic_objective(rng, 2);
    const GaussianObjective g = [f](const Vec& m, const Mat& s) { return 7.5 * f(m, s); };
    rec.less("duality invariant under objective scaling",
             std::abs(fim_duality_check(q, f) - fim_duality_check(q, g)), 1e-4);
  });
}

void manifold_suite(Recorder& rec, RngStream rng) {
  rec.guarded("retraction zero step", [&] {
    double worst = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      const SpdPoint z(random_spd(rng, 4));
      const Mat zero = Mat::Zero(4, 4);
      worst = std::max(worst, (retract(z, zero).value() - z.value()).cwiseAbs().maxCoeff());
    }
    rec.less_equal("retraction zero step", worst, 0.0);
  });
  rec.guarded("retraction first-order ratio stable under halving", [&] {
    double worst = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      const SpdPoint z(random_spd(rng, 3));
      const Mat xi = symmetrize(rng.normal_matrix(3, 3));
      double prev = -1.0;
      for (double t = 0.1; t > 1e-3; t *= 0.5) {
        const double ratio = (retract(z, t * xi).value() - (z.value() + t * xi)).norm() / (t * t);
        if (prev > 0.0) worst = std::max(worst, std::abs(ratio / prev - 1.0));
        prev = ratio;
      }
    }
    rec.less("retraction first-order ratio stable under halving", worst, 1e-3);
  });
  rec.guarded("transport identity at coincident points", [&] {
    double worst = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      const SpdPoint z(random_spd(rng, 4));
      const Mat xi = symmetrize(rng.normal_matrix(4, 4));
      worst = std::max(worst, (transport(z, z, xi) - xi).cwiseAbs().maxCoeff());
    }
    rec.less_equal("transport identity at coincident points", worst, 1e-12);
  });
  rec.guarded("transport preserves symmetry", [&] {
    double worst = 0.0;
    for (int i = 0; i < kInstances; ++i) {
      const SpdPoint a(random_spd(rng, 4)), b(random_spd(rng, 4));
      const Mat r = transport(a, b, symmetrize(rng.normal_matrix(4, 4)));
      worst = std::max(worst, (r - r.transpose()).norm());
    }
    rec.less("transport preserves symmetry", worst, 1e-10);
  });
  rec.guarded("SPD preserved over 1000 random retractions", [&] {
    double failures = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const Index k = 1 + static_cast<Index>(rng.uniform_index(8));
      const Mat zm = random_spd(rng, k, 0.1);
      const double lmin = Eigen::SelfAdjointEigenSolver<Mat>(zm).eigenvalues().minCoeff();
      Mat xi = symmetrize(rng.normal_matrix(k, k));
      xi *= 0.5 * lmin * rng.uniform() / spectral_norm_sym(xi);
      try {
        retract(SpdPoint(zm), xi);
      } catch (const ManifoldExit&) {
        failures += 1.0;
      }
    }
    rec.less_equal("SPD preserved over 1000 random retractions", failures, 0.0);
  });
  rec.guarded("momentum stays symmetric after transport and mixing", [&] {
    double worst = 0.0;
    SpdPoint z(random_spd(rng, 4));
    Mat m = symmetrize(rng.normal_matrix(4, 4));
    for (int i = 0; i < 50; ++i) {
      Mat xi = symmetrize(rng.normal_matrix(4, 4));
      xi *= 0.2 / spectral_norm_sym(xi);
      const SpdPoint next = retract(z, xi);
      m = 0.9 * transport(z, next, m) + 0.1 * symmetrize(rng.normal_matrix(4, 4));
      worst = std::max(worst, relative_asymmetry(m));
      z = next;
    }
    rec.less("momentum stays symmetric after transport and mixing", worst, 1e-12);
  });
}

struct GaussTarget {
  Vec mean;
  Mat cov;
  Mat prec;
};

GaussTarget correlated_target() {
  GaussTarget t;
  t.mean = Vec(2);
  t.mean << 1.0, -1.0;
  t.cov = Mat(2, 2);
  t.cov << 1.0, 0.8, 0.8, 1.0;
  t.prec = t.cov.inverse();
  return t;
}

void moment_checks(Recorder& rec, const std::string& label, const Chain& chain, const GaussTarget& t) {
  const Mat d = chain.post_burn_in();
  const EssResult ess = effective_sample_size(d);
  const Vec mean = d.colwise().mean().transpose();
  const Mat centered = d.rowwise() - mean.transpose();
  const Mat cov = centered.transpose() * centered / static_cast<double>(d.rows() - 1);
  double z = 0.0;
  for (Index j = 0; j < 2; ++j)
    z = std::max(z, std::abs(mean(j) - t.mean(j)) / std::sqrt(cov(j, j) / ess.ess(j)));
  rec.less(label + " mean within MC standard errors", z, 3.0);
  rec.less(label + " covariance relative error", ((cov - t.cov).cwiseQuotient(t.cov)).cwiseAbs().maxCoeff(), 0.1);
}

void sampler_suite(Recorder& rec, RngStream rng) {
  const GaussTarget t = correlated_target();
  const HmcTarget target{
      [t](const Vec& x) { return 0.5 * (x - t.mean).dot(t.prec * (x - t.mean)); },
      [t](const Vec& x) { return Vec(t.prec * (x - t.mean)); }};
  rec.guarded("mh", [&] {
    RngStream r = rng.split("mh");
    const LogTarget lt = [&](const Vec& x) { return -target.potential(x); };
    const Chain c = mh_sample(lt, Vec::Constant(2, 1.0), Vec::Zero(2), 60000, 5000, r);
    moment_checks(rec, "mh", c, t);
  });
  rec.guarded("hmc", [&] {
    RngStream r = rng.split("hmc");
    HmcConfig cfg;
    cfg.step_size = 0.25;
    cfg.leapfrog_steps = 8;
    const Chain c = hmc_sample(target, cfg, Vec::Zero(2), 12000, 1000, r);
    moment_checks(rec, "hmc", c, t);
  });
  rec.guarded("leapfrog energy error ratio", [&] {
    RngStream r = rng.split("leapfrog");
    const Mat inv_mass = Mat::Identity(2, 2);
    const Eigen::LLT<Mat> chol(t.cov);
    auto mean_error = [&](double eps, RngStream stream) {
      double total = 0.0;
      const int starts = 200;
      for (int s = 0; s < starts; ++s) {
        Vec theta = t.mean + chol.matrixL() * stream.normal_vector(2);
        Vec rho = stream.normal_vector(2);
        const double h0 = hamiltonian(target, theta, rho, inv_mass);
        leapfrog(target, theta, rho, eps, static_cast<Index>(std::lround(2.0 / eps)), inv_mass);
        total += std::abs(hamiltonian(target, theta, rho, inv_mass) - h0);
      }
      return total / starts;
    };
    const double ratio = mean_error(0.1, r.split("a")) / mean_error(0.05, r.split("a"));
    rec.within("leapfrog energy error ratio", ratio, 3.0, 5.0);
  });
}

}  // namespace

Suite parse_suite(const std::string& name) {
  if (name == "gradients") return Suite::kGradients;
  if (name == "duality") return Suite::kDuality;
  if (name == "manifold") return Suite::kManifold;
  if (name == "samplers") return Suite::kSamplers;
  if (name == "all") return Suite::kAll;
  throw ConfigError("unknown check suite '" + name + "'");
}

std::vector<CheckResult> run_checks(Suite suite, std::uint64_t seed, bool fault) {
  struct FaultGuard {
    explicit FaultGuard(bool on) : previous(score_fault_enabled()) { set_score_fault(on); }
    ~FaultGuard() { set_score_fault(previous); }
    bool previous;
  } guard(fault);

  const RngStream root(seed);
  std::vector<CheckResult> out;
  auto run = [&](Suite s, const char* name, auto fn) {
    if (suite != Suite::kAll && suite != s) return;
    Recorder rec(name);
    fn(rec, root.split(name));
    auto r = rec.take();
    out.insert(out.end(), r.begin(), r.end());
  };
  run(Suite::kGradients, "gradients", gradient_suite);
  run(Suite::kDuality, "duality", duality_suite);
  run(Suite::kManifold, "manifold", manifold_suite);
  run(Suite::kSamplers, "samplers", sampler_suite);
  return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
  for (const auto& r : results)
    if (!r.passed) return false;
  return !results.empty();
}

std::string format_report(const std::vector<CheckResult>& results) {
  std::ostringstream out;
  out.precision(3);
  for (const auto& r : results) {
    out << (r.passed ? "PASS" : "FAIL") << "  " << r.suite << "  " << r.name << "  measured="
        << std::scientific << r.measured << "  ";
    if (r.relation == "in")
      out << "in [" << r.threshold << ", " << r.upper << "]";
    else
      out << r.relation << " " << r.threshold;
    out << std::defaultfloat << '\n';
  }
  return out.str();
}

}  // namespace bnn
