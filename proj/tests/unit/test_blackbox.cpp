#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "bayesnn/blackbox.hpp"
#include "bayesnn/errors.hpp"
#include "bayesnn/predictive.hpp"

namespace bnn {
namespace {

const std::filesystem::path kData = std::filesystem::path(BAYESNN_SOURCE_DIR) / "data";

double sum_sq_deviation(const std::vector<Vec>& xs) {
  Vec mean = Vec::Zero(xs.front().size());
  for (const Vec& x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double total = 0.0;
  for (const Vec& x : xs) total += (x - mean).squaredNorm();
  return total / static_cast<double>(xs.size() - 1);
}

TEST(Softplus, InverseRoundTrip) {
  Vec x(4);
  x << 1e-8, 0.3, 2.0, 50.0;
  EXPECT_LT(((softplus(softplus_inverse(x)) - x).array() / x.array()).abs().maxCoeff(), 1e-10);
  EXPECT_NEAR(softplus(800.0), 800.0, 1e-12);
  EXPECT_GT(softplus(-50.0), 0.0);
}

TEST(Bbb, FrozenNoiseGradientsMatchFiniteDifferences) {
  RngStream rng(1);
  const Dataset d(rng.normal_matrix(15, 3), rng.normal_matrix(15, 1), Task::kRegression);
  const LinearRegression m(3, 0.8);
  const GaussianPrior prior = GaussianPrior::isotropic(3, 1.0);
  const Batch all = Batch::full(d);
  const BbbState st{rng.normal_vector(3), rng.normal_vector(3), 0};
  const Vec eps = rng.normal_vector(3);
  const BbbObjective obj = bbb_objective(st, m, prior, all, eps);
  const ScalarFn fm = [&](const Vec& x) { return bbb_objective(BbbState{x, st.rho, 0}, m, prior, all, eps).f; };
  const ScalarFn fr = [&](const Vec& x) { return bbb_objective(BbbState{st.mu, x, 0}, m, prior, all, eps).f; };
  EXPECT_LT(finite_diff_check(fm, st.mu, obj.grad_mu), 1e-5);
  EXPECT_LT(finite_diff_check(fr, st.rho, obj.grad_rho), 1e-5);
}

TEST(Bbb, StationaryWhenPriorEqualsQ) {
  const Index k = 2;
  const GaussianPrior prior = GaussianPrior::isotropic(k, 1.0);
  const BbbState st = BbbState::from_mean_std(Vec::Zero(k), Vec::Ones(k));
  const Dataset d = Dataset::empty(k, 1, Task::kRegression);
  const LinearRegression m(k, 1.0);
  RngStream rng(2);
  const int n = 1000;
  std::vector<Vec> grads;
  for (int i = 0; i < n; ++i) {
    const BbbObjective o = bbb_objective(st, m, prior, Batch::full(d), rng.normal_vector(k));
    Vec g(2 * k);
    g << o.grad_mu, o.grad_rho;
    grads.push_back(g);
  }
  Vec mean = Vec::Zero(2 * k), sq = Vec::Zero(2 * k);
  for (const Vec& g : grads) {
    mean += g;
    sq += g.cwiseProduct(g);
  }
  mean /= n;
  const Vec se = ((sq / n - mean.cwiseProduct(mean)) / n).cwiseSqrt();
  for (Index j = 0; j < 2 * k; ++j) EXPECT_LE(std::abs(mean(j)), 4.0 * se(j) + 1e-12);
}

TEST(Bbb, RecoversScalarConjugatePosterior) {
  RngStream rng(3);
  const Mat x = rng.normal_matrix(20, 1);
  const Mat y = 0.8 * x + rng.normal_matrix(20, 1);
  const Dataset d(x, y, Task::kRegression);
  const LinearRegression m(1, 1.0);
  const GaussianPrior prior = GaussianPrior::isotropic(1, 1.0);
  const GaussianVariational exact = conjugate_posterior(prior, d, 1.0);
  BbbState st = BbbState::from_mean_std(Vec::Zero(1), Vec::Constant(1, 0.5));
  const Batch all = Batch::full(d);
  for (int t = 0; t < 5000; ++t) st = bbb_step(st, m, prior, all, rng, 1e-3);
  EXPECT_NEAR(st.mu(0), exact.mean()(0), 0.05);
  EXPECT_NEAR(st.sigma()(0), std::sqrt(exact.covariance()(0, 0)), 0.05);
}

TEST(Factorized, ZetaRoundTrip) {
  RngStream rng(4);
  const Vec mean = rng.normal_vector(5);
  const Vec var = rng.normal_vector(5).cwiseAbs().array() + 0.1;
  const FactorizedPosterior p(mean, var, {2, 3});
  const FactorizedPosterior back = FactorizedPosterior::from_zeta(p.zeta(), p.block_sizes());
  EXPECT_LT((back.mean() - mean).norm(), 1e-14);
  EXPECT_LT((back.variance() - var).norm(), 1e-12);
  EXPECT_EQ(p.num_factors(), 2);
  EXPECT_EQ(p.factor_offset(1), 2);
}

TEST(Factorized, RejectsBadBlocks) {
  EXPECT_THROW(FactorizedPosterior(Vec::Zero(3), Vec::Ones(3), {1, 1}), Error);
  EXPECT_THROW(FactorizedPosterior(Vec::Zero(2), Vec::Constant(2, -1.0), {2}), Error);
}

TEST(Bbvi, GradientVanishesWhenTargetIsQ) {
  const FactorizedPosterior p(Vec::Constant(2, 0.3), Vec::Constant(2, 0.7), {1, 1});
  const GaussianVariational q = p.as_gaussian();
  const LogDensity lj = [&q](const Vec& t) { return log_pdf(q, t); };
  RngStream rng(5);
  EXPECT_LT(bbvi_gradient(p, lj, 32, rng).norm(), 1e-12);
}

TEST(Bbvi, ConstantBracketHasZeroMean) {
  const FactorizedPosterior p(Vec::Zero(1), Vec::Ones(1), {1});
  const GaussianVariational q = p.as_gaussian();
  const double c = 3.0;
  const LogDensity lj = [&](const Vec& t) { return log_pdf(q, t) + c; };
  RngStream rng(6);
  const Index n = 20000;
  const Vec g = bbvi_gradient(p, lj, n, rng);
  // Score sd is 1 for mu and sqrt(2) for log sigma.
  EXPECT_LT(std::abs(g(0)), 4.0 * c / std::sqrt(n));
  EXPECT_LT(std::abs(g(1)), 4.0 * c * std::sqrt(2.0) / std::sqrt(n));
}

TEST(Bbvi, UnbiasedForQuadraticTarget) {
  // q = N(m, s^2), log p = -(t - a)^2 / (2b): dL/dm = -(m - a)/b, dL/dlog s = 1 - s^2/b.
  const double m = 0.4, s = 0.8, a = 1.5, b = 2.0;
  const FactorizedPosterior p(Vec::Constant(1, m), Vec::Constant(1, s * s), {1});
  const LogDensity lj = [&](const Vec& t) { return -0.5 * (t(0) - a) * (t(0) - a) / b; };
  Vec analytic(2);
  analytic << -(m - a) / b, 1.0 - s * s / b;
  RngStream rng(7);
  const int reps = 200;
  std::vector<Vec> gs;
  for (int r = 0; r < reps; ++r) gs.push_back(bbvi_gradient(p, lj, 64, rng));
  Vec mean = Vec::Zero(2), sq = Vec::Zero(2);
  for (const Vec& g : gs) {
    mean += g;
    sq += g.cwiseProduct(g);
  }
  mean /= reps;
  const Vec se = ((sq / reps - mean.cwiseProduct(mean)) / reps).cwiseSqrt();
  for (Index j = 0; j < 2; ++j) EXPECT_LT(std::abs(mean(j) - analytic(j)), 3.0 * se(j));
}

TEST(Bbvi, RobbinsMonroSchedule) {
  EXPECT_DOUBLE_EQ(bbvi_step_size(0.1, 0, false), 0.1);
  EXPECT_NEAR(bbvi_step_size(0.1, 9, false), 0.1 / std::pow(10.0, 0.6), 1e-15);
  EXPECT_DOUBLE_EQ(bbvi_step_size(0.1, 9, true), 0.1);
}

TEST(Ngbbvi, StationaryWhenTargetIsQ) {
  // One factor: the bracket is identically zero.
  const FactorizedPosterior single(Vec::Constant(3, -0.2), Vec::Constant(3, 0.5), {3});
  const GaussianVariational q1 = single.as_gaussian();
  RngStream rng(8);
  const LogDensity lj1 = [&q1](const Vec& t) { return log_pdf(q1, t); };
  EXPECT_LT(ngbbvi_gradient(single, lj1, NgbbviOptions{}, rng).natural.norm(), 1e-10);

  // Several factors: the other factors' log-densities stay in the bracket but
  // average out against the zero-mean score.
  const FactorizedPosterior split(Vec::Constant(3, -0.2), Vec::Constant(3, 0.5), {1, 2});
  const GaussianVariational q2 = split.as_gaussian();
  const LogDensity lj2 = [&q2](const Vec& t) { return log_pdf(q2, t); };
  NgbbviOptions opts;
  opts.n_samples = 20000;
  EXPECT_LT(ngbbvi_gradient(split, lj2, opts, rng).natural.norm(), 0.05);
}

TEST(Ngbbvi, FactorFisherConvergesToAnalytic) {
  const double var = 0.7;
  const FactorizedPosterior p(Vec::Constant(1, 0.5), Vec::Constant(1, var), {1});
  const LogDensity lj = [](const Vec& t) { return -0.5 * t.squaredNorm(); };
  NgbbviOptions opts;
  opts.n_samples = 20000;
  opts.chart = FactorChart::kMeanVariance;
  RngStream rng(9);
  const NgbbviGradient g = ngbbvi_gradient(p, lj, opts, rng);
  const Mat& fim = g.fim.at(0);
  EXPECT_NEAR(fim(0, 0), 1.0 / var, 0.1 / var);
  EXPECT_NEAR(fim(1, 1), 1.0 / (2 * var * var), 0.1 / (2 * var * var));
  EXPECT_LT(std::abs(fim(0, 1)), 0.1 / var);
}

TEST(Ngbbvi, ControlVariateReducesVariance) {
  const Dataset d = load_csv((kData / "logistic.csv").string(), 1, Task::kBinary);
  const LogisticRegression m(3);
  const GaussianPrior prior = GaussianPrior::isotropic(3, 1.0);
  const LogDensity lj = log_joint(m, prior, Batch::full(d));
  const FactorizedPosterior p(Vec::Zero(3), Vec::Constant(3, 0.1), {1, 1, 1});
  NgbbviOptions on, off;
  off.control_variate = false;
  std::vector<Vec> a, b;
  for (int r = 0; r < 100; ++r) {
    RngStream ra(100 + r), rb(100 + r);
    a.push_back(ngbbvi_gradient(p, lj, on, ra).euclidean);
    b.push_back(ngbbvi_gradient(p, lj, off, rb).euclidean);
  }
  EXPECT_LT(sum_sq_deviation(a), sum_sq_deviation(b));
}

TEST(Ngbbvi, NeedsEnoughDraws) {
  const FactorizedPosterior p(Vec::Zero(1), Vec::Ones(1), {1});
  NgbbviOptions opts;
  opts.n_samples = 2;
  RngStream rng(10);
  EXPECT_THROW(ngbbvi_gradient(p, [](const Vec&) { return 0.0; }, opts, rng), ConfigError);
}

TEST(Ngbbvi, ImprovesLogisticElbo) {
  const Dataset d = load_csv((kData / "logistic.csv").string(), 1, Task::kBinary);
  const LogisticRegression m(3);
  const GaussianPrior prior = GaussianPrior::isotropic(3, 1.0);
  const LogDensity lj = log_joint(m, prior, Batch::full(d));
  NgbbviState st{FactorizedPosterior(Vec::Zero(3), Vec::Constant(3, 0.01), {1, 1, 1}), AdamMoments{}};
  RngStream rng(11);
  NgbbviGradient first, last;
  ngbbvi_step(st, lj, NgbbviOptions{}, rng, 0.01, &first);
  for (int t = 0; t < 1500; ++t) ngbbvi_step(st, lj, NgbbviOptions{}, rng, 0.01, &last);
  EXPECT_GT(last.elbo, first.elbo + 10.0);
}

}  // namespace
}  // namespace bnn
