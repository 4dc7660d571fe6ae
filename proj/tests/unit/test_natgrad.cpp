#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "bayesnn/errors.hpp"
#include "bayesnn/natgrad.hpp"

namespace bnn {
namespace {

const std::filesystem::path kData = std::filesystem::path(BAYESNN_SOURCE_DIR) / "data";

struct Problem {
  Dataset data;
  LinearRegression model;
  GaussianPrior prior;
  GaussianVariational exact;
};

Problem regression_problem(std::uint64_t seed, Index n, Index d, double noise = 1.0) {
  RngStream rng(seed);
  const Mat x = rng.normal_matrix(n, d);
  const Mat y = x * rng.normal_vector(d) + std::sqrt(noise) * rng.normal_matrix(n, 1);
  Dataset data(x, y, Task::kRegression);
  const GaussianPrior prior = GaussianPrior::isotropic(d, 1.0);
  GaussianVariational exact = conjugate_posterior(prior, data, noise);
  return Problem{std::move(data), LinearRegression(d, noise), prior, std::move(exact)};
}

// Constant-log-likelihood model: zero gradient, zero curvature.
class FlatModel final : public ProbModel {
 public:
  explicit FlatModel(Index k) : k_(k) {}
  Index param_dim() const override { return k_; }
  Task task() const override { return Task::kRegression; }
  std::string kind() const override { return "flat"; }
  double log_lik_row(const Vec&, const Dataset&, Index, Vec* grad) const override {
    if (grad) *grad = Vec::Zero(k_);
    return 0.0;
  }
  std::optional<Mat> hessian(const Vec&, const Batch&) const override { return Mat::Zero(k_, k_); }
  Vec predict(const Vec&, const Vec&) const override { return Vec::Zero(1); }

 private:
  Index k_;
};

TEST(Ngvi, ZeroGradientIsStationary) {
  RngStream rng(1);
  const NgviState st = NgviState::full(rng.normal_vector(3), 2.0 * Mat::Identity(3, 3));
  const NgviState next = ngvi_step(st, Vec::Zero(3), Mat::Zero(3, 3), 0.3);
  EXPECT_EQ(next.mu, st.mu);
  EXPECT_EQ(next.precision, st.precision);
}

TEST(Ngvi, ExactGradientsReachPosteriorPrecisionInOneStep) {
  const Problem p = regression_problem(2, 40, 3);
  const NgviState st = NgviState::full(Vec::Zero(3), Mat::Identity(3, 3));
  const Mat sigma = Mat::Identity(3, 3);
  const Mat post_prec = p.prior.precision0 + p.data.inputs().transpose() * p.data.inputs();
  const Mat grad_sigma = 0.5 * sigma.inverse() - 0.5 * post_prec;
  const NgviState next = ngvi_step(st, Vec::Zero(3), grad_sigma, 1.0);
  EXPECT_LT((next.precision - p.exact.precision()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Ngvi, ScalarPrecisionConvergesGeometrically) {
  // k = 1, exact gradient 1/2 (1/v - p*) with v the current variance.
  const double target = 5.0;
  NgviState st = NgviState::diag(Vec::Zero(1), Vec::Constant(1, 1.0));
  double prev_gap = std::abs(st.precision_diag(0) - target);
  for (int t = 0; t < 10; ++t) {
    const double v = 1.0 / st.precision_diag(0);
    st = ngvi_step_diag(st, Vec::Zero(1), Vec::Constant(1, 0.5 * (1.0 / v - target)), 0.5);
    const double gap = std::abs(st.precision_diag(0) - target);
    EXPECT_NEAR(gap / prev_gap, 0.5, 1e-12);
    prev_gap = gap;
  }
}

TEST(Ngvi, DiagonalMatchesFullOnDiagonalProblems) {
  RngStream rng(3);
  NgviState full = NgviState::full(rng.normal_vector(3), Mat(Vec::Constant(3, 2.0).asDiagonal()));
  NgviState diag = NgviState::diag(full.mu, Vec::Constant(3, 2.0));
  for (int t = 0; t < 20; ++t) {
    const Vec gm = rng.normal_vector(3);
    const Vec gv = 0.1 * rng.normal_vector(3);
    full = ngvi_step(full, gm, Mat(gv.asDiagonal()), 0.1);
    diag = ngvi_step_diag(diag, gm, gv, 0.1);
    EXPECT_LT((full.mu - diag.mu).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((full.precision.diagonal() - diag.precision_diag).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Ngvi, NonSpdStepIsHalved) {
  const NgviState st = NgviState::diag(Vec::Zero(1), Vec::Constant(1, 1.0));
  StepReport rep;
  // beta = 1 would give precision 1 - 2 * 1 = -1.
  const NgviState next = ngvi_step_diag(st, Vec::Zero(1), Vec::Constant(1, 1.0), 1.0,
                                        MeanUpdate::kNextCovariance, &rep);
  EXPECT_GT(rep.halvings, 0);
  EXPECT_FALSE(rep.rejected);
  EXPECT_GT(next.precision_diag(0), 0.0);
}

TEST(Ngvi, MeanUpdateOrdering) {
  NgviState st = NgviState::diag(Vec::Zero(1), Vec::Constant(1, 1.0));
  const Vec gm = Vec::Constant(1, 1.0), gv = Vec::Constant(1, -0.5);  // precision 1 -> 2
  EXPECT_NEAR(ngvi_step_diag(st, gm, gv, 1.0, MeanUpdate::kNextCovariance).mu(0), 0.5, 1e-15);
  EXPECT_NEAR(ngvi_step_diag(st, gm, gv, 1.0, MeanUpdate::kCurrentCovariance).mu(0), 1.0, 1e-15);
}

TEST(ElboGradients, AtMeanRequiresHessian) {
  RngStream rng(4);
  const Dataset d(rng.normal_matrix(5, 2), Mat::Ones(5, 1), Task::kBinary);
  const LogisticRegression m(2);
  const GaussianVariational q = GaussianVariational::from_covariance(Vec::Zero(2), Mat::Identity(2, 2));
  EXPECT_THROW(elbo_gradients(q, m, GaussianPrior::isotropic(2, 1.0), Batch::full(d), 1.0, 4, rng,
                              GradientMode::kAtMean),
               ConfigError);
}

TEST(ElboGradients, ZeroAtConjugatePosterior) {
  const Problem p = regression_problem(5, 30, 3);
  RngStream rng(5);
  const ElboGradients g = elbo_gradients(p.exact, p.model, p.prior, Batch::full(p.data), 1.0, 1, rng,
                                         GradientMode::kAtMean);
  EXPECT_LT(g.grad_mu.norm(), 1e-9);
  EXPECT_LT(g.grad_sigma.norm(), 1e-9);
}

TEST(ElboGradients, SteinPathAgreesWithHessianPathOnAverage) {
  // Logistic has no Hessian so it uses the Stein form; compare against a
  // finite-difference Hessian of the log-joint at many draws.
  RngStream rng(6);
  const Dataset d = load_csv((kData / "logistic.csv").string(), 1, Task::kBinary);
  const LogisticRegression m(3);
  const GaussianPrior prior = GaussianPrior::isotropic(3, 1.0);
  Mat sigma = 0.02 * Mat::Identity(3, 3);
  sigma(0, 1) = sigma(1, 0) = 0.005;
  const GaussianVariational q = GaussianVariational::from_covariance(Vec::Constant(3, 0.3), sigma);
  const Batch all = Batch::full(d);
  const ElboGradients stein = elbo_gradients(q, m, prior, all, 1.0, 200000, rng);

  const LogDensity lj = log_joint(m, prior, all);
  Mat hess = Mat::Zero(3, 3);
  const Index n = 2000;
  const Mat draws = sample_reparam(q, rng, n);
  for (Index s = 0; s < n; ++s) {
    const Vec t = draws.row(s).transpose();
    for (Index j = 0; j < 3; ++j) {
      Vec tp = t, tn = t;
      tp(j) += 1e-5;
      tn(j) -= 1e-5;
      const Vec gp = m.grad_sum(tp, all) + prior.grad_log_density(tp);
      const Vec gn = m.grad_sum(tn, all) + prior.grad_log_density(tn);
      hess.col(j) += (gp - gn) / 2e-5;
    }
  }
  hess /= static_cast<double>(n);
  const Mat stein_part = stein.grad_sigma - 0.5 * sigma.inverse();
  EXPECT_LT((stein_part - 0.5 * hess).norm() / (0.5 * hess).norm(), 0.05);
  EXPECT_LT((stein.grad_sigma - stein.grad_sigma.transpose()).norm(), 1e-12);
}

TEST(Von, OneStepGivesDiagonalPosteriorPrecision) {
  const Problem p = regression_problem(7, 50, 3, 0.5);
  const Index n = p.data.size();
  const double lt = p.prior.mean_precision() / static_cast<double>(n);
  VonState st = VonState::diag(Vec::Zero(3), Vec::Zero(3), lt, n);
  VonOptions opts;
  opts.curvature = Curvature::kHessian;
  RngStream rng(7);
  st = von_step(st, p.model, Batch::full(p.data), rng, 1.0, opts);
  const Vec expected_s = (p.data.inputs().transpose() * p.data.inputs()).diagonal() / (n * 0.5);
  EXPECT_LT((st.s - expected_s).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((st.variance().cwiseInverse() - p.exact.precision().diagonal()).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Von, NewtonInTwoStepsForOrthogonalDesign) {
  const Dataset d = load_csv((kData / "conjugate_orthogonal.csv").string(), 1, Task::kRegression);
  const LinearRegression m(5, 1.0);
  const GaussianPrior prior = GaussianPrior::isotropic(5, 1.0);
  const GaussianVariational exact = conjugate_posterior(prior, d, 1.0);
  VonState st = VonState::diag(Vec::Zero(5), Vec::Zero(5), 1.0 / d.size(), d.size());
  VonOptions opts;
  opts.curvature = Curvature::kHessian;
  opts.at_mean = true;
  RngStream rng(8);
  st = von_step(st, m, Batch::full(d), rng, 1.0, opts);
  st = von_step(st, m, Batch::full(d), rng, 1.0, opts);
  EXPECT_LT((st.mu - exact.mean()).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((st.variance() - exact.covariance().diagonal()).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Von, PriorOnlyFlowShrinksMean) {
  const FlatModel m(2);
  const Dataset d(Mat::Zero(10, 1), Mat::Zero(10, 1), Task::kRegression);
  const double lt = 0.1, s0 = 0.4, beta = 0.3;
  VonState st = VonState::diag(Vec::Constant(2, 2.0), Vec::Constant(2, s0), lt, 10);
  RngStream rng(9);
  VonOptions opts;
  opts.curvature = Curvature::kHessian;
  const VonState next = von_step(st, m, Batch::full(d), rng, beta, opts);
  const Vec s1 = (1 - beta) * st.s;
  const Vec expected = st.mu.array() - beta * lt * st.mu.array() / (s1.array() + lt);
  EXPECT_LT((next.mu - expected).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT(next.mu.norm(), st.mu.norm());
}

TEST(Von, MinibatchGradientsAverageToFullGradient) {
  const Problem p = regression_problem(10, 24, 3);
  RngStream rng(10);
  const Vec theta = rng.normal_vector(3);
  Vec avg = Vec::Zero(3);
  const auto batches = epoch_partition(p.data, 6, rng);
  for (const Batch& b : batches) avg += p.model.grad(theta, b);
  avg /= static_cast<double>(batches.size());
  EXPECT_LT((avg - p.model.grad(theta, Batch::full(p.data))).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Von, FullVariantRejectsNonSpdScaling) {
  Mat s(2, 2);
  s << 1.0, 3.0, 3.0, 1.0;
  EXPECT_THROW(VonState::full_matrix(Vec::Zero(2), s, 0.01, 10), InvalidParameter);
}

TEST(Vadam, ZeroGradientAtZeroIsFixedPoint) {
  const FlatModel m(2);
  const Dataset d(Mat::Zero(4, 1), Mat::Zero(4, 1), Task::kRegression);
  VonState st = VonState::diag(Vec::Zero(2), Vec::Constant(2, 0.1), 0.1, 4);
  RngStream rng(11);
  for (int t = 0; t < 5; ++t) st = vadam_step(st, m, Batch::full(d), rng, 0.1, 0.9, 0.999);
  EXPECT_EQ(st.mu, Vec::Zero(2));
  EXPECT_EQ(st.m, Vec::Zero(2));
}

TEST(Vadam, ReducesToSignStep) {
  // gamma1 = gamma2 = 0 and lambda_tilde = 0: mu <- mu - beta sign(g).
  const Dataset d(Mat::Ones(1, 1), Mat::Constant(1, 1, 5.0), Task::kRegression);
  const LinearRegression m(1, 1.0);
  VonState st = VonState::diag(Vec::Zero(1), Vec::Constant(1, 1e6), 0.0, 1);
  st.s(0) = 1e12;  // posterior draws collapse onto mu
  RngStream rng(12);
  VonReport rep;
  const VonState next = vadam_step(st, m, Batch::full(d), rng, 0.25, 0.0, 0.0, &rep);
  EXPECT_NEAR(next.mu(0), 0.25, 1e-9);  // g = -(y - x theta) < 0
}

TEST(Vadam, FirstStepBiasCorrectionIsExact) {
  const Problem p = regression_problem(13, 20, 2);
  const double lt = 0.05, beta = 0.1;
  VonState st = VonState::diag(Vec::Constant(2, 0.3), Vec::Zero(2), lt, 20);
  RngStream rng(13);
  VonReport rep;
  const VonState next = vadam_step(st, p.model, Batch::full(p.data), rng, beta, 0.7, 0.999, &rep);
  const Vec m_hat = rep.g_hat + lt * st.mu;
  const Vec s_hat = rep.g_hat.cwiseProduct(rep.g_hat);
  const Vec expected = st.mu.array() - beta * m_hat.array() / (s_hat.array().sqrt() + lt);
  EXPECT_LT((next.mu - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Vogn, SingleSampleCurvatureIsSquaredGradient) {
  Mat g(1, 3);
  g << 0.5, -2.0, 3.0;
  EXPECT_EQ(hessian_per_sample(g), hessian_batch_squared(g));
  EXPECT_EQ(hessian_per_sample(g), Vec(g.row(0).transpose().array().square()));
}

TEST(Vogn, BatchSquaredEstimatorIsBiased) {
  Mat g(2, 1);
  g << 1.0, -1.0;
  EXPECT_EQ(hessian_per_sample(g)(0), 1.0);
  EXPECT_EQ(hessian_batch_squared(g)(0), 0.0);
}

TEST(Vogn, ScalingStaysPositiveOnLogistic) {
  const Dataset d = load_csv((kData / "logistic.csv").string(), 1, Task::kBinary);
  const LogisticRegression m(3);
  VonState st = VonState::diag(Vec::Zero(3), Vec::Constant(3, 1e-3), 1.0 / d.size(), d.size());
  RngStream rng(14);
  RngStream order(15);
  int steps = 0;
  while (steps < 3000) {
    for (const Batch& b : epoch_partition(d, 8, order)) {
      st = vogn_step(st, m, b, rng, 0.01, 0.9, 0.999, 2);
      ASSERT_GT(st.s.minCoeff(), 0.0);
      ++steps;
    }
  }
}

TEST(Vogn, EmptyBatchThrows) {
  const Dataset d = Dataset::empty(2, 1, Task::kBinary);
  const LogisticRegression m(2);
  const VonState st = VonState::diag(Vec::Zero(2), Vec::Ones(2), 0.1, 1);
  RngStream rng(16);
  EXPECT_THROW(vogn_step(st, m, Batch::full(d), rng, 0.01, 0.9, 0.999, 1), Error);
}

TEST(Qbvi, NoDataReturnsPriorPrecisionOnAverage) {
  const GaussianPrior prior = GaussianPrior::isotropic(2, 3.0);
  const NgviState st = NgviState::full(Vec::Zero(2), Mat::Identity(2, 2));
  QbviOptions opts;
  opts.n_samples = 20000;
  opts.baseline = false;
  RngStream rng(17);
  const LogDensity none = [](const Vec&) { return 0.0; };
  const NgviState next = qbvi_step(st, none, prior, opts, rng, 1.0);
  EXPECT_LT((next.precision - prior.precision0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Qbvi, GradientIsSymmetric) {
  const Problem p = regression_problem(18, 20, 3);
  const NgviState st = NgviState::full(Vec::Zero(3), 2.0 * Mat::Identity(3, 3));
  RngStream rng(18);
  QbviReport rep;
  qbvi_step(st, log_likelihood(p.model, Batch::full(p.data)), p.prior, QbviOptions{}, rng, 0.01, &rep);
  EXPECT_EQ(rep.g_sigma, rep.g_sigma.transpose());
}

TEST(Qbvi, ConjugateRegressionConverges) {
  const Problem p = regression_problem(19, 50, 2);
  NgviState st = NgviState::full(Vec::Zero(2), Mat::Identity(2, 2));
  QbviOptions opts;
  opts.n_samples = 256;
  RngStream rng(19);
  const LogDensity ll = log_likelihood(p.model, Batch::full(p.data));
  for (int t = 0; t < 4000; ++t) st = qbvi_step(st, ll, p.prior, opts, rng, 0.05);
  EXPECT_LT(kl_gaussians(st.as_gaussian(), p.exact), 1e-2);
}

TEST(Qbvi, RequiresTwoDraws) {
  const GaussianPrior prior = GaussianPrior::isotropic(1, 1.0);
  QbviOptions opts;
  opts.n_samples = 1;
  RngStream rng(20);
  EXPECT_THROW(qbvi_step(NgviState::full(Vec::Zero(1), Mat::Identity(1, 1)), [](const Vec&) { return 0.0; },
                         prior, opts, rng, 0.1),
               ConfigError);
}

TEST(Instability, PlainGradientsDivergeNaturalGradientsConverge) {
  const InstabilityResult r = run_instability_example(InstabilityConfig{});
  EXPECT_TRUE(r.sgd_diverged);
  EXPECT_GT(std::abs(r.sgd_last_sigma), 1e3);
  EXPECT_TRUE(r.ngvi_converged);
  EXPECT_NEAR(r.ngvi_mu, 2.0, 0.05);
  EXPECT_NEAR(r.ngvi_sigma, 0.1, 0.05);
}

}  // namespace
}  // namespace bnn
