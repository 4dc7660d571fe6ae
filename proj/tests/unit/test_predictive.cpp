#include <gtest/gtest.h>

#include <cmath>

#include "bayesnn/errors.hpp"
#include "bayesnn/predictive.hpp"

namespace bnn {
namespace {

TEST(Summary, IdenticalDrawsHaveZeroCovariance) {
  Mat out(5, 2);
  out.rowwise() = Eigen::RowVector2d(1.5, -0.5);
  const PredictiveSummary s = summarize_outputs(out, Task::kRegression);
  EXPECT_EQ(s.covariance, Mat::Zero(2, 2));
  EXPECT_EQ(s.mean, Vec(Eigen::Vector2d(1.5, -0.5)));
  EXPECT_EQ(s.n_draws, 5);
}

TEST(Summary, CovarianceUsesUnbiasedNormalization) {
  Mat out(2, 1);
  out << 1.0, 3.0;
  EXPECT_DOUBLE_EQ(summarize_outputs(out, Task::kRegression).covariance(0, 0), 2.0);
}

TEST(Summary, PredictedClassIsArgmax) {
  Mat out(2, 3);
  out << 0.1, 0.6, 0.3, 0.3, 0.4, 0.3;
  const PredictiveSummary s = summarize_outputs(out, Task::kMulticlass);
  EXPECT_LT((s.class_probs - Vec(Eigen::Vector3d(0.2, 0.5, 0.3))).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(s.predicted_class, 1);
}

TEST(Summary, SingleDrawCovarianceIsDataError) {
  EXPECT_THROW(summarize_outputs(Mat::Ones(1, 2), Task::kRegression), DataError);
  EXPECT_NO_THROW(summarize_outputs(Mat::Ones(1, 2), Task::kRegression, false));
}

TEST(Predictive, LinearVarianceMatchesQuadraticForm) {
  RngStream rng(1);
  const Mat a = rng.normal_matrix(3, 3);
  const Mat sigma = a * a.transpose() + 0.2 * Mat::Identity(3, 3);
  const GaussianVariational q = GaussianVariational::from_covariance(rng.normal_vector(3), sigma);
  const PosteriorSamples samples = PosteriorSamples::from_gaussian(q, 10000, rng);
  const LinearRegression m(3, 1.0);
  const Vec x = rng.normal_vector(3);
  const PredictiveSummary s = predictive_summary(samples, m, x);
  const double expected = x.dot(sigma * x);
  EXPECT_NEAR(s.covariance(0, 0), expected, 0.1 * expected);
  EXPECT_NEAR(s.mean(0), x.dot(q.mean()), 4.0 * std::sqrt(expected / 10000.0));
}

TEST(Predictive, ClassProbabilitiesSumToOne) {
  RngStream rng(2);
  const Mlp net({2, 5, 3}, Activation::kTanh, Task::kMulticlass);
  const PosteriorSamples samples(rng.normal_matrix(50, net.param_dim()), SampleSource::kMcmc);
  const PredictiveSummary s = predictive_summary(samples, net, rng.normal_vector(2));
  EXPECT_NEAR(s.class_probs.sum(), 1.0, 1e-12);
  EXPECT_GE(s.class_probs.minCoeff(), 0.0);
}

TEST(Predictive, WrongDimensionIsRejected) {
  RngStream rng(3);
  const PosteriorSamples samples(rng.normal_matrix(5, 4), SampleSource::kMcmc);
  EXPECT_THROW(predictive_summary(samples, LinearRegression(3, 1.0), Vec::Zero(3)), DimensionMismatch);
}

TEST(McDropout, TinyRateMatchesDeterministicNetwork) {
  RngStream rng(4);
  const Mlp net({1, 10, 1}, Activation::kRelu, Task::kRegression, 0.1);
  const Vec theta = rng.normal_vector(net.param_dim());
  DropoutConfig cfg = DropoutConfig::uniform(net, 1e-6);
  cfg.n_passes = 20;
  const Mat inputs = rng.normal_matrix(4, 1);
  const auto preds = mc_dropout_predict(net, theta, cfg, inputs, rng);
  ASSERT_EQ(preds.size(), 4u);
  for (Index i = 0; i < 4; ++i)
    EXPECT_NEAR(preds[static_cast<std::size_t>(i)].mean(0), net.predict(theta, inputs.row(i).transpose())(0),
                1e-3);
}

TEST(McDropout, SinglePassIsConfigError) {
  const Mlp net({1, 4, 1}, Activation::kTanh, Task::kRegression);
  DropoutConfig cfg = DropoutConfig::uniform(net, 0.1);
  cfg.n_passes = 1;
  RngStream rng(5);
  EXPECT_THROW(mc_dropout_predict(net, Vec::Zero(net.param_dim()), cfg, Mat::Zero(1, 1), rng), ConfigError);
}

TEST(McDropout, SeedDeterminesPredictions) {
  const Mlp net({1, 8, 1}, Activation::kTanh, Task::kRegression);
  RngStream init(6);
  const Vec theta = init.normal_vector(net.param_dim());
  const DropoutConfig cfg = DropoutConfig::uniform(net, 0.3);
  const Mat inputs = Mat::Constant(2, 1, 0.4);
  RngStream a(7), b(7);
  const auto pa = mc_dropout_predict(net, theta, cfg, inputs, a);
  const auto pb = mc_dropout_predict(net, theta, cfg, inputs, b);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].mean, pb[i].mean);
    EXPECT_EQ(pa[i].covariance, pb[i].covariance);
  }
}

TEST(McDropout, TrainingReducesLoss) {
  RngStream rng(8);
  const Mat x = rng.normal_matrix(64, 1);
  const Mat y = x.array().sin().matrix();
  const Dataset d(x, y, Task::kRegression);
  const Mlp net({1, 16, 1}, Activation::kTanh, Task::kRegression, 0.05);
  DropoutConfig cfg = DropoutConfig::uniform(net, 0.05);
  cfg.iterations = 800;
  Vec theta0 = 0.3 * rng.normal_vector(net.param_dim());
  const double before = -net.log_lik(theta0, Batch::full(d));
  const Vec theta = mc_dropout_train(net, cfg, d, theta0, rng);
  EXPECT_LT(-net.log_lik(theta, Batch::full(d)), 0.5 * before);
}

TEST(Elbo, PriorWithoutDataIsZero) {
  const GaussianPrior prior = GaussianPrior::isotropic(3, 2.0);
  const GaussianVariational q = GaussianVariational::from_precision(prior.mean0, prior.precision0);
  RngStream rng(9);
  const ElboEstimate e =
      elbo_estimate(q, LinearRegression(3, 1.0), prior, Dataset::empty(3, 1, Task::kRegression), 200, rng);
  EXPECT_NEAR(e.value, 0.0, 1e-10);
}

TEST(Elbo, ExactPosteriorGivesLogEvidence) {
  RngStream rng(10);
  const Mat x = rng.normal_matrix(25, 2);
  const Dataset d(x, x * Vec::Ones(2) + 0.7 * rng.normal_matrix(25, 1), Task::kRegression);
  const GaussianPrior prior = GaussianPrior::isotropic(2, 1.0);
  const GaussianVariational post = conjugate_posterior(prior, d, 0.5);
  const ElboEstimate e = elbo_estimate(post, LinearRegression(2, 0.5), prior, d, 100, rng);
  EXPECT_NEAR(e.value, linear_log_evidence(prior, d, 0.5), 1e-8);
  EXPECT_LT(e.stderr_, 1e-8);
}

TEST(Elbo, BoundedByLogEvidence) {
  RngStream rng(11);
  const Mat x = rng.normal_matrix(25, 2);
  const Dataset d(x, x * Vec::Ones(2) + rng.normal_matrix(25, 1), Task::kRegression);
  const GaussianPrior prior = GaussianPrior::isotropic(2, 1.0);
  const GaussianVariational q = GaussianVariational::diagonal(Vec::Constant(2, 0.8), Vec::Constant(2, 0.05));
  const ElboEstimate e = elbo_estimate(q, LinearRegression(2, 1.0), prior, d, 5000, rng);
  EXPECT_LT(e.value, linear_log_evidence(prior, d, 1.0) + 3.0 * e.stderr_);
}

TEST(FiniteDiff, CorrectGradientPasses) {
  const ScalarFn f = [](const Vec& v) { return v(0) * v(0) + v(0) * v(1); };
  const Vec x = Eigen::Vector2d(1.0, 2.0);
  EXPECT_LT(finite_diff_check(f, x, Eigen::Vector2d(4.0, 1.0)), 1e-9);
}

TEST(FiniteDiff, WrongGradientFails) {
  const ScalarFn f = [](const Vec& v) { return v(0) * v(0) + v(0) * v(1); };
  const Vec x = Eigen::Vector2d(1.0, 2.0);
  EXPECT_GT(finite_diff_check(f, x, Eigen::Vector2d(4.0, 0.9)), 0.02);
  EXPECT_GT(finite_diff_check(f, x, Eigen::Vector2d(3.9, 1.0)), 0.02);
}

TEST(FiniteDiff, ZeroGradientIsNotFlagged) {
  const ScalarFn f = [](const Vec&) { return 3.0; };
  EXPECT_EQ(finite_diff_check(f, Vec::Ones(3), Vec::Zero(3)), 0.0);
}

TEST(Duality, ScaleInvariant) {
  RngStream rng(12);
  Mat sigma(2, 2);
  sigma << 1.0, 0.3, 0.3, 0.5;
  const GaussianVariational q = GaussianVariational::from_covariance(Eigen::Vector2d(0.2, -0.4), sigma);
  const Vec a = rng.normal_vector(2);
  const GaussianObjective obj = [&](const Vec& mu, const Mat& s) {
    return a.dot(mu) - 0.5 * (mu.squaredNorm() + s.trace()) + 0.5 * std::log(s.determinant());
  };
  const GaussianObjective scaled = [&](const Vec& mu, const Mat& s) { return 7.5 * obj(mu, s); };
  const double r1 = fim_duality_check(q, obj), r2 = fim_duality_check(q, scaled);
  EXPECT_LT(r1, 1e-4);
  EXPECT_NEAR(r1, r2, 1e-6);
}

TEST(Duality, ScalarFisherIsAnalytic) {
  const GaussianVariational q = GaussianVariational::diagonal(Vec::Constant(1, 0.3), Vec::Constant(1, 0.6));
  const Mat analytic = natural_fisher(q, true);
  const Mat numeric = natural_fisher(q, false);
  EXPECT_LT((analytic - numeric).cwiseAbs().maxCoeff(), 1e-5 * analytic.cwiseAbs().maxCoeff());
}

TEST(Duality, TooLargeIsConfigError) {
  const GaussianVariational q = GaussianVariational::diagonal(Vec::Zero(4), Vec::Ones(4));
  EXPECT_THROW(fim_duality_check(q, [](const Vec&, const Mat&) { return 0.0; }), ConfigError);
}

}  // namespace
}  // namespace bnn
