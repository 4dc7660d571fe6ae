#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>

#include "bayesnn/errors.hpp"
#include "bayesnn/spd.hpp"

namespace bnn {
namespace {

Mat random_spd(RngStream& rng, Index k, double floor = 0.5) {
  const Mat a = rng.normal_matrix(k, k);
  return a * a.transpose() + floor * Mat::Identity(k, k);
}

Mat random_symmetric(RngStream& rng, Index k) {
  const Mat a = rng.normal_matrix(k, k);
  return 0.5 * (a + a.transpose());
}

bool is_spd_matrix(const Mat& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * m.cwiseAbs().maxCoeff() &&
         Eigen::LLT<Mat>(m).info() == Eigen::Success;
}

TEST(Retraction, ZeroStepIsIdentity) {
  RngStream rng(1);
  const SpdPoint z(random_spd(rng, 4));
  EXPECT_EQ(retract(z, Mat::Zero(4, 4)).value(), z.value());
}

TEST(Retraction, ScalarValue) {
  const SpdPoint z(Mat::Constant(1, 1, 1.0));
  EXPECT_NEAR(retract(z, Mat::Constant(1, 1, 0.2)).value()(0, 0), 1.22, 1e-15);
}

TEST(Retraction, FirstOrderAgreement) {
  RngStream rng(2);
  const SpdPoint z(random_spd(rng, 3));
  const Mat xi = random_symmetric(rng, 3);
  auto err = [&](double t) { return (retract(z, t * xi).value() - z.value() - t * xi).norm(); };
  // Remainder is exactly quadratic in t.
  EXPECT_NEAR(err(1e-2) / err(1e-3), 100.0, 1e-6);
}

TEST(Retraction, RandomStepsStaySpd) {
  RngStream rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Index k = 1 + static_cast<Index>(i % 5);
    const SpdPoint z(random_spd(rng, k, 0.1));
    const SpdPoint r = retract(z, random_symmetric(rng, k));
    ASSERT_TRUE(is_spd_matrix(r.value()));
  }
}

TEST(Retraction, RejectsAsymmetricTangent) {
  const SpdPoint z(Mat::Identity(2, 2));
  Mat xi(2, 2);
  xi << 0.0, 1.0, 0.0, 0.0;
  EXPECT_THROW(retract(z, xi), Error);
}

TEST(Transport, SamePointIsIdentity) {
  RngStream rng(4);
  const SpdPoint z(random_spd(rng, 4));
  const Mat xi = random_symmetric(rng, 4);
  EXPECT_LT((transport(z, z, xi) - xi).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Transport, ScalarValue) {
  const SpdPoint from(Mat::Constant(1, 1, 1.0));
  const SpdPoint to(Mat::Constant(1, 1, 4.0));
  EXPECT_NEAR(transport(from, to, Mat::Constant(1, 1, 0.3))(0, 0), 1.2, 1e-14);
}

TEST(Transport, PreservesSymmetry) {
  RngStream rng(5);
  for (int i = 0; i < 50; ++i) {
    const SpdPoint a(random_spd(rng, 4)), b(random_spd(rng, 4));
    const Mat out = transport(a, b, random_symmetric(rng, 4));
    EXPECT_LT((out - out.transpose()).cwiseAbs().maxCoeff(), 1e-10 * out.cwiseAbs().maxCoeff());
  }
}

TEST(Transport, FactorMatchesGeneralMatrixSquareRoot) {
  RngStream rng(6);
  const SpdPoint a(random_spd(rng, 3)), b(random_spd(rng, 3));
  const Mat product = b.value() * a.inverse();
  const Mat reference = product.sqrt();
  const Mat e = transport_factor(a, b);
  EXPECT_LT((e - reference).cwiseAbs().maxCoeff(), 1e-9 * reference.cwiseAbs().maxCoeff());
  EXPECT_LT((e * e - product).cwiseAbs().maxCoeff(), 1e-9 * product.cwiseAbs().maxCoeff());
}

TEST(SpdPoint, RejectsIndefiniteMatrix) {
  Mat m(2, 2);
  m << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(SpdPoint{m}, Error);
  EXPECT_THROW(SpdPoint{Mat::Zero(2, 2)}, Error);
}

TEST(Mgvb, ScalarNaturalGradient) {
  const Mat sigma = Mat::Constant(1, 1, 0.7);
  const Mat g = Mat::Constant(1, 1, -1.3);
  EXPECT_NEAR(mgvb_natural_sigma(sigma, g)(0, 0), std::pow(0.7, 2) * -1.3, 1e-15);
  EXPECT_NEAR(mgvb_natural_sigma(sigma, g, true)(0, 0), 2.0 * std::pow(0.7, 2) * -1.3, 1e-15);
  EXPECT_NEAR(mgvb_natural_mu(sigma, Vec::Constant(1, 2.0))(0), 1.4, 1e-15);
}

TEST(Mgvb, ConjugateRegressionConverges) {
  RngStream data_rng(7);
  const Mat x = data_rng.normal_matrix(40, 2);
  const Mat y = x * Vec::Constant(2, 0.5) + data_rng.normal_matrix(40, 1);
  const Dataset d(x, y, Task::kRegression);
  const LinearRegression m(2, 1.0);
  const GaussianPrior prior = GaussianPrior::isotropic(2, 1.0);
  const GaussianVariational exact = conjugate_posterior(prior, d, 1.0);
  ManifoldState st(Vec::Zero(2), SpdPoint(0.1 * Mat::Identity(2, 2)));
  ManifoldOptions opts;
  opts.n_samples = 128;
  RngStream rng(7);
  const LogDensity lj = log_joint(m, prior, Batch::full(d));
  for (int t = 0; t < 3000; ++t) mgvb_step(st, lj, opts, rng, 0.02);
  EXPECT_LT(kl_gaussians(st.as_gaussian(false), exact), 1e-2);
}

struct EmgvbProblem {
  Dataset data;
  LinearRegression model{3, 1.0};
  GaussianPrior prior = GaussianPrior::isotropic(3, 1.0);
};

EmgvbProblem emgvb_problem() {
  RngStream rng(8);
  const Mat x = rng.normal_matrix(30, 3);
  const Mat y = x * rng.normal_vector(3) + rng.normal_matrix(30, 1);
  return EmgvbProblem{Dataset(x, y, Task::kRegression)};
}

TEST(Emgvb, EstimatorBranchesAgreeInMean) {
  const EmgvbProblem p = emgvb_problem();
  const LogDensity ll = log_likelihood(p.model, Batch::full(p.data));
  const LogDensity lp = [&](const Vec& t) { return p.prior.log_density(t); };
  Vec mu(3);
  mu << 0.3, -0.2, 0.1;
  const SpdPoint prec(20.0 * Mat::Identity(3, 3));
  ManifoldOptions closed, plain;
  closed.n_samples = plain.n_samples = 32;
  plain.gaussian_constants = false;
  RngStream rng(8);
  const Index reps = 500;
  const Index k = 3 + 9;
  Mat a(reps, k), b(reps, k);
  for (Index r = 0; r < reps; ++r) {
    const ManifoldGradient ga = emgvb_gradient(mu, prec, ll, lp, &p.prior, closed, rng);
    const ManifoldGradient gb = emgvb_gradient(mu, prec, ll, lp, nullptr, plain, rng);
    a.row(r) << ga.g_mu.transpose(), ga.g_mat.reshaped().transpose();
    b.row(r) << gb.g_mu.transpose(), gb.g_mat.reshaped().transpose();
  }
  for (Index j = 0; j < k; ++j) {
    const double diff = a.col(j).mean() - b.col(j).mean();
    const auto var = [&](const Mat& m) {
      const Eigen::ArrayXd c = m.col(j).array() - m.col(j).mean();
      return c.square().sum() / static_cast<double>(reps - 1);
    };
    const double se = std::sqrt((var(a) + var(b)) / static_cast<double>(reps));
    EXPECT_LE(std::abs(diff), 3.0 * se + 1e-12) << "component " << j;
  }
}

TEST(Emgvb, PriorIsFixedPointWithoutData) {
  const GaussianPrior prior = GaussianPrior::isotropic(3, 2.0);
  const LogDensity none = [](const Vec&) { return 0.0; };
  const LogDensity lp = [&](const Vec& t) { return prior.log_density(t); };
  RngStream rng(9);
  const ManifoldGradient g =
      emgvb_gradient(prior.mean0, SpdPoint(prior.precision0), none, lp, &prior, ManifoldOptions{}, rng);
  EXPECT_LT(g.g_mu.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(g.g_mat.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Emgvb, ConjugateRegressionConverges) {
  const EmgvbProblem p = emgvb_problem();
  const GaussianVariational exact = conjugate_posterior(p.prior, p.data, 1.0);
  const LogDensity ll = log_likelihood(p.model, Batch::full(p.data));
  const LogDensity lp = [&](const Vec& t) { return p.prior.log_density(t); };
  ManifoldState st(Vec::Zero(3), SpdPoint(10.0 * Mat::Identity(3, 3)));
  ManifoldOptions opts;
  opts.n_samples = 128;
  RngStream rng(10);
  for (int t = 0; t < 3000; ++t) emgvb_step(st, ll, lp, &p.prior, opts, rng, 0.02);
  EXPECT_LT(kl_gaussians(st.as_gaussian(true), exact), 1e-2);
}

TEST(ManifoldOptions, Validation) {
  ManifoldOptions o;
  o.n_samples = 1;
  EXPECT_THROW(o.validate(), ConfigError);
  o = ManifoldOptions{};
  o.omega = 1.0;
  EXPECT_THROW(o.validate(), ConfigError);
}

}  // namespace
}  // namespace bnn
