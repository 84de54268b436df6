#include <gtest/gtest.h>

#include <cmath>

#include "msip/metrics.hpp"
#include "oracles.hpp"

using namespace msip;

namespace {

GmmTarget standard_normal_1d() {
  return GmmTarget(Vector::Ones(1), ParticleMatrix::Zero(1, 1), {Matrix::Identity(1, 1)});
}

ParticleMatrix random_config(int m, int d, std::uint64_t seed, double scale) {
  Rng rng(seed);
  ParticleMatrix y(m, d);
  fill_standard_normal(y, rng);
  return scale * y;
}

}  // namespace

TEST(NormalizeWeights, Examples) {
  EXPECT_EQ(normalize_weights(Eigen::Vector2d(2, 2)), Eigen::Vector2d(0.5, 0.5));
  EXPECT_EQ(normalize_weights(Eigen::Vector2d(3, -1)), Eigen::Vector2d(1.5, -0.5));
  try {
    normalize_weights(Eigen::Vector2d(1e-13, -1e-13));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::non_normalizable);
  }
}

TEST(MmdVsGmm, SingleParticleOracle) {
  const double c_pi = 1 / std::sqrt(3.0);
  const double v0 = oracle::simpson([](double x) { return std::exp(-0.5 * x * x) * oracle::normal_pdf(x, 0, 1); }, -12, 12);
  const double got = mmd2_vs_gmm(ParticleMatrix::Zero(1, 1), Vector::Ones(1), standard_normal_1d(), 1.0);
  EXPECT_NEAR(got, c_pi - 2 * v0 + 1, 1e-10);
  EXPECT_NEAR(got, 0.1631, 5e-5);
}

TEST(MmdVsGmm, OptimalWeightsGiveTwiceObjective) {
  const GmmTarget g = *make_benchmark("gmm5-aniso-2d", 2, 0).analytic;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const ParticleMatrix y = random_config(7, 2, s, 6.0);
    Vector v0;
    ParticleMatrix v1;
    analytic_v0_v1(g, y, 0.5, v0, v1);
    const Vector w = optimal_weights(gram(y, {0.5, 0.0}), v0);
    const double two_f = 2 * objective(y, g, {0.5, 0.0});
    EXPECT_NEAR(mmd2_vs_gmm(y, w, g, 0.5), two_f, 1e-10 * std::max(1.0, two_f));
  }
}

TEST(MmdVsGmm, NonNegativeSignedWeightsAndPermutation) {
  const GmmTarget g = *make_benchmark("gmm5-aniso-2d", 2, 0).analytic;
  Rng rng(3);
  for (int s = 0; s < 10; ++s) {
    const ParticleMatrix y = random_config(6, 2, 10 + s, 5.0);
    Vector w(6);
    fill_standard_normal(w, rng);
    const double m = mmd2_vs_gmm(y, w, g, 0.5);
    EXPECT_GE(m, 0.0);
    EXPECT_NEAR(mmd2_vs_gmm(y.colwise().reverse(), w.reverse(), g, 0.5), m, 1e-12);
  }
}

TEST(MmdVsSamples, IdenticalMeasuresAndPermutation) {
  const ParticleMatrix y = random_config(30, 2, 4, 1.0);
  const Vector w = Vector::Constant(30, 1.0 / 30);
  EXPECT_NEAR(mmd2_vs_samples(y, w, y, 0.7), 0.0, 1e-14);
  const ParticleMatrix x = random_config(300, 2, 5, 1.3);
  const ParticleMatrix xr = x.colwise().reverse();
  EXPECT_NEAR(mmd2_vs_samples(y, w, x, 0.7), mmd2_vs_samples(y, w, xr, 0.7), 1e-14);
}

TEST(MmdVsSamples, MatchesNaiveOracle) {
  constexpr int n = 1100;  // three partial tiles per side
  const ParticleMatrix x = random_config(n, 2, 6, 1.0);
  const ParticleMatrix y = random_config(5, 2, 7, 1.0);
  const Vector w = Vector::LinSpaced(5, -0.2, 0.6);
  auto k = [](const auto& a, const auto& b) { return std::exp(-0.5 * (a - b).squaredNorm() / 0.36); };
  Vector row(n), cross(n);
  for (int a = 0; a < n; ++a) {
    row(a) = 0.0;
    cross(a) = 0.0;
    for (int b = 0; b < n; ++b) row(a) += k(x.row(a), x.row(b));
    for (int i = 0; i < 5; ++i) cross(a) += w(i) * k(x.row(a), y.row(i));
  }
  double yy = 0;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) yy += w(i) * w(j) * k(y.row(i), y.row(j));
  const double want = row.sum() / (double(n) * n) - 2 * cross.sum() / n + yy;
  const SampleMmd got = mmd2_vs_samples_detailed(y, w, x, 0.6);
  EXPECT_NEAR(got.value, want, 1e-12);
  const Vector influence = 2.0 * row / n - 2.0 * cross;
  EXPECT_LE((got.influence - influence).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(MmdVsSamples, AgreesWithAnalyticWithinBootstrapError) {
  const TargetDensity t = make_benchmark("gmm5-aniso-2d", 2, 0);
  const ParticleMatrix x = t.sampler(20000, 9);
  const ParticleMatrix y = t.analytic->means();
  const Vector w = Vector::Constant(5, 0.2);
  const SampleMmd s = mmd2_vs_samples_detailed(y, w, x, 0.5);
  const double se = bootstrap_standard_error(s.influence, 200, 1);
  EXPECT_LE(std::abs(s.value - mmd2_vs_gmm(y, w, *t.analytic, 0.5)), 3 * se);
}

TEST(Bootstrap, ConstantTermsHaveZeroError) {
  EXPECT_EQ(bootstrap_standard_error(Vector::Constant(50, 2.0), 20, 0), 0.0);
  Vector z(1000);
  Rng rng(1);
  fill_standard_normal(z, rng);
  EXPECT_NEAR(bootstrap_standard_error(z, 400, 2), 1.0 / std::sqrt(1000.0), 0.2 / std::sqrt(1000.0));
}

TEST(Imq, DerivativesMatchFiniteDifferences) {
  KsdParams p;
  p.bandwidth = 0.8;
  p.beta_imq = -0.5;
  Rng rng(2);
  for (int s = 0; s < 10; ++s) {
    Vector x(3), y(3);
    fill_standard_normal(x, rng);
    fill_standard_normal(y, rng);
    const ImqTerms t = imq_terms(x, y, p);
    const Vector gx = oracle::fd_gradient([&](const Vector& z) { return imq_terms(z, y, p).k; }, x);
    const Vector gy = oracle::fd_gradient([&](const Vector& z) { return imq_terms(x, z, p).k; }, y);
    EXPECT_LE((t.grad_x - gx).norm(), 1e-6);
    EXPECT_LE((t.grad_y - gy).norm(), 1e-6);
    double tr = 0;
    for (int j = 0; j < 3; ++j) {
      const auto gyj = [&](const Vector& z) { return imq_terms(z, y, p).grad_y(j); };
      tr += oracle::fd_gradient(gyj, x)(j);
    }
    EXPECT_NEAR(t.trace_xy, tr, 1e-6);
  }
}

TEST(SteinKernel, SymmetricAndPsd) {
  const TargetDensity t = make_benchmark("gmm5-aniso-2d", 2, 0);
  KsdParams p;
  p.bandwidth = 0.5;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const ParticleMatrix y = random_config(15, 2, 20 + s, 5.0);
    ParticleMatrix sc(15, 2);
    for (int i = 0; i < 15; ++i) sc.row(i) = t.score(y.row(i).transpose()).transpose();
    const Matrix k0 = stein_kernel_matrix(y, sc, p);
    EXPECT_EQ(stein_kernel(y.row(0).transpose(), y.row(1).transpose(), sc.row(0).transpose(), sc.row(1).transpose(), p),
              stein_kernel(y.row(1).transpose(), y.row(0).transpose(), sc.row(1).transpose(), sc.row(0).transpose(), p));
    Eigen::SelfAdjointEigenSolver<Matrix> eig(k0, Eigen::EigenvaluesOnly);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10 * std::max(1.0, eig.eigenvalues().maxCoeff()));
  }
}

TEST(Ksd, ScaleInvariantInWeights) {
  const TargetDensity t = make_benchmark("gmm5-aniso-2d", 2, 0);
  const ParticleMatrix y = random_config(10, 2, 30, 5.0);
  const Vector w = Vector::LinSpaced(10, 0.1, 1.0);
  const auto score = [&](ConstVectorRef x) { return t.score(x); };
  KsdParams p;
  EXPECT_NEAR(ksd_squared(y, 5 * w, score, p), ksd_squared(y, w, score, p), 1e-13);
  EXPECT_GE(ksd(y, w, score, p), 0.0);
  p.scale = 2;
  EXPECT_NEAR(ksd(y, w, score, p), 2 * std::sqrt(std::max(0.0, ksd_squared(y, w, score, p))), 1e-15);
}

TEST(Ksd, RejectsBadParams) {
  KsdParams p;
  p.beta_imq = -1.5;
  EXPECT_THROW(p.validate(), Error);
  p.beta_imq = -0.5;
  p.c2 = 0;
  EXPECT_THROW(p.validate(), Error);
}

TEST(WeightedLoglik, Examples) {
  TargetDensity flat;
  flat.name = "flat";
  flat.dim = 1;
  flat.log_density_fn = [](ConstVectorRef) { return 0.0; };
  EXPECT_EQ(weighted_loglik(ParticleMatrix::Zero(1, 1), Vector::Ones(1), flat), 0.0);
  flat.log_density_fn = [](ConstVectorRef) { return -1.0; };
  EXPECT_EQ(weighted_loglik(ParticleMatrix::Zero(2, 1), Eigen::Vector2d(0.5, 0.5), flat), 1.0);
  const TargetDensity t = make_benchmark("himmelblau", 2, 0);
  const ParticleMatrix y = random_config(4, 2, 1, 2.0);
  const Vector w = Vector::Constant(4, 0.25);
  EXPECT_NEAR(weighted_loglik(y, w, t.with_log_scale_offset(std::log(5.0))),
              weighted_loglik(y, w, t) - std::log(5.0), 1e-12);
}

TEST(ModeCoverage, Examples) {
  const TargetDensity t = make_benchmark("gmm5-aniso-2d", 2, 0);
  const ParticleMatrix modes = t.analytic->means();
  EXPECT_EQ(mode_coverage(modes, Vector::Ones(5), modes, 0.5).covered, 5);
  ParticleMatrix one(4, 2);
  one.rowwise() = modes.row(2);
  const Coverage c = mode_coverage(one, Vector::Ones(4), modes, 0.5);
  EXPECT_EQ(c.covered, 1);
  EXPECT_TRUE(c.per_mode[2]);
  // Negligible weight does not count.
  Vector w = Vector::Ones(5);
  w(3) = 1e-6;
  EXPECT_EQ(mode_coverage(modes, w, modes, 0.5).covered, 4);
}

TEST(MmdVsSamples, CachedReferenceMatchesDirect) {
  const ParticleMatrix x = random_config(700, 2, 40, 1.0);
  const SampleReference ref(x, 0.5);
  for (std::uint64_t s = 0; s < 3; ++s) {
    const ParticleMatrix y = random_config(6, 2, 41 + s, 1.0);
    const Vector w = Vector::LinSpaced(6, 0.3, -0.1);
    EXPECT_NEAR(ref.mmd2(y, w), mmd2_vs_samples(y, w, x, 0.5), 1e-13);
  }
}
