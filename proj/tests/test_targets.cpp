#include <gtest/gtest.h>

#include <cmath>

#include "msip/targets.hpp"
#include "oracles.hpp"

using namespace msip;

namespace {

GmmTarget standard_normal_1d() {
  return GmmTarget(Vector::Ones(1), ParticleMatrix::Zero(1, 1), {Matrix::Identity(1, 1)});
}

GmmTarget random_mixture(int k, int d, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.2, 1.0);
  Vector w(k);
  ParticleMatrix mu(k, d);
  fill_standard_normal(mu, rng);
  mu *= 2.0;
  std::vector<Matrix> covs;
  for (int c = 0; c < k; ++c) {
    w(c) = u(rng);
    Matrix a(d, d);
    fill_standard_normal(a, rng);
    covs.push_back(0.3 * a * a.transpose() + 0.2 * Matrix::Identity(d, d));
  }
  return GmmTarget(w, mu, covs);
}

Vector probe(int d, Rng& rng, double scale = 1.5) {
  Vector x(d);
  fill_standard_normal(x, rng);
  return scale * x;
}

}  // namespace

TEST(GmmLogDensity, StandardNormalAtMode) {
  EXPECT_NEAR(gmm_log_density(standard_normal_1d(), Vector::Zero(1)), -0.9189385332, 1e-9);
}

TEST(GmmLogDensity, SymmetricPairAtCenter) {
  const double a = 1.3;
  ParticleMatrix mu(2, 1);
  mu << a, -a;
  const GmmTarget t(Vector::Constant(2, 0.5), mu, {Matrix::Identity(1, 1), Matrix::Identity(1, 1)});
  EXPECT_NEAR(gmm_log_density(t, Vector::Zero(1)), std::log(oracle::normal_pdf(a, 0, 1)), 1e-14);
  EXPECT_NEAR(gmm_score(t, Vector::Zero(1))(0), 0.0, 1e-15);
}

TEST(GmmLogDensity, MatchesNaiveSummation) {
  const GmmTarget t = random_mixture(2, 2, 7);
  Rng rng(1);
  for (int s = 0; s < 20; ++s) {
    const Vector x = probe(2, rng);
    double p = 0.0;
    for (int c = 0; c < 2; ++c)
      p += t.weights()(c) * oracle::mvn_pdf(x, t.means().row(c).transpose(), t.covariances()[c]);
    EXPECT_NEAR(gmm_log_density(t, x), std::log(p), 1e-12 * std::abs(std::log(p)) + 1e-13);
  }
}

TEST(GmmLogDensity, NoOverflowFarAway) {
  const GmmTarget t = random_mixture(3, 2, 3);
  Vector x(2);
  x << 1e3, -1e3;
  EXPECT_TRUE(std::isfinite(gmm_log_density(t, x)));
  EXPECT_TRUE(gmm_score(t, x).allFinite());
}

TEST(GmmScore, StandardGaussianIsMinusX) {
  const GmmTarget t(Vector::Ones(1), ParticleMatrix::Zero(1, 3), {Matrix::Identity(3, 3)});
  Vector x(3);
  x << 0.5, -2.0, 3.0;
  EXPECT_LT((gmm_score(t, x) + x).norm(), 1e-15);
}

TEST(GmmScore, MatchesFiniteDifferences) {
  const GmmTarget t = random_mixture(3, 3, 11);
  Rng rng(2);
  for (int s = 0; s < 20; ++s) {
    const Vector x = probe(3, rng);
    const Vector fd = oracle::fd_gradient([&](const Vector& z) { return t.log_density(z); }, x);
    const Vector g = gmm_score(t, x);
    EXPECT_LE((g - fd).norm(), 1e-6 * std::max(1.0, g.norm()));
  }
}

TEST(GmmV0, QuadratureOracleOneOverSqrtTwo) {
  const double quad = oracle::simpson(
      [](double x) { return std::exp(-0.5 * x * x) * oracle::normal_pdf(x, 0, 1); }, -12, 12);
  const double v0 = gmm_v0(standard_normal_1d(), Vector::Zero(1), 1.0);
  EXPECT_NEAR(v0, quad, 1e-10);
  EXPECT_NEAR(v0, 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(GmmV0, LinearInWeights) {
  const GmmTarget t = random_mixture(2, 2, 5);
  Vector y(2);
  y << 0.4, -0.1;
  EXPECT_NEAR(gmm_v0(t.rescaled(3.5), y, 0.6), 3.5 * gmm_v0(t, y, 0.6), 1e-14);
}

TEST(GmmV0, MonteCarloOracle) {
  const GmmTarget t = random_mixture(2, 2, 6).normalized();
  const double sigma = 0.8;
  Rng rng(42);
  const ParticleMatrix x = t.sample(1000000, rng);
  for (int s = 0; s < 3; ++s) {
    const Vector y = probe(2, rng, 1.0);
    const Vector k = (-(x.rowwise() - y.transpose()).rowwise().squaredNorm() / (2 * sigma * sigma))
                         .array()
                         .exp();
    const double mean = k.mean();
    const double se = std::sqrt((k.array() - mean).square().sum() / (k.size() - 1) / k.size());
    EXPECT_LE(std::abs(gmm_v0(t, y, sigma) - mean), 3.0 * se);
  }
}

TEST(GmmGradLogV0, SingleGaussian) {
  Vector y = Vector::Constant(1, 2.0);
  EXPECT_NEAR(gmm_grad_log_v0(standard_normal_1d(), y, 1.0)(0), -1.0, 1e-15);
}

TEST(GmmGradLogV0, ScaleInvariantAndMatchesFd) {
  const GmmTarget t = random_mixture(3, 2, 8);
  const double sigma = 0.5;
  Rng rng(3);
  for (int s = 0; s < 10; ++s) {
    const Vector y = probe(2, rng);
    const Vector g = gmm_grad_log_v0(t, y, sigma);
    EXPECT_LT((gmm_grad_log_v0(t.rescaled(1e-5), y, sigma) - g).norm(), 1e-12 * (1 + g.norm()));
    const Vector fd = oracle::fd_gradient(
        [&](const Vector& z) { return std::log(gmm_v0(t, z, sigma)); }, y);
    EXPECT_LE((g - fd).norm(), 1e-6 * std::max(1.0, g.norm()));
  }
}

TEST(GmmGradLogV0, MeanShiftIdentityByMonteCarlo) {
  // sigma^2 grad log v0(y) = v1(y)/v0(y) - y, v1 = int x k(x, y) pi(x) dx.
  const GmmTarget t = random_mixture(2, 2, 9).normalized();
  const double sigma = 0.7;
  Rng rng(77);
  const ParticleMatrix x = t.sample(400000, rng);
  const Vector y = probe(2, rng, 0.8);
  const Vector k = (-(x.rowwise() - y.transpose()).rowwise().squaredNorm() / (2 * sigma * sigma))
                       .array()
                       .exp();
  // Ratio estimator with a delta-method standard error per coordinate.
  const double s0 = k.mean();
  for (int j = 0; j < 2; ++j) {
    const Vector f = k.cwiseProduct(x.col(j));
    const double r = f.mean() / s0;
    const Vector lin = (f - r * k) / s0;
    const double se = std::sqrt(lin.squaredNorm() / (lin.size() - 1) / lin.size());
    const double want = y(j) + sigma * sigma * gmm_grad_log_v0(t, y, sigma)(j);
    EXPECT_LE(std::abs(r - want), 3.0 * se) << "coordinate " << j;
  }
}

TEST(TargetDensity, OffsetShiftsLogDensityOnly) {
  const TargetDensity t = make_benchmark("gmm5-aniso-2d", 2, 0);
  const TargetDensity s = t.with_log_scale_offset(std::log(7.0));
  Vector x(2);
  x << 1.0, 2.0;
  EXPECT_NEAR(s.log_density(x) - t.log_density(x), std::log(7.0), 1e-14);
  EXPECT_EQ(s.score(x), t.score(x));
  EXPECT_EQ(s.analytic->responsibilities(x), t.analytic->responsibilities(x));
}

TEST(Benchmarks, HimmelblauGlobalMode) {
  const TargetDensity t = make_benchmark("himmelblau", 2, 0);
  Vector x(2);
  x << 3.0, 2.0;
  EXPECT_EQ(t.log_density(x), 0.0);
  for (Eigen::Index k = 0; k < t.modes->rows(); ++k)
    EXPECT_LT(t.score(t.modes->row(k).transpose()).norm(), 1e-3);
}

TEST(Benchmarks, FunnelScoreAtOrigin) {
  const TargetDensity t = make_benchmark("funnel", 2, 0);
  const Vector g = t.score(Vector::Zero(2));
  EXPECT_NEAR(g(0), -0.5, 1e-15);
  EXPECT_EQ(g(1), 0.0);
  const Vector fd = oracle::fd_gradient([&](const Vector& z) { return t.log_density(z); },
                                        Vector(Vector::Zero(2)));
  EXPECT_NEAR(fd(0), -0.5, 1e-8);
}

TEST(Benchmarks, GmmSeededAndInRange) {
  const TargetDensity a = make_benchmark("gmm", 2, 0);
  const TargetDensity b = make_benchmark("gmm", 2, 0);
  const TargetDensity c = make_benchmark("gmm", 2, 1);
  EXPECT_EQ(a.analytic->means(), b.analytic->means());
  EXPECT_NE(a.analytic->means(), c.analytic->means());
  EXPECT_EQ(a.analytic->components(), 5);
  EXPECT_TRUE((a.analytic->means().array() >= 0.0).all());
  EXPECT_TRUE((a.analytic->means().array() <= 7.5).all());
  EXPECT_EQ(a.analytic->covariances()[0], 0.5 * Matrix::Identity(2, 2));
}

TEST(Benchmarks, AnisoFixtureGeometry) {
  const GmmTarget t = *make_benchmark("gmm5-aniso-2d", 2, 0).analytic;
  ASSERT_EQ(t.components(), 5);
  for (int k = 0; k < 5; ++k) {
    const double ang = (90.0 + 72.0 * k) * M_PI / 180.0;
    EXPECT_NEAR(t.means()(k, 0), 8 * std::cos(ang), 1e-12);
    EXPECT_NEAR(t.means()(k, 1), 8 * std::sin(ang), 1e-12);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(t.covariances()[k]);
    EXPECT_NEAR(eig.eigenvalues()(0), 0.12, 1e-12);
    EXPECT_NEAR(eig.eigenvalues()(1), 1.2, 1e-12);
  }
  EXPECT_NEAR(t.largest_std(), std::sqrt(1.2), 1e-12);
}

TEST(Benchmarks, ScoresMatchFiniteDifferences) {
  for (const auto& [name, dim] : std::vector<std::pair<std::string, int>>{
           {"gmm", 3}, {"gmm5-aniso-2d", 2}, {"funnel", 4}, {"himmelblau", 2}}) {
    const TargetDensity t = make_benchmark(name, dim, 3);
    Rng rng(5);
    for (int s = 0; s < 20; ++s) {
      const Vector x = probe(dim, rng, 1.0);
      const Vector g = t.score(x);
      const Vector fd = oracle::fd_gradient([&](const Vector& z) { return t.log_density(z); }, x);
      EXPECT_LE((g - fd).norm(), 1e-5 * std::max(1.0, g.norm())) << name;
    }
  }
}

TEST(Benchmarks, ErrorsAreConfigErrors) {
  for (auto call : {+[] { make_benchmark("joker", 2, 0); }, +[] { make_benchmark("himmelblau", 3, 0); },
                    +[] { make_benchmark("gmm5-aniso-2d", 5, 0); }}) {
    try {
      call();
      FAIL();
    } catch (const Error& e) {
      EXPECT_TRUE(e.is_config_error());
    }
  }
}

TEST(Samplers, GmmSampleMomentsAndDeterminism) {
  const TargetDensity t = make_benchmark("gmm5-aniso-2d", 2, 0);
  const ParticleMatrix a = t.sampler(50000, 3), b = t.sampler(50000, 3);
  EXPECT_EQ(a, b);
  const Vector mean = a.colwise().mean().transpose();
  const Vector want = t.analytic->means().colwise().mean().transpose();
  EXPECT_LT((mean - want).norm(), 0.15);
}
