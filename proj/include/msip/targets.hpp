#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "msip/error.hpp"
#include "msip/kernel.hpp"
#include "msip/rng.hpp"

namespace msip {

inline double log_sum_exp(const Vector& a) {
  const double m = a.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((a.array() - m).exp().sum());
}

/// Gaussian mixture sum_k m_k N(x; mu_k, Sigma_k). Weights need not sum to
/// one; every density is evaluated through per-component Cholesky whitening
/// and log-sum-exp.
class GmmTarget {
 public:
  GmmTarget(Vector weights, ParticleMatrix means, std::vector<Matrix> covariances)
      : weights_(std::move(weights)), means_(std::move(means)), covs_(std::move(covariances)) {
    const auto k = weights_.size();
    require(k >= 1, "GmmTarget: need at least one component");
    require(means_.rows() == k && static_cast<Eigen::Index>(covs_.size()) == k,
            "GmmTarget: component counts disagree", ErrorCode::dimension_mismatch);
    const auto d = means_.cols();
    require(d >= 1, "GmmTarget: dimension must be positive");
    chol_.reserve(k);
    log_norm_.resize(k);
    for (Eigen::Index c = 0; c < k; ++c) {
      require(weights_(c) > 0.0 && std::isfinite(weights_(c)),
              "GmmTarget: mixture weights must be positive");
      require(covs_[c].rows() == d && covs_[c].cols() == d,
              "GmmTarget: covariance shape mismatch", ErrorCode::dimension_mismatch);
      Eigen::LLT<Matrix> llt(covs_[c]);
      require(llt.info() == Eigen::Success,
              "GmmTarget: covariance " + std::to_string(c) + " is not positive definite");
      Matrix l = llt.matrixL();
      log_norm_(c) = -0.5 * d * std::log(2.0 * std::numbers::pi) -
                     l.diagonal().array().log().sum();
      chol_.push_back(std::move(l));
    }
  }

  int dim() const noexcept { return static_cast<int>(means_.cols()); }
  int components() const noexcept { return static_cast<int>(weights_.size()); }
  const Vector& weights() const noexcept { return weights_; }
  const ParticleMatrix& means() const noexcept { return means_; }
  const std::vector<Matrix>& covariances() const noexcept { return covs_; }
  const Matrix& cholesky_factor(int k) const { return chol_.at(k); }
  double total_mass() const { return weights_.sum(); }

  /// Per-component log(m_k N(x; mu_k, Sigma_k)); `whitened` receives the
  /// columns z_k = L_k^{-1}(x - mu_k) when non-null.
  Vector component_log_terms(ConstVectorRef x, Matrix* whitened = nullptr) const {
    check_dim(x);
    const int k = components();
    Vector out(k);
    if (whitened) whitened->resize(dim(), k);
    for (int c = 0; c < k; ++c) {
      Vector z = x - means_.row(c).transpose();
      chol_[c].triangularView<Eigen::Lower>().solveInPlace(z);
      out(c) = std::log(weights_(c)) + log_norm_(c) - 0.5 * z.squaredNorm();
      if (whitened) whitened->col(c) = z;
    }
    return out;
  }

  double log_density(ConstVectorRef x) const { return log_sum_exp(component_log_terms(x)); }

  Vector responsibilities(ConstVectorRef x) const {
    const Vector a = component_log_terms(x);
    return (a.array() - log_sum_exp(a)).exp();
  }

  /// -sum_k r_k(x) Sigma_k^{-1}(x - mu_k), with Sigma_k^{-1}(x - mu_k) = L_k^{-T} z_k.
  Vector score(ConstVectorRef x) const {
    Matrix z;
    const Vector a = component_log_terms(x, &z);
    const Vector r = (a.array() - log_sum_exp(a)).exp();
    Vector g = Vector::Zero(dim());
    for (int c = 0; c < components(); ++c) {
      Vector t = z.col(c);
      chol_[c].transpose().triangularView<Eigen::Upper>().solveInPlace(t);
      g -= r(c) * t;
    }
    return g;
  }

  /// Same mixture with every covariance widened by sigma^2 I.
  GmmTarget smoothed(double sigma) const {
    std::vector<Matrix> covs = covs_;
    for (auto& c : covs) c.diagonal().array() += sigma * sigma;
    return GmmTarget(weights_, means_, std::move(covs));
  }

  GmmTarget rescaled(double factor) const {
    require(factor > 0.0, "GmmTarget::rescaled: factor must be positive");
    return GmmTarget(weights_ * factor, means_, covs_);
  }

  GmmTarget normalized() const { return rescaled(1.0 / total_mass()); }

  /// Exact draws from the normalized mixture.
  ParticleMatrix sample(Eigen::Index n, Rng& rng) const {
    std::discrete_distribution<int> pick(weights_.data(), weights_.data() + weights_.size());
    std::normal_distribution<double> normal(0.0, 1.0);
    ParticleMatrix out(n, dim());
    Vector z(dim());
    for (Eigen::Index i = 0; i < n; ++i) {
      const int c = pick(rng);
      for (int j = 0; j < dim(); ++j) z(j) = normal(rng);
      out.row(i) = (means_.row(c).transpose() + chol_[c] * z).transpose();
    }
    return out;
  }

  /// Largest principal standard deviation over all components.
  double largest_std() const {
    double s = 0.0;
    for (const auto& c : covs_) {
      Eigen::SelfAdjointEigenSolver<Matrix> eig(c, Eigen::EigenvaluesOnly);
      s = std::max(s, eig.eigenvalues().maxCoeff());
    }
    return std::sqrt(s);
  }

 private:
  void check_dim(ConstVectorRef x) const {
    if (x.size() != dim())
      throw Error(ErrorCode::dimension_mismatch, "GmmTarget: dimension mismatch");
  }

  Vector weights_;
  ParticleMatrix means_;
  std::vector<Matrix> covs_;
  std::vector<Matrix> chol_;
  Vector log_norm_;
};

inline double gmm_log_density(const GmmTarget& t, ConstVectorRef x) { return t.log_density(x); }
inline Vector gmm_score(const GmmTarget& t, ConstVectorRef x) { return t.score(x); }

/// Closed-form kernel embeddings of a mixture: v0(y) = Z_sigma sum_k m_k
/// N(y; mu_k, Sigma_k + sigma^2 I) with Z_sigma = (2 pi sigma^2)^{d/2}, and
/// v1 = v0 (y + sigma^2 grad log v0). Built once per bandwidth.
class GmmEmbedding {
 public:
  GmmEmbedding(const GmmTarget& target, double sigma)
      : smoothed_(target.smoothed(sigma)),
        sigma_(sigma),
        log_z_(0.5 * target.dim() * std::log(2.0 * std::numbers::pi * sigma * sigma)) {}

  double sigma() const noexcept { return sigma_; }
  const GmmTarget& smoothed() const noexcept { return smoothed_; }

  double log_v0(ConstVectorRef y) const { return log_z_ + smoothed_.log_density(y); }
  double v0(ConstVectorRef y) const { return std::exp(log_v0(y)); }
  Vector grad_log_v0(ConstVectorRef y) const { return smoothed_.score(y); }
  /// v1(y) / v0(y).
  Vector mean_shift(ConstVectorRef y) const {
    return y + sigma_ * sigma_ * grad_log_v0(y);
  }

 private:
  GmmTarget smoothed_;
  double sigma_;
  double log_z_;
};

inline double gmm_v0(const GmmTarget& t, ConstVectorRef y, double sigma) {
  return GmmEmbedding(t, sigma).v0(y);
}

inline Vector gmm_grad_log_v0(const GmmTarget& t, ConstVectorRef y, double sigma) {
  return GmmEmbedding(t, sigma).grad_log_v0(y);
}

/// Unnormalized target log pi~ with optional score, exact sampler and analytic
/// mixture form. log_scale_offset models an unknown normalizing constant.
struct TargetDensity {
  using LogDensityFn = std::function<double(ConstVectorRef)>;
  using ScoreFn = std::function<Vector(ConstVectorRef)>;
  using SamplerFn = std::function<ParticleMatrix(Eigen::Index, std::uint64_t)>;

  std::string name;
  int dim = 0;
  LogDensityFn log_density_fn;
  ScoreFn score_fn;
  SamplerFn sampler;
  std::shared_ptr<const GmmTarget> analytic;
  std::optional<ParticleMatrix> modes;
  double log_scale_offset = 0.0;

  double log_density(ConstVectorRef x) const {
    if (x.size() != dim)
      throw Error(ErrorCode::dimension_mismatch, name + ": dimension mismatch");
    return log_density_fn(x) + log_scale_offset;
  }

  bool has_score() const noexcept { return static_cast<bool>(score_fn); }

  Vector score(ConstVectorRef x) const {
    if (!score_fn)
      throw Error(ErrorCode::estimator_unavailable, name + ": target has no score");
    if (x.size() != dim)
      throw Error(ErrorCode::dimension_mismatch, name + ": dimension mismatch");
    return score_fn(x);
  }

  TargetDensity with_log_scale_offset(double offset) const {
    TargetDensity t = *this;
    t.log_scale_offset = offset;
    return t;
  }

  const GmmTarget& require_analytic() const {
    if (!analytic)
      throw Error(ErrorCode::analytic_unavailable,
                  name + ": analytic kernel embeddings need a Gaussian mixture target");
    return *analytic;
  }
};

inline TargetDensity make_gmm_density(GmmTarget gmm, std::string name = "gmm") {
  auto g = std::make_shared<const GmmTarget>(std::move(gmm));
  TargetDensity t;
  t.name = std::move(name);
  t.dim = g->dim();
  t.log_density_fn = [g](ConstVectorRef x) { return g->log_density(x); };
  t.score_fn = [g](ConstVectorRef x) { return g->score(x); };
  t.sampler = [g](Eigen::Index n, std::uint64_t seed) {
    Rng rng(seed);
    return g->normalized().sample(n, rng);
  };
  t.modes = g->means();
  t.analytic = g;
  return t;
}

/// Optional replacements for fixture parameters.
struct FixtureOverrides {
  std::optional<Vector> weights;
  std::optional<ParticleMatrix> means;
  std::optional<std::vector<Matrix>> covariances;
  std::optional<double> funnel_variance;
};

namespace fixtures {

/// Five components N(mu_k, 0.5 I) with means iid Uniform([0, 7.5]^d).
inline GmmTarget gmm(int dim, std::uint64_t seed) {
  require(dim >= 1, "gmm fixture: dimension must be positive");
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 7.5);
  ParticleMatrix means(5, dim);
  for (int k = 0; k < 5; ++k)
    for (int j = 0; j < dim; ++j) means(k, j) = unif(rng);
  std::vector<Matrix> covs(5, 0.5 * Matrix::Identity(dim, dim));
  return GmmTarget(Vector::Constant(5, 0.2), std::move(means), std::move(covs));
}

/// Five anisotropic components on a circle of radius 8: means at angles
/// 90 + 72k degrees, covariances R(72k) diag(1.2, 0.12) R(72k)^T.
inline GmmTarget gmm5_aniso_2d() {
  ParticleMatrix means(5, 2);
  std::vector<Matrix> covs;
  const double deg = std::numbers::pi / 180.0;
  for (int k = 0; k < 5; ++k) {
    const double phi = (90.0 + 72.0 * k) * deg;
    means(k, 0) = 8.0 * std::cos(phi);
    means(k, 1) = 8.0 * std::sin(phi);
    const double th = 72.0 * k * deg;
    Matrix r(2, 2);
    r << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);
    Matrix c = r * Eigen::Vector2d(1.2, 0.12).asDiagonal() * r.transpose();
    c = 0.5 * (c + c.transpose());
    covs.push_back(c);
  }
  return GmmTarget(Vector::Constant(5, 0.2), std::move(means), std::move(covs));
}

/// Neal's funnel: x1 ~ N(0, v), x_j | x1 ~ N(0, e^{x1}) for j >= 2.
inline TargetDensity funnel(int dim, double x1_variance = 9.0) {
  require(dim >= 2, "funnel fixture: dimension must be at least 2");
  require(x1_variance > 0.0, "funnel fixture: variance must be positive");
  const double log2pi = std::log(2.0 * std::numbers::pi);
  TargetDensity t;
  t.name = "funnel";
  t.dim = dim;
  t.log_density_fn = [=](ConstVectorRef x) {
    const double x1 = x(0);
    const double tail = x.tail(dim - 1).squaredNorm();
    return -0.5 * x1 * x1 / x1_variance - 0.5 * (log2pi + std::log(x1_variance)) -
           0.5 * tail * std::exp(-x1) - 0.5 * (dim - 1) * (x1 + log2pi);
  };
  t.score_fn = [=](ConstVectorRef x) {
    const double x1 = x(0);
    const double e = std::exp(-x1);
    Vector g(dim);
    g(0) = -x1 / x1_variance + 0.5 * x.tail(dim - 1).squaredNorm() * e - 0.5 * (dim - 1);
    g.tail(dim - 1) = -e * x.tail(dim - 1);
    return g;
  };
  t.sampler = [=](Eigen::Index n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ParticleMatrix out(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double x1 = std::sqrt(x1_variance) * normal(rng);
      out(i, 0) = x1;
      const double s = std::exp(0.5 * x1);
      for (int j = 1; j < dim; ++j) out(i, j) = s * normal(rng);
    }
    return out;
  };
  return t;
}

inline double himmelblau_log_density(double x1, double x2) {
  const double a = x1 * x1 + x2 - 11.0;
  const double b = x1 + x2 * x2 - 7.0;
  return -a * a - b * b;
}

/// pi(x) ~ exp(-(x1^2 + x2 - 11)^2 - (x1 + x2^2 - 7)^2). The reference
/// sampler resamples a 1000 x 1000 grid on [-6, 6]^2 by density and jitters
/// uniformly within the cell.
inline TargetDensity himmelblau() {
  TargetDensity t;
  t.name = "himmelblau";
  t.dim = 2;
  t.log_density_fn = [](ConstVectorRef x) { return himmelblau_log_density(x(0), x(1)); };
  t.score_fn = [](ConstVectorRef x) {
    const double a = x(0) * x(0) + x(1) - 11.0;
    const double b = x(0) + x(1) * x(1) - 7.0;
    Vector g(2);
    g(0) = -4.0 * a * x(0) - 2.0 * b;
    g(1) = -2.0 * a - 4.0 * b * x(1);
    return g;
  };
  t.sampler = [](Eigen::Index n, std::uint64_t seed) {
    constexpr int cells = 1000;
    constexpr double lo = -6.0, hi = 6.0, h = (hi - lo) / cells;
    std::vector<double> mass(static_cast<std::size_t>(cells) * cells);
    for (int i = 0; i < cells; ++i)
      for (int j = 0; j < cells; ++j)
        mass[static_cast<std::size_t>(i) * cells + j] =
            std::exp(himmelblau_log_density(lo + (i + 0.5) * h, lo + (j + 0.5) * h));
    Rng rng(seed);
    std::discrete_distribution<std::size_t> pick(mass.begin(), mass.end());
    std::uniform_real_distribution<double> jitter(0.0, h);
    ParticleMatrix out(n, 2);
    for (Eigen::Index s = 0; s < n; ++s) {
      const std::size_t c = pick(rng);
      out(s, 0) = lo + static_cast<double>(c / cells) * h + jitter(rng);
      out(s, 1) = lo + static_cast<double>(c % cells) * h + jitter(rng);
    }
    return out;
  };
  ParticleMatrix modes(4, 2);
  modes << 3.0, 2.0, -2.805118, 3.131312, -3.779310, -3.283186, 3.584428, -1.848126;
  t.modes = modes;
  return t;
}

}  // namespace fixtures

inline const std::vector<std::string>& benchmark_names() {
  static const std::vector<std::string> names{"gmm", "gmm5-aniso-2d", "funnel", "himmelblau"};
  return names;
}

inline GmmTarget apply_overrides(const GmmTarget& base, const FixtureOverrides& o) {
  if (!o.weights && !o.means && !o.covariances) return base;
  return GmmTarget(o.weights.value_or(base.weights()), o.means.value_or(base.means()),
                   o.covariances.value_or(base.covariances()));
}

inline TargetDensity make_benchmark(const std::string& name, int dim, std::uint64_t seed,
                                    const FixtureOverrides& overrides = {}) {
  if (name == "gmm") return make_gmm_density(apply_overrides(fixtures::gmm(dim, seed), overrides), name);
  if (name == "gmm5-aniso-2d") {
    require(dim == 2, "gmm5-aniso-2d is two-dimensional", ErrorCode::config);
    return make_gmm_density(apply_overrides(fixtures::gmm5_aniso_2d(), overrides), name);
  }
  if (name == "funnel") return fixtures::funnel(dim, overrides.funnel_variance.value_or(9.0));
  if (name == "himmelblau") {
    require(dim == 2, "himmelblau is two-dimensional", ErrorCode::config);
    return fixtures::himmelblau();
  }
  throw Error(ErrorCode::config, "unknown target '" + name + "'");
}

}  // namespace msip
