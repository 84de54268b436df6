#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msip/error.hpp"
#include "msip/kernel.hpp"
#include "msip/msip.hpp"
#include "msip/targets.hpp"

namespace msip {

/// w / sum(w); signs are preserved.
inline Vector normalize_weights(const Vector& w) {
  const double s = w.sum();
  if (!(std::abs(s) >= 1e-12))
    throw Error(ErrorCode::non_normalizable, "weights sum to (nearly) zero; cannot normalize");
  return w / s;
}

/// MMD^2 between the normalized mixture and sum_i w_i delta_{y_i}:
/// C_pi - 2 <w, v0(Y)> + w^T K(Y) w, clamped at zero.
inline double mmd2_vs_gmm(const ParticleMatrix& y, const Vector& w, const GmmTarget& target,
                          double sigma) {
  const GmmTarget t = target.normalized();
  Vector v0;
  ParticleMatrix v1;
  analytic_v0_v1(t, y, sigma, v0, v1);
  const Matrix k = gram(y, {sigma, 0.0}).entries();
  const double val = gmm_self_energy(t, sigma) - 2.0 * w.dot(v0) + w.dot(k * w);
  return std::max(0.0, val);
}

/// V-statistic MMD^2 against reference samples, with the per-sample
/// first-order terms needed for a bootstrap standard error.
struct SampleMmd {
  double value = 0.0;
  /// h_n = 2 mean_m k(x_n, x_m) - 2 sum_i w_i k(x_n, y_i); the estimator is
  /// linear in their mean to first order.
  Vector influence;
};

inline SampleMmd mmd2_vs_samples_detailed(const ParticleMatrix& y, const Vector& w,
                                          const ParticleMatrix& x, double sigma) {
  require(x.rows() >= 1, "mmd2_vs_samples: need at least one reference sample");
  if (x.cols() != y.cols())
    throw Error(ErrorCode::dimension_mismatch, "mmd2_vs_samples: dimension mismatch");
  const Eigen::Index n = x.rows();
  const double scale = -0.5 / (sigma * sigma);
  // Row sums of K(X, X) over square tiles on and above the diagonal, using
  // vectorized exp. Off-diagonal tiles count for both their rows and columns.
  Vector row_sum = Vector::Zero(n);
  constexpr Eigen::Index block = 512;
  const Eigen::ArrayXd norms = x.rowwise().squaredNorm().array();
  Eigen::ArrayXXd tile;
  for (Eigen::Index b0 = 0; b0 < n; b0 += block) {
    const Eigen::Index nb = std::min(block, n - b0);
    for (Eigen::Index c0 = b0; c0 < n; c0 += block) {
      const Eigen::Index nc = std::min(block, n - c0);
      tile = (x.middleRows(b0, nb) * x.middleRows(c0, nc).transpose()).array();
      tile = ((-2.0 * tile).colwise() + norms.segment(b0, nb)).rowwise() + norms.segment(c0, nc).transpose();
      tile = (scale * tile.max(0.0)).exp();
      if (c0 == b0) {
        tile.matrix().diagonal().setOnes();
        row_sum.segment(b0, nb) += tile.rowwise().sum().matrix();
      } else {
        row_sum.segment(b0, nb) += tile.rowwise().sum().matrix();
        row_sum.segment(c0, nc) += tile.colwise().sum().transpose().matrix();
      }
    }
  }
  const Matrix kxy = cross_kernel(x, y, sigma);  // n x M
  const Vector cross = kxy * w;
  SampleMmd out;
  const double xx = row_sum.sum() / (static_cast<double>(n) * n);
  const double xy = cross.sum() / static_cast<double>(n);
  const Matrix kyy = gram(y, {sigma, 0.0}).entries();
  out.value = xx - 2.0 * xy + w.dot(kyy * w);
  out.influence = 2.0 * row_sum / static_cast<double>(n) - 2.0 * cross;
  return out;
}

/// Reference sample with its X-X term computed once, for repeated evaluation
/// against a fixed sample during a run.
class SampleReference {
 public:
  SampleReference(ParticleMatrix x, double sigma) : x_(std::move(x)), sigma_(sigma) {
    const ParticleMatrix probe = x_.topRows(1);
    const SampleMmd s = mmd2_vs_samples_detailed(probe, Vector::Zero(1), x_, sigma_);
    xx_ = s.value;
  }

  double mmd2(const ParticleMatrix& y, const Vector& w) const {
    if (y.cols() != x_.cols())
      throw Error(ErrorCode::dimension_mismatch, "mmd2_vs_samples: dimension mismatch");
    const Vector cross = cross_kernel(x_, y, sigma_) * w;
    const Matrix kyy = gram(y, {sigma_, 0.0}).entries();
    return xx_ - 2.0 * cross.sum() / static_cast<double>(x_.rows()) + w.dot(kyy * w);
  }

  const ParticleMatrix& samples() const noexcept { return x_; }

 private:
  ParticleMatrix x_;
  double sigma_;
  double xx_ = 0.0;
};

/// (1/N^2) sum k(x, x') - (2/N) sum_i w_i sum_n k(x_n, y_i) + w^T K w.
inline double mmd2_vs_samples(const ParticleMatrix& y, const Vector& w, const ParticleMatrix& x,
                              double sigma) {
  return mmd2_vs_samples_detailed(y, w, x, sigma).value;
}

/// Bootstrap standard error of the mean of `terms` (resampling with replacement).
inline double bootstrap_standard_error(const Vector& terms, int replicates, std::uint64_t seed) {
  require(replicates >= 2, "bootstrap needs at least two replicates");
  const Eigen::Index n = terms.size();
  Rng rng(seed);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  Vector means(replicates);
  for (int b = 0; b < replicates; ++b) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += terms(pick(rng));
    means(b) = s / static_cast<double>(n);
  }
  const double mu = means.mean();
  return std::sqrt((means.array() - mu).square().sum() / (replicates - 1));
}

// ---------------------------------------------------------------------------
// Kernelized Stein discrepancy with the inverse multiquadric base kernel
// k(x, y) = (c2 + |x - y|^2 / l^2)^beta.

struct KsdParams {
  double c2 = 1.0;
  double beta_imq = -0.5;
  double bandwidth = 1.0;
  /// Multiplies the reported square root.
  double scale = 1.0;

  void validate() const {
    require(c2 > 0.0, "KSD offset c2 must be positive");
    require(beta_imq > -1.0 && beta_imq < 0.0, "KSD exponent must lie in (-1, 0)");
    require(bandwidth > 0.0, "KSD bandwidth must be positive");
  }
};

/// Base kernel value with first derivatives and trace(grad_x grad_y k).
struct ImqTerms {
  double k;
  Vector grad_x;
  Vector grad_y;
  double trace_xy;
};

inline ImqTerms imq_terms(ConstVectorRef x, ConstVectorRef y, const KsdParams& p) {
  const Vector r = x - y;
  const double l2 = p.bandwidth * p.bandwidth;
  const double u = p.c2 + r.squaredNorm() / l2;
  const double b = p.beta_imq;
  const double d = static_cast<double>(r.size());
  ImqTerms t;
  t.k = std::pow(u, b);
  t.grad_x = (2.0 * b / l2) * std::pow(u, b - 1.0) * r;
  t.grad_y = -t.grad_x;
  t.trace_xy = -(2.0 * b / l2) *
               (d * std::pow(u, b - 1.0) + 2.0 * (b - 1.0) * std::pow(u, b - 2.0) * r.squaredNorm() / l2);
  return t;
}

/// k0(x, y) = s_x.s_y k + s_x.grad_y k + s_y.grad_x k + trace(grad_x grad_y k).
inline double stein_kernel(ConstVectorRef x, ConstVectorRef y, ConstVectorRef sx,
                           ConstVectorRef sy, const KsdParams& p) {
  const ImqTerms t = imq_terms(x, y, p);
  return sx.dot(sy) * t.k + sx.dot(t.grad_y) + sy.dot(t.grad_x) + t.trace_xy;
}

inline Matrix stein_kernel_matrix(const ParticleMatrix& y, const ParticleMatrix& scores,
                                  const KsdParams& p) {
  const Eigen::Index m = y.rows();
  Matrix k0(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i; j < m; ++j) {
      k0(i, j) = stein_kernel(y.row(i).transpose(), y.row(j).transpose(), scores.row(i).transpose(),
                              scores.row(j).transpose(), p);
      k0(j, i) = k0(i, j);
    }
  return k0;
}

/// sum_ij w_i w_j k0(y_i, y_j) after weight normalization.
inline double ksd_squared(const ParticleMatrix& y, const Vector& w,
                          const std::function<Vector(ConstVectorRef)>& score, const KsdParams& p) {
  p.validate();
  const Vector wn = normalize_weights(w);
  ParticleMatrix s(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    s.row(i) = score(y.row(i).transpose()).transpose();
    if (!s.row(i).allFinite())
      throw Error(ErrorCode::non_finite_density, "KSD: non-finite score at particle " + std::to_string(i));
  }
  return wn.dot(stein_kernel_matrix(y, s, p) * wn);
}

/// Reported KSD: scale * sqrt(max(0, sum_ij w_i w_j k0)).
inline double ksd(const ParticleMatrix& y, const Vector& w,
                  const std::function<Vector(ConstVectorRef)>& score, const KsdParams& p) {
  return p.scale * std::sqrt(std::max(0.0, ksd_squared(y, w, score, p)));
}

/// -sum_k w_k log pi~(y_k), weights as given (normalize first).
inline double weighted_loglik(const ParticleMatrix& y, const Vector& w, const TargetDensity& t) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    if (w(i) == 0.0) continue;
    s -= w(i) * t.log_density(y.row(i).transpose());
  }
  return s;
}

struct Coverage {
  int covered = 0;
  std::vector<bool> per_mode;
};

/// Mode k is covered when some particle with normalized weight > 1/(10 M)
/// lies within `radius` of it.
inline Coverage mode_coverage(const ParticleMatrix& y, const Vector& w, const ParticleMatrix& modes,
                              double radius) {
  require(radius > 0.0, "coverage radius must be positive");
  const Vector wn = normalize_weights(w);
  const double threshold = 1.0 / (10.0 * static_cast<double>(y.rows()));
  Coverage c;
  c.per_mode.assign(static_cast<std::size_t>(modes.rows()), false);
  for (Eigen::Index k = 0; k < modes.rows(); ++k) {
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      if (wn(i) > threshold && (y.row(i) - modes.row(k)).norm() <= radius) {
        c.per_mode[static_cast<std::size_t>(k)] = true;
        break;
      }
    c.covered += c.per_mode[static_cast<std::size_t>(k)] ? 1 : 0;
  }
  return c;
}

/// One recorded row of a run.
struct MetricsRow {
  int iteration = 0;
  std::optional<double> mmd2;
  std::optional<double> ksd;
  std::optional<double> loglik;
  double wall_ms = 0.0;
  long density_evals = 0;
  long score_evals = 0;
};

struct MetricsReport {
  std::string algorithm;
  std::string target;
  std::uint64_t seed = 0;
  std::string params_json;
  std::vector<MetricsRow> rows;
};

}  // namespace msip
