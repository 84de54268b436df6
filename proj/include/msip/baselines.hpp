#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "msip/error.hpp"
#include "msip/kernel.hpp"
#include "msip/msip.hpp"
#include "msip/rng.hpp"
#include "msip/targets.hpp"

namespace msip {

struct SvgdParams {
  double eta = 0.05;
  int T = 1000;
  /// Fixed SE bandwidth sigma; ignored when `adaptive` is set.
  double bandwidth = 1.0;
  /// Median heuristic sigma^2 = median(|y_i - y_j|^2) / (2 log(M + 1)), per step.
  bool adaptive = true;
  std::optional<Bounds> bounds;
  std::uint64_t seed = 0;

  void validate(int d) const {
    require(eta > 0.0, "SVGD step size must be positive");
    require(T >= 0, "SVGD iteration count must be nonnegative");
    require(adaptive || bandwidth > 0.0, "SVGD bandwidth must be positive");
    if (bounds) bounds->validate(d);
  }
};

struct CbsParams {
  double beta = 0.9;
  double eta = 0.5;
  int T = 1000;
  double noise_scale = 1.0;
  std::optional<Bounds> bounds;
  std::uint64_t seed = 0;

  void validate(int d) const {
    require(beta > 0.0, "CBS inverse temperature must be positive");
    require(eta > 0.0, "CBS step size must be positive");
    require(noise_scale >= 0.0, "CBS noise scale must be nonnegative");
    require(T >= 0, "CBS iteration count must be nonnegative");
    if (bounds) bounds->validate(d);
  }
};

/// sigma^2 from the median of pairwise squared distances (i < j). Falls back
/// to 1 when there are fewer than two particles or all coincide.
inline double median_heuristic_sigma2(const ParticleMatrix& y) {
  const Eigen::Index m = y.rows();
  std::vector<double> d2;
  d2.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) d2.push_back((y.row(i) - y.row(j)).squaredNorm());
  if (d2.empty()) return 1.0;
  const auto mid = d2.begin() + static_cast<std::ptrdiff_t>(d2.size() / 2);
  std::nth_element(d2.begin(), mid, d2.end());
  double med = *mid;
  if (d2.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d2.begin(), mid));
  if (!(med > 0.0)) return 1.0;
  return med / (2.0 * std::log(static_cast<double>(m) + 1.0));
}

/// y_i += eta / M sum_j [k(y_j, y_i) s(y_j) + grad_{y_j} k(y_j, y_i)].
inline ParticleMatrix svgd_step(const ParticleMatrix& y, const TargetDensity& t,
                                const SvgdParams& p) {
  p.validate(t.dim);
  if (!t.has_score())
    throw Error(ErrorCode::estimator_unavailable, "SVGD needs the score of target '" + t.name + "'");
  const Eigen::Index m = y.rows();
  const double sigma2 = p.adaptive ? median_heuristic_sigma2(y) : p.bandwidth * p.bandwidth;
  ParticleMatrix scores(m, y.cols());
  for (Eigen::Index j = 0; j < m; ++j) scores.row(j) = t.score(y.row(j).transpose()).transpose();
  ParticleMatrix phi = ParticleMatrix::Zero(m, y.cols());
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const auto diff = (y.row(i) - y.row(j)).eval();
      const double k = std::exp(-0.5 * diff.squaredNorm() / sigma2);
      phi.row(i) += k * scores.row(j) + (k / sigma2) * diff;
    }
  ParticleMatrix out = y + (p.eta / static_cast<double>(m)) * phi;
  if (p.bounds) p.bounds->clamp(out);
  return out;
}

/// Softmax weights alpha_i ~ exp(beta log pi~(y_i)) and the consensus point.
inline Vector cbs_consensus(const ParticleMatrix& y, const TargetDensity& t, double beta,
                            Vector* alpha_out = nullptr) {
  const Eigen::Index m = y.rows();
  Vector a(m);
  for (Eigen::Index i = 0; i < m; ++i) a(i) = beta * t.log_density(y.row(i).transpose());
  const double top = a.maxCoeff();
  if (!std::isfinite(top) || std::isnan(a.sum()))
    throw Error(ErrorCode::degenerate_consensus, "CBS: no particle has positive density");
  Vector alpha = (a.array() - top).exp();
  alpha /= alpha.sum();
  if (alpha_out) *alpha_out = alpha;
  return y.transpose() * alpha;
}

/// y_i <- y_i - eta (y_i - c) + noise_scale sqrt(2 eta) |y_i - c| zeta_i.
inline ParticleMatrix cbs_step(const ParticleMatrix& y, const TargetDensity& t, const CbsParams& p,
                               Rng& rng) {
  p.validate(t.dim);
  const Vector c = cbs_consensus(y, t, p.beta);
  std::normal_distribution<double> normal(0.0, 1.0);
  ParticleMatrix out(y.rows(), y.cols());
  const double amp = p.noise_scale * std::sqrt(2.0 * p.eta);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const Vector dev = y.row(i).transpose() - c;
    const double r = dev.norm();
    Vector next = y.row(i).transpose() - p.eta * dev;
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      const double z = normal(rng);
      next(j) += amp * r * z;
    }
    out.row(i) = next.transpose();
  }
  if (p.bounds) p.bounds->clamp(out);
  return out;
}

/// Uniformly weighted baseline run; callbacks see iterates 0..T.
struct BaselineRun {
  ParticleConfiguration final;
  RunStatus status = RunStatus::ok;
  std::string message;
  long density_evals = 0;
  long score_evals = 0;
};

inline BaselineRun run_svgd(const TargetDensity& t, const SvgdParams& p, const ParticleMatrix& y0,
                            const IterationCallback& callback = {}) {
  p.validate(t.dim);
  BaselineRun run;
  ParticleMatrix y = y0;
  const Vector w = Vector::Constant(y.rows(), 1.0 / static_cast<double>(y.rows()));
  for (int it = 0; it <= p.T; ++it) {
    if (callback) callback({it, y, w, run.density_evals, run.score_evals});
    if (it == p.T) break;
    ParticleMatrix next = svgd_step(y, t, p);
    run.score_evals += y.rows();
    if (!next.allFinite()) {
      run.status = RunStatus::diverged;
      run.message = "SVGD produced a non-finite position";
      break;
    }
    y = std::move(next);
  }
  run.final = {std::move(y), w, 0.0};
  return run;
}

inline BaselineRun run_cbs(const TargetDensity& t, const CbsParams& p, const ParticleMatrix& y0,
                           const IterationCallback& callback = {}) {
  p.validate(t.dim);
  BaselineRun run;
  ParticleMatrix y = y0;
  const Vector w = Vector::Constant(y.rows(), 1.0 / static_cast<double>(y.rows()));
  for (int it = 0; it <= p.T; ++it) {
    if (callback) callback({it, y, w, run.density_evals, run.score_evals});
    if (it == p.T) break;
    Rng rng(derive_seed(p.seed, static_cast<std::uint64_t>(it), 0xcb5));
    ParticleMatrix next;
    try {
      next = cbs_step(y, t, p, rng);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::degenerate_consensus) throw;
      run.status = RunStatus::diverged;
      run.message = e.what();
      break;
    }
    run.density_evals += y.rows();
    if (!next.allFinite()) {
      run.status = RunStatus::diverged;
      run.message = "CBS produced a non-finite position";
      break;
    }
    y = std::move(next);
  }
  run.final = {std::move(y), w, 0.0};
  return run;
}

}  // namespace msip
