#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "msip/embeddings.hpp"
#include "msip/error.hpp"
#include "msip/kernel.hpp"
#include "msip/targets.hpp"

namespace msip {

/// Per-coordinate box [lo, hi] applied as a hard projection after each step.
struct Bounds {
  Vector lo;
  Vector hi;

  static Bounds uniform(int d, double lo, double hi) {
    return {Vector::Constant(d, lo), Vector::Constant(d, hi)};
  }

  void validate(int d) const {
    require(lo.size() == d && hi.size() == d, "bounds dimension mismatch",
            ErrorCode::dimension_mismatch);
    require(((hi - lo).array() > 0.0).all(), "bounds need lo < hi in every coordinate");
  }

  void clamp(ParticleMatrix& y) const {
    for (Eigen::Index i = 0; i < y.rows(); ++i)
      y.row(i) = y.row(i).cwiseMax(lo.transpose()).cwiseMin(hi.transpose());
  }
};

struct MsipParams {
  KernelSpec kernel{0.5, 1e-6};
  double eta = 0.5;
  int T = 1000;
  EstimatorSpec estimator{};
  std::optional<Bounds> bounds;
  std::uint64_t seed = 0;
  /// |w_i| below this counts as a degenerate weight.
  double weight_floor = 1e-300;
  /// Keep every iterate in the trajectory (M x d per iteration).
  bool record_positions = false;

  void validate(int d) const {
    kernel.validate();
    require(eta >= 0.0 && eta <= 1.0, "step size eta must lie in [0, 1]");
    require(T >= 0, "iteration count T must be nonnegative");
    estimator.validate();
    if (bounds) bounds->validate(d);
  }
};

/// Quadrature nodes (rows of Y) and signed weights. The weights carry an
/// arbitrary positive common factor: true weights are exp(log_weight_scale) * w.
struct ParticleConfiguration {
  ParticleMatrix Y;
  Vector w;
  double log_weight_scale = 0.0;
};

/// w = K_lambda^{-1} v0.
inline Vector optimal_weights(const GramMatrix& g, const Vector& v0_hat) { return solve(g, v0_hat); }

enum class DegeneratePolicy { raise, freeze };

/// Psi together with the weights and embeddings it was built from.
struct MapResult {
  ParticleMatrix psi;
  Vector weights;
  EmbeddingEstimate embeddings;
  std::vector<std::size_t> degenerate;
};

namespace detail {

/// Psi_i = sum_j a_ij r_j / sum_j a_ij with a_ij = [K_lambda^{-1}]_ij v0_j and
/// r_j = v1_j / v0_j, evaluated with a row-local log shift. Used when w_i
/// underflows in the common scaling although v0 is nonzero in the exact
/// arithmetic. Empty when the row carries no mass at all.
inline std::optional<Vector> rescaled_map_row(const GramMatrix& g, const EmbeddingEstimate& est,
                                              Eigen::Index i) {
  const Eigen::Index m = g.size();
  const Vector col = solve(g, Vector(Vector::Unit(m, i)));
  Vector logs = Vector::Constant(m, -std::numeric_limits<double>::infinity());
  for (Eigen::Index j = 0; j < m; ++j)
    if (col(j) != 0.0 && std::isfinite(est.log_v0(j)))
      logs(j) = std::log(std::abs(col(j))) + est.log_v0(j);
  const double top = logs.maxCoeff();
  if (!std::isfinite(top)) return std::nullopt;
  double den = 0.0;
  Vector num = Vector::Zero(est.ratio.cols());
  for (Eigen::Index j = 0; j < m; ++j) {
    if (!std::isfinite(logs(j))) continue;
    const double a = std::copysign(std::exp(logs(j) - top), col(j));
    den += a;
    num += a * est.ratio.row(j).transpose();
  }
  if (den == 0.0 || !std::isfinite(den)) return std::nullopt;
  return Vector(num / den);
}

}  // namespace detail

/// Psi = W^{-1} K_lambda^{-1} v1 from one multi-column solve of
/// K_lambda [w | Z] = [v0 | v1] followed by row scaling Z_i / w_i.
inline MapResult map_from_embeddings(const ParticleMatrix& y, EmbeddingEstimate est,
                                     const KernelSpec& kernel, double weight_floor,
                                     DegeneratePolicy policy) {
  const Eigen::Index m = y.rows(), d = y.cols();
  const GramMatrix g = gram(y, kernel);
  Matrix rhs(m, d + 1);
  rhs.col(0) = est.v0_hat;
  rhs.rightCols(d) = est.v1_hat;
  const Matrix x = solve(g, rhs);
  MapResult out;
  out.weights = x.col(0);
  out.psi.resize(m, d);
  for (Eigen::Index i = 0; i < m; ++i) {
    const double wi = out.weights(i);
    if (std::abs(wi) >= weight_floor) {
      out.psi.row(i) = x.row(i).tail(d) / wi;
      continue;
    }
    if (auto row = detail::rescaled_map_row(g, est, i)) {
      out.psi.row(i) = row->transpose();
      continue;
    }
    if (policy == DegeneratePolicy::raise) throw DegenerateWeightError(static_cast<std::size_t>(i));
    out.degenerate.push_back(static_cast<std::size_t>(i));
    out.psi.row(i) = y.row(i);
  }
  out.embeddings = std::move(est);
  return out;
}

/// Regularized MSIP map for the estimator configured in `p`, using the inner
/// rule of the given iteration.
inline ParticleMatrix msip_map(const ParticleMatrix& y, const TargetDensity& t,
                               const MsipParams& p, std::uint64_t iteration = 0) {
  p.validate(t.dim);
  const EmbeddingEstimator est(t, p.kernel.sigma, p.estimator, p.seed);
  return map_from_embeddings(y, est.estimate(y, iteration), p.kernel, p.weight_floor,
                             DegeneratePolicy::raise)
      .psi;
}

struct StepDiagnostics {
  Vector v0_hat;
  double log_scale = 0.0;
  long density_evals = 0;
  long score_evals = 0;
  std::vector<std::size_t> frozen;
};

struct StepResult {
  ParticleMatrix y_next;
  Vector w;
  StepDiagnostics diagnostics;
};

namespace detail {

inline StepResult step_with(const ParticleMatrix& y, const EmbeddingEstimator& estimator,
                            const MsipParams& p, std::uint64_t iteration,
                            DegeneratePolicy policy) {
  MapResult map = map_from_embeddings(y, estimator.estimate(y, iteration), p.kernel,
                                      p.weight_floor, policy);
  if (!map.psi.allFinite())
    throw Error(ErrorCode::diverged, "MSIP map produced a non-finite position");
  StepResult out;
  out.y_next = (1.0 - p.eta) * y + p.eta * map.psi;
  if (p.bounds) p.bounds->clamp(out.y_next);
  out.w = std::move(map.weights);
  out.diagnostics.v0_hat = std::move(map.embeddings.v0_hat);
  out.diagnostics.log_scale = map.embeddings.log_scale;
  out.diagnostics.density_evals = map.embeddings.density_evals;
  out.diagnostics.score_evals = map.embeddings.score_evals;
  out.diagnostics.frozen = std::move(map.degenerate);
  return out;
}

}  // namespace detail

/// Y_next = (1 - eta) Y + eta Psi(Y), then clamped to the bounds.
inline StepResult msip_step(const ParticleMatrix& y, const TargetDensity& t, const MsipParams& p,
                            std::uint64_t iteration = 0,
                            DegeneratePolicy policy = DegeneratePolicy::raise) {
  p.validate(t.dim);
  const EmbeddingEstimator est(t, p.kernel.sigma, p.estimator, p.seed);
  return detail::step_with(y, est, p, iteration, policy);
}

enum class RunStatus { ok, degenerate_weights_occurred, diverged };

inline std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::ok: return "ok";
    case RunStatus::degenerate_weights_occurred: return "degenerate-weights-occurred";
    case RunStatus::diverged: return "diverged";
  }
  return "unknown";
}

/// State handed to per-iteration hooks: iterate t with the weights solved at
/// Y^(t) and cumulative evaluation counts.
struct IterationRecord {
  int iteration;
  const ParticleMatrix& y;
  const Vector& w;
  long density_evals;
  long score_evals;
};

using IterationCallback = std::function<void(const IterationRecord&)>;

struct TrajectoryEntry {
  int iteration;
  std::optional<ParticleMatrix> y;
  Vector w;
  StepDiagnostics diagnostics;
};

struct MsipRun {
  std::vector<TrajectoryEntry> trajectory;
  ParticleConfiguration final;
  RunStatus status = RunStatus::ok;
  std::string message;
  long density_evals = 0;
  long score_evals = 0;
  int degenerate_events = 0;
};

/// Algorithm 1 with the freeze-and-continue policy for degenerate weights.
/// A diverged iteration stops the run; the partial trajectory is kept.
inline MsipRun run_msip(const TargetDensity& t, const MsipParams& p, const ParticleMatrix& y0,
                        const IterationCallback& callback = {}) {
  p.validate(t.dim);
  require(y0.cols() == t.dim, "run_msip: initial particles have the wrong dimension",
          ErrorCode::dimension_mismatch);
  require(y0.rows() >= 1 && y0.allFinite(), "run_msip: initial particles must be finite");
  const EmbeddingEstimator estimator(t, p.kernel.sigma, p.estimator, p.seed);
  MsipRun run;
  ParticleMatrix y = y0;
  for (int it = 0; it < p.T; ++it) {
    StepResult step;
    try {
      step = detail::step_with(y, estimator, p, static_cast<std::uint64_t>(it),
                               DegeneratePolicy::freeze);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::diverged && e.code() != ErrorCode::singular_gram &&
          e.code() != ErrorCode::non_finite_density)
        throw;
      run.status = RunStatus::diverged;
      run.message = e.what();
      run.final = {y, Vector::Zero(y.rows()), 0.0};
      return run;
    }
    run.density_evals += step.diagnostics.density_evals;
    run.score_evals += step.diagnostics.score_evals;
    if (!step.diagnostics.frozen.empty()) {
      ++run.degenerate_events;
      run.status = RunStatus::degenerate_weights_occurred;
    }
    if (callback) callback({it, y, step.w, run.density_evals, run.score_evals});
    TrajectoryEntry entry{it, std::nullopt, step.w, std::move(step.diagnostics)};
    if (p.record_positions) entry.y = y;
    run.trajectory.push_back(std::move(entry));
    y = std::move(step.y_next);
  }
  const EmbeddingEstimate est = estimator.estimate(y, static_cast<std::uint64_t>(p.T));
  run.density_evals += est.density_evals;
  run.score_evals += est.score_evals;
  Vector w;
  try {
    w = optimal_weights(gram(y, p.kernel), est.v0_hat);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::singular_gram) throw;
    run.status = RunStatus::diverged;
    run.message = e.what();
    w = Vector::Zero(y.rows());
  }
  if (callback) callback({p.T, y, w, run.density_evals, run.score_evals});
  run.final = {std::move(y), std::move(w), est.log_scale};
  return run;
}

// ---------------------------------------------------------------------------
// Penalized MMD objective and its gradient.

/// sigma^{-2} W (K_lambda W Y - v1) with W = diag(K_lambda^{-1} v0).
inline ParticleMatrix penalized_mmd_gradient(const ParticleMatrix& y, const Vector& v0,
                                             const ParticleMatrix& v1, const KernelSpec& kernel) {
  const GramMatrix g = gram(y, kernel);
  const Vector w = solve(g, v0);
  const ParticleMatrix wy = y.array().colwise() * w.array();
  ParticleMatrix inner = g.entries() * wy - v1;
  return (inner.array().colwise() * w.array()) / (kernel.sigma * kernel.sigma);
}

/// C_pi = Z_sigma sum_{k,l} m_k m_l N(mu_k; mu_l, Sigma_k + Sigma_l + sigma^2 I),
/// the double kernel integral of the mixture against itself.
inline double gmm_self_energy(const GmmTarget& t, double sigma) {
  const int d = t.dim(), k = t.components();
  Vector terms(k * k);
  const double log2pi = std::log(2.0 * std::numbers::pi);
  const double log_z = 0.5 * d * std::log(2.0 * std::numbers::pi * sigma * sigma);
  for (int a = 0; a < k; ++a)
    for (int b = 0; b < k; ++b) {
      Matrix s = t.covariances()[a] + t.covariances()[b];
      s.diagonal().array() += sigma * sigma;
      Eigen::LLT<Matrix> llt(s);
      Vector z = (t.means().row(a) - t.means().row(b)).transpose();
      llt.matrixL().solveInPlace(z);
      const double log_det_half = Matrix(llt.matrixL()).diagonal().array().log().sum();
      terms(a * k + b) = std::log(t.weights()(a)) + std::log(t.weights()(b)) - 0.5 * d * log2pi -
                         log_det_half - 0.5 * z.squaredNorm();
    }
  return std::exp(log_z + log_sum_exp(terms));
}

inline void analytic_v0_v1(const GmmTarget& t, const ParticleMatrix& y, double sigma, Vector& v0,
                           ParticleMatrix& v1) {
  const GmmEmbedding emb(t, sigma);
  v0.resize(y.rows());
  v1.resize(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const Vector yi = y.row(i).transpose();
    v0(i) = emb.v0(yi);
    v1.row(i) = v0(i) * emb.mean_shift(yi).transpose();
  }
}

/// F_{M,lambda}(Y) = 1/2 (C_pi - <w, v0(Y)>), w = K_lambda^{-1} v0, for the
/// mixture exactly as given (unnormalized weights allowed). Equals
/// min_w 1/2 MMD^2 + lambda/2 |w|^2.
inline double objective(const ParticleMatrix& y, const GmmTarget& t, const KernelSpec& kernel) {
  if (y.cols() != t.dim()) throw Error(ErrorCode::dimension_mismatch, "objective: dimension mismatch");
  Vector v0;
  ParticleMatrix v1;
  analytic_v0_v1(t, y, kernel.sigma, v0, v1);
  const Vector w = solve(gram(y, kernel), v0);
  return 0.5 * (gmm_self_energy(t, kernel.sigma) - w.dot(v0));
}

inline double objective(const ParticleMatrix& y, const TargetDensity& t, const KernelSpec& kernel) {
  return objective(y, t.require_analytic(), kernel);
}

inline ParticleMatrix objective_gradient(const ParticleMatrix& y, const GmmTarget& t,
                                         const KernelSpec& kernel) {
  if (y.cols() != t.dim())
    throw Error(ErrorCode::dimension_mismatch, "objective_gradient: dimension mismatch");
  Vector v0;
  ParticleMatrix v1;
  analytic_v0_v1(t, y, kernel.sigma, v0, v1);
  return penalized_mmd_gradient(y, v0, v1, kernel);
}

inline ParticleMatrix objective_gradient(const ParticleMatrix& y, const TargetDensity& t,
                                         const KernelSpec& kernel) {
  return objective_gradient(y, t.require_analytic(), kernel);
}

/// Discrete measure sum_k a_k delta_{c_k}; its embeddings are finite sums.
struct EmpiricalMeasure {
  ParticleMatrix atoms;
  Vector masses;

  void embeddings(const ParticleMatrix& y, double sigma, Vector& v0, ParticleMatrix& v1) const {
    const Matrix k = cross_kernel(y, atoms, sigma);  // M x K
    v0 = k * masses;
    v1 = k * masses.asDiagonal() * atoms;
  }

  /// The density x -> int k(x, c) dmu(c), a mixture with covariances sigma^2 I
  /// and weights a_k (2 pi sigma^2)^{d/2}.
  GmmTarget smoothed_density(double sigma) const {
    const auto d = atoms.cols();
    const double z = std::pow(2.0 * std::numbers::pi * sigma * sigma, 0.5 * d);
    std::vector<Matrix> covs(atoms.rows(), sigma * sigma * Matrix::Identity(d, d));
    return GmmTarget(masses * z, atoms, std::move(covs));
  }
};

inline ParticleMatrix empirical_objective_gradient(const ParticleMatrix& y, const EmpiricalMeasure& mu,
                                                   const KernelSpec& kernel) {
  Vector v0;
  ParticleMatrix v1;
  mu.embeddings(y, kernel.sigma, v0, v1);
  return penalized_mmd_gradient(y, v0, v1, kernel);
}

}  // namespace msip
