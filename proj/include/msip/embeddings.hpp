#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "msip/error.hpp"
#include "msip/kernel.hpp"
#include "msip/rng.hpp"
#include "msip/targets.hpp"

namespace msip {

/// Rule (xi_q, u_q) for integrals against the standard Gaussian.
struct InnerQuadrature {
  ParticleMatrix nodes;  // Q x d
  Vector weights;        // Q

  Eigen::Index size() const noexcept { return weights.size(); }
  int dim() const noexcept { return static_cast<int>(nodes.cols()); }

  /// Q = 1, xi = 0, u = 1.
  static InnerQuadrature one_point(int d) {
    return {ParticleMatrix::Zero(1, d), Vector::Ones(1)};
  }
};

/// Q iid standard-normal nodes with weights 1/Q.
inline InnerQuadrature mc_inner_quadrature(int q, int d, std::uint64_t seed) {
  require(q >= 1, "inner quadrature needs Q >= 1");
  require(d >= 1, "inner quadrature needs d >= 1");
  InnerQuadrature rule{ParticleMatrix(q, d), Vector::Constant(q, 1.0 / q)};
  Rng rng(seed);
  fill_standard_normal(rule.nodes, rng);
  return rule;
}

enum class EstimatorKind { fredholm, stein, gradient_free, hybrid, analytic };

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::fredholm;
  int Q = 1;
  double gamma = 1.0;  // hybrid only

  bool needs_score() const noexcept {
    return kind == EstimatorKind::fredholm || kind == EstimatorKind::stein ||
           (kind == EstimatorKind::hybrid && gamma > 0.0);
  }

  void validate() const {
    require(Q >= 1, "estimator Q must be at least 1");
    require(gamma >= 0.0 && gamma <= 1.0, "hybridization rate gamma must lie in [0, 1]");
  }
};

inline std::string estimator_tag(const EstimatorSpec& s) {
  switch (s.kind) {
    case EstimatorKind::fredholm: return "fredholm";
    case EstimatorKind::stein: return "stein";
    case EstimatorKind::gradient_free: return "gf";
    case EstimatorKind::hybrid: return "hybrid";
    case EstimatorKind::analytic: return "analytic";
  }
  return "unknown";
}

inline EstimatorKind parse_estimator_tag(const std::string& tag) {
  if (tag == "fredholm") return EstimatorKind::fredholm;
  if (tag == "stein") return EstimatorKind::stein;
  if (tag == "gf" || tag == "gradient_free") return EstimatorKind::gradient_free;
  if (tag == "hybrid") return EstimatorKind::hybrid;
  if (tag == "analytic") return EstimatorKind::analytic;
  throw Error(ErrorCode::config, "unknown estimator '" + tag + "'");
}

/// Target evaluations at every probe point y_i + sigma xi_q. One log-density
/// call per (particle, node) cell; scores only when requested.
struct ProbeEvaluations {
  Matrix log_density;                  // M x Q, includes log_scale_offset
  std::vector<ParticleMatrix> scores;  // M entries of Q x d, or empty
  long density_evals = 0;
  long score_evals = 0;

  bool has_scores() const noexcept { return !scores.empty(); }
};

inline ProbeEvaluations evaluate_probes(const TargetDensity& t, const ParticleMatrix& y,
                                        double sigma, const InnerQuadrature& q,
                                        bool with_scores) {
  if (y.cols() != t.dim || q.dim() != t.dim)
    throw Error(ErrorCode::dimension_mismatch, "evaluate_probes: dimension mismatch");
  if (with_scores && !t.has_score())
    throw Error(ErrorCode::estimator_unavailable,
                "estimator needs the score of target '" + t.name + "'");
  const Eigen::Index m = y.rows(), nq = q.size();
  ProbeEvaluations out;
  out.log_density.resize(m, nq);
  if (with_scores) out.scores.assign(m, ParticleMatrix(nq, t.dim));
  Vector probe(t.dim);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index k = 0; k < nq; ++k) {
      probe = (y.row(i) + sigma * q.nodes.row(k)).transpose();
      const double lp = t.log_density(probe);
      if (std::isnan(lp) || lp == std::numeric_limits<double>::infinity())
        throw NonFiniteDensityError(static_cast<std::size_t>(i));
      out.log_density(i, k) = lp;
      if (with_scores) out.scores[i].row(k) = t.score(probe).transpose();
    }
  }
  out.density_evals = static_cast<long>(m * nq);
  out.score_evals = with_scores ? static_cast<long>(m * nq) : 0;
  return out;
}

/// Estimates of v0 (M) and v1 (M x d). Each particle is accumulated in log
/// space around its own largest probe density, giving log v0 and the ratio
/// v1 / v0 without underflow. v0_hat and v1_hat are those values times the
/// common factor exp(-log_scale), log_scale = max_i log v0_i; MSIP needs them
/// only up to that factor.
struct EmbeddingEstimate {
  Vector log_v0;
  ParticleMatrix ratio;  // v1 / v0, row-wise
  Vector v0_hat;
  ParticleMatrix v1_hat;
  double log_scale = 0.0;
  std::string estimator_tag;
  long density_evals = 0;
  long score_evals = 0;

  Vector v0() const { return std::exp(log_scale) * v0_hat; }
  ParticleMatrix v1() const { return std::exp(log_scale) * v1_hat; }

  void finalize_scaling() {
    log_scale = log_v0.size() > 0 ? log_v0.maxCoeff() : 0.0;
    if (!std::isfinite(log_scale)) log_scale = 0.0;
    v0_hat = (log_v0.array() - log_scale).exp();
    v1_hat = ratio.array().colwise() * v0_hat.array();
  }
};

namespace detail {

/// Per-particle sums around m_i = max_q lp_iq:
/// s0 = sum u e, first = sum u e xi, stein = sum u e score.
struct ParticleSums {
  double shift;
  double s0;
  Vector first;
  Vector stein;
};

inline ParticleSums particle_sums(const ProbeEvaluations& p, Eigen::Index i,
                                  const InnerQuadrature& q, bool want_stein) {
  const int d = q.dim();
  ParticleSums out{p.log_density.row(i).maxCoeff(), 0.0, Vector::Zero(d), Vector::Zero(d)};
  if (!std::isfinite(out.shift)) return out;
  for (Eigen::Index k = 0; k < q.size(); ++k) {
    const double c = q.weights(k) * std::exp(p.log_density(i, k) - out.shift);
    if (c == 0.0) continue;
    out.s0 += c;
    out.first += c * q.nodes.row(k).transpose();
    if (want_stein) out.stein += c * p.scores[i].row(k).transpose();
  }
  return out;
}

}  // namespace detail

/// One pass over shared probe evaluations producing both embeddings.
inline EmbeddingEstimate combine_embeddings(const ProbeEvaluations& p, const ParticleMatrix& y,
                                            double sigma, const InnerQuadrature& q,
                                            const EstimatorSpec& spec) {
  spec.validate();
  if (spec.kind == EstimatorKind::analytic)
    throw Error(ErrorCode::invalid_argument, "analytic embeddings do not use inner quadrature");
  const bool want_gf = spec.kind == EstimatorKind::gradient_free ||
                       (spec.kind == EstimatorKind::hybrid && spec.gamma < 1.0);
  const bool want_stein = spec.kind != EstimatorKind::gradient_free &&
                          !(spec.kind == EstimatorKind::hybrid && spec.gamma == 0.0);
  if (want_stein && !p.has_scores())
    throw Error(ErrorCode::estimator_unavailable, "Stein estimator needs score evaluations");
  const Eigen::Index m = y.rows(), d = y.cols();
  const double log_omega = KernelSpec{sigma, 0.0}.log_omega(static_cast<int>(d));
  const double s2 = sigma * sigma;
  EmbeddingEstimate est;
  est.log_v0.resize(m);
  est.ratio.resize(m, d);
  for (Eigen::Index i = 0; i < m; ++i) {
    const auto sums = detail::particle_sums(p, i, q, want_stein);
    if (!(sums.s0 > 0.0)) {
      // No mass anywhere near this particle: v0 = 0 and the ratio is moot.
      est.log_v0(i) = -std::numeric_limits<double>::infinity();
      est.ratio.row(i) = y.row(i);
      continue;
    }
    est.log_v0(i) = log_omega + sums.shift + std::log(sums.s0);
    Vector gf, st;
    if (want_gf) gf = y.row(i).transpose() + sigma * (sums.first / sums.s0);
    if (want_stein) st = y.row(i).transpose() + s2 * (sums.stein / sums.s0);
    if (!want_stein) {
      est.ratio.row(i) = gf.transpose();
    } else if (!want_gf) {
      est.ratio.row(i) = st.transpose();
    } else {
      est.ratio.row(i) = ((1.0 - spec.gamma) * gf + spec.gamma * st).transpose();
    }
  }
  est.finalize_scaling();
  est.density_evals = p.density_evals;
  est.score_evals = p.score_evals;
  est.estimator_tag = estimator_tag(spec);
  return est;
}

// Per-operation entry points returning true-scale values.

inline Vector estimate_v0(const TargetDensity& t, const ParticleMatrix& y, double sigma,
                          const InnerQuadrature& q) {
  const auto p = evaluate_probes(t, y, sigma, q, false);
  return combine_embeddings(p, y, sigma, q, {EstimatorKind::gradient_free,
                                             static_cast<int>(q.size()), 0.0})
      .log_v0.array()
      .exp();
}

inline ParticleMatrix estimate_v1_gradient_free(const TargetDensity& t, const ParticleMatrix& y,
                                                double sigma, const InnerQuadrature& q) {
  const auto p = evaluate_probes(t, y, sigma, q, false);
  return combine_embeddings(p, y, sigma, q, {EstimatorKind::gradient_free,
                                             static_cast<int>(q.size()), 0.0})
      .v1();
}

inline ParticleMatrix estimate_v1_stein(const TargetDensity& t, const ParticleMatrix& y,
                                        double sigma, const InnerQuadrature& q) {
  const auto p = evaluate_probes(t, y, sigma, q, true);
  return combine_embeddings(p, y, sigma, q, {EstimatorKind::stein,
                                             static_cast<int>(q.size()), 1.0})
      .v1();
}

inline ParticleMatrix estimate_v1_hybrid(double gamma, const TargetDensity& t,
                                         const ParticleMatrix& y, double sigma,
                                         const InnerQuadrature& q) {
  const EstimatorSpec spec{EstimatorKind::hybrid, static_cast<int>(q.size()), gamma};
  spec.validate();
  const auto p = evaluate_probes(t, y, sigma, q, gamma > 0.0);
  return combine_embeddings(p, y, sigma, q, spec).v1();
}

/// Exact embeddings of a mixture target, in the same scaled form.
inline EmbeddingEstimate analytic_embeddings(const GmmEmbedding& emb, const ParticleMatrix& y,
                                             double log_scale_offset = 0.0) {
  EmbeddingEstimate est;
  est.log_v0.resize(y.rows());
  est.ratio.resize(y.rows(), y.cols());
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    const Vector yi = y.row(i).transpose();
    est.log_v0(i) = emb.log_v0(yi) + log_scale_offset;
    est.ratio.row(i) = emb.mean_shift(yi).transpose();
  }
  est.finalize_scaling();
  est.estimator_tag = "analytic";
  return est;
}

/// Per-iteration estimator: draws a fresh inner rule from the counter-based
/// stream derive_seed(seed, iteration), shared by all particles.
class EmbeddingEstimator {
 public:
  EmbeddingEstimator(const TargetDensity& target, double sigma, EstimatorSpec spec,
                     std::uint64_t seed)
      : target_(&target), sigma_(sigma), spec_(spec), seed_(seed) {
    spec_.validate();
    if (spec_.kind == EstimatorKind::analytic) {
      analytic_.emplace(target.require_analytic(), sigma);
    } else if (spec_.needs_score() && !target.has_score()) {
      throw Error(ErrorCode::estimator_unavailable,
                  "estimator '" + estimator_tag(spec_) + "' needs the score of target '" +
                      target.name + "'");
    }
  }

  const EstimatorSpec& spec() const noexcept { return spec_; }

  InnerQuadrature rule(std::uint64_t iteration) const {
    if (spec_.kind == EstimatorKind::fredholm) return InnerQuadrature::one_point(target_->dim);
    return mc_inner_quadrature(spec_.Q, target_->dim, derive_seed(seed_, iteration, 0x1a));
  }

  EmbeddingEstimate estimate(const ParticleMatrix& y, std::uint64_t iteration) const {
    if (analytic_) return analytic_embeddings(*analytic_, y, target_->log_scale_offset);
    const auto q = rule(iteration);
    const auto p = evaluate_probes(*target_, y, sigma_, q, spec_.needs_score());
    return combine_embeddings(p, y, sigma_, q, spec_);
  }

 private:
  const TargetDensity* target_;
  double sigma_;
  EstimatorSpec spec_;
  std::uint64_t seed_;
  std::optional<GmmEmbedding> analytic_;
};

}  // namespace msip
