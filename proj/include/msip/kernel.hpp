#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "msip/error.hpp"

namespace msip {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Particle sets: row i is particle y_i.
using ParticleMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstVectorRef = Eigen::Ref<const Vector>;

/// Squared-exponential kernel exp(-|x-y|^2 / (2 sigma^2)) plus the Tikhonov
/// term added to Gram diagonals.
struct KernelSpec {
  double sigma = 1.0;
  double lambda = 1e-6;

  void validate() const {
    require(std::isfinite(sigma) && sigma > 0.0, "kernel sigma must be positive");
    require(std::isfinite(lambda) && lambda >= 0.0, "kernel lambda must be nonnegative");
  }

  /// log of omega = (sqrt(2 pi) sigma)^d.
  double log_omega(int d) const {
    return d * (0.5 * std::log(2.0 * std::numbers::pi) + std::log(sigma));
  }

  double omega(int d) const {
    const double w = std::exp(log_omega(d));
    require(std::isfinite(w) && w > 0.0,
            "omega(sigma, d) overflows for d = " + std::to_string(d));
    return w;
  }
};

template <class A, class B>
double se_kernel(const Eigen::MatrixBase<A>& x, const Eigen::MatrixBase<B>& y,
                 const KernelSpec& spec) {
  if (x.size() != y.size())
    throw Error(ErrorCode::dimension_mismatch, "se_kernel: dimension mismatch");
  const double r2 = (x.derived().reshaped() - y.derived().reshaped()).squaredNorm();
  return std::exp(-0.5 * r2 / (spec.sigma * spec.sigma));
}

/// Cross-kernel matrix [k(a_i, b_j)] without regularization.
inline Matrix cross_kernel(const ParticleMatrix& a, const ParticleMatrix& b, double sigma) {
  if (a.cols() != b.cols())
    throw Error(ErrorCode::dimension_mismatch, "cross_kernel: dimension mismatch");
  const Vector na = a.rowwise().squaredNorm();
  const Vector nb = b.rowwise().squaredNorm();
  Matrix out = a * b.transpose();
  const double scale = -0.5 / (sigma * sigma);
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      const double r2 = std::max(0.0, na(i) + nb(j) - 2.0 * out(i, j));
      out(i, j) = std::exp(scale * r2);
    }
  return out;
}

/// Regularized Gram matrix K(Y) + lambda I with a lazily built Cholesky
/// factor. Copies share the factor; entries are immutable.
class GramMatrix {
 public:
  GramMatrix(Matrix entries, double lambda)
      : entries_(std::move(entries)), lambda_(lambda), cache_(std::make_shared<Cache>()) {}

  const Matrix& entries() const noexcept { return entries_; }
  double lambda_applied() const noexcept { return lambda_; }
  Eigen::Index size() const noexcept { return entries_.rows(); }

  /// Lower-triangular factor; throws SingularGramError on a non-positive pivot.
  const Eigen::LLT<Matrix>& cholesky() const {
    std::call_once(cache_->once, [this] {
      cache_->llt.compute(entries_);
      cache_->ok = cache_->llt.info() == Eigen::Success && factor_is_finite();
    });
    if (!cache_->ok) throw_singular();
    return cache_->llt;
  }

 private:
  struct Cache {
    std::once_flag once;
    Eigen::LLT<Matrix> llt;
    bool ok = false;
  };

  bool factor_is_finite() const {
    const Matrix& l = cache_->llt.matrixLLT();
    for (Eigen::Index i = 0; i < l.rows(); ++i)
      if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i))) return false;
    return true;
  }

  // Name the most nearly coincident pair; that is the usual culprit.
  [[noreturn]] void throw_singular() const {
    Eigen::Index bi = 0, bj = entries_.rows() > 1 ? 1 : 0;
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < entries_.rows(); ++i)
      for (Eigen::Index j = i + 1; j < entries_.cols(); ++j)
        if (entries_(i, j) > best) {
          best = entries_(i, j);
          bi = i;
          bj = j;
        }
    throw SingularGramError(static_cast<std::size_t>(bi), static_cast<std::size_t>(bj));
  }

  Matrix entries_;
  double lambda_;
  std::shared_ptr<Cache> cache_;
};

/// Entries k(y_i, y_j) + lambda delta_ij, distances by the expanded form
/// |x|^2 + |y|^2 - 2<x,y> clamped at zero. Upper triangle mirrored.
inline GramMatrix gram(const ParticleMatrix& y, const KernelSpec& spec) {
  spec.validate();
  require(y.rows() >= 1, "gram: need at least one particle");
  const Eigen::Index m = y.rows();
  const Vector norms = y.rowwise().squaredNorm();
  const Matrix inner = y * y.transpose();
  const double scale = -0.5 / (spec.sigma * spec.sigma);
  Matrix k(m, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    k(j, j) = 1.0 + spec.lambda;
    for (Eigen::Index i = j + 1; i < m; ++i) {
      const double r2 = std::max(0.0, norms(i) + norms(j) - 2.0 * inner(i, j));
      k(i, j) = std::exp(scale * r2);
      k(j, i) = k(i, j);
    }
  }
  return GramMatrix(std::move(k), spec.lambda);
}

inline double solve_residual(const GramMatrix& g, const Matrix& x, const Matrix& b) {
  const double nb = b.norm();
  const double nr = (g.entries() * x - b).norm();
  return nb > 0.0 ? nr / nb : nr;
}

/// Solves G X = B with the cached Cholesky factor and one step of iterative
/// refinement. With MSIP_CHECK_SOLVE_RESIDUAL defined, a relative residual
/// above 1e-10 throws.
inline Matrix solve(const GramMatrix& g, const Matrix& b) {
  if (b.rows() != g.size())
    throw Error(ErrorCode::dimension_mismatch, "solve: right-hand side row count mismatch");
  const auto& llt = g.cholesky();
  Matrix x = llt.solve(b);
  x += llt.solve(b - g.entries() * x);
#ifdef MSIP_CHECK_SOLVE_RESIDUAL
  const double res = solve_residual(g, x, b);
  if (!(res <= 1e-10))
    throw Error(ErrorCode::singular_gram,
                "solve: relative residual " + std::to_string(res) + " exceeds 1e-10");
#endif
  return x;
}

inline Vector solve(const GramMatrix& g, const Vector& b) {
  Matrix rhs = b;
  return solve(g, rhs).col(0);
}

}  // namespace msip
