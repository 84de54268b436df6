#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace msip {

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  singular_gram,
  degenerate_weight,
  diverged,
  non_finite_density,
  estimator_unavailable,
  analytic_unavailable,
  non_normalizable,
  degenerate_consensus,
  unsupported_dimension,
  config,
  io,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  /// Config and argument errors are caller mistakes; everything else is a
  /// numerical failure (the CLI maps these to exit codes 1 and 2).
  bool is_config_error() const noexcept {
    return code_ == ErrorCode::config || code_ == ErrorCode::invalid_argument ||
           code_ == ErrorCode::dimension_mismatch ||
           code_ == ErrorCode::estimator_unavailable ||
           code_ == ErrorCode::analytic_unavailable ||
           code_ == ErrorCode::unsupported_dimension;
  }

 private:
  ErrorCode code_;
};

class SingularGramError : public Error {
 public:
  SingularGramError(std::size_t i, std::size_t j)
      : Error(ErrorCode::singular_gram,
              "singular Gram matrix: particles " + std::to_string(i) + " and " +
                  std::to_string(j) + " coincide (set lambda > 0)"),
        first_(i),
        second_(j) {}

  std::size_t first() const noexcept { return first_; }
  std::size_t second() const noexcept { return second_; }

 private:
  std::size_t first_;
  std::size_t second_;
};

/// Raised by the public MSIP map when a particle's weight underflows.
class DegenerateWeightError : public Error {
 public:
  explicit DegenerateWeightError(std::size_t particle)
      : Error(ErrorCode::degenerate_weight,
              "degenerate quadrature weight at particle " + std::to_string(particle)),
        particle_(particle) {}

  std::size_t particle() const noexcept { return particle_; }

 private:
  std::size_t particle_;
};

class NonFiniteDensityError : public Error {
 public:
  explicit NonFiniteDensityError(std::size_t particle)
      : Error(ErrorCode::non_finite_density,
              "non-finite log-density near particle " + std::to_string(particle)),
        particle_(particle) {}

  std::size_t particle() const noexcept { return particle_; }

 private:
  std::size_t particle_;
};

inline void require(bool cond, const std::string& what,
                    ErrorCode code = ErrorCode::invalid_argument) {
  if (!cond) throw Error(code, what);
}

}  // namespace msip
