#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pasa/error.hpp"

namespace pasa {

using TokenId = std::uint32_t;
using ClusterId = std::uint32_t;
using TokenSequence = std::vector<TokenId>;

/// Probability vector over a finite support (tokens or clusters).
///
/// Construction validates non-negativity and renormalizes, so every
/// instance sums to 1 up to rounding. Immutable after construction.
class Distribution {
 public:
  /// Builds from weights that already form a distribution (|sum - 1| <= 1e-9).
  /// The stored vector is divided by its sum once more.
  static Distribution from_probs(std::vector<double> probs);

  /// Point mass on `index` over a support of `size` elements.
  static Distribution point_mass(std::size_t size, std::size_t index);

  static Distribution uniform(std::size_t size);

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const noexcept { return probs_; }

  bool operator==(const Distribution&) const = default;

 private:
  explicit Distribution(std::vector<double> probs) : probs_(std::move(probs)) {}
  friend Distribution normalize(std::span<const double> raw);

  std::vector<double> probs_;
};

/// Proportional rescaling of non-negative weights to sum 1.
/// Throws kInvalidDistribution on empty, negative, non-finite or all-zero input.
Distribution normalize(std::span<const double> raw);

inline double positive_part(double x) { return x > 0.0 ? x : 0.0; }

/// False-alarm budget alpha, strictly inside (0, 1).
class FaBudget {
 public:
  explicit FaBudget(double alpha);
  double value() const noexcept { return alpha_; }

 private:
  double alpha_;
};

/// Inverse-CDF draw: smallest index whose running sum exceeds `u`.
/// Zero-mass entries are never returned; if rounding leaves `u` beyond the
/// final running sum, the last positive-mass index is returned.
std::size_t sample_index(std::span<const double> probs, double u);

}  // namespace pasa
