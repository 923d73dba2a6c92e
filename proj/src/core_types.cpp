#include "pasa/core_types.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace pasa {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidDistribution: return "InvalidDistribution";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kInvalidToken: return "InvalidToken";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kInvalidEmbedding: return "InvalidEmbedding";
    case ErrorCode::kInvalidInput: return "InvalidInput";
    case ErrorCode::kImpossibleZeta: return "ImpossibleZeta";
    case ErrorCode::kInsufficientLength: return "InsufficientLength";
    case ErrorCode::kInstanceTooLarge: return "InstanceTooLarge";
  }
  return "Unknown";
}

Distribution normalize(std::span<const double> raw) {
  if (raw.empty()) {
    throw Error(ErrorCode::kInvalidDistribution, "empty weight vector");
  }
  double sum = 0.0;
  for (double v : raw) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw Error(ErrorCode::kInvalidDistribution, "weights must be finite and non-negative");
    }
    sum += v;
  }
  if (!(sum > 0.0)) {
    throw Error(ErrorCode::kInvalidDistribution, "weights sum to zero");
  }
  std::vector<double> probs(raw.begin(), raw.end());
  // A vector that already sums to 1 up to summation rounding is a fixed
  // point; this makes normalize idempotent bit-for-bit.
  const double slack = 4.0 * static_cast<double>(raw.size() + 2) * std::numeric_limits<double>::epsilon();
  if (std::abs(sum - 1.0) > slack) {
    for (double& p : probs) p /= sum;
  }
  return Distribution(std::move(probs));
}

Distribution Distribution::from_probs(std::vector<double> probs) {
  const double sum = std::accumulate(probs.begin(), probs.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-9) {
    throw Error(ErrorCode::kInvalidDistribution,
                "probabilities sum to " + std::to_string(sum) + ", expected 1");
  }
  return normalize(probs);
}

Distribution Distribution::point_mass(std::size_t size, std::size_t index) {
  if (index >= size) {
    throw Error(ErrorCode::kInvalidDistribution, "point mass index outside support");
  }
  std::vector<double> probs(size, 0.0);
  probs[index] = 1.0;
  return Distribution(std::move(probs));
}

Distribution Distribution::uniform(std::size_t size) {
  if (size == 0) throw Error(ErrorCode::kInvalidDistribution, "empty support");
  return normalize(std::vector<double>(size, 1.0));
}

FaBudget::FaBudget(double alpha) : alpha_(alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "alpha must lie in (0, 1), got " + std::to_string(alpha));
  }
}

std::size_t sample_index(std::span<const double> probs, double u) {
  double cdf = 0.0;
  std::size_t last_positive = probs.size();
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last_positive = i;
    cdf += probs[i];
    if (u < cdf) return i;
  }
  if (last_positive == probs.size()) {
    throw Error(ErrorCode::kInvalidDistribution, "cannot sample from a zero-mass vector");
  }
  return last_positive;
}

}  // namespace pasa
