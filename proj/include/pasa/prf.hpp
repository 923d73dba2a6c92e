#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <string_view>

#include "pasa/core_types.hpp"

namespace pasa {

/// SplitMix64 (Vigna). The single PRNG behind every seeded stream in the
/// project: k-means seeding, toy-LM rows, token draws, attacks, and the
/// expansion of PRF seeds into auxiliary uniforms.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1) from the top 53 bits of one output.
  double uniform() noexcept;

  /// Uniform integer in [0, n); n > 0.
  std::uint64_t below(std::uint64_t n) noexcept;

 private:
  std::uint64_t state_;
};

/// Maps a 64-bit word to [0, 1) keeping its top 53 bits. Monotone
/// non-decreasing in the word and never reaches 1.
double to_unit_interval(std::uint64_t word) noexcept;

/// Standard normal draw (Box-Muller) consuming two uniforms.
double standard_normal(SplitMix64& rng) noexcept;

/// One SplitMix64 step from `seed`, mapped to [0, 1).
double seed_to_uniform(std::uint64_t seed) noexcept;

/// Child seed for stream `tag` and element `index`, independent of any
/// scheduling order. Used for per-sequence fan-out in experiments.
std::uint64_t derive_child_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index) noexcept;

/// 32-byte shared secret.
class WatermarkKey {
 public:
  static constexpr std::size_t kSize = 32;
  using Bytes = std::array<std::uint8_t, kSize>;

  WatermarkKey() = default;
  explicit WatermarkKey(const Bytes& bytes) : bytes_(bytes) {}

  /// Exactly 64 hex digits (either case); surrounding whitespace ignored.
  static WatermarkKey from_hex(std::string_view hex);
  /// Deterministic key expanded from a seed with SplitMix64.
  static WatermarkKey from_seed(std::uint64_t seed);
  static WatermarkKey load(const std::string& path);

  std::string to_hex() const;
  void save(const std::string& path) const;

  const Bytes& bytes() const noexcept { return bytes_; }
  bool operator==(const WatermarkKey&) const = default;

 private:
  Bytes bytes_{};
};

/// The last `w` semantic cluster indices, oldest first.
class WindowState {
 public:
  explicit WindowState(std::uint32_t w);

  void push(ClusterId cluster);
  std::uint32_t w() const noexcept { return w_; }
  const std::deque<ClusterId>& clusters() const noexcept { return window_; }

 private:
  std::uint32_t w_;
  std::deque<ClusterId> window_;
};

/// SHA-256 over key || 0x01 || be32(w) || be32(c_1) .. be32(c_n), first
/// eight digest bytes read big-endian.
std::uint64_t derive_seed(const WatermarkKey& key, const WindowState& window);

/// SHA-256 digest of an arbitrary byte string.
std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> message);

}  // namespace pasa
