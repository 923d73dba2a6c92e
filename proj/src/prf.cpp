#include "pasa/prf.hpp"

#include <openssl/evp.h>

#include <cctype>
#include <cmath>
#include <numbers>
#include <fstream>
#include <sstream>
#include <vector>

namespace pasa {

namespace {

constexpr std::uint8_t kSeedDomain = 0x01;

void append_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

}  // namespace

double to_unit_interval(std::uint64_t word) noexcept {
  return static_cast<double>(word >> 11) * 0x1.0p-53;
}

double SplitMix64::uniform() noexcept { return to_unit_interval(next()); }

std::uint64_t SplitMix64::below(std::uint64_t n) noexcept {
  const auto idx = static_cast<std::uint64_t>(uniform() * static_cast<double>(n));
  return idx < n ? idx : n - 1;
}

double standard_normal(SplitMix64& rng) noexcept {
  // Box-Muller, cosine branch only: exactly two uniforms per draw.
  const double u1 = 1.0 - rng.uniform();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double seed_to_uniform(std::uint64_t seed) noexcept {
  SplitMix64 rng(seed);
  return rng.uniform();
}

std::uint64_t derive_child_seed(std::uint64_t master, std::uint64_t tag, std::uint64_t index) noexcept {
  SplitMix64 a(master ^ (tag * 0xd1b54a32d192ed03ULL));
  SplitMix64 b(a.next() ^ index);
  b.next();
  return b.next();
}

WatermarkKey WatermarkKey::from_hex(std::string_view hex) {
  while (!hex.empty() && std::isspace(static_cast<unsigned char>(hex.front()))) hex.remove_prefix(1);
  while (!hex.empty() && std::isspace(static_cast<unsigned char>(hex.back()))) hex.remove_suffix(1);
  if (hex.size() != 2 * kSize) {
    throw Error(ErrorCode::kParseError, "key must be 64 hex characters");
  }
  Bytes bytes{};
  for (std::size_t i = 0; i < kSize; ++i) {
    const int hi = hex_value(hex[2 * i]);
    const int lo = hex_value(hex[2 * i + 1]);
    if (hi < 0 || lo < 0) throw Error(ErrorCode::kParseError, "non-hex character in key");
    bytes[i] = static_cast<std::uint8_t>(hi * 16 + lo);
  }
  return WatermarkKey(bytes);
}

WatermarkKey WatermarkKey::from_seed(std::uint64_t seed) {
  SplitMix64 rng(seed);
  Bytes bytes{};
  for (std::size_t i = 0; i < kSize; i += 8) {
    const std::uint64_t word = rng.next();
    for (std::size_t j = 0; j < 8; ++j) bytes[i + j] = static_cast<std::uint8_t>(word >> (56 - 8 * j));
  }
  return WatermarkKey(bytes);
}

WatermarkKey WatermarkKey::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot open key file " + path);
  std::string line;
  std::getline(in, line);
  return from_hex(line);
}

std::string WatermarkKey::to_hex() const {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * kSize);
  for (std::uint8_t b : bytes_) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xf]);
  }
  return out;
}

void WatermarkKey::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kInvalidInput, "cannot write key file " + path);
  out << to_hex() << '\n';
}

WindowState::WindowState(std::uint32_t w) : w_(w) {
  if (w == 0) throw Error(ErrorCode::kInvalidConfig, "window size must be positive");
}

void WindowState::push(ClusterId cluster) {
  window_.push_back(cluster);
  if (window_.size() > w_) window_.pop_front();
}

std::array<std::uint8_t, 32> sha256(std::span<const std::uint8_t> message) {
  std::array<std::uint8_t, 32> digest{};
  unsigned int len = 0;
  if (EVP_Digest(message.data(), message.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != digest.size()) {
    throw Error(ErrorCode::kInvalidInput, "SHA-256 computation failed");
  }
  return digest;
}

std::uint64_t derive_seed(const WatermarkKey& key, const WindowState& window) {
  std::vector<std::uint8_t> message;
  message.reserve(WatermarkKey::kSize + 5 + 4 * window.clusters().size());
  message.insert(message.end(), key.bytes().begin(), key.bytes().end());
  message.push_back(kSeedDomain);
  append_be32(message, window.w());
  for (ClusterId c : window.clusters()) append_be32(message, c);

  const auto digest = sha256(message);
  std::uint64_t seed = 0;
  for (std::size_t i = 0; i < 8; ++i) seed = (seed << 8) | digest[i];
  return seed;
}

}  // namespace pasa
