#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace hgan {

// Independent noise streams. A draw is addressed by (seed, index, step, stream)
// so any draw can be reproduced without replaying earlier ones.
enum class Stream : std::uint32_t {
  brownian = 0,
  initial_jitter = 1,
  latent = 2,
  interpolation = 3,
  shuffle = 4,
  init_weights = 5,
  probe = 6,
};

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
class Philox {
 public:
  using Block = std::array<std::uint32_t, 4>;

  explicit constexpr Philox(std::uint64_t seed)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  [[nodiscard]] constexpr Block operator()(Block ctr) const {
    std::array<std::uint32_t, 2> key = key_;
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = std::uint64_t{kM0} * ctr[0];
      const std::uint64_t p1 = std::uint64_t{kM1} * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
      const auto lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
      const auto lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
      key[0] += kW0;
      key[1] += kW1;
    }
    return ctr;
  }

 private:
  static constexpr std::uint32_t kM0 = 0xD2511F53u;
  static constexpr std::uint32_t kM1 = 0xCD9E8D57u;
  static constexpr std::uint32_t kW0 = 0x9E3779B9u;
  static constexpr std::uint32_t kW1 = 0xBB67AE85u;
  std::array<std::uint32_t, 2> key_;
};

namespace detail {

// 53-bit uniform strictly inside (0, 1).
constexpr double to_open_unit(std::uint32_t hi, std::uint32_t lo) {
  const std::uint64_t bits = ((std::uint64_t{hi} << 32) | lo) >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

constexpr Philox::Block counter(std::uint64_t index, std::uint64_t step, Stream stream) {
  return {static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
          static_cast<std::uint32_t>(step),
          static_cast<std::uint32_t>(stream) ^ (static_cast<std::uint32_t>(step >> 32) << 8)};
}

}  // namespace detail

inline double uniform_at(std::uint64_t seed, std::uint64_t index, std::uint64_t step,
                         Stream stream) {
  const auto block = Philox{seed}(detail::counter(index, step, stream));
  return detail::to_open_unit(block[0], block[1]);
}

// Standard normal via Box-Muller on the two uniforms of one Philox block.
inline double normal_at(std::uint64_t seed, std::uint64_t index, std::uint64_t step,
                        Stream stream) {
  const auto block = Philox{seed}(detail::counter(index, step, stream));
  const double u1 = detail::to_open_unit(block[0], block[1]);
  const double u2 = detail::to_open_unit(block[2], block[3]);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// SplitMix64 finalizer; used to derive sub-seeds from (seed, tag) pairs.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix64(seed ^ mix64(tag));
}

}  // namespace hgan
