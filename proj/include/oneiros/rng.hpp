#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace oneiros {

/// SplitMix64 generator. Portable and bit-reproducible across platforms, so
/// mock backends agree with implementations in other languages.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}

  std::uint64_t next() noexcept;

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform() noexcept;

 private:
  std::uint64_t state_;
};

/// Standard normal deviates from a SplitMix64 stream via Box-Muller. Each
/// pair of uniforms (u1, u2) yields r·cos(2πu2) then r·sin(2πu2), with
/// r = sqrt(-2 ln(1 - u1)).
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) noexcept : rng_(seed) {}

  double next() noexcept;
  std::vector<double> take(std::size_t n);

 private:
  SplitMix64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

/// SplitMix64 output function applied to a single value.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Seed for child stream `index` of `base`: the index-th output of a
/// SplitMix64 stream started at `base`. Stable under any scheduling order.
std::uint64_t split_seed(std::uint64_t base, std::uint64_t index) noexcept;

}  // namespace oneiros
