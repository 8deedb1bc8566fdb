#pragma once

#include <compare>
#include <cstdint>
#include <vector>

namespace sbi {

/// Counter-based random key. Keys are values: deriving a child key never
/// mutates the parent, so every stochastic operation is reproducible given
/// the key it receives.
struct RngKey {
  std::uint64_t hi = 0;
  std::uint64_t lo = 0;

  auto operator<=>(const RngKey&) const = default;
};

/// Key for an integer seed (analogous to PRNGKey(seed)).
RngKey make_key(std::uint64_t seed) noexcept;

/// Derives a child key. The low word is a bijection of `index` for a fixed
/// parent, so distinct indices always give distinct children.
///
///   lo' = fmix64(lo ^ fmix64(index + 0x9E3779B97F4A7C15))
///   hi' = fmix64(hi ^ rotl(lo', 23) ^ 0xD1B54A32D192ED03)
///
/// fmix64 is the MurmurHash3 64-bit finalizer.
RngKey fold_in(RngKey key, std::uint64_t index) noexcept;

/// `n` children fold_in(key, 0..n-1).
std::vector<RngKey> split(RngKey key, std::size_t n);

/// SplitMix64 stream seeded from a key. Cheap to construct; use one per
/// logical stream of draws.
class Generator {
 public:
  explicit Generator(RngKey key) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform on (0, 1].
  double uniform_open_low() noexcept { return 1.0 - uniform(); }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller (second value cached).
  double normal() noexcept;
  /// Uniform integer in [0, n). Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) noexcept;

 private:
  std::uint64_t state_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace sbi
