#include "sbi/core/rng.hpp"

#include <bit>
#include <cmath>
#include <numbers>

namespace sbi {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

constexpr std::uint64_t fmix64(std::uint64_t k) noexcept {
  k ^= k >> 33;
  k *= 0xFF51AFD7ED558CCDULL;
  k ^= k >> 33;
  k *= 0xC4CEB9FE1A85EC53ULL;
  k ^= k >> 33;
  return k;
}

}  // namespace

RngKey make_key(std::uint64_t seed) noexcept { return RngKey{0, seed}; }

RngKey fold_in(RngKey key, std::uint64_t index) noexcept {
  const std::uint64_t lo = fmix64(key.lo ^ fmix64(index + kGolden));
  const std::uint64_t hi = fmix64(key.hi ^ std::rotl(lo, 23) ^ 0xD1B54A32D192ED03ULL);
  return RngKey{hi, lo};
}

std::vector<RngKey> split(RngKey key, std::size_t n) {
  std::vector<RngKey> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(fold_in(key, i));
  return out;
}

Generator::Generator(RngKey key) noexcept
    : state_(fmix64(key.hi ^ 0x2545F4914F6CDD1DULL) ^ key.lo) {}

std::uint64_t Generator::next_u64() noexcept {
  std::uint64_t z = (state_ += kGolden);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double Generator::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Generator::normal() noexcept {
  if (has_cached_) {
    has_cached_ = false;
    return cached_normal_;
  }
  const double u1 = uniform_open_low();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * std::numbers::pi * u2;
  cached_normal_ = r * std::sin(a);
  has_cached_ = true;
  return r * std::cos(a);
}

namespace {
__extension__ using u128 = unsigned __int128;
}  // namespace

std::uint64_t Generator::below(std::uint64_t n) noexcept {
  if (n <= 1) return 0;
  // Lemire (2019), unbiased.
  u128 m = static_cast<u128>(next_u64()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<u128>(next_u64()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

}  // namespace sbi
