#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string_view>

namespace sparsepce {

namespace detail {

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Counter-based generator keyed by (master seed, trial id, stream).
///
/// The n-th draw of a stream is a pure function of the key and n, so two
/// streams never share state and a trial can be replayed in isolation or on
/// another worker. `derive` produces an independent child stream, which is
/// how per-purpose streams (sample points, noise, validation split, ...) are
/// carved out of a trial.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t trial = 0, std::uint64_t stream = 0) noexcept
      : key_(detail::mix64(detail::mix64(detail::mix64(seed) ^ (trial + 0x632be59bd9b4e019ULL)) ^
                           (stream + 0x8cb92ba72f3d8dd7ULL))) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return detail::mix64(key_ ^ detail::mix64(counter_++)); }

  /// Independent child stream. Does not advance this stream.
  [[nodiscard]] Rng derive(std::uint64_t tag) const noexcept { return Rng(ChildTag{}, key_, tag); }
  [[nodiscard]] Rng derive(std::string_view tag) const noexcept { return derive(detail::fnv1a(tag)); }

  /// Uniform on the open interval (0, 1).
  double uniform() noexcept {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; one normal per two uniforms, no cached state.
  double normal() noexcept {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, bound). Lemire's multiply-shift, bias below 2^-64 * bound.
  std::uint64_t below(std::uint64_t bound) noexcept {
    __extension__ using u128 = unsigned __int128;
    return static_cast<std::uint64_t>((static_cast<u128>((*this)()) * bound) >> 64);
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  struct ChildTag {};
  Rng(ChildTag, std::uint64_t key, std::uint64_t tag) noexcept
      : key_(detail::mix64(key ^ detail::mix64(tag ^ 0xd1b54a32d192ed03ULL))) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates shuffle driven by Rng (std::shuffle is implementation-defined).
template <typename RandomIt>
void shuffle(RandomIt first, RandomIt last, Rng& rng) {
  const auto n = last - first;
  for (auto i = n - 1; i > 0; --i) {
    const auto j = static_cast<decltype(i)>(rng.below(static_cast<std::uint64_t>(i) + 1));
    using std::swap;
    swap(first[i], first[j]);
  }
}

}  // namespace sparsepce
