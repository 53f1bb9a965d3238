#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <type_traits>
#include <vector>

namespace metacritic {

/// Counter-based deterministic random streams.
///
/// Every random draw in the project derives from one declared experiment
/// seed. Independent streams are split off by mixing the seed with a list
/// of labels (strings and integers), so the stream for e.g.
/// (seed, "episode", split, index) is a pure function of those values and
/// never depends on how many draws other streams made. The generator is
/// splitmix64; uniform doubles take the top 53 bits, normals come from
/// Box-Muller. No std::random distribution is used anywhere, so sequences
/// are identical across standard libraries.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t state) : state_(state) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (cosine branch).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925286766559 * u2);
  }

  /// Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  /// First `k` entries of a Fisher-Yates shuffle of `items`.
  template <typename T>
  std::vector<T> sample_without_replacement(std::vector<T> items,
                                            std::size_t k) {
    if (k > items.size()) k = items.size();
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(items.size() - i));
      std::swap(items[i], items[j]);
    }
    items.resize(k);
    return items;
  }

 private:
  std::uint64_t state_;
};

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline void fold(std::uint64_t& state, std::uint64_t value) {
  state = mix64(state ^ (value + 0x9E3779B97F4A7C15ULL + (state << 6)));
}

inline void fold_label(std::uint64_t& state, std::string_view label) {
  fold(state, fnv1a(label));
}
inline void fold_label(std::uint64_t& state, const char* label) {
  fold(state, fnv1a(label));
}
template <typename T>
  requires std::is_integral_v<T>
void fold_label(std::uint64_t& state, T label) {
  fold(state, static_cast<std::uint64_t>(label));
}

}  // namespace detail

/// Derive the stream for (seed, labels...). Pure; order of labels matters.
template <typename... Labels>
RandomStream derive_stream(std::uint64_t seed, const Labels&... labels) {
  std::uint64_t state = detail::mix64(seed ^ 0x5851F42D4C957F2DULL);
  (detail::fold_label(state, labels), ...);
  return RandomStream(state);
}

}  // namespace metacritic
