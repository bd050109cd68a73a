#pragma once

#include <cstdint>
#include <cstddef>
#include <utility>
#include <initializer_list>

namespace sliceforge {

/// SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Counter-based random stream. The key is derived from an ordered list of
/// integers (seed, epoch, sample index, layer index, ...); the n-th draw is a
/// pure function of (key, n), so results never depend on evaluation order.
class RngStream {
 public:
  RngStream(std::initializer_list<std::uint64_t> key_parts) {
    std::uint64_t k = 0x5F3759DF2B2A1C4Dull;
    for (std::uint64_t part : key_parts) k = splitmix64(k ^ splitmix64(part));
    key_ = k;
  }

  std::uint64_t next_u64() { return splitmix64(key_ + 0x9E3779B97F4A7C15ull * ++counter_); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) via rejection, n >= 1.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~0ull - (~0ull % n);
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % n;
  }

  /// Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(below(static_cast<std::uint64_t>(hi - lo) + 1));
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Key-domain tags so that streams used for different purposes never collide.
namespace stream_tag {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kDropout = 3;
inline constexpr std::uint64_t kAugment = 4;
inline constexpr std::uint64_t kSplit = 5;
inline constexpr std::uint64_t kSynthetic = 6;
inline constexpr std::uint64_t kVisualize = 7;
}  // namespace stream_tag

/// Fisher-Yates shuffle driven by a stream; reproducible on every platform.
template <typename Container>
void deterministic_shuffle(Container& items, RngStream& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.below(i));
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace sliceforge
