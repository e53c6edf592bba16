#pragma once

#include <cstdint>
#include <span>
#include <utility>

namespace karma {

/// Counter-based generator: the i-th draw is the SplitMix64 finalizer applied to
/// key + (i + 1) * 0x9E3779B97F4A7C15, where key mixes (seed, stream). Integer arithmetic only.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "splitmix64-counter";

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller; consumes two draws.
  double normal();
  /// Uniform integer on [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent generator for a named sub-stream; does not advance this one.
  Rng fork(std::uint64_t stream) const;

  /// Fisher-Yates, independent of the standard library's shuffle implementation.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace karma
