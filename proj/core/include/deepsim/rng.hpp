#pragma once

#include <cstdint>

namespace deepsim {

/// Counter-based generator: every draw is a pure function of (seed, index),
/// so draws can be taken in any order or from any thread.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  [[nodiscard]] std::uint64_t seed() const { return seed_; }

  /// 64 random bits for draw `index`.
  [[nodiscard]] std::uint64_t bits(std::uint64_t index) const;
  /// Uniform on [0, 1) with 53 bits of resolution.
  [[nodiscard]] double uniform(std::uint64_t index) const;
  /// Uniform on [lo, hi).
  [[nodiscard]] double uniform(std::uint64_t index, double lo, double hi) const {
    return lo + (hi - lo) * uniform(index);
  }
  /// Standard normal (Box-Muller over draws 2*index and 2*index+1).
  [[nodiscard]] double normal(std::uint64_t index) const;
  /// Integer uniform on [0, n).
  [[nodiscard]] std::uint64_t below(std::uint64_t index, std::uint64_t n) const;

  /// Independent child generator for a named sub-stream.
  [[nodiscard]] Rng split(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
};

/// Sequential view over an Rng, for code that just wants "the next draw".
class RngCursor {
 public:
  explicit RngCursor(Rng rng) : rng_(rng) {}

  double uniform() { return rng_.uniform(next_++); }
  double uniform(double lo, double hi) { return rng_.uniform(next_++, lo, hi); }
  double normal() { return rng_.normal(next_++); }
  std::uint64_t below(std::uint64_t n) { return rng_.below(next_++, n); }

 private:
  Rng rng_;
  std::uint64_t next_ = 0;
};

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

}  // namespace deepsim
