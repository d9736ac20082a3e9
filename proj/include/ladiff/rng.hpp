#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace ladiff {

/// Mixes a 64-bit value (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x);

/// Derives a child seed from a parent seed and a stream id. Used everywhere a
/// per-sample or per-replicate stream is needed so results never depend on
/// scheduling order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  /// `count` distinct indices from [0, n), uniformly without replacement,
  /// in draw order.
  std::vector<std::size_t> choose(std::size_t n, std::size_t count);

  /// Independent stream for `stream`, derived from this generator's seed.
  Rng split(std::uint64_t stream) const { return Rng(derive_seed(seed_, stream)); }

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace ladiff
