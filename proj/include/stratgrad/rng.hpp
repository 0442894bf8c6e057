#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace stratgrad {

/// Portable random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. The standard distributions are not, so every variate used in the
/// project is derived here from raw 64-bit words:
///   - uniform doubles take the top 53 bits of one word,
///   - normals use the Marsaglia polar method (log and sqrt only),
///   - bounded integers use rejection on the top bits.
/// Independent streams are keyed by (seed, path...) through a SplitMix64 mix,
/// so a run reproduces bit-for-bit on any conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  /// Stream keyed by a base seed and a path such as {experiment, round, stratum}.
  static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> path);

  std::uint64_t next() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal.
  double normal();
  double normal(double mu, double sigma) { return mu + sigma * normal(); }
  /// Uniform integer on [0, n). Requires n > 0.
  std::size_t index(std::size_t n);

  /// k distinct indices from [0, n), in draw order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// SplitMix64 finalizer; used to derive stream seeds.
std::uint64_t mix64(std::uint64_t x);

}  // namespace stratgrad
