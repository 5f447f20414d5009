#pragma once

#include <cstdint>
#include <random>

#include "dmden/types.hpp"

namespace dmden {

/// SplitMix64 finalizer. Used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Seed of the worker/element stream `index` under `master`:
/// mix64(master XOR index). Results never depend on how streams are
/// scheduled across workers.
std::uint64_t stream_seed(std::uint64_t master, std::uint64_t index) noexcept;

/// Seeded random stream. Copyable; copies continue identically.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  /// Stream `index` derived from `master` via stream_seed().
  static Rng stream(std::uint64_t master, std::uint64_t index) {
    return Rng(stream_seed(master, index));
  }

  double normal() { return normal_(engine_); }
  /// Uniform on [0, 1).
  double uniform() { return std::generate_canonical<double, 53>(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t next_u64() { return engine_(); }
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);

  Vector normal_vector(Eigen::Index n);
  /// n-by-count matrix of i.i.d. standard normals, filled column by column.
  Batch normal_batch(Eigen::Index n, Eigen::Index count);

  friend bool operator==(const Rng& a, const Rng& b) {
    return a.engine_ == b.engine_ && a.normal_ == b.normal_;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace dmden
