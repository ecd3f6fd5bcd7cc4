#pragma once

#include <cstdint>
#include <random>

namespace llts {

/// Counter-based seed splitting: the child seed depends only on (seed,
/// stream), never on how many draws other streams made.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded generator used everywhere randomness is needed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(split_seed(seed, 0)) {}
  Rng(std::uint64_t seed, std::uint64_t stream) : engine_(split_seed(seed, stream)) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  /// Inclusive range.
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace llts
