#pragma once

#include <array>
#include <cstdint>
#include <cstddef>
#include <span>

namespace jcdp {

// Deterministic xoshiro256++ stream with splitmix64 seeding. All randomness
// in the project flows through explicitly passed Rng instances; nothing uses
// global or platform-dependent generators, so equal seeds reproduce runs
// bit-for-bit across builds.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();

  // Uniform in (0, 1]; never zero, safe under log().
  double uniform_open();

  // Standard normal via Box-Muller, computed in double and rounded once.
  float normal();

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  void fill_normal(std::span<float> out);

  // Derive an independent stream from the construction seed and a tag.
  // Fork order and consumption state do not affect the result.
  Rng fork(std::uint64_t tag) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_;
};

// FNV-1a over raw bytes; used to derive per-sample RNG streams from content.
std::uint64_t fnv1a64(const void* bytes, std::size_t n);

}  // namespace jcdp
