#include "jcdp/rng.hpp"

#include <cmath>

namespace jcdp {
namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t x = seed;
  for (auto& si : s_) si = splitmix64(x);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform_open() { return double((next_u64() >> 11) + 1) * 0x1.0p-53; }

float Rng::normal() {
  const double u1 = uniform_open();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return float(r * std::cos(6.283185307179586 * u2));
}

std::uint64_t Rng::below(std::uint64_t n) {
  // Rejection-free bounded draw via 128-bit multiply; bias is < 2^-64.
  return std::uint64_t((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
}

void Rng::fill_normal(std::span<float> out) {
  for (auto& v : out) v = normal();
}

Rng Rng::fork(std::uint64_t tag) const {
  std::uint64_t x = seed_ ^ (0x9e3779b97f4a7c15ULL + tag * 0xd1b54a32d192ed03ULL);
  return Rng(splitmix64(x));
}

std::uint64_t fnv1a64(const void* bytes, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace jcdp
