#pragma once

#include <cstdint>

#include "jcdp/data.hpp"

namespace jcdp {

// Procedural benchmark: colored textured shapes, one (shape, hue) pair per
// class. family 1 uses a disjoint hue palette and shape set plus inverted
// brightness, standing in for a distribution-mismatched surrogate source.
struct ToyDataConfig {
  int num_classes = 4;  // 4..10
  int image_size = 16;  // 16 or 32
  int train_count = 2000;
  int test_count = 500;
  int family = 0;  // 0: base, 1: disjoint palette
};

struct ToySplits {
  Dataset train;
  Dataset test;
};

ToySplits gen_toy_data(const ToyDataConfig& cfg, std::uint64_t seed);

}  // namespace jcdp
