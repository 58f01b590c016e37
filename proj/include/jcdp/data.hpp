#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jcdp/tensor.hpp"

namespace jcdp {

// One split of a labeled image dataset, images in data_unit space.
struct Dataset {
  Tensor images;  // (N, C, H, W), values in [0, 1]
  std::vector<std::int64_t> labels;
  std::vector<std::string> class_names;

  std::int64_t size() const { return images.ndim() == 4 ? images.dim(0) : 0; }
  std::int64_t num_classes() const { return std::int64_t(class_names.size()); }

  ImageBatch batch() const { return ImageBatch{images, ValueSpace::data_unit}; }
  Dataset subset(std::int64_t begin, std::int64_t end) const;
  // Contiguous image slice [begin, end) as its own (n, C, H, W) tensor.
  Tensor image_batch(std::int64_t begin, std::int64_t end) const;
};

}  // namespace jcdp
