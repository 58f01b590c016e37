#include "jcdp/data.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace jcdp {

Dataset Dataset::subset(std::int64_t begin, std::int64_t end) const {
  if (begin < 0 || end > size() || begin > end)
    throw std::invalid_argument("Dataset::subset: range out of bounds");
  Dataset out;
  const std::int64_t per = images.numel() / std::max<std::int64_t>(1, images.dim(0));
  out.images = Tensor({end - begin, images.dim(1), images.dim(2), images.dim(3)});
  std::memcpy(out.images.ptr(), images.ptr() + begin * per,
              std::size_t((end - begin) * per) * sizeof(float));
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  out.class_names = class_names;
  return out;
}

Tensor Dataset::image_batch(std::int64_t begin, std::int64_t end) const {
  if (begin < 0 || end > size() || begin > end)
    throw std::invalid_argument("Dataset::image_batch: range out of bounds");
  const std::int64_t per = images.numel() / std::max<std::int64_t>(1, images.dim(0));
  Tensor out({end - begin, images.dim(1), images.dim(2), images.dim(3)});
  std::memcpy(out.ptr(), images.ptr() + begin * per,
              std::size_t((end - begin) * per) * sizeof(float));
  return out;
}

}  // namespace jcdp
