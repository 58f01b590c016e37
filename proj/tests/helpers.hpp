#pragma once

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "jcdp/data.hpp"
#include "jcdp/rng.hpp"
#include "jcdp/tensor.hpp"

namespace jcdp::test {

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    m = std::max(m, std::fabs(double(a.data[i]) - double(b.data[i])));
  }
  return m;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0;
}

// ||a - n|| / ||n||, the aggregate relative error of an analytic gradient
// against its numeric counterpart.
inline double rel_error(const std::vector<double>& analytic, const std::vector<double>& numeric) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    num += d * d;
    den += numeric[i] * numeric[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

inline Tensor random_tensor(const std::vector<std::int64_t>& shape, Rng& rng, float lo = -1.0f,
                            float hi = 1.0f) {
  Tensor t(shape);
  for (float& v : t.data) v = lo + (hi - lo) * static_cast<float>(rng.uniform());
  return t;
}

inline Dataset tiny_dataset(std::int64_t n, int num_classes, int size, std::uint64_t seed,
                            int channels = 3) {
  Rng rng(seed);
  Dataset d;
  d.images = Tensor({n, channels, size, size});
  for (float& v : d.images.data) {
    v = 0.05f + 0.9f * static_cast<float>(rng.uniform());
  }
  for (std::int64_t i = 0; i < n; ++i) d.labels.push_back(i % num_classes);
  for (int k = 0; k < num_classes; ++k) d.class_names.push_back("c" + std::to_string(k));
  return d;
}

// Unique per-process scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("jcdp-test-" + tag + "-" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace jcdp::test
