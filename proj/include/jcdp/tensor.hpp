#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace jcdp {

// Dense row-major float32 tensor. Shapes are explicit; every operation that
// combines tensors checks them. Value semantics throughout.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s);

  std::int64_t numel() const;
  std::int64_t dim(int i) const { return shape.at(std::size_t(i)); }
  int ndim() const { return int(shape.size()); }

  float* ptr() { return data.data(); }
  const float* ptr() const { return data.data(); }

  // NCHW element access for 4-d tensors.
  float& at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w);
  float at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  std::string shape_str() const;

  void fill(float v);
};

std::int64_t numel_of(const std::vector<std::int64_t>& shape);

Tensor zeros_like(const Tensor& t);

// Throws std::invalid_argument naming `what` on mismatch.
void check_same_shape(const Tensor& a, const Tensor& b, const char* what);

// Elementwise helpers used across the pipeline.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);
void axpy(Tensor& y, float alpha, const Tensor& x);  // y += alpha * x
float max_abs(const Tensor& a);
float l2_norm(const Tensor& a);
bool all_finite(const Tensor& a);
void clamp_(Tensor& a, float lo, float hi);

// One image slice of a batch tensor (N,C,H,W) -> view copy (1,C,H,W) or raw span.
std::span<const float> batch_element(const Tensor& t, std::int64_t n);
std::span<float> batch_element(Tensor& t, std::int64_t n);

// Image batches carry their value range so ops can enforce the space they
// expect. data_unit is [0,1] (dataset IO); model_sym is [-1,1] (model math).
enum class ValueSpace { data_unit, model_sym };

struct ImageBatch {
  Tensor data;  // (N, C, H, W)
  ValueSpace space = ValueSpace::data_unit;

  std::int64_t batch() const { return data.dim(0); }
  std::int64_t channels() const { return data.dim(1); }
  std::int64_t height() const { return data.dim(2); }
  std::int64_t width() const { return data.dim(3); }
  std::int64_t per_image() const { return data.numel() / data.dim(0); }
};

// Affine conversions between the two spaces, computed in double so the only
// rounding is the final float store (at most one ulp at unit scale).
ImageBatch to_model_sym(const ImageBatch& x);
ImageBatch to_data_unit(const ImageBatch& x);

// Clamp to the declared space bounds in place.
void clamp_to_space(ImageBatch& x);

// Per-element PSNR between unit-space batches, in dB, capped at 120 dB.
std::vector<double> psnr_per_element(const ImageBatch& a, const ImageBatch& b);
double mean_psnr(const ImageBatch& a, const ImageBatch& b);

}  // namespace jcdp
