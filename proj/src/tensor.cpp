#include "jcdp/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace jcdp {

std::int64_t numel_of(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw std::invalid_argument("negative tensor dimension");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<std::int64_t> s) : shape(std::move(s)) {
  data.assign(std::size_t(numel_of(shape)), 0.0f);
}

std::int64_t Tensor::numel() const { return std::int64_t(data.size()); }

float& Tensor::at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
  return data[std::size_t(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
}

float Tensor::at4(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
  return data[std::size_t(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ")";
  return os.str();
}

void Tensor::fill(float v) {
  for (auto& x : data) x = v;
}

Tensor zeros_like(const Tensor& t) { return Tensor(t.shape); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

Tensor scale(const Tensor& a, float s) {
  Tensor out = a;
  for (auto& v : out.data) v *= s;
  return out;
}

void axpy(Tensor& y, float alpha, const Tensor& x) {
  check_same_shape(y, x, "axpy");
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += alpha * x.data[i];
}

float max_abs(const Tensor& a) {
  float m = 0.0f;
  for (float v : a.data) m = std::max(m, std::fabs(v));
  return m;
}

float l2_norm(const Tensor& a) {
  double s = 0.0;
  for (float v : a.data) s += double(v) * double(v);
  return float(std::sqrt(s));
}

bool all_finite(const Tensor& a) {
  for (float v : a.data)
    if (!std::isfinite(v)) return false;
  return true;
}

void clamp_(Tensor& a, float lo, float hi) {
  for (auto& v : a.data) v = std::min(hi, std::max(lo, v));
}

std::span<const float> batch_element(const Tensor& t, std::int64_t n) {
  const std::int64_t per = t.numel() / t.dim(0);
  return {t.ptr() + n * per, std::size_t(per)};
}

std::span<float> batch_element(Tensor& t, std::int64_t n) {
  const std::int64_t per = t.numel() / t.dim(0);
  return {t.ptr() + n * per, std::size_t(per)};
}

ImageBatch to_model_sym(const ImageBatch& x) {
  if (x.space == ValueSpace::model_sym) return x;
  ImageBatch out{x.data, ValueSpace::model_sym};
  for (auto& v : out.data.data) v = float(double(v) * 2.0 - 1.0);
  return out;
}

ImageBatch to_data_unit(const ImageBatch& x) {
  if (x.space == ValueSpace::data_unit) return x;
  ImageBatch out{x.data, ValueSpace::data_unit};
  for (auto& v : out.data.data) v = float(double(v) * 0.5 + 0.5);
  return out;
}

void clamp_to_space(ImageBatch& x) {
  if (x.space == ValueSpace::data_unit)
    clamp_(x.data, 0.0f, 1.0f);
  else
    clamp_(x.data, -1.0f, 1.0f);
}

std::vector<double> psnr_per_element(const ImageBatch& a, const ImageBatch& b) {
  if (a.space != ValueSpace::data_unit || b.space != ValueSpace::data_unit)
    throw std::invalid_argument("psnr expects data_unit inputs");
  check_same_shape(a.data, b.data, "psnr");
  const std::int64_t n = a.batch();
  const std::int64_t per = a.per_image();
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    auto pa = batch_element(a.data, i);
    auto pb = batch_element(b.data, i);
    double mse = 0.0;
    for (std::int64_t j = 0; j < per; ++j) {
      const double d = double(pa[std::size_t(j)]) - double(pb[std::size_t(j)]);
      mse += d * d;
    }
    mse /= double(per);
    out[std::size_t(i)] = mse <= 1e-12 ? 120.0 : -10.0 * std::log10(mse);
  }
  return out;
}

double mean_psnr(const ImageBatch& a, const ImageBatch& b) {
  auto v = psnr_per_element(a, b);
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / double(v.size());
}

}  // namespace jcdp
