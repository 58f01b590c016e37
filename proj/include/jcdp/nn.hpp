#pragma once

#include <cstdint>
#include <vector>

#include "jcdp/rng.hpp"
#include "jcdp/tensor.hpp"

namespace jcdp::nn {

// Low-level kernels. Layers are free functions over explicit tensors; every
// forward returns what the matching backward needs through caller-owned
// caches, so frozen networks can run any number of concurrent forwards.

// x: (N, Cin, H, W), w: (Cout, Cin*k*k), b: (Cout).
// cols, when given, receives the im2col matrix needed by the backward pass.
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int k, int stride,
                      int pad, Tensor* cols);

// dy: (N, Cout, OH, OW). Accumulates into dw/db when non-null; returns dx.
Tensor conv2d_backward(const Tensor& dy, const std::vector<std::int64_t>& x_shape,
                       const Tensor& w, const Tensor& cols, int k, int stride, int pad,
                       Tensor* dw, Tensor* db);

// x: (N, in), w: (out, in), b: (out).
Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor linear_backward(const Tensor& dy, const Tensor& x, const Tensor& w, Tensor* dw,
                       Tensor* db);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& dy, const Tensor& x);
Tensor silu_forward(const Tensor& x);
Tensor silu_backward(const Tensor& dy, const Tensor& x);

Tensor maxpool2_forward(const Tensor& x, std::vector<std::int32_t>* argmax);
Tensor maxpool2_backward(const Tensor& dy, const std::vector<std::int32_t>& argmax,
                         const std::vector<std::int64_t>& x_shape);
Tensor avgpool2_forward(const Tensor& x);
Tensor avgpool2_backward(const Tensor& dy, const std::vector<std::int64_t>& x_shape);

// Nearest-neighbour 2x upsample and its adjoint.
Tensor upsample2_forward(const Tensor& x);
Tensor upsample2_backward(const Tensor& dy);

// Sinusoidal position features for integer timesteps: (N, dim).
Tensor sinusoidal_embedding(const std::vector<int>& t, int dim);

// y[n,c,h,w] += e[n,c]; backward reduces dy over the spatial plane.
void add_channel_bias(Tensor& y, const Tensor& e);
Tensor channel_bias_backward(const Tensor& dy);

// Mean cross-entropy over the batch; fills dlogits (same shape) when non-null.
double softmax_ce_loss(const Tensor& logits, const std::vector<std::int64_t>& labels,
                       Tensor* dlogits);

// He-normal initialization with the given fan-in.
void init_he_normal(Tensor& w, std::int64_t fan_in, Rng& rng);

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second-moment adaptive optimizer over an externally owned parameter
// list. Moment tensors are positional; the parameter list must be stable.
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

  void init(const std::vector<Tensor*>& params);
  void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
            double lr_scale = 1.0);

  const AdamConfig& config() const { return cfg_; }
  std::int64_t step_count() const { return step_count_; }

 private:
  AdamConfig cfg_;
  std::int64_t step_count_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace jcdp::nn
