#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jcdp/nn.hpp"
#include "jcdp/tensor.hpp"

namespace jcdp {

// Architecture knobs for the noise-prediction network. depth counts
// resolutions: 1 keeps everything at full size, 2 adds a stride-2 stage.
struct DenoiserSpec {
  int channels = 3;
  int base_width = 32;
  int depth = 2;
  int time_embedding_dim = 32;

  std::int64_t parameter_count() const;
};

struct DenoiserCache {
  std::vector<std::int64_t> x_shape;
  Tensor e0, e1z, e1, be, bm;
  Tensor cols_in, a1, a2;
  Tensor cols_enc, a3, a4;
  Tensor cols_down, a5, a6;
  Tensor cols_mid1, a8, a9;
  Tensor cols_mid2, a10, a11;
  Tensor a12;
  Tensor cols_up, a13, a14, a15;
  Tensor cols_dec, a16, a17;
  Tensor cols_out;
};

// U-shaped convolutional denoiser with sinusoidal time features injected as
// per-channel biases. Output conv is zero-initialized so the untrained net
// predicts zero noise.
class Denoiser {
 public:
  Denoiser() = default;
  explicit Denoiser(const DenoiserSpec& spec);

  void init_params(std::uint64_t seed);

  // x: (N, C, S, S) in model_sym values; ts: one timestep per batch element.
  Tensor forward(const Tensor& x, const std::vector<int>& ts, DenoiserCache& cache) const;
  // Accumulates parameter gradients aligned with params(); input gradient is
  // not propagated (training never needs it).
  void backward(const Tensor& dy, const DenoiserCache& cache, std::vector<Tensor>* grads) const;

  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
  std::vector<std::string> param_names() const;
  std::vector<Tensor> zero_grads() const;

  const DenoiserSpec& spec() const { return spec_; }

 private:
  DenoiserSpec spec_;
  // Time pipeline.
  Tensor wt_, bt_;
  Tensor enc_proj_w_, enc_proj_b_;
  Tensor mid_proj_w_, mid_proj_b_;
  // Conv stack.
  Tensor in_w_, in_b_;
  Tensor enc_w_, enc_b_;
  Tensor down_w_, down_b_;
  Tensor mid1_w_, mid1_b_;
  Tensor mid2_w_, mid2_b_;
  Tensor up_w_, up_b_;
  Tensor dec_w_, dec_b_;
  Tensor out_w_, out_b_;
};

}  // namespace jcdp
