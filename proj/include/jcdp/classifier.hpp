#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "jcdp/data.hpp"
#include "jcdp/nn.hpp"
#include "jcdp/tensor.hpp"

namespace jcdp {

enum class Activation { relu, silu };
enum class Pooling { max, avg };

struct ConvNetConfig {
  int in_channels = 3;
  int image_size = 16;
  int width = 16;
  int num_classes = 4;
  Activation act = Activation::relu;
  Pooling pool = Pooling::max;
};

// Per-call forward state; owning it outside the net keeps frozen-parameter
// forwards safe to run concurrently.
struct ConvNetCache {
  Tensor x;
  Tensor cols1, z1, h1, p1;
  Tensor cols2, z2, h2, p2;
  std::vector<std::int32_t> arg1, arg2;
  Tensor flat;
};

// conv(C->w) -> act -> pool2 -> conv(w->2w) -> act -> pool2 -> fc(K).
// h1/h2 (the post-activation maps) double as feature taps.
class ConvNet {
 public:
  ConvNet() = default;
  explicit ConvNet(const ConvNetConfig& cfg);

  void init_params(std::uint64_t seed);

  Tensor forward(const Tensor& x, ConvNetCache& cache) const;
  // Returns the input gradient; accumulates parameter gradients into `grads`
  // (aligned with params()) when non-null.
  Tensor backward(const Tensor& dlogits, const ConvNetCache& cache,
                  std::vector<Tensor>* grads) const;
  // Input gradient seeded at the feature taps instead of the logits.
  Tensor backward_from_taps(const Tensor& g1, const Tensor& g2, const ConvNetCache& cache) const;

  std::vector<Tensor*> params();
  std::vector<const Tensor*> params() const;
  static std::vector<std::string> param_names();
  std::vector<Tensor> zero_grads() const;
  std::int64_t param_count() const;

  const ConvNetConfig& config() const { return cfg_; }
  std::int64_t feature_dim() const;

 private:
  Tensor act_fwd(const Tensor& x) const;
  Tensor act_bwd(const Tensor& dy, const Tensor& x) const;

  ConvNetConfig cfg_;
  Tensor w1_, b1_, w2_, b2_, wf_, bf_;
};

// One optimizer step on a fixed batch; returns the batch loss.
double ce_train_step(ConvNet& net, nn::Adam& opt, const Tensor& xb,
                     const std::vector<std::int64_t>& yb);

// Mean cross-entropy gradient with respect to the input batch, parameters
// frozen. Optionally reports the loss.
Tensor ce_input_grad(const ConvNet& net, const Tensor& xb, const std::vector<std::int64_t>& yb,
                     double* loss);

std::vector<std::int64_t> predict_labels(const ConvNet& net, const Tensor& xb);
double accuracy_on(const ConvNet& net, const Dataset& ds, int batch = 64);

void save_classifier(const std::filesystem::path& dir, const ConvNet& net);
ConvNet load_classifier(const std::filesystem::path& dir);

}  // namespace jcdp
