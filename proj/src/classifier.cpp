#include "jcdp/classifier.hpp"

#include <algorithm>
#include <stdexcept>

#include "jcdp/container.hpp"
#include "jcdp/rng.hpp"

namespace jcdp {

namespace {
constexpr int kK = 3, kStride = 1, kPad = 1;
}

ConvNet::ConvNet(const ConvNetConfig& cfg) : cfg_(cfg) {
  if (cfg.image_size % 4 != 0) throw std::invalid_argument("image size must be divisible by 4");
  const std::int64_t w = cfg.width;
  w1_.shape = {w, static_cast<std::int64_t>(cfg.in_channels) * kK * kK};
  b1_.shape = {w};
  w2_.shape = {2 * w, w * kK * kK};
  b2_.shape = {2 * w};
  wf_.shape = {cfg.num_classes, feature_dim()};
  bf_.shape = {static_cast<std::int64_t>(cfg.num_classes)};
  for (Tensor* t : {&w1_, &b1_, &w2_, &b2_, &wf_, &bf_}) {
    t->data.assign(static_cast<std::size_t>(numel_of(t->shape)), 0.0f);
  }
}

std::int64_t ConvNet::feature_dim() const {
  const std::int64_t s4 = cfg_.image_size / 4;
  return 2LL * cfg_.width * s4 * s4;
}

void ConvNet::init_params(std::uint64_t seed) {
  Rng rng(seed);
  nn::init_he_normal(w1_, w1_.shape[1], rng);
  nn::init_he_normal(w2_, w2_.shape[1], rng);
  nn::init_he_normal(wf_, wf_.shape[1], rng);
  b1_.fill(0.0f);
  b2_.fill(0.0f);
  bf_.fill(0.0f);
}

Tensor ConvNet::act_fwd(const Tensor& x) const {
  return cfg_.act == Activation::relu ? nn::relu_forward(x) : nn::silu_forward(x);
}

Tensor ConvNet::act_bwd(const Tensor& dy, const Tensor& x) const {
  return cfg_.act == Activation::relu ? nn::relu_backward(dy, x) : nn::silu_backward(dy, x);
}

Tensor ConvNet::forward(const Tensor& x, ConvNetCache& c) const {
  if (x.shape.size() != 4 || x.shape[1] != cfg_.in_channels || x.shape[2] != cfg_.image_size ||
      x.shape[3] != cfg_.image_size) {
    throw std::invalid_argument("classifier input shape mismatch: " + x.shape_str());
  }
  c.x = x;
  c.z1 = nn::conv2d_forward(x, w1_, b1_, kK, kStride, kPad, &c.cols1);
  c.h1 = act_fwd(c.z1);
  c.p1 = cfg_.pool == Pooling::max ? nn::maxpool2_forward(c.h1, &c.arg1)
                                   : nn::avgpool2_forward(c.h1);
  c.z2 = nn::conv2d_forward(c.p1, w2_, b2_, kK, kStride, kPad, &c.cols2);
  c.h2 = act_fwd(c.z2);
  c.p2 = cfg_.pool == Pooling::max ? nn::maxpool2_forward(c.h2, &c.arg2)
                                   : nn::avgpool2_forward(c.h2);
  c.flat = c.p2;
  c.flat.shape = {c.p2.shape[0], feature_dim()};
  return nn::linear_forward(c.flat, wf_, bf_);
}

Tensor ConvNet::backward(const Tensor& dlogits, const ConvNetCache& c,
                         std::vector<Tensor>* grads) const {
  Tensor* dw1 = nullptr, *db1 = nullptr, *dw2 = nullptr, *db2 = nullptr, *dwf = nullptr,
         *dbf = nullptr;
  if (grads) {
    if (grads->size() != 6) throw std::invalid_argument("gradient list size mismatch");
    dw1 = &(*grads)[0];
    db1 = &(*grads)[1];
    dw2 = &(*grads)[2];
    db2 = &(*grads)[3];
    dwf = &(*grads)[4];
    dbf = &(*grads)[5];
  }
  Tensor dflat = nn::linear_backward(dlogits, c.flat, wf_, dwf, dbf);
  Tensor dp2 = dflat;
  dp2.shape = c.p2.shape;
  Tensor dh2 = cfg_.pool == Pooling::max ? nn::maxpool2_backward(dp2, c.arg2, c.h2.shape)
                                         : nn::avgpool2_backward(dp2, c.h2.shape);
  Tensor dz2 = act_bwd(dh2, c.z2);
  Tensor dp1 = nn::conv2d_backward(dz2, c.p1.shape, w2_, c.cols2, kK, kStride, kPad, dw2, db2);
  Tensor dh1 = cfg_.pool == Pooling::max ? nn::maxpool2_backward(dp1, c.arg1, c.h1.shape)
                                         : nn::avgpool2_backward(dp1, c.h1.shape);
  Tensor dz1 = act_bwd(dh1, c.z1);
  return nn::conv2d_backward(dz1, c.x.shape, w1_, c.cols1, kK, kStride, kPad, dw1, db1);
}

Tensor ConvNet::backward_from_taps(const Tensor& g1, const Tensor& g2,
                                   const ConvNetCache& c) const {
  check_same_shape(g1, c.h1, "tap-1 gradient");
  check_same_shape(g2, c.h2, "tap-2 gradient");
  Tensor dz2 = act_bwd(g2, c.z2);
  Tensor dp1 = nn::conv2d_backward(dz2, c.p1.shape, w2_, c.cols2, kK, kStride, kPad, nullptr,
                                   nullptr);
  Tensor dh1 = cfg_.pool == Pooling::max ? nn::maxpool2_backward(dp1, c.arg1, c.h1.shape)
                                         : nn::avgpool2_backward(dp1, c.h1.shape);
  axpy(dh1, 1.0f, g1);
  Tensor dz1 = act_bwd(dh1, c.z1);
  return nn::conv2d_backward(dz1, c.x.shape, w1_, c.cols1, kK, kStride, kPad, nullptr, nullptr);
}

std::vector<Tensor*> ConvNet::params() { return {&w1_, &b1_, &w2_, &b2_, &wf_, &bf_}; }

std::vector<const Tensor*> ConvNet::params() const {
  return {&w1_, &b1_, &w2_, &b2_, &wf_, &bf_};
}

std::vector<std::string> ConvNet::param_names() {
  return {"conv1_w", "conv1_b", "conv2_w", "conv2_b", "fc_w", "fc_b"};
}

std::vector<Tensor> ConvNet::zero_grads() const {
  std::vector<Tensor> g;
  for (const Tensor* p : params()) g.push_back(zeros_like(*p));
  return g;
}

std::int64_t ConvNet::param_count() const {
  std::int64_t n = 0;
  for (const Tensor* p : params()) n += numel_of(p->shape);
  return n;
}

double ce_train_step(ConvNet& net, nn::Adam& opt, const Tensor& xb,
                     const std::vector<std::int64_t>& yb) {
  ConvNetCache cache;
  Tensor logits = net.forward(xb, cache);
  Tensor dlogits;
  const double loss = nn::softmax_ce_loss(logits, yb, &dlogits);
  std::vector<Tensor> grads = net.zero_grads();
  net.backward(dlogits, cache, &grads);
  std::vector<const Tensor*> gp;
  for (const Tensor& g : grads) gp.push_back(&g);
  opt.step(net.params(), gp);
  return loss;
}

Tensor ce_input_grad(const ConvNet& net, const Tensor& xb, const std::vector<std::int64_t>& yb,
                     double* loss) {
  ConvNetCache cache;
  Tensor logits = net.forward(xb, cache);
  Tensor dlogits;
  const double l = nn::softmax_ce_loss(logits, yb, &dlogits);
  if (loss) *loss = l;
  return net.backward(dlogits, cache, nullptr);
}

std::vector<std::int64_t> predict_labels(const ConvNet& net, const Tensor& xb) {
  ConvNetCache cache;
  Tensor logits = net.forward(xb, cache);
  const auto n = logits.shape[0], k = logits.shape[1];
  std::vector<std::int64_t> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = logits.data.data() + i * k;
    out[static_cast<std::size_t>(i)] =
        std::max_element(row, row + k) - row;
  }
  return out;
}

double accuracy_on(const ConvNet& net, const Dataset& ds, int batch) {
  const std::int64_t n = ds.size();
  if (n == 0) throw std::invalid_argument("empty dataset");
  std::int64_t hits = 0;
  for (std::int64_t begin = 0; begin < n; begin += batch) {
    const std::int64_t end = std::min(n, begin + batch);
    Tensor xb = ds.image_batch(begin, end);
    const auto pred = predict_labels(net, xb);
    for (std::int64_t i = begin; i < end; ++i) {
      if (pred[static_cast<std::size_t>(i - begin)] == ds.labels[static_cast<std::size_t>(i)]) {
        ++hits;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

void save_classifier(const std::filesystem::path& dir, const ConvNet& net) {
  Checkpoint ckpt;
  ckpt.kind = "classifier";
  const ConvNetConfig& cfg = net.config();
  ckpt.meta = {{"config",
                {{"in_channels", cfg.in_channels},
                 {"image_size", cfg.image_size},
                 {"width", cfg.width},
                 {"num_classes", cfg.num_classes},
                 {"activation", cfg.act == Activation::silu ? "silu" : "relu"},
                 {"pooling", cfg.pool == Pooling::avg ? "avg" : "max"}}}};
  const auto names = ConvNet::param_names();
  const auto params = net.params();
  for (std::size_t i = 0; i < names.size(); ++i) ckpt.tensors.emplace_back(names[i], *params[i]);
  save_checkpoint(dir, ckpt);
}

ConvNet load_classifier(const std::filesystem::path& dir) {
  Checkpoint ckpt = load_checkpoint(dir);
  if (ckpt.kind != "classifier") {
    throw std::runtime_error("checkpoint kind is '" + ckpt.kind + "', expected 'classifier'");
  }
  ConvNetConfig cfg;
  try {
    const auto& j = ckpt.meta.at("config");
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.image_size = j.at("image_size").get<int>();
    cfg.width = j.at("width").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    cfg.act = j.at("activation").get<std::string>() == "silu" ? Activation::silu
                                                              : Activation::relu;
    cfg.pool = j.at("pooling").get<std::string>() == "avg" ? Pooling::avg : Pooling::max;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt classifier metadata: " + std::string(e.what()));
  }
  ConvNet net(cfg);
  auto params = net.params();
  const auto names = ConvNet::param_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Tensor& saved = ckpt.tensor(names[i]);
    if (saved.shape != params[i]->shape) {
      throw std::runtime_error("classifier checkpoint shape mismatch on '" + names[i] + "'");
    }
    *params[i] = saved;
  }
  return net;
}

}  // namespace jcdp
