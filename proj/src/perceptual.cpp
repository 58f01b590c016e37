#include "jcdp/perceptual.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "jcdp/container.hpp"
#include "jcdp/rng.hpp"

namespace jcdp {

namespace {

constexpr double kNormEps = 1e-12;

// Unit-normalizes v along the channel axis at every spatial position:
// y = v / sqrt(sum_c v_c^2 + eps).
Tensor channel_normalize(const Tensor& v) {
  const auto n = v.shape[0], c = v.shape[1], h = v.shape[2], w = v.shape[3];
  Tensor y = v;
  for (std::int64_t img = 0; img < n; ++img) {
    for (std::int64_t p = 0; p < h * w; ++p) {
      double ss = kNormEps;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double x = v.data[static_cast<std::size_t>(((img * c + ch) * h * w) + p)];
        ss += x * x;
      }
      const float inv = static_cast<float>(1.0 / std::sqrt(ss));
      for (std::int64_t ch = 0; ch < c; ++ch) {
        y.data[static_cast<std::size_t>(((img * c + ch) * h * w) + p)] *= inv;
      }
    }
  }
  return y;
}

// dL/dv given dL/dy for the normalization above:
// dv = g/s - v * (g.v) / s^3, per position.
Tensor channel_normalize_backward(const Tensor& g, const Tensor& v) {
  const auto n = v.shape[0], c = v.shape[1], h = v.shape[2], w = v.shape[3];
  Tensor dv = zeros_like(v);
  for (std::int64_t img = 0; img < n; ++img) {
    for (std::int64_t p = 0; p < h * w; ++p) {
      double ss = kNormEps, dot = 0.0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const std::size_t i = static_cast<std::size_t>(((img * c + ch) * h * w) + p);
        ss += static_cast<double>(v.data[i]) * v.data[i];
        dot += static_cast<double>(g.data[i]) * v.data[i];
      }
      const double s = std::sqrt(ss);
      const double s3 = s * ss;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const std::size_t i = static_cast<std::size_t>(((img * c + ch) * h * w) + p);
        dv.data[i] = static_cast<float>(g.data[i] / s - v.data[i] * dot / s3);
      }
    }
  }
  return dv;
}

// Per-element L2 norms of a (N,C,H,W) tensor.
std::vector<double> per_element_norm(const Tensor& t) {
  const auto n = t.shape[0];
  const std::int64_t per = t.numel() / n;
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t img = 0; img < n; ++img) {
    const float* p = t.data.data() + img * per;
    double acc = 0.0;
    for (std::int64_t i = 0; i < per; ++i) acc += static_cast<double>(p[i]) * p[i];
    out[static_cast<std::size_t>(img)] = std::sqrt(acc);
  }
  return out;
}

void check_pair(const ImageBatch& a, const ImageBatch& b) {
  check_same_shape(a.data, b.data, "perceptual distance inputs");
  if (a.space != ValueSpace::model_sym || b.space != ValueSpace::model_sym) {
    throw std::invalid_argument("perceptual distance expects model_sym inputs");
  }
}

ConvNetConfig extractor_config(int channels, int image_size) {
  ConvNetConfig cfg;
  cfg.in_channels = channels;
  cfg.image_size = image_size;
  cfg.width = 16;
  cfg.num_classes = 4;
  cfg.act = Activation::silu;
  cfg.pool = Pooling::avg;
  return cfg;
}

}  // namespace

Tensor rotate90(const Tensor& images, int k) {
  if (images.shape.size() != 4 || images.shape[2] != images.shape[3]) {
    throw std::invalid_argument("rotation expects square rank-4 images");
  }
  k = ((k % 4) + 4) % 4;
  Tensor out = images;
  const auto n = images.shape[0], c = images.shape[1], s = images.shape[2];
  for (int r = 0; r < k; ++r) {
    Tensor next = out;
    for (std::int64_t plane = 0; plane < n * c; ++plane) {
      const float* src = out.data.data() + plane * s * s;
      float* dst = next.data.data() + plane * s * s;
      for (std::int64_t y = 0; y < s; ++y) {
        for (std::int64_t x = 0; x < s; ++x) {
          dst[(s - 1 - x) * s + y] = src[y * s + x];
        }
      }
    }
    out = std::move(next);
  }
  return out;
}

FeatureExtractor train_extractor(const Dataset& raw_data, PseudoLabels mode, int steps,
                                 std::uint64_t seed, const std::string& trained_on,
                                 int batch_size) {
  if (raw_data.size() == 0) throw std::invalid_argument("extractor training set is empty");
  const int channels = static_cast<int>(raw_data.images.dim(1));
  const int size = static_cast<int>(raw_data.images.dim(2));
  ConvNetConfig cfg = extractor_config(channels, size);
  if (mode == PseudoLabels::true_labels) {
    cfg.num_classes = static_cast<int>(raw_data.num_classes());
  }
  FeatureExtractor phi;
  phi.net = ConvNet(cfg);
  phi.net.init_params(seed);
  phi.trained_on = trained_on;

  nn::Adam opt(nn::AdamConfig{.lr = 1e-3});
  opt.init(phi.net.params());
  Rng rng = Rng(seed).fork(0x726f74);
  const std::int64_t n = raw_data.size();
  const std::int64_t per = raw_data.images.numel() / n;

  Tensor xb({batch_size, channels, size, size});
  std::vector<std::int64_t> yb(static_cast<std::size_t>(batch_size));
  for (int s = 0; s < steps; ++s) {
    Tensor raw_batch({batch_size, channels, size, size});
    for (int b = 0; b < batch_size; ++b) {
      const std::int64_t idx =
          static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
      const float* src = raw_data.images.ptr() + idx * per;
      float* dst = raw_batch.ptr() + b * per;
      for (std::int64_t i = 0; i < per; ++i) dst[i] = src[i];
      yb[static_cast<std::size_t>(b)] = mode == PseudoLabels::rotation
                                            ? static_cast<std::int64_t>(rng.below(4))
                                            : raw_data.labels[static_cast<std::size_t>(idx)];
    }
    if (mode == PseudoLabels::rotation) {
      for (int b = 0; b < batch_size; ++b) {
        Tensor one({1, channels, size, size});
        std::memcpy(one.ptr(), raw_batch.ptr() + b * per, std::size_t(per) * sizeof(float));
        Tensor rotated = rotate90(one, static_cast<int>(yb[static_cast<std::size_t>(b)]));
        std::memcpy(raw_batch.ptr() + b * per, rotated.ptr(), std::size_t(per) * sizeof(float));
      }
    }
    for (std::int64_t i = 0; i < raw_batch.numel(); ++i) {
      xb.data[static_cast<std::size_t>(i)] =
          static_cast<float>(2.0 * static_cast<double>(raw_batch.data[static_cast<std::size_t>(i)]) - 1.0);
    }
    ce_train_step(phi.net, opt, xb, yb);
  }
  return phi;
}

double rotation_accuracy(const FeatureExtractor& phi, const Dataset& data, std::uint64_t seed) {
  if (data.size() == 0) throw std::invalid_argument("empty dataset");
  Rng rng = Rng(seed).fork(0x726f7461);
  const std::int64_t n = data.size();
  std::int64_t hits = 0;
  const int batch = 64;
  for (std::int64_t begin = 0; begin < n; begin += batch) {
    const std::int64_t end = std::min<std::int64_t>(n, begin + batch);
    Tensor xb = data.image_batch(begin, end);
    std::vector<std::int64_t> yb(static_cast<std::size_t>(end - begin));
    const std::int64_t per = xb.numel() / (end - begin);
    for (std::int64_t b = 0; b < end - begin; ++b) {
      yb[static_cast<std::size_t>(b)] = static_cast<std::int64_t>(rng.below(4));
      Tensor one({1, xb.shape[1], xb.shape[2], xb.shape[3]});
      std::memcpy(one.ptr(), xb.ptr() + b * per, std::size_t(per) * sizeof(float));
      Tensor rotated = rotate90(one, static_cast<int>(yb[static_cast<std::size_t>(b)]));
      std::memcpy(xb.ptr() + b * per, rotated.ptr(), std::size_t(per) * sizeof(float));
    }
    for (float& v : xb.data) v = static_cast<float>(2.0 * static_cast<double>(v) - 1.0);
    const auto pred = predict_labels(phi.net, xb);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (pred[i] == yb[i]) ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

std::vector<double> perceptual_distance(const FeatureExtractor& phi, const ImageBatch& a,
                                        const ImageBatch& b) {
  check_pair(a, b);
  ConvNetCache ca, cb;
  phi.net.forward(a.data, ca);
  phi.net.forward(b.data, cb);
  std::vector<double> total(static_cast<std::size_t>(a.batch()), 0.0);
  for (const auto& [ta, tb] : {std::pair{&ca.h1, &cb.h1}, std::pair{&ca.h2, &cb.h2}}) {
    Tensor diff = sub(channel_normalize(*ta), channel_normalize(*tb));
    const auto norms = per_element_norm(diff);
    for (std::size_t i = 0; i < norms.size(); ++i) total[i] += norms[i];
  }
  return total;
}

ImageBatch distance_gradient(const FeatureExtractor& phi, const ImageBatch& a,
                             const ImageBatch& b) {
  check_pair(a, b);
  ConvNetCache ca, cb;
  phi.net.forward(a.data, ca);
  phi.net.forward(b.data, cb);

  // d_l = ||u_l|| with u_l the normalized-feature difference, so the
  // gradient seeded at layer l's normalized features is u_l / ||u_l||
  // per element, and zero where the difference vanishes.
  auto tap_gradient = [](const Tensor& va, const Tensor& vb) {
    Tensor ya = channel_normalize(va);
    Tensor diff = sub(ya, channel_normalize(vb));
    const auto norms = per_element_norm(diff);
    const auto n = diff.shape[0];
    const std::int64_t per = diff.numel() / n;
    for (std::int64_t img = 0; img < n; ++img) {
      const double d = norms[static_cast<std::size_t>(img)];
      float* p = diff.data.data() + img * per;
      if (d == 0.0) {
        for (std::int64_t i = 0; i < per; ++i) p[i] = 0.0f;
      } else {
        const float inv = static_cast<float>(1.0 / d);
        for (std::int64_t i = 0; i < per; ++i) p[i] *= inv;
      }
    }
    return channel_normalize_backward(diff, va);
  };

  Tensor g1 = tap_gradient(ca.h1, cb.h1);
  Tensor g2 = tap_gradient(ca.h2, cb.h2);
  ImageBatch out;
  out.data = phi.net.backward_from_taps(g1, g2, ca);
  out.space = ValueSpace::model_sym;
  if (!all_finite(out.data)) {
    throw std::runtime_error("non-finite perceptual gradient");
  }
  return out;
}

void save_extractor(const std::filesystem::path& dir, const FeatureExtractor& phi) {
  Checkpoint ckpt;
  ckpt.kind = "extractor";
  const auto& cfg = phi.net.config();
  ckpt.meta = {
      {"config",
       {{"in_channels", cfg.in_channels},
        {"image_size", cfg.image_size},
        {"width", cfg.width},
        {"num_classes", cfg.num_classes},
        {"activation", cfg.act == Activation::silu ? "silu" : "relu"},
        {"pooling", cfg.pool == Pooling::avg ? "avg" : "max"}}},
      {"trained_on", phi.trained_on},
  };
  const auto names = ConvNet::param_names();
  const auto params = phi.net.params();
  for (std::size_t i = 0; i < names.size(); ++i) ckpt.tensors.emplace_back(names[i], *params[i]);
  save_checkpoint(dir, ckpt);
}

FeatureExtractor load_extractor(const std::filesystem::path& dir) {
  Checkpoint ckpt = load_checkpoint(dir);
  if (ckpt.kind != "extractor") {
    throw std::runtime_error("checkpoint kind is '" + ckpt.kind + "', expected 'extractor'");
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
    throw std::runtime_error("corrupt extractor metadata: " + std::string(e.what()));
  }
  FeatureExtractor phi;
  phi.net = ConvNet(cfg);
  phi.trained_on = ckpt.meta.value("trained_on", "");
  auto params = phi.net.params();
  const auto names = ConvNet::param_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Tensor& saved = ckpt.tensor(names[i]);
    if (saved.shape != params[i]->shape) {
      throw std::runtime_error("extractor checkpoint shape mismatch on '" + names[i] + "'");
    }
    *params[i] = saved;
  }
  return phi;
}

}  // namespace jcdp
