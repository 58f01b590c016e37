#include "jcdp/denoiser.hpp"

#include <stdexcept>

#include "jcdp/rng.hpp"

namespace jcdp {

namespace {
constexpr int kK = 3, kPad = 1;
}

std::int64_t DenoiserSpec::parameter_count() const {
  Denoiser net{*this};
  std::int64_t n = 0;
  for (const Tensor* p : net.params()) n += numel_of(p->shape);
  return n;
}

Denoiser::Denoiser(const DenoiserSpec& spec) : spec_(spec) {
  if (spec.depth != 1 && spec.depth != 2) {
    throw std::invalid_argument("denoiser depth must be 1 or 2");
  }
  if (spec.base_width < 1 || spec.channels < 1) {
    throw std::invalid_argument("denoiser widths must be positive");
  }
  const std::int64_t w = spec.base_width, c = spec.channels, e = spec.time_embedding_dim;
  auto shape = [](Tensor& t, std::vector<std::int64_t> s) {
    t.shape = std::move(s);
    t.data.assign(static_cast<std::size_t>(numel_of(t.shape)), 0.0f);
  };
  shape(wt_, {e, e});
  shape(bt_, {e});
  shape(enc_proj_w_, {w, e});
  shape(enc_proj_b_, {w});
  shape(in_w_, {w, c * kK * kK});
  shape(in_b_, {w});
  shape(enc_w_, {w, w * kK * kK});
  shape(enc_b_, {w});
  shape(dec_w_, {w, w * kK * kK});
  shape(dec_b_, {w});
  shape(out_w_, {c, w * kK * kK});
  shape(out_b_, {c});
  if (spec.depth == 2) {
    shape(mid_proj_w_, {2 * w, e});
    shape(mid_proj_b_, {2 * w});
    shape(down_w_, {2 * w, w * kK * kK});
    shape(down_b_, {2 * w});
    shape(mid1_w_, {2 * w, 2 * w * kK * kK});
    shape(mid1_b_, {2 * w});
    shape(mid2_w_, {2 * w, 2 * w * kK * kK});
    shape(mid2_b_, {2 * w});
    shape(up_w_, {w, 2 * w * kK * kK});
    shape(up_b_, {w});
  }
}

void Denoiser::init_params(std::uint64_t seed) {
  Rng rng(seed);
  nn::init_he_normal(wt_, wt_.shape[1], rng);
  nn::init_he_normal(enc_proj_w_, enc_proj_w_.shape[1], rng);
  nn::init_he_normal(in_w_, in_w_.shape[1], rng);
  nn::init_he_normal(enc_w_, enc_w_.shape[1], rng);
  nn::init_he_normal(dec_w_, dec_w_.shape[1], rng);
  if (spec_.depth == 2) {
    nn::init_he_normal(mid_proj_w_, mid_proj_w_.shape[1], rng);
    nn::init_he_normal(down_w_, down_w_.shape[1], rng);
    nn::init_he_normal(mid1_w_, mid1_w_.shape[1], rng);
    nn::init_he_normal(mid2_w_, mid2_w_.shape[1], rng);
    nn::init_he_normal(up_w_, up_w_.shape[1], rng);
  }
  // Zero output conv: the fresh network is the identity-to-zero map, which
  // keeps early training steps well-scaled.
  out_w_.fill(0.0f);
  for (Tensor* b : {&bt_, &enc_proj_b_, &mid_proj_b_, &in_b_, &enc_b_, &down_b_, &mid1_b_,
                    &mid2_b_, &up_b_, &dec_b_, &out_b_}) {
    b->fill(0.0f);
  }
}

Tensor Denoiser::forward(const Tensor& x, const std::vector<int>& ts, DenoiserCache& c) const {
  if (x.shape.size() != 4 || x.shape[1] != spec_.channels) {
    throw std::invalid_argument("denoiser input shape mismatch: " + x.shape_str());
  }
  if (static_cast<std::int64_t>(ts.size()) != x.shape[0]) {
    throw std::invalid_argument("one timestep per batch element required");
  }
  if (spec_.depth == 2 && (x.shape[2] % 2 != 0 || x.shape[3] % 2 != 0)) {
    throw std::invalid_argument("depth-2 denoiser needs even spatial extents");
  }
  c.x_shape = x.shape;

  c.e0 = nn::sinusoidal_embedding(ts, spec_.time_embedding_dim);
  c.e1z = nn::linear_forward(c.e0, wt_, bt_);
  c.e1 = nn::silu_forward(c.e1z);
  c.be = nn::linear_forward(c.e1, enc_proj_w_, enc_proj_b_);

  c.a1 = nn::conv2d_forward(x, in_w_, in_b_, kK, 1, kPad, &c.cols_in);
  nn::add_channel_bias(c.a1, c.be);
  c.a2 = nn::silu_forward(c.a1);
  c.a3 = nn::conv2d_forward(c.a2, enc_w_, enc_b_, kK, 1, kPad, &c.cols_enc);
  c.a4 = nn::silu_forward(c.a3);

  const Tensor* trunk = &c.a4;
  if (spec_.depth == 2) {
    c.bm = nn::linear_forward(c.e1, mid_proj_w_, mid_proj_b_);
    c.a5 = nn::conv2d_forward(c.a4, down_w_, down_b_, kK, 2, kPad, &c.cols_down);
    c.a6 = nn::silu_forward(c.a5);
    c.a8 = nn::conv2d_forward(c.a6, mid1_w_, mid1_b_, kK, 1, kPad, &c.cols_mid1);
    nn::add_channel_bias(c.a8, c.bm);
    c.a9 = nn::silu_forward(c.a8);
    c.a10 = nn::conv2d_forward(c.a9, mid2_w_, mid2_b_, kK, 1, kPad, &c.cols_mid2);
    c.a11 = nn::silu_forward(c.a10);
    c.a12 = nn::upsample2_forward(c.a11);
    c.a13 = nn::conv2d_forward(c.a12, up_w_, up_b_, kK, 1, kPad, &c.cols_up);
    c.a14 = nn::silu_forward(c.a13);
    c.a15 = add(c.a14, c.a4);
    trunk = &c.a15;
  }
  c.a16 = nn::conv2d_forward(*trunk, dec_w_, dec_b_, kK, 1, kPad, &c.cols_dec);
  c.a17 = nn::silu_forward(c.a16);
  return nn::conv2d_forward(c.a17, out_w_, out_b_, kK, 1, kPad, &c.cols_out);
}

void Denoiser::backward(const Tensor& dy, const DenoiserCache& c,
                        std::vector<Tensor>* grads) const {
  const auto names = param_names();
  if (!grads || grads->size() != names.size()) {
    throw std::invalid_argument("gradient list size mismatch");
  }
  auto g = [&](const char* name) -> Tensor* {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (names[i] == name) return &(*grads)[i];
    }
    throw std::logic_error("unknown parameter name");
  };

  Tensor da17 = nn::conv2d_backward(dy, c.a17.shape, out_w_, c.cols_out, kK, 1, kPad,
                                    g("out_w"), g("out_b"));
  Tensor da16 = nn::silu_backward(da17, c.a16);
  Tensor de1 = zeros_like(c.e1);

  Tensor dtrunk;
  if (spec_.depth == 2) {
    Tensor da15 = nn::conv2d_backward(da16, c.a15.shape, dec_w_, c.cols_dec, kK, 1, kPad,
                                      g("dec_w"), g("dec_b"));
    // a15 = a14 + a4: the gradient splits across the skip.
    Tensor da14 = da15;
    Tensor da13 = nn::silu_backward(da14, c.a13);
    Tensor da12 = nn::conv2d_backward(da13, c.a12.shape, up_w_, c.cols_up, kK, 1, kPad,
                                      g("up_w"), g("up_b"));
    Tensor da11 = nn::upsample2_backward(da12);
    Tensor da10 = nn::silu_backward(da11, c.a10);
    Tensor da9 = nn::conv2d_backward(da10, c.a9.shape, mid2_w_, c.cols_mid2, kK, 1, kPad,
                                     g("mid2_w"), g("mid2_b"));
    Tensor da8 = nn::silu_backward(da9, c.a8);
    Tensor dbm = nn::channel_bias_backward(da8);
    axpy(de1, 1.0f, nn::linear_backward(dbm, c.e1, mid_proj_w_, g("mid_proj_w"),
                                        g("mid_proj_b")));
    Tensor da6 = nn::conv2d_backward(da8, c.a6.shape, mid1_w_, c.cols_mid1, kK, 1, kPad,
                                     g("mid1_w"), g("mid1_b"));
    Tensor da5 = nn::silu_backward(da6, c.a5);
    Tensor da4 = nn::conv2d_backward(da5, c.a4.shape, down_w_, c.cols_down, kK, 2, kPad,
                                     g("down_w"), g("down_b"));
    axpy(da4, 1.0f, da15);
    dtrunk = std::move(da4);
  } else {
    dtrunk = nn::conv2d_backward(da16, c.a4.shape, dec_w_, c.cols_dec, kK, 1, kPad,
                                 g("dec_w"), g("dec_b"));
  }

  Tensor da3 = nn::silu_backward(dtrunk, c.a3);
  Tensor da2 = nn::conv2d_backward(da3, c.a2.shape, enc_w_, c.cols_enc, kK, 1, kPad,
                                   g("enc_w"), g("enc_b"));
  Tensor da1 = nn::silu_backward(da2, c.a1);
  Tensor dbe = nn::channel_bias_backward(da1);
  axpy(de1, 1.0f, nn::linear_backward(dbe, c.e1, enc_proj_w_, g("enc_proj_w"),
                                      g("enc_proj_b")));
  nn::conv2d_backward(da1, c.x_shape, in_w_, c.cols_in, kK, 1, kPad, g("in_w"), g("in_b"));

  Tensor de1z = nn::silu_backward(de1, c.e1z);
  nn::linear_backward(de1z, c.e0, wt_, g("t_w"), g("t_b"));
}

std::vector<Tensor*> Denoiser::params() {
  std::vector<Tensor*> p = {&wt_, &bt_, &enc_proj_w_, &enc_proj_b_, &in_w_, &in_b_,
                            &enc_w_, &enc_b_};
  if (spec_.depth == 2) {
    for (Tensor* t : {&mid_proj_w_, &mid_proj_b_, &down_w_, &down_b_, &mid1_w_, &mid1_b_,
                      &mid2_w_, &mid2_b_, &up_w_, &up_b_}) {
      p.push_back(t);
    }
  }
  for (Tensor* t : {&dec_w_, &dec_b_, &out_w_, &out_b_}) p.push_back(t);
  return p;
}

std::vector<const Tensor*> Denoiser::params() const {
  auto mut = const_cast<Denoiser*>(this)->params();
  return {mut.begin(), mut.end()};
}

std::vector<std::string> Denoiser::param_names() const {
  std::vector<std::string> n = {"t_w", "t_b", "enc_proj_w", "enc_proj_b", "in_w", "in_b",
                                "enc_w", "enc_b"};
  if (spec_.depth == 2) {
    for (const char* s : {"mid_proj_w", "mid_proj_b", "down_w", "down_b", "mid1_w", "mid1_b",
                          "mid2_w", "mid2_b", "up_w", "up_b"}) {
      n.emplace_back(s);
    }
  }
  for (const char* s : {"dec_w", "dec_b", "out_w", "out_b"}) n.emplace_back(s);
  return n;
}

std::vector<Tensor> Denoiser::zero_grads() const {
  std::vector<Tensor> g;
  for (const Tensor* p : params()) g.push_back(zeros_like(*p));
  return g;
}

}  // namespace jcdp
