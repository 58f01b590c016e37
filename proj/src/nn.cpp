#include "jcdp/nn.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstring>
#include <limits>
#include <stdexcept>

namespace jcdp::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

int out_extent(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

void check_rank4(const Tensor& x, const char* what) {
  if (x.shape.size() != 4) {
    throw std::invalid_argument(std::string(what) + " must be rank-4, got " + x.shape_str());
  }
}

// Scatters rows of (N*OH*OW, Cin*k*k) back into an (N,Cin,H,W) image tensor.
void col2im(const Tensor& cols, Tensor& dx, int k, int stride, int pad) {
  const auto n = dx.shape[0], cin = dx.shape[1], h = dx.shape[2], w = dx.shape[3];
  const int oh = out_extent(static_cast<int>(h), k, stride, pad);
  const int ow = out_extent(static_cast<int>(w), k, stride, pad);
  const std::int64_t patch = cin * k * k;
  const float* src = cols.data.data();
  for (std::int64_t img = 0; img < n; ++img) {
    float* dst = dx.data.data() + img * cin * h * w;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const float* row = src + ((img * oh + oy) * ow + ox) * patch;
        for (std::int64_t c = 0; c < cin; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= w) continue;
              dst[(c * h + iy) * w + ix] += row[(c * k + ky) * k + kx];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& b, int k, int stride,
                      int pad, Tensor* cols) {
  check_rank4(x, "conv input");
  const auto n = x.shape[0], cin = x.shape[1], h = x.shape[2], ww = x.shape[3];
  const auto cout = w.shape[0];
  const std::int64_t patch = cin * k * k;
  if (w.shape.size() != 2 || w.shape[1] != patch) {
    throw std::invalid_argument("conv weight shape mismatch: " + w.shape_str());
  }
  const int oh = out_extent(static_cast<int>(h), k, stride, pad);
  const int ow = out_extent(static_cast<int>(ww), k, stride, pad);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv output would be empty");

  Tensor local_cols;
  Tensor& cmat = cols ? *cols : local_cols;
  cmat.shape = {n * oh * ow, patch};
  cmat.data.assign(static_cast<std::size_t>(n * oh * ow * patch), 0.0f);

  const float* src = x.data.data();
  float* dst = cmat.data.data();
  for (std::int64_t img = 0; img < n; ++img) {
    const float* im = src + img * cin * h * ww;
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        float* row = dst + ((img * oh + oy) * ow + ox) * patch;
        for (std::int64_t c = 0; c < cin; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k; ++kx) {
              const int ix = ox * stride - pad + kx;
              if (ix < 0 || ix >= ww) continue;
              row[(c * k + ky) * k + kx] = im[(c * h + iy) * ww + ix];
            }
          }
        }
      }
    }
  }

  Tensor y;
  y.shape = {n, cout, oh, ow};
  y.data.resize(static_cast<std::size_t>(n * cout * oh * ow));

  // One GEMM over the whole batch: (N*OH*OW, patch) x (patch, Cout).
  RowMat prod = ConstMatMap(cmat.data.data(), n * oh * ow, patch) *
                ConstMatMap(w.data.data(), cout, patch).transpose();
  // GEMM rows are (n, oy, ox); output wants channel-major planes.
  for (std::int64_t img = 0; img < n; ++img) {
    for (std::int64_t c = 0; c < cout; ++c) {
      const float bias = b.data[static_cast<std::size_t>(c)];
      float* plane = y.data.data() + (img * cout + c) * oh * ow;
      for (std::int64_t p = 0; p < static_cast<std::int64_t>(oh) * ow; ++p) {
        plane[p] = prod(img * oh * ow + p, c) + bias;
      }
    }
  }
  return y;
}

Tensor conv2d_backward(const Tensor& dy, const std::vector<std::int64_t>& x_shape,
                       const Tensor& w, const Tensor& cols, int k, int stride, int pad,
                       Tensor* dw, Tensor* db) {
  check_rank4(dy, "conv output grad");
  const auto n = dy.shape[0], cout = dy.shape[1], oh = dy.shape[2], ow = dy.shape[3];
  const std::int64_t patch = w.shape[1];
  const std::int64_t rows = n * oh * ow;

  // Regroup dy from (N,Cout,OH,OW) to GEMM row layout (N*OH*OW, Cout).
  RowMat dy_rows(rows, cout);
  const float* src = dy.data.data();
  for (std::int64_t img = 0; img < n; ++img) {
    for (std::int64_t c = 0; c < cout; ++c) {
      const float* plane = src + (img * cout + c) * oh * ow;
      for (std::int64_t p = 0; p < oh * ow; ++p) dy_rows(img * oh * ow + p, c) = plane[p];
    }
  }

  if (dw) {
    MatMap(dw->data.data(), cout, patch) +=
        dy_rows.transpose() * ConstMatMap(cols.data.data(), rows, patch);
  }
  if (db) {
    for (std::int64_t c = 0; c < cout; ++c) {
      db->data[static_cast<std::size_t>(c)] += dy_rows.col(c).sum();
    }
  }

  Tensor dcols;
  dcols.shape = {rows, patch};
  dcols.data.resize(static_cast<std::size_t>(rows * patch));
  MatMap(dcols.data.data(), rows, patch) = dy_rows * ConstMatMap(w.data.data(), cout, patch);

  Tensor dx;
  dx.shape = x_shape;
  dx.data.assign(static_cast<std::size_t>(numel_of(x_shape)), 0.0f);
  col2im(dcols, dx, k, stride, pad);
  return dx;
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const auto n = x.shape[0], in = x.shape[1], out = w.shape[0];
  if (w.shape[1] != in) throw std::invalid_argument("linear weight shape mismatch");
  Tensor y;
  y.shape = {n, out};
  y.data.resize(static_cast<std::size_t>(n * out));
  MatMap ym(y.data.data(), n, out);
  ym = ConstMatMap(x.data.data(), n, in) * ConstMatMap(w.data.data(), out, in).transpose();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < out; ++j) ym(i, j) += b.data[static_cast<std::size_t>(j)];
  }
  return y;
}

Tensor linear_backward(const Tensor& dy, const Tensor& x, const Tensor& w, Tensor* dw,
                       Tensor* db) {
  const auto n = x.shape[0], in = x.shape[1], out = w.shape[0];
  ConstMatMap dym(dy.data.data(), n, out);
  if (dw) {
    MatMap(dw->data.data(), out, in) += dym.transpose() * ConstMatMap(x.data.data(), n, in);
  }
  if (db) {
    for (std::int64_t j = 0; j < out; ++j) db->data[static_cast<std::size_t>(j)] += dym.col(j).sum();
  }
  Tensor dx;
  dx.shape = {n, in};
  dx.data.resize(static_cast<std::size_t>(n * in));
  MatMap(dx.data.data(), n, in) = dym * ConstMatMap(w.data.data(), out, in);
  return dx;
}

Tensor relu_forward(const Tensor& x) {
  Tensor y = x;
  for (float& v : y.data) v = v > 0.0f ? v : 0.0f;
  return y;
}

Tensor relu_backward(const Tensor& dy, const Tensor& x) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    if (x.data[i] <= 0.0f) dx.data[i] = 0.0f;
  }
  return dx;
}

Tensor silu_forward(const Tensor& x) {
  Tensor y = x;
  for (float& v : y.data) {
    const float s = 1.0f / (1.0f + std::exp(-v));
    v *= s;
  }
  return y;
}

Tensor silu_backward(const Tensor& dy, const Tensor& x) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    const float v = x.data[i];
    const float s = 1.0f / (1.0f + std::exp(-v));
    dx.data[i] *= s * (1.0f + v * (1.0f - s));
  }
  return dx;
}

Tensor maxpool2_forward(const Tensor& x, std::vector<std::int32_t>* argmax) {
  check_rank4(x, "pool input");
  const auto n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("pool needs even extents");
  Tensor y;
  y.shape = {n, c, h / 2, w / 2};
  y.data.resize(static_cast<std::size_t>(n * c * (h / 2) * (w / 2)));
  if (argmax) argmax->resize(y.data.size());
  std::size_t oi = 0;
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* im = x.data.data() + plane * h * w;
    for (std::int64_t oy = 0; oy < h / 2; ++oy) {
      for (std::int64_t ox = 0; ox < w / 2; ++ox, ++oi) {
        const std::int64_t base = (2 * oy) * w + 2 * ox;
        std::int64_t best = base;
        float bv = im[base];
        for (const std::int64_t cand : {base + 1, base + w, base + w + 1}) {
          if (im[cand] > bv) {
            bv = im[cand];
            best = cand;
          }
        }
        y.data[oi] = bv;
        if (argmax) (*argmax)[oi] = static_cast<std::int32_t>(best);
      }
    }
  }
  return y;
}

Tensor maxpool2_backward(const Tensor& dy, const std::vector<std::int32_t>& argmax,
                         const std::vector<std::int64_t>& x_shape) {
  Tensor dx;
  dx.shape = x_shape;
  dx.data.assign(static_cast<std::size_t>(numel_of(x_shape)), 0.0f);
  const auto h = x_shape[2], w = x_shape[3];
  const std::int64_t per_plane_out = (h / 2) * (w / 2);
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    const std::int64_t plane = static_cast<std::int64_t>(i) / per_plane_out;
    dx.data[static_cast<std::size_t>(plane * h * w + argmax[i])] += dy.data[i];
  }
  return dx;
}

Tensor avgpool2_forward(const Tensor& x) {
  check_rank4(x, "pool input");
  const auto n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  if (h % 2 != 0 || w % 2 != 0) throw std::invalid_argument("pool needs even extents");
  Tensor y;
  y.shape = {n, c, h / 2, w / 2};
  y.data.resize(static_cast<std::size_t>(n * c * (h / 2) * (w / 2)));
  std::size_t oi = 0;
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* im = x.data.data() + plane * h * w;
    for (std::int64_t oy = 0; oy < h / 2; ++oy) {
      for (std::int64_t ox = 0; ox < w / 2; ++ox, ++oi) {
        const std::int64_t base = (2 * oy) * w + 2 * ox;
        y.data[oi] = 0.25f * (im[base] + im[base + 1] + im[base + w] + im[base + w + 1]);
      }
    }
  }
  return y;
}

Tensor avgpool2_backward(const Tensor& dy, const std::vector<std::int64_t>& x_shape) {
  Tensor dx;
  dx.shape = x_shape;
  dx.data.assign(static_cast<std::size_t>(numel_of(x_shape)), 0.0f);
  const auto h = x_shape[2], w = x_shape[3];
  const std::int64_t per_plane_out = (h / 2) * (w / 2);
  for (std::size_t i = 0; i < dy.data.size(); ++i) {
    const std::int64_t plane = static_cast<std::int64_t>(i) / per_plane_out;
    const std::int64_t rem = static_cast<std::int64_t>(i) % per_plane_out;
    const std::int64_t oy = rem / (w / 2), ox = rem % (w / 2);
    const float g = 0.25f * dy.data[i];
    float* im = dx.data.data() + plane * h * w;
    const std::int64_t base = (2 * oy) * w + 2 * ox;
    im[base] += g;
    im[base + 1] += g;
    im[base + w] += g;
    im[base + w + 1] += g;
  }
  return dx;
}

Tensor upsample2_forward(const Tensor& x) {
  check_rank4(x, "upsample input");
  const auto n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  Tensor y;
  y.shape = {n, c, 2 * h, 2 * w};
  y.data.resize(static_cast<std::size_t>(n * c * 4 * h * w));
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* im = x.data.data() + plane * h * w;
    float* om = y.data.data() + plane * 4 * h * w;
    for (std::int64_t yy = 0; yy < 2 * h; ++yy) {
      for (std::int64_t xx = 0; xx < 2 * w; ++xx) {
        om[yy * 2 * w + xx] = im[(yy / 2) * w + xx / 2];
      }
    }
  }
  return y;
}

Tensor upsample2_backward(const Tensor& dy) {
  check_rank4(dy, "upsample grad");
  const auto n = dy.shape[0], c = dy.shape[1], h2 = dy.shape[2], w2 = dy.shape[3];
  const auto h = h2 / 2, w = w2 / 2;
  Tensor dx;
  dx.shape = {n, c, h, w};
  dx.data.assign(static_cast<std::size_t>(n * c * h * w), 0.0f);
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const float* gm = dy.data.data() + plane * h2 * w2;
    float* om = dx.data.data() + plane * h * w;
    for (std::int64_t yy = 0; yy < h2; ++yy) {
      for (std::int64_t xx = 0; xx < w2; ++xx) {
        om[(yy / 2) * w + xx / 2] += gm[yy * w2 + xx];
      }
    }
  }
  return dx;
}

Tensor sinusoidal_embedding(const std::vector<int>& t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("embedding dim must be even and >= 2");
  const int half = dim / 2;
  Tensor e;
  e.shape = {static_cast<std::int64_t>(t.size()), dim};
  e.data.resize(t.size() * static_cast<std::size_t>(dim));
  for (std::size_t i = 0; i < t.size(); ++i) {
    for (int j = 0; j < half; ++j) {
      const double freq =
          half > 1 ? std::exp(-std::log(10000.0) * j / (half - 1)) : 1.0;
      const double arg = t[i] * freq;
      e.data[i * dim + j] = static_cast<float>(std::sin(arg));
      e.data[i * dim + half + j] = static_cast<float>(std::cos(arg));
    }
  }
  return e;
}

void add_channel_bias(Tensor& y, const Tensor& e) {
  check_rank4(y, "bias target");
  const auto n = y.shape[0], c = y.shape[1];
  const std::int64_t hw = y.shape[2] * y.shape[3];
  if (e.shape.size() != 2 || e.shape[0] != n || e.shape[1] != c) {
    throw std::invalid_argument("channel bias shape mismatch: " + e.shape_str());
  }
  for (std::int64_t img = 0; img < n; ++img) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const float b = e.data[static_cast<std::size_t>(img * c + ch)];
      float* plane = y.data.data() + (img * c + ch) * hw;
      for (std::int64_t p = 0; p < hw; ++p) plane[p] += b;
    }
  }
}

Tensor channel_bias_backward(const Tensor& dy) {
  check_rank4(dy, "bias grad");
  const auto n = dy.shape[0], c = dy.shape[1];
  const std::int64_t hw = dy.shape[2] * dy.shape[3];
  Tensor de;
  de.shape = {n, c};
  de.data.resize(static_cast<std::size_t>(n * c));
  for (std::int64_t img = 0; img < n; ++img) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const float* plane = dy.data.data() + (img * c + ch) * hw;
      double acc = 0.0;
      for (std::int64_t p = 0; p < hw; ++p) acc += plane[p];
      de.data[static_cast<std::size_t>(img * c + ch)] = static_cast<float>(acc);
    }
  }
  return de;
}

double softmax_ce_loss(const Tensor& logits, const std::vector<std::int64_t>& labels,
                       Tensor* dlogits) {
  const auto n = logits.shape[0], k = logits.shape[1];
  if (static_cast<std::int64_t>(labels.size()) != n) {
    throw std::invalid_argument("label count mismatch");
  }
  if (dlogits) {
    dlogits->shape = logits.shape;
    dlogits->data.resize(logits.data.size());
  }
  double total = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = logits.data.data() + i * k;
    const std::int64_t y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw std::invalid_argument("label out of range");
    double mx = row[0];
    for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(row[j]));
    double denom = 0.0;
    for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] - mx);
    const double lse = mx + std::log(denom);
    total += lse - row[y];
    if (dlogits) {
      float* drow = dlogits->data.data() + i * k;
      for (std::int64_t j = 0; j < k; ++j) {
        const double p = std::exp(row[j] - lse);
        drow[j] = static_cast<float>((p - (j == y ? 1.0 : 0.0)) / n);
      }
    }
  }
  return total / static_cast<double>(n);
}

void init_he_normal(Tensor& w, std::int64_t fan_in, Rng& rng) {
  const float std_dev = std::sqrt(2.0f / static_cast<float>(fan_in));
  for (float& v : w.data) v = std_dev * rng.normal();
}

void Adam::init(const std::vector<Tensor*>& params) {
  m_.clear();
  v_.clear();
  for (const Tensor* p : params) {
    m_.push_back(zeros_like(*p));
    v_.push_back(zeros_like(*p));
  }
  step_count_ = 0;
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
                double lr_scale) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("optimizer state does not match parameter list");
  }
  ++step_count_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
  const double lr = cfg_.lr * lr_scale;
  for (std::size_t p = 0; p < params.size(); ++p) {
    float* w = params[p]->data.data();
    const float* g = grads[p]->data.data();
    float* m = m_[p].data.data();
    float* v = v_[p].data.data();
    const std::size_t count = params[p]->data.size();
    for (std::size_t i = 0; i < count; ++i) {
      m[i] = static_cast<float>(cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i]);
      v[i] = static_cast<float>(cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i]);
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      w[i] = static_cast<float>(w[i] - lr * mh / (std::sqrt(vh) + cfg_.eps));
    }
  }
}

}  // namespace jcdp::nn
