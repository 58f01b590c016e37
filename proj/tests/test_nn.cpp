#include <doctest.h>

#include <cmath>
#include <vector>

#include "helpers.hpp"
#include "jcdp/nn.hpp"
#include "jcdp/rng.hpp"
#include "jcdp/tensor.hpp"

using namespace jcdp;
using jcdp::test::rel_error;

namespace {

// Scalar probe L(y) = sum(c * y) with fixed random weights c; its gradient
// seed is c itself, so each kernel's backward can face central differences.
double weighted_sum(const Tensor& y, const Tensor& c) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    s += double(y.data[i]) * double(c.data[i]);
  }
  return s;
}

template <typename Forward>
std::vector<double> numeric_grad(Tensor& x, const Tensor& c, double h, Forward fwd,
                                 const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  for (std::size_t i : idx) {
    const float keep = x.data[i];
    x.data[i] = float(keep + h);
    const double up = weighted_sum(fwd(), c);
    x.data[i] = float(keep - h);
    const double dn = weighted_sum(fwd(), c);
    x.data[i] = keep;
    out.push_back((up - dn) / (2.0 * h));
  }
  return out;
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t want, Rng& rng) {
  std::vector<std::size_t> idx;
  if (n <= want) {
    for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
  } else {
    for (std::size_t i = 0; i < want; ++i) idx.push_back(std::size_t(rng.below(n)));
  }
  return idx;
}

std::vector<double> pick(const Tensor& g, const std::vector<std::size_t>& idx) {
  std::vector<double> out;
  for (std::size_t i : idx) out.push_back(double(g.data[i]));
  return out;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(21);
  Tensor x = test::random_tensor({2, 2, 5, 5}, rng);
  Tensor w = test::random_tensor({3, 2 * 9}, rng, -0.5f, 0.5f);
  Tensor b = test::random_tensor({3}, rng, -0.2f, 0.2f);

  for (const int stride : {1, 2}) {
    Tensor cols;
    Tensor y = nn::conv2d_forward(x, w, b, 3, stride, 1, &cols);
    Tensor c = test::random_tensor(y.shape, rng);
    Tensor dw = zeros_like(w), db = zeros_like(b);
    Tensor dx = nn::conv2d_backward(c, x.shape, w, cols, 3, stride, 1, &dw, &db);

    auto fwd_x = [&] { return nn::conv2d_forward(x, w, b, 3, stride, 1, nullptr); };
    const auto xi = sample_indices(x.data.size(), 24, rng);
    CHECK(rel_error(pick(dx, xi), numeric_grad(x, c, 1e-3, fwd_x, xi)) < 1e-2);

    auto fwd_w = [&] { return nn::conv2d_forward(x, w, b, 3, stride, 1, nullptr); };
    const auto wi = sample_indices(w.data.size(), 24, rng);
    CHECK(rel_error(pick(dw, wi), numeric_grad(w, c, 1e-3, fwd_w, wi)) < 1e-2);

    const auto bi = sample_indices(b.data.size(), 8, rng);
    CHECK(rel_error(pick(db, bi), numeric_grad(b, c, 1e-3, fwd_w, bi)) < 1e-2);
  }
}

TEST_CASE("linear gradients match finite differences") {
  Rng rng(22);
  Tensor x = test::random_tensor({3, 4}, rng);
  Tensor w = test::random_tensor({5, 4}, rng);
  Tensor b = test::random_tensor({5}, rng);
  Tensor y = nn::linear_forward(x, w, b);
  Tensor c = test::random_tensor(y.shape, rng);
  Tensor dw = zeros_like(w), db = zeros_like(b);
  Tensor dx = nn::linear_backward(c, x, w, &dw, &db);

  auto fwd = [&] { return nn::linear_forward(x, w, b); };
  const auto xi = sample_indices(x.data.size(), 12, rng);
  CHECK(rel_error(pick(dx, xi), numeric_grad(x, c, 1e-3, fwd, xi)) < 1e-2);
  const auto wi = sample_indices(w.data.size(), 20, rng);
  CHECK(rel_error(pick(dw, wi), numeric_grad(w, c, 1e-3, fwd, wi)) < 1e-2);
  const auto bi = sample_indices(b.data.size(), 5, rng);
  CHECK(rel_error(pick(db, bi), numeric_grad(b, c, 1e-3, fwd, bi)) < 1e-2);
}

TEST_CASE("activation gradients away from the relu kink") {
  Rng rng(23);
  Tensor x = test::random_tensor({2, 3, 4, 4}, rng);
  for (float& v : x.data) {
    if (std::fabs(v) < 0.15f) v = v < 0 ? v - 0.2f : v + 0.2f;
  }
  Tensor c = test::random_tensor(x.shape, rng);

  Tensor gr = nn::relu_backward(c, x);
  auto fr = [&] { return nn::relu_forward(x); };
  const auto idx = sample_indices(x.data.size(), 24, rng);
  CHECK(rel_error(pick(gr, idx), numeric_grad(x, c, 1e-3, fr, idx)) < 1e-2);

  Tensor gs = nn::silu_backward(c, x);
  auto fs = [&] { return nn::silu_forward(x); };
  CHECK(rel_error(pick(gs, idx), numeric_grad(x, c, 1e-3, fs, idx)) < 1e-2);
}

TEST_CASE("pooling gradients match finite differences") {
  Rng rng(24);
  // Well-separated values keep the argmax stable under the probe step.
  Tensor x({1, 2, 4, 4});
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    x.data[i] = float(i % 7) * 0.5f + float(i) * 0.01f;
  }

  std::vector<std::int32_t> arg;
  Tensor ym = nn::maxpool2_forward(x, &arg);
  Tensor cm = test::random_tensor(ym.shape, rng);
  Tensor gm = nn::maxpool2_backward(cm, arg, x.shape);
  auto fm = [&] {
    std::vector<std::int32_t> a2;
    return nn::maxpool2_forward(x, &a2);
  };
  const auto idx = sample_indices(x.data.size(), 32, rng);
  CHECK(rel_error(pick(gm, idx), numeric_grad(x, cm, 1e-3, fm, idx)) < 1e-2);

  Tensor ya = nn::avgpool2_forward(x);
  Tensor ca = test::random_tensor(ya.shape, rng);
  Tensor ga = nn::avgpool2_backward(ca, x.shape);
  auto fa = [&] { return nn::avgpool2_forward(x); };
  CHECK(rel_error(pick(ga, idx), numeric_grad(x, ca, 1e-3, fa, idx)) < 1e-2);
}

TEST_CASE("upsample2 backward is the exact adjoint") {
  Rng rng(25);
  Tensor x = test::random_tensor({2, 3, 3, 3}, rng);
  Tensor y = nn::upsample2_forward(x);
  CHECK(y.shape == std::vector<std::int64_t>{2, 3, 6, 6});
  Tensor u = test::random_tensor(y.shape, rng);
  Tensor xu = nn::upsample2_backward(u);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < y.data.size(); ++i) lhs += double(y.data[i]) * double(u.data[i]);
  for (std::size_t i = 0; i < x.data.size(); ++i) rhs += double(x.data[i]) * double(xu.data[i]);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
}

TEST_CASE("channel bias broadcast and reduction are adjoint") {
  Rng rng(26);
  Tensor y = test::random_tensor({2, 3, 4, 4}, rng);
  Tensor e = test::random_tensor({2, 3}, rng);
  Tensor y2 = y;
  nn::add_channel_bias(y2, e);
  for (std::int64_t n = 0; n < 2; ++n) {
    for (std::int64_t c = 0; c < 3; ++c) {
      CHECK(y2.at4(n, c, 1, 2) ==
            doctest::Approx(y.at4(n, c, 1, 2) + e.data[std::size_t(n * 3 + c)]).epsilon(1e-6));
    }
  }
  Tensor dy = test::random_tensor(y.shape, rng);
  Tensor de = nn::channel_bias_backward(dy);
  CHECK(de.shape == e.shape);
  double lhs = 0.0, rhs = 0.0;
  Tensor zero = zeros_like(y);
  Tensor broadcast = zero;
  nn::add_channel_bias(broadcast, e);
  for (std::size_t i = 0; i < dy.data.size(); ++i)
    lhs += double(broadcast.data[i]) * double(dy.data[i]);
  for (std::size_t i = 0; i < e.data.size(); ++i) rhs += double(e.data[i]) * double(de.data[i]);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
}

TEST_CASE("softmax cross-entropy loss and gradient") {
  Rng rng(27);
  Tensor logits = test::random_tensor({3, 4}, rng, -2.0f, 2.0f);
  const std::vector<std::int64_t> labels = {1, 3, 0};
  Tensor dl;
  const double loss = nn::softmax_ce_loss(logits, labels, &dl);
  CHECK(loss > 0.0);

  std::vector<double> analytic, numeric;
  const double h = 1e-4;
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    analytic.push_back(double(dl.data[i]));
    const float keep = logits.data[i];
    logits.data[i] = float(keep + h);
    const double up = nn::softmax_ce_loss(logits, labels, nullptr);
    logits.data[i] = float(keep - h);
    const double dn = nn::softmax_ce_loss(logits, labels, nullptr);
    logits.data[i] = keep;
    numeric.push_back((up - dn) / (2.0 * h));
  }
  CHECK(rel_error(analytic, numeric) < 1e-2);

  // Uniform logits on K classes cost exactly log K.
  Tensor flat({2, 4});
  flat.fill(0.7f);
  CHECK(nn::softmax_ce_loss(flat, {0, 2}, nullptr) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("sinusoidal embedding structure") {
  const Tensor e = nn::sinusoidal_embedding({0, 7}, 8);
  CHECK(e.shape == std::vector<std::int64_t>{2, 8});
  for (int j = 0; j < 4; ++j) {
    CHECK(e.data[std::size_t(j)] == doctest::Approx(0.0).epsilon(1e-7));      // sin(0)
    CHECK(e.data[std::size_t(4 + j)] == doctest::Approx(1.0).epsilon(1e-7));  // cos(0)
  }
  bool differs = false;
  for (int j = 0; j < 8; ++j) differs |= std::fabs(e.data[std::size_t(8 + j)] - e.data[std::size_t(j)]) > 1e-3;
  CHECK(differs);
  CHECK_THROWS(nn::sinusoidal_embedding({1}, 3));  // odd dim rejected
}

TEST_CASE("adam first step matches the closed form") {
  Tensor p({1});
  p.data[0] = 1.0f;
  Tensor g({1});
  g.data[0] = 0.3f;
  nn::AdamConfig cfg;
  cfg.lr = 0.1;
  nn::Adam opt(cfg);
  std::vector<Tensor*> params = {&p};
  opt.init(params);
  std::vector<const Tensor*> grads = {&g};
  opt.step(params, grads);
  // Bias-corrected first step reduces to lr * g / (|g| + eps).
  const double want = 1.0 - 0.1 * 0.3 / (0.3 + 1e-8);
  CHECK(double(p.data[0]) == doctest::Approx(want).epsilon(1e-6));

  // lr_scale = 0 leaves parameters bit-identical.
  const float before = p.data[0];
  opt.step(params, grads, 0.0);
  CHECK(p.data[0] == before);
}

TEST_CASE("he initialization statistics") {
  Rng rng(28);
  Tensor w({100, 100});
  nn::init_he_normal(w, 100, rng);
  double sum = 0.0, sq = 0.0;
  for (float v : w.data) {
    sum += v;
    sq += double(v) * double(v);
  }
  const double n = double(w.data.size());
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  const double want_var = 2.0 / 100.0;
  CHECK(std::fabs(mean) < 3.0 * std::sqrt(want_var / n));
  CHECK(std::fabs(var - want_var) < 3.0 * want_var * std::sqrt(2.0 / n));
}

}  // TEST_SUITE
