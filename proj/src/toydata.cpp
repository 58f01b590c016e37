#include "jcdp/toydata.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "jcdp/rng.hpp"

namespace jcdp {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr float kLo = 0.05f, kHi = 0.95f;

struct Rgb {
  double r, g, b;
};

Rgb hsv(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c; g = x; break;
    case 1: r = x; g = c; break;
    case 2: g = c; b = x; break;
    case 3: g = x; b = c; break;
    case 4: r = x; b = c; break;
    default: r = c; b = x; break;
  }
  const double m = v - c;
  return {r + m, g + m, b + m};
}

const char* kShapeNames[10] = {"disk", "frame",  "plus",  "stripes", "triangle",
                               "checker", "bars", "cross", "ring",    "dots"};

bool in_shape(int kind, double dx, double dy, double r, double x, double y, double size) {
  const double dist = std::sqrt(dx * dx + dy * dy);
  const double p = size / 4.0;
  switch (kind) {
    case 0: return dist < r;
    case 1: {
      const double m = std::max(std::fabs(dx), std::fabs(dy));
      return m >= 0.55 * r && m <= r;
    }
    case 2:
      return (std::fabs(dx) < 0.35 * r && std::fabs(dy) < r) ||
             (std::fabs(dy) < 0.35 * r && std::fabs(dx) < r);
    case 3: return std::fmod(x + y + 4.0 * size, 2.0 * p) < p;
    case 4: return dy >= -r && dy <= r && std::fabs(dx) <= 0.5 * (dy + r);
    case 5: return (static_cast<int>(x / p) + static_cast<int>(y / p)) % 2 == 0;
    case 6: return std::fmod(y + 4.0 * size, 2.0 * p) < p;
    case 7: return dist < 1.3 * r && std::fabs(std::fabs(dx) - std::fabs(dy)) < 0.3 * r;
    case 8: return dist >= 0.55 * r && dist <= r;
    default: {
      const double o = 0.30 * size;
      const double rr = 0.18 * size;
      for (const double sx : {-o, o}) {
        for (const double sy : {-o, o}) {
          const double ex = dx - sx, ey = dy - sy;
          if (ex * ex + ey * ey < rr * rr) return true;
        }
      }
      return false;
    }
  }
}

Dataset make_split(const ToyDataConfig& cfg, Rng rng, int count) {
  const int s = cfg.image_size;
  const int k = cfg.num_classes;
  Dataset d;
  d.images = Tensor({count, 3, s, s});
  d.labels.resize(static_cast<std::size_t>(count));
  for (int c = 0; c < k; ++c) {
    const int kind = cfg.family == 0 ? c % 10 : (3 * c + 5) % 10;
    d.class_names.push_back(std::string(cfg.family == 0 ? "a_" : "b_") + kShapeNames[kind] +
                            "_h" + std::to_string(c));
  }

  for (int i = 0; i < count; ++i) {
    const int label = i % k;
    d.labels[static_cast<std::size_t>(i)] = label;
    const int kind = cfg.family == 0 ? label % 10 : (3 * label + 5) % 10;
    const double hue = (label + (cfg.family == 0 ? 0.0 : 0.5)) / k + 0.02 * (rng.uniform() - 0.5);

    // family 0: bright shape on dark ground; family 1 inverts the roles.
    const Rgb fg = cfg.family == 0 ? hsv(hue, 0.85, 0.80) : hsv(hue, 0.80, 0.30);
    const Rgb bg = cfg.family == 0 ? hsv(hue + 0.45, 0.25, 0.25) : hsv(hue + 0.45, 0.20, 0.75);

    const double cx = (0.40 + 0.20 * rng.uniform()) * s;
    const double cy = (0.40 + 0.20 * rng.uniform()) * s;
    const double r = (0.26 + 0.12 * rng.uniform()) * s;
    const double fx = 1.0 + rng.below(3);
    const double fy = 1.0 + rng.below(3);
    const double phase = 2.0 * kPi * rng.uniform();
    const double bright = 1.0 + 0.10 * (rng.uniform() - 0.5);

    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const bool inside = in_shape(kind, x + 0.5 - cx, y + 0.5 - cy, r, x + 0.5, y + 0.5, s);
        const Rgb& base = inside ? fg : bg;
        const double tex =
            1.0 + 0.12 * std::sin(2.0 * kPi * (fx * x + fy * y) / s + phase);
        const double ch[3] = {base.r, base.g, base.b};
        for (int c3 = 0; c3 < 3; ++c3) {
          double v = ch[c3] * tex * bright + 0.08 * (rng.uniform() - 0.5);
          v = std::min(static_cast<double>(kHi), std::max(static_cast<double>(kLo), v));
          d.images.at4(i, c3, y, x) = static_cast<float>(v);
        }
      }
    }
  }
  return d;
}

}  // namespace

ToySplits gen_toy_data(const ToyDataConfig& cfg, std::uint64_t seed) {
  if (cfg.num_classes < 4 || cfg.num_classes > 10) {
    throw std::invalid_argument("toy benchmark supports 4..10 classes");
  }
  if (cfg.image_size != 16 && cfg.image_size != 32) {
    throw std::invalid_argument("toy benchmark images are 16x16 or 32x32");
  }
  if (cfg.train_count < 1 || cfg.test_count < 1) {
    throw std::invalid_argument("split sizes must be positive");
  }
  if (cfg.family != 0 && cfg.family != 1) {
    throw std::invalid_argument("family must be 0 or 1");
  }
  const Rng base(seed);
  ToySplits out;
  out.train = make_split(cfg, base.fork(0x7472), cfg.train_count);
  out.test = make_split(cfg, base.fork(0x7465), cfg.test_count);
  return out;
}

}  // namespace jcdp
