#include "jcdp/forge.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "jcdp/nn.hpp"
#include "jcdp/rng.hpp"

namespace jcdp {

namespace {

float clamp01(float v) { return v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v); }

Tensor compose_clamped(const Tensor& clean, const Tensor& delta) {
  check_same_shape(clean, delta, "perturbation");
  Tensor out = clean;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = clamp01(clean.data[i] + delta.data[i]);
  }
  return out;
}

double sample_norm(const Tensor& ue, const Tensor& clean, std::int64_t e, std::int64_t per,
                   NormKind norm) {
  const float* u = ue.data.data() + e * per;
  const float* c = clean.data.data() + e * per;
  if (norm == NormKind::l_inf) {
    double mx = 0.0;
    for (std::int64_t i = 0; i < per; ++i) {
      mx = std::max(mx, std::fabs(static_cast<double>(u[i]) - static_cast<double>(c[i])));
    }
    return mx;
  }
  double acc = 0.0;
  for (std::int64_t i = 0; i < per; ++i) {
    const double d = static_cast<double>(u[i]) - static_cast<double>(c[i]);
    acc += d * d;
  }
  return std::sqrt(acc);
}

// Float composition can overshoot the radius by an ulp; nudge offending
// values back toward clean until the double-precision norm check holds.
void enforce_budget(Tensor& ue, const Tensor& clean, const PerturbationBudget& budget) {
  const std::int64_t n = ue.shape[0];
  const std::int64_t per = ue.numel() / n;
  if (budget.norm == NormKind::l_inf) {
    for (std::size_t i = 0; i < ue.data.size(); ++i) {
      int guard = 0;
      while (std::fabs(static_cast<double>(ue.data[i]) - static_cast<double>(clean.data[i])) >
             budget.epsilon) {
        ue.data[i] = std::nextafter(ue.data[i], clean.data[i]);
        if (++guard > 4) throw std::logic_error("l_inf budget projection failed to converge");
      }
    }
    return;
  }
  for (std::int64_t e = 0; e < n; ++e) {
    int guard = 0;
    double norm = sample_norm(ue, clean, e, per, NormKind::l2);
    while (norm > budget.epsilon) {
      const float shrink = static_cast<float>(budget.epsilon / norm * (1.0 - 1e-7));
      float* u = ue.data.data() + e * per;
      const float* c = clean.data.data() + e * per;
      for (std::int64_t i = 0; i < per; ++i) {
        u[i] = clamp01(c[i] + shrink * (u[i] - c[i]));
      }
      norm = sample_norm(ue, clean, e, per, NormKind::l2);
      if (++guard > 8) throw std::logic_error("l2 budget projection failed to converge");
    }
  }
}

UEDataset finish(const Dataset& clean, const Tensor& delta, NoiseKind kind,
                 const PerturbationBudget& budget) {
  UEDataset ue;
  ue.data.images = compose_clamped(clean.images, delta);
  enforce_budget(ue.data.images, clean.images, budget);
  ue.data.labels = clean.labels;
  ue.data.class_names = clean.class_names;
  ue.noise_kind = kind;
  ue.budget = budget;
  return ue;
}

void check_clean(const Dataset& clean, const PerturbationBudget& budget) {
  if (clean.size() == 0) throw std::invalid_argument("clean dataset is empty");
  if (clean.labels.size() != static_cast<std::size_t>(clean.size())) {
    throw std::invalid_argument("clean dataset labels misaligned");
  }
  if (budget.epsilon < 0.0) throw std::invalid_argument("budget radius must be nonnegative");
}

}  // namespace

std::string norm_name(NormKind n) { return n == NormKind::l_inf ? "l_inf" : "l2"; }

NormKind norm_from_name(const std::string& name) {
  if (name == "l_inf" || name == "linf") return NormKind::l_inf;
  if (name == "l2") return NormKind::l2;
  throw std::invalid_argument("unknown norm: " + name);
}

std::string noise_kind_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::emn_sample: return "emn_sample";
    case NoiseKind::emn_class: return "emn_class";
    case NoiseKind::lsp: return "lsp";
    case NoiseKind::random_class_patch: return "random_class_patch";
  }
  throw std::logic_error("unknown noise kind");
}

UEDataset forge_emn(const Dataset& clean, const ConvNetConfig& surrogate_spec,
                    const PerturbationBudget& budget, EmnMode mode, int outer_steps,
                    int inner_steps, std::uint64_t seed) {
  check_clean(clean, budget);
  const std::int64_t n = clean.size();
  const std::int64_t per = clean.images.numel() / n;
  const std::int64_t k = clean.num_classes();

  ConvNetConfig cfg = surrogate_spec;
  cfg.in_channels = static_cast<int>(clean.images.dim(1));
  cfg.image_size = static_cast<int>(clean.images.dim(2));
  cfg.num_classes = static_cast<int>(k);
  ConvNet surrogate(cfg);
  const Rng base(seed);
  surrogate.init_params(base.fork(0x636c73).seed());
  nn::Adam opt(nn::AdamConfig{.lr = 1e-3});
  opt.init(surrogate.params());
  Rng batch_rng = base.fork(0x62617463);

  const std::int64_t delta_rows = mode == EmnMode::sample_wise ? n : k;
  Tensor delta({delta_rows, clean.images.dim(1), clean.images.dim(2), clean.images.dim(3)});
  delta.fill(0.0f);
  const double step = budget.epsilon / 10.0;
  const int train_batch = 32;
  const std::int64_t grad_batch = 64;

  auto project = [&](float* d) {
    if (budget.norm == NormKind::l_inf) {
      const float lim = static_cast<float>(budget.epsilon);
      for (std::int64_t i = 0; i < per; ++i) d[i] = std::clamp(d[i], -lim, lim);
    } else {
      double acc = 0.0;
      for (std::int64_t i = 0; i < per; ++i) acc += static_cast<double>(d[i]) * d[i];
      const double norm = std::sqrt(acc);
      if (norm > budget.epsilon) {
        const float s = static_cast<float>(budget.epsilon / norm);
        for (std::int64_t i = 0; i < per; ++i) d[i] *= s;
      }
    }
  };
  auto delta_row = [&](std::int64_t sample) {
    return delta.ptr() + (mode == EmnMode::sample_wise
                              ? sample
                              : clean.labels[static_cast<std::size_t>(sample)]) *
                             per;
  };

  const std::int64_t cls_steps = (n + train_batch - 1) / train_batch;
  for (int outer = 0; outer < outer_steps; ++outer) {
    for (std::int64_t cs = 0; cs < cls_steps; ++cs) {
      Tensor xb({train_batch, clean.images.dim(1), clean.images.dim(2), clean.images.dim(3)});
      std::vector<std::int64_t> yb(train_batch);
      for (int b = 0; b < train_batch; ++b) {
        const std::int64_t idx =
            static_cast<std::int64_t>(batch_rng.below(static_cast<std::uint64_t>(n)));
        const float* c = clean.images.ptr() + idx * per;
        const float* d = delta_row(idx);
        float* x = xb.ptr() + b * per;
        for (std::int64_t i = 0; i < per; ++i) x[i] = clamp01(c[i] + d[i]);
        yb[static_cast<std::size_t>(b)] = clean.labels[static_cast<std::size_t>(idx)];
      }
      const double loss = ce_train_step(surrogate, opt, xb, yb);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("surrogate loss diverged during noise forging");
      }
    }

    for (int inner = 0; inner < inner_steps; ++inner) {
      Tensor grad_accum;
      if (mode == EmnMode::class_wise) {
        grad_accum = Tensor({k, clean.images.dim(1), clean.images.dim(2), clean.images.dim(3)});
        grad_accum.fill(0.0f);
      }
      for (std::int64_t begin = 0; begin < n; begin += grad_batch) {
        const std::int64_t end = std::min(n, begin + grad_batch);
        const std::int64_t bs = end - begin;
        Tensor xb({bs, clean.images.dim(1), clean.images.dim(2), clean.images.dim(3)});
        std::vector<std::int64_t> yb(static_cast<std::size_t>(bs));
        for (std::int64_t b = 0; b < bs; ++b) {
          const float* c = clean.images.ptr() + (begin + b) * per;
          const float* d = delta_row(begin + b);
          float* x = xb.ptr() + b * per;
          for (std::int64_t i = 0; i < per; ++i) x[i] = clamp01(c[i] + d[i]);
          yb[static_cast<std::size_t>(b)] = clean.labels[static_cast<std::size_t>(begin + b)];
        }
        Tensor g = ce_input_grad(surrogate, xb, yb, nullptr);
        if (mode == EmnMode::sample_wise) {
          for (std::int64_t b = 0; b < bs; ++b) {
            float* d = delta.ptr() + (begin + b) * per;
            const float* gb = g.ptr() + b * per;
            const float st = static_cast<float>(step);
            for (std::int64_t i = 0; i < per; ++i) {
              d[i] -= st * (gb[i] > 0.0f ? 1.0f : (gb[i] < 0.0f ? -1.0f : 0.0f));
            }
            project(d);
          }
        } else {
          for (std::int64_t b = 0; b < bs; ++b) {
            float* acc =
                grad_accum.ptr() + clean.labels[static_cast<std::size_t>(begin + b)] * per;
            const float* gb = g.ptr() + b * per;
            for (std::int64_t i = 0; i < per; ++i) acc[i] += gb[i];
          }
        }
      }
      if (mode == EmnMode::class_wise) {
        const float st = static_cast<float>(step);
        for (std::int64_t c = 0; c < k; ++c) {
          float* d = delta.ptr() + c * per;
          const float* gc = grad_accum.ptr() + c * per;
          for (std::int64_t i = 0; i < per; ++i) {
            d[i] -= st * (gc[i] > 0.0f ? 1.0f : (gc[i] < 0.0f ? -1.0f : 0.0f));
          }
          project(d);
        }
      }
    }
  }

  Tensor full_delta = mode == EmnMode::sample_wise
                          ? delta
                          : Tensor({n, clean.images.dim(1), clean.images.dim(2),
                                    clean.images.dim(3)});
  if (mode == EmnMode::class_wise) {
    for (std::int64_t e = 0; e < n; ++e) {
      const float* src = delta.ptr() + clean.labels[static_cast<std::size_t>(e)] * per;
      std::copy(src, src + per, full_delta.ptr() + e * per);
    }
  }
  return finish(clean, full_delta, mode == EmnMode::sample_wise ? NoiseKind::emn_sample
                                                                : NoiseKind::emn_class,
                budget);
}

UEDataset forge_lsp(const Dataset& clean, const PerturbationBudget& budget, int patch_size,
                    std::uint64_t seed) {
  check_clean(clean, budget);
  if (budget.norm != NormKind::l2) throw std::invalid_argument("lsp noise uses an l2 budget");
  const int side = static_cast<int>(clean.images.dim(2));
  if (patch_size < 1 || side % patch_size != 0) {
    throw std::invalid_argument("patch_size must divide the image side");
  }
  const std::int64_t n = clean.size();
  const std::int64_t c = clean.images.dim(1);
  const std::int64_t per = clean.images.numel() / n;
  const std::int64_t k = clean.num_classes();
  const float amp =
      static_cast<float>(budget.epsilon * (1.0 - 1e-6) / std::sqrt(static_cast<double>(per)));

  const Rng base(seed);
  Tensor class_delta({k, c, side, side});
  for (std::int64_t cls = 0; cls < k; ++cls) {
    Rng rng = base.fork(0x6c7370 + static_cast<std::uint64_t>(cls));
    std::vector<float> patch(static_cast<std::size_t>(c * patch_size * patch_size));
    for (float& v : patch) v = rng.below(2) == 0 ? -amp : amp;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      for (int y = 0; y < side; ++y) {
        for (int x = 0; x < side; ++x) {
          class_delta.at4(cls, ch, y, x) =
              patch[static_cast<std::size_t>((ch * patch_size + y % patch_size) * patch_size +
                                             x % patch_size)];
        }
      }
    }
  }

  Tensor delta({n, c, side, side});
  for (std::int64_t e = 0; e < n; ++e) {
    const float* src = class_delta.ptr() + clean.labels[static_cast<std::size_t>(e)] * per;
    std::copy(src, src + per, delta.ptr() + e * per);
  }
  return finish(clean, delta, NoiseKind::lsp, budget);
}

UEDataset forge_random_class_patch(const Dataset& clean, const PerturbationBudget& budget,
                                   std::uint64_t seed) {
  check_clean(clean, budget);
  const std::int64_t n = clean.size();
  const std::int64_t per = clean.images.numel() / n;
  const std::int64_t k = clean.num_classes();
  const float amp = budget.norm == NormKind::l_inf
                        ? static_cast<float>(budget.epsilon * (1.0 - 1e-6))
                        : static_cast<float>(budget.epsilon * (1.0 - 1e-6) /
                                             std::sqrt(static_cast<double>(per)));

  const Rng base(seed);
  Tensor class_delta({k, clean.images.dim(1), clean.images.dim(2), clean.images.dim(3)});
  for (std::int64_t cls = 0; cls < k; ++cls) {
    Rng rng = base.fork(0x726370 + static_cast<std::uint64_t>(cls));
    float* row = class_delta.ptr() + cls * per;
    for (std::int64_t i = 0; i < per; ++i) row[i] = rng.below(2) == 0 ? -amp : amp;
  }

  Tensor delta({n, clean.images.dim(1), clean.images.dim(2), clean.images.dim(3)});
  for (std::int64_t e = 0; e < n; ++e) {
    const float* src = class_delta.ptr() + clean.labels[static_cast<std::size_t>(e)] * per;
    std::copy(src, src + per, delta.ptr() + e * per);
  }
  return finish(clean, delta, NoiseKind::random_class_patch, budget);
}

BudgetReport verify_budget(const UEDataset& ue, const Dataset& clean) {
  if (ue.data.size() != clean.size() || ue.data.labels != clean.labels) {
    throw std::invalid_argument("ue/clean pairing misaligned");
  }
  check_same_shape(ue.data.images, clean.images, "ue/clean images");
  const std::int64_t n = clean.size();
  const std::int64_t per = clean.images.numel() / n;
  BudgetReport report;
  report.norms.resize(static_cast<std::size_t>(n));
  for (std::int64_t e = 0; e < n; ++e) {
    const double norm = sample_norm(ue.data.images, clean.images, e, per, ue.budget.norm);
    report.norms[static_cast<std::size_t>(e)] = norm;
    report.max_norm = std::max(report.max_norm, norm);
    if (norm > ue.budget.epsilon) report.violators.push_back(e);
  }
  return report;
}

double linear_probe_accuracy(const Tensor& inputs, const std::vector<std::int64_t>& labels,
                             int num_classes, int steps, std::uint64_t seed) {
  if (inputs.ndim() < 2) throw std::invalid_argument("probe inputs must be at least rank-2");
  const std::int64_t n = inputs.shape[0];
  const std::int64_t d = inputs.numel() / n;
  Tensor x = inputs;
  x.shape = {n, d};

  Tensor w({num_classes, d}), b({static_cast<std::int64_t>(num_classes)});
  Rng rng(seed);
  nn::init_he_normal(w, d, rng);
  b.fill(0.0f);
  nn::Adam opt(nn::AdamConfig{.lr = 0.05});
  std::vector<Tensor*> params = {&w, &b};
  opt.init(params);

  for (int s = 0; s < steps; ++s) {
    Tensor logits = nn::linear_forward(x, w, b);
    Tensor dlogits;
    nn::softmax_ce_loss(logits, labels, &dlogits);
    Tensor dw = zeros_like(w), db = zeros_like(b);
    nn::linear_backward(dlogits, x, w, &dw, &db);
    opt.step(params, {&dw, &db});
  }

  Tensor logits = nn::linear_forward(x, w, b);
  std::int64_t hits = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = logits.ptr() + i * num_classes;
    const std::int64_t pred = std::max_element(row, row + num_classes) - row;
    if (pred == labels[static_cast<std::size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace jcdp
