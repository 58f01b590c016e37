#include "jcdp/purifier.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <stdexcept>

namespace jcdp {

namespace {

void append_trace_tail(std::string& msg, const PurificationTrace& trace) {
  msg += "; trace tail:";
  const std::size_t shown = std::min<std::size_t>(5, trace.steps.size());
  for (std::size_t i = trace.steps.size() - shown; i < trace.steps.size(); ++i) {
    const TraceStep& s = trace.steps[i];
    char buf[128];
    std::snprintf(buf, sizeof buf, " [i=%d t=%d d1=%.3g d2=%.3g shift=%.3g]", s.iteration, s.t,
                  s.d1_norm, s.d2_norm, s.shift_norm);
    msg += buf;
  }
  if (shown == 0) msg += " (empty)";
}

double sum_sq(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.data) acc += static_cast<double>(v) * v;
  return acc;
}

// Shared tail of both reverse steps: inject N(0, sigma_t^2) noise except at
// the final step. Kept in one place so the lambda = 0 reduction is an
// arithmetic identity, not a coincidence.
void apply_transition_noise(ImageBatch& x, double sigma_sq, int t, Rng& rng) {
  if (t <= 1 || sigma_sq <= 0.0) return;
  const float sigma = static_cast<float>(std::sqrt(sigma_sq));
  for (float& v : x.data.data) v += sigma * rng.normal();
}

ImageBatch condition_at(const ImageBatch& x_tilde_0, int t, ConditionMode mode,
                        const NoiseSchedule& ns, Rng& rng, const Tensor* frozen_eps) {
  switch (mode) {
    case ConditionMode::fresh_noise: {
      Tensor eps = zeros_like(x_tilde_0.data);
      rng.fill_normal(std::span<float>(eps.data));
      return diffuse_to(x_tilde_0, t, eps, ns);
    }
    case ConditionMode::frozen_track: {
      if (!frozen_eps) {
        throw std::invalid_argument("frozen_track needs the run's frozen noise draw");
      }
      return diffuse_to(x_tilde_0, t, *frozen_eps, ns);
    }
    case ConditionMode::deterministic_mean: {
      ImageBatch out{scale(x_tilde_0.data, static_cast<float>(std::sqrt(ns.alpha_bar_t(t)))),
                     x_tilde_0.space};
      return out;
    }
  }
  throw std::logic_error("unknown condition mode");
}

void validate_guidance(const GuidanceParams& p, const NoiseSchedule& ns) {
  if (p.lambda1 < 0.0 || p.lambda2 < 0.0) {
    throw std::invalid_argument("guidance scales must be nonnegative");
  }
  if (p.T_p < 1 || p.T_p > ns.T) {
    throw std::invalid_argument("T_p must lie in [1, T]; got " + std::to_string(p.T_p) +
                                " with T = " + std::to_string(ns.T));
  }
  if (p.N < 1) throw std::invalid_argument("purification iteration count must be >= 1");
}

}  // namespace

std::string condition_mode_name(ConditionMode m) {
  switch (m) {
    case ConditionMode::fresh_noise: return "fresh_noise";
    case ConditionMode::frozen_track: return "frozen_track";
    case ConditionMode::deterministic_mean: return "deterministic_mean";
  }
  throw std::logic_error("unknown condition mode");
}

ConditionMode condition_mode_from_name(const std::string& name) {
  if (name == "fresh_noise") return ConditionMode::fresh_noise;
  if (name == "frozen_track") return ConditionMode::frozen_track;
  if (name == "deterministic_mean") return ConditionMode::deterministic_mean;
  throw std::invalid_argument("unknown condition mode: " + name);
}

GuidanceParams default_guidance(const NoiseSchedule& ns) {
  GuidanceParams p;
  p.T_p = std::max(1, ns.T / 10);
  return p;
}

std::vector<double> lambda_grid() { return {0.1, 1.0, 10.0, 100.0}; }

std::string trace_to_csv(const PurificationTrace& trace) {
  std::string out = "iteration,t,d1_norm,d2_norm,shift_norm\n";
  char buf[160];
  for (const TraceStep& s : trace.steps) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.17g,%.17g,%.17g\n", s.iteration, s.t, s.d1_norm,
                  s.d2_norm, s.shift_norm);
    out += buf;
  }
  return out;
}

ImageBatch guidance_d1(const ImageBatch& x_star_t, const ImageBatch& x_tilde_t, double lambda1) {
  check_same_shape(x_star_t.data, x_tilde_t.data, "guidance_d1 inputs");
  const double n = static_cast<double>(x_star_t.per_image());
  const float coef = static_cast<float>(-lambda1 * 2.0 / n);
  ImageBatch out{zeros_like(x_star_t.data), x_star_t.space};
  for (std::size_t i = 0; i < out.data.data.size(); ++i) {
    out.data.data[i] = coef * (x_star_t.data.data[i] - x_tilde_t.data.data[i]);
  }
  return out;
}

ImageBatch guidance_d2(const FeatureExtractor& phi, const ImageBatch& x_star_t,
                       const ImageBatch& x_tilde_t, double lambda2) {
  check_same_shape(x_star_t.data, x_tilde_t.data, "guidance_d2 inputs");
  if (lambda2 == 0.0) {
    return ImageBatch{zeros_like(x_star_t.data), x_star_t.space};
  }
  ImageBatch grad = distance_gradient(phi, x_star_t, x_tilde_t);
  for (float& v : grad.data.data) v = static_cast<float>(-lambda2 * v);
  return grad;
}

ImageBatch conditioned_reverse_step(const TrainState& state, const FeatureExtractor& phi,
                                    const ImageBatch& x_star_t, const ImageBatch& x_tilde_0,
                                    int t, const GuidanceParams& params, Rng& rng,
                                    StepDiagnostics* diag, const Tensor* frozen_eps) {
  if (x_star_t.space != ValueSpace::model_sym || x_tilde_0.space != ValueSpace::model_sym) {
    throw std::invalid_argument("conditioned_reverse_step expects model_sym inputs");
  }
  check_same_shape(x_star_t.data, x_tilde_0.data, "reverse-step inputs");

  ImageBatch eps_pred = predict_noise(state, x_star_t, t);
  ImageBatch out = reverse_step_mean(x_star_t, eps_pred.data, t, state.schedule);
  const double sigma_sq = state.schedule.sigma_sq_t(t);
  if (diag) diag->sigma_sq = sigma_sq;

  const bool active = (params.lambda1 > 0.0 || params.lambda2 > 0.0) && sigma_sq > 0.0;
  if (active) {
    ImageBatch x_tilde_t =
        condition_at(x_tilde_0, t, params.condition_mode, state.schedule, rng, frozen_eps);
    ImageBatch d1 = guidance_d1(x_star_t, x_tilde_t, params.lambda1);
    ImageBatch d2 = guidance_d2(phi, x_star_t, x_tilde_t, params.lambda2);
    const float s2 = static_cast<float>(sigma_sq);
    double shift_sq = 0.0;
    for (std::size_t i = 0; i < out.data.data.size(); ++i) {
      const float g = d1.data.data[i] + d2.data.data[i];
      const float shift = s2 * g;
      out.data.data[i] += shift;
      shift_sq += static_cast<double>(shift) * shift;
    }
    if (diag) {
      diag->d1_sq = sum_sq(d1.data);
      diag->d2_sq = sum_sq(d2.data);
      diag->shift_sq = shift_sq;
      if (diag->record_tensors) {
        diag->d1 = std::move(d1.data);
        diag->d2 = std::move(d2.data);
      }
    }
  } else if (diag && diag->record_tensors) {
    diag->d1 = zeros_like(out.data);
    diag->d2 = zeros_like(out.data);
  }

  apply_transition_noise(out, sigma_sq, t, rng);
  if (!all_finite(out.data)) {
    throw std::runtime_error("non-finite sample in guided reverse step at t = " +
                             std::to_string(t));
  }
  return out;
}

ImageBatch unconditional_reverse_step(const TrainState& state, const ImageBatch& x_t, int t,
                                      Rng& rng) {
  if (x_t.space != ValueSpace::model_sym) {
    throw std::invalid_argument("unconditional_reverse_step expects model_sym inputs");
  }
  ImageBatch eps_pred = predict_noise(state, x_t, t);
  ImageBatch out = reverse_step_mean(x_t, eps_pred.data, t, state.schedule);
  apply_transition_noise(out, state.schedule.sigma_sq_t(t), t, rng);
  if (!all_finite(out.data)) {
    throw std::runtime_error("non-finite sample in reverse step at t = " + std::to_string(t));
  }
  return out;
}

namespace {

// Shared scaffolding for the two purification loops: per-element RNG streams
// keyed by content, one diffusion jump per round, per-round PSNR.
struct PurifyRun {
  const ImageBatch* input = nullptr;
  std::int64_t n = 0;
  std::int64_t per = 0;
  std::vector<Rng> streams;
  ImageBatch x;          // current iterate, model_sym
  ImageBatch cond0;      // fixed condition anchor, model_sym
  PurificationTrace trace;

  PurifyRun(const ImageBatch& ue_batch, std::uint64_t seed) {
    if (ue_batch.space != ValueSpace::data_unit) {
      throw std::invalid_argument("purify expects data_unit input images");
    }
    if (ue_batch.data.ndim() != 4 || ue_batch.batch() == 0) {
      throw std::invalid_argument("purify expects a non-empty rank-4 image batch");
    }
    input = &ue_batch;
    n = ue_batch.batch();
    per = ue_batch.per_image();
    const Rng base(seed);
    streams.reserve(static_cast<std::size_t>(n));
    for (std::int64_t e = 0; e < n; ++e) {
      const std::uint64_t h =
          fnv1a64(ue_batch.data.ptr() + e * per, static_cast<std::size_t>(per) * sizeof(float));
      streams.push_back(base.fork(h));
    }
    cond0 = to_model_sym(ue_batch);
    x = cond0;
    trace.seed = seed;
  }

  Tensor element(const ImageBatch& src, std::int64_t e) const {
    Tensor one({1, src.channels(), src.height(), src.width()});
    std::memcpy(one.ptr(), src.data.ptr() + e * per, static_cast<std::size_t>(per) * sizeof(float));
    return one;
  }

  void store_element(ImageBatch& dst, std::int64_t e, const Tensor& one) {
    std::memcpy(dst.data.ptr() + e * per, one.ptr(),
                static_cast<std::size_t>(per) * sizeof(float));
  }

  void diffuse_round(int T_p, const NoiseSchedule& ns) {
    const float sa = static_cast<float>(std::sqrt(ns.alpha_bar_t(T_p)));
    const float sn = static_cast<float>(std::sqrt(1.0 - ns.alpha_bar_t(T_p)));
    std::vector<float> eps(static_cast<std::size_t>(per));
    for (std::int64_t e = 0; e < n; ++e) {
      streams[static_cast<std::size_t>(e)].fill_normal(std::span<float>(eps));
      float* px = x.data.ptr() + e * per;
      for (std::int64_t i = 0; i < per; ++i) {
        px[i] = sa * px[i] + sn * eps[static_cast<std::size_t>(i)];
      }
    }
  }

  void record_psnr() {
    ImageBatch unit = to_data_unit(x);
    trace.psnr_to_input.push_back(mean_psnr(unit, *input));
  }

  ImageBatch finish() {
    ImageBatch out = to_data_unit(x);
    clamp_to_space(out);
    return out;
  }
};

}  // namespace

std::pair<ImageBatch, PurificationTrace> purify(const TrainState& state,
                                                const FeatureExtractor& phi,
                                                const ImageBatch& ue_batch,
                                                const GuidanceParams& params, std::uint64_t seed,
                                                const PurifyOptions& opts) {
  validate_guidance(params, state.schedule);
  PurifyRun run(ue_batch, seed);
  run.trace.tensors_recorded = opts.record_tensors;

  const bool guidance_active = params.lambda1 > 0.0 || params.lambda2 > 0.0;
  std::vector<Tensor> frozen(static_cast<std::size_t>(run.n));
  if (params.condition_mode == ConditionMode::frozen_track && guidance_active) {
    for (std::int64_t e = 0; e < run.n; ++e) {
      Tensor& eps = frozen[static_cast<std::size_t>(e)];
      eps = Tensor({1, ue_batch.channels(), ue_batch.height(), ue_batch.width()});
      run.streams[static_cast<std::size_t>(e)].fill_normal(std::span<float>(eps.data));
    }
  }

  for (int i = 1; i <= params.N; ++i) {
    run.diffuse_round(params.T_p, state.schedule);
    for (int t = params.T_p; t >= 1; --t) {
      double d1_sq = 0.0, d2_sq = 0.0, shift_sq = 0.0, sigma_sq = 0.0;
      Tensor d1_all, d2_all;
      if (opts.record_tensors) {
        d1_all = zeros_like(run.x.data);
        d2_all = zeros_like(run.x.data);
      }
      for (std::int64_t e = 0; e < run.n; ++e) {
        ImageBatch xe{run.element(run.x, e), ValueSpace::model_sym};
        ImageBatch ce{run.element(run.cond0, e), ValueSpace::model_sym};
        StepDiagnostics diag;
        diag.record_tensors = opts.record_tensors;
        ImageBatch next;
        try {
          next = conditioned_reverse_step(
              state, phi, xe, ce, t, params, run.streams[static_cast<std::size_t>(e)], &diag,
              params.condition_mode == ConditionMode::frozen_track && guidance_active
                  ? &frozen[static_cast<std::size_t>(e)]
                  : nullptr);
        } catch (const std::runtime_error& err) {
          std::string msg = err.what();
          append_trace_tail(msg, run.trace);
          throw std::runtime_error(msg);
        }
        run.store_element(run.x, e, next.data);
        d1_sq += diag.d1_sq;
        d2_sq += diag.d2_sq;
        shift_sq += diag.shift_sq;
        sigma_sq = diag.sigma_sq;
        if (opts.record_tensors) {
          std::memcpy(d1_all.ptr() + e * run.per, diag.d1.ptr(),
                      static_cast<std::size_t>(run.per) * sizeof(float));
          std::memcpy(d2_all.ptr() + e * run.per, diag.d2.ptr(),
                      static_cast<std::size_t>(run.per) * sizeof(float));
        }
      }
      run.trace.steps.push_back(TraceStep{i, t, std::sqrt(d1_sq), std::sqrt(d2_sq),
                                          std::sqrt(shift_sq)});
      if (opts.record_tensors) {
        run.trace.d1_log.push_back(std::move(d1_all));
        run.trace.d2_log.push_back(std::move(d2_all));
        run.trace.sigma_sq_log.push_back(sigma_sq);
      }
    }
    run.record_psnr();
  }
  return {run.finish(), std::move(run.trace)};
}

std::pair<ImageBatch, PurificationTrace> purify_unconditional(const TrainState& state,
                                                              const ImageBatch& ue_batch,
                                                              int T_p, int N,
                                                              std::uint64_t seed) {
  if (T_p < 1 || T_p > state.schedule.T) {
    throw std::invalid_argument("T_p must lie in [1, T]");
  }
  if (N < 1) throw std::invalid_argument("purification iteration count must be >= 1");
  PurifyRun run(ue_batch, seed);

  for (int i = 1; i <= N; ++i) {
    run.diffuse_round(T_p, state.schedule);
    for (int t = T_p; t >= 1; --t) {
      for (std::int64_t e = 0; e < run.n; ++e) {
        ImageBatch xe{run.element(run.x, e), ValueSpace::model_sym};
        ImageBatch next =
            unconditional_reverse_step(state, xe, t, run.streams[static_cast<std::size_t>(e)]);
        run.store_element(run.x, e, next.data);
      }
      run.trace.steps.push_back(TraceStep{i, t, 0.0, 0.0, 0.0});
    }
    run.record_psnr();
  }
  return {run.finish(), std::move(run.trace)};
}

}  // namespace jcdp
