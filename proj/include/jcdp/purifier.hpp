#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "jcdp/ddpm.hpp"
#include "jcdp/perceptual.hpp"
#include "jcdp/tensor.hpp"

namespace jcdp {

enum class ConditionMode { fresh_noise, frozen_track, deterministic_mean };

std::string condition_mode_name(ConditionMode m);
ConditionMode condition_mode_from_name(const std::string& name);

struct GuidanceParams {
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  int T_p = 1;
  int N = 4;
  ConditionMode condition_mode = ConditionMode::fresh_noise;
};

// Default scales with T_p = max(1, T/10).
GuidanceParams default_guidance(const NoiseSchedule& ns);

// Canonical search grid for either lambda.
std::vector<double> lambda_grid();

struct TraceStep {
  int iteration = 0;  // 1-based
  int t = 0;
  double d1_norm = 0.0;
  double d2_norm = 0.0;
  double shift_norm = 0.0;  // sigma_t^2 * ||d1 + d2|| over the batch
};

struct PurificationTrace {
  std::uint64_t seed = 0;
  std::vector<TraceStep> steps;            // N * T_p entries
  std::vector<double> psnr_to_input;       // one mean PSNR per iteration
  // Populated only when requested: per-step d1/d2 batches for offline
  // recomputation of the shift magnitudes.
  bool tensors_recorded = false;
  std::vector<Tensor> d1_log, d2_log;
  std::vector<double> sigma_sq_log;
};

std::string trace_to_csv(const PurificationTrace& trace);

// d1 = -lambda1 * 2 (x_star_t - x_tilde_t) / n, the analytic gradient of
// -lambda1 * MSE per image (n = elements per image).
ImageBatch guidance_d1(const ImageBatch& x_star_t, const ImageBatch& x_tilde_t, double lambda1);

// d2 = -lambda2 * grad_a D_p(a, b) at a = x_star_t, b = x_tilde_t.
// lambda2 = 0 short-circuits to zero without touching the extractor.
ImageBatch guidance_d2(const FeatureExtractor& phi, const ImageBatch& x_star_t,
                       const ImageBatch& x_tilde_t, double lambda2);

struct StepDiagnostics {
  double sigma_sq = 0.0;
  double d1_sq = 0.0;     // squared norms over the call's batch
  double d2_sq = 0.0;
  double shift_sq = 0.0;
  bool record_tensors = false;
  Tensor d1, d2;
};

// One guided reverse transition: sample from N(mu + sigma_t^2 (d1 + d2),
// sigma_t^2 I), zero injected noise at t = 1. The condition image x_tilde_t
// is derived from x_tilde_0 per params.condition_mode; frozen_eps supplies
// the reused draw for frozen_track. With lambda1 = lambda2 = 0 the RNG
// consumption and arithmetic match unconditional_reverse_step exactly.
ImageBatch conditioned_reverse_step(const TrainState& state, const FeatureExtractor& phi,
                                    const ImageBatch& x_star_t, const ImageBatch& x_tilde_0,
                                    int t, const GuidanceParams& params, Rng& rng,
                                    StepDiagnostics* diag = nullptr,
                                    const Tensor* frozen_eps = nullptr);

// Plain ancestral step: sample from N(mu, sigma_t^2 I), zero noise at t = 1.
ImageBatch unconditional_reverse_step(const TrainState& state, const ImageBatch& x_t, int t,
                                      Rng& rng);

struct PurifyOptions {
  bool record_tensors = false;
};

// Algorithm: N rounds of (diffuse T_p steps in one closed-form jump, then
// guided reverse t = T_p..1), conditioned throughout on the original input.
// Per-element RNG streams derive from (seed, content hash), so batch order
// does not affect any element's output.
std::pair<ImageBatch, PurificationTrace> purify(const TrainState& state,
                                                const FeatureExtractor& phi,
                                                const ImageBatch& ue_batch,
                                                const GuidanceParams& params, std::uint64_t seed,
                                                const PurifyOptions& opts = {});

// Guidance-free twin of purify, written as its own loop so the lambda = 0
// reduction can be checked across two independent code paths.
std::pair<ImageBatch, PurificationTrace> purify_unconditional(const TrainState& state,
                                                              const ImageBatch& ue_batch,
                                                              int T_p, int N,
                                                              std::uint64_t seed);

}  // namespace jcdp
