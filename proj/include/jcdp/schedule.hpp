#pragma once

#include <vector>

#include "jcdp/tensor.hpp"

namespace jcdp {

// Reverse-step variance: the forward beta_t, or the posterior variance
// beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t.
enum class VarianceMode { fixed_beta, posterior };

// Closed-form schedule tables. Timesteps are 1-based: t in [1, T]; t = 0 is
// not a valid timestep. Tables are kept in double so incremental products
// stay exact to ~1e-16.
struct NoiseSchedule {
  int T = 0;
  VarianceMode mode = VarianceMode::posterior;
  std::vector<double> beta;       // beta[t-1]
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product of alpha
  std::vector<double> sigma_sq;   // reverse-step variance

  double beta_t(int t) const;
  double alpha_t(int t) const;
  double alpha_bar_t(int t) const;
  double sigma_sq_t(int t) const;
};

// Linear beta interpolation from beta_start to beta_end over T steps.
// Preconditions: T >= 1 and 0 < beta_start <= beta_end < 1.
NoiseSchedule build_schedule(int T, double beta_start, double beta_end, VarianceMode mode);

// Desk default: the 1e-4..0.02 bounds of a 1000-step linear schedule scaled
// by 1000/T, so total injected noise stays comparable when T shrinks.
NoiseSchedule default_schedule(int T, VarianceMode mode = VarianceMode::posterior);

// Single-step forward diffusion: sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps.
ImageBatch diffuse_to(const ImageBatch& x0, int t, const Tensor& eps, const NoiseSchedule& ns);

// Reverse-transition mean given a noise prediction:
// (x_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps_pred) / sqrt(alpha_t).
ImageBatch reverse_step_mean(const ImageBatch& x_t, const Tensor& eps_pred, int t,
                             const NoiseSchedule& ns);

// sqrt(abar_t) / sqrt(1 - abar_t): how much of a pixel perturbation survives
// t forward steps relative to the injected Gaussian noise. Diagnostic for
// choosing the purification depth.
double perturbation_attenuation(int t, const NoiseSchedule& ns);

// Smallest t whose attenuation ratio drops below `threshold`, or T + 1 if
// none does.
int first_t_below_attenuation(const NoiseSchedule& ns, double threshold);

}  // namespace jcdp
