#include "jcdp/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace jcdp {
namespace {

void check_t(int t, int T, const char* what) {
  if (t < 1 || t > T)
    throw std::out_of_range(std::string(what) + ": timestep " + std::to_string(t) +
                            " outside [1, " + std::to_string(T) + "]");
}

}  // namespace

double NoiseSchedule::beta_t(int t) const {
  check_t(t, T, "beta_t");
  return beta[std::size_t(t - 1)];
}

double NoiseSchedule::alpha_t(int t) const {
  check_t(t, T, "alpha_t");
  return alpha[std::size_t(t - 1)];
}

double NoiseSchedule::alpha_bar_t(int t) const {
  check_t(t, T, "alpha_bar_t");
  return alpha_bar[std::size_t(t - 1)];
}

double NoiseSchedule::sigma_sq_t(int t) const {
  check_t(t, T, "sigma_sq_t");
  return sigma_sq[std::size_t(t - 1)];
}

NoiseSchedule build_schedule(int T, double beta_start, double beta_end, VarianceMode mode) {
  if (T < 1) throw std::invalid_argument("build_schedule: T must be >= 1");
  if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0))
    throw std::invalid_argument("build_schedule: beta bounds must lie in (0, 1)");
  if (beta_start > beta_end)
    throw std::invalid_argument("build_schedule: beta_start must be <= beta_end");

  NoiseSchedule ns;
  ns.T = T;
  ns.mode = mode;
  ns.beta.resize(std::size_t(T));
  ns.alpha.resize(std::size_t(T));
  ns.alpha_bar.resize(std::size_t(T));
  ns.sigma_sq.resize(std::size_t(T));

  for (int i = 0; i < T; ++i) {
    const double b =
        T == 1 ? beta_start : beta_start + (beta_end - beta_start) * double(i) / double(T - 1);
    ns.beta[std::size_t(i)] = b;
    ns.alpha[std::size_t(i)] = 1.0 - b;
    ns.alpha_bar[std::size_t(i)] =
        (i == 0 ? ns.alpha[0] : ns.alpha_bar[std::size_t(i - 1)] * ns.alpha[std::size_t(i)]);
  }
  for (int i = 0; i < T; ++i) {
    if (mode == VarianceMode::fixed_beta) {
      ns.sigma_sq[std::size_t(i)] = ns.beta[std::size_t(i)];
    } else {
      // abar_0 = 1 by convention, so the posterior variance at t = 1 is zero.
      const double abar_prev = (i == 0) ? 1.0 : ns.alpha_bar[std::size_t(i - 1)];
      ns.sigma_sq[std::size_t(i)] =
          (1.0 - abar_prev) / (1.0 - ns.alpha_bar[std::size_t(i)]) * ns.beta[std::size_t(i)];
    }
  }
  return ns;
}

NoiseSchedule default_schedule(int T, VarianceMode mode) {
  if (T < 1) throw std::invalid_argument("default_schedule: T must be >= 1");
  const double k = 1000.0 / double(T);
  double bs = 1e-4 * k;
  double be = 0.02 * k;
  if (be >= 1.0)
    throw std::invalid_argument("default_schedule: T too small for the scaled linear schedule");
  return build_schedule(T, bs, be, mode);
}

ImageBatch diffuse_to(const ImageBatch& x0, int t, const Tensor& eps, const NoiseSchedule& ns) {
  check_t(t, ns.T, "diffuse_to");
  check_same_shape(x0.data, eps, "diffuse_to");
  const float a = float(std::sqrt(ns.alpha_bar_t(t)));
  const float b = float(std::sqrt(1.0 - ns.alpha_bar_t(t)));
  ImageBatch out{x0.data, x0.space};
  for (std::size_t i = 0; i < out.data.data.size(); ++i)
    out.data.data[i] = a * x0.data.data[i] + b * eps.data[i];
  return out;
}

ImageBatch reverse_step_mean(const ImageBatch& x_t, const Tensor& eps_pred, int t,
                             const NoiseSchedule& ns) {
  check_t(t, ns.T, "reverse_step_mean");
  check_same_shape(x_t.data, eps_pred, "reverse_step_mean");
  const double alpha = ns.alpha_t(t);
  const double abar = ns.alpha_bar_t(t);
  const float inv_sqrt_alpha = float(1.0 / std::sqrt(alpha));
  const float coef = float((1.0 - alpha) / std::sqrt(1.0 - abar));
  ImageBatch out{x_t.data, x_t.space};
  for (std::size_t i = 0; i < out.data.data.size(); ++i)
    out.data.data[i] = inv_sqrt_alpha * (x_t.data.data[i] - coef * eps_pred.data[i]);
  return out;
}

double perturbation_attenuation(int t, const NoiseSchedule& ns) {
  check_t(t, ns.T, "perturbation_attenuation");
  const double abar = ns.alpha_bar_t(t);
  return std::sqrt(abar) / std::sqrt(1.0 - abar);
}

int first_t_below_attenuation(const NoiseSchedule& ns, double threshold) {
  for (int t = 1; t <= ns.T; ++t)
    if (perturbation_attenuation(t, ns) < threshold) return t;
  return ns.T + 1;
}

}  // namespace jcdp
