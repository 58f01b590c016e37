#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "jcdp/data.hpp"
#include "jcdp/denoiser.hpp"
#include "jcdp/nn.hpp"
#include "jcdp/schedule.hpp"
#include "jcdp/tensor.hpp"

namespace jcdp {

using LossHistory = std::vector<std::pair<std::int64_t, double>>;

struct TrainState {
  DenoiserSpec spec;
  Denoiser model;
  NoiseSchedule schedule;
  nn::Adam opt;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  LossHistory loss_history;
};

struct TrainOptions {
  int record_interval = 10;
  int batch_size = 16;  // finetune_ddpm only; train_ddpm takes it directly
};

// Standard epsilon-prediction objective over uniformly sampled t in [1, T].
TrainState train_ddpm(const Dataset& raw_data, const DenoiserSpec& spec,
                      const NoiseSchedule& schedule, int steps, int batch_size,
                      std::uint64_t seed, const TrainOptions& opts = {});

// Resumes from a saved checkpoint's parameters with a fresh optimizer whose
// learning rate is scaled by lr_scale.
TrainState finetune_ddpm(const std::filesystem::path& source_ckpt, const Dataset& raw_data,
                         int steps, double lr_scale, std::uint64_t seed,
                         const TrainOptions& opts = {});
// Same, from an in-memory source state.
TrainState finetune_ddpm(const TrainState& source, const Dataset& raw_data, int steps,
                         double lr_scale, std::uint64_t seed, const TrainOptions& opts = {});

// One guided forward pass; whole batch shares the timestep t.
ImageBatch predict_noise(const TrainState& state, const ImageBatch& x_t, int t);

void save_ddpm_checkpoint(const std::filesystem::path& dir, const TrainState& state);
TrainState load_ddpm_checkpoint(const std::filesystem::path& dir);

// Mean of the last `window` recorded losses at or before the final step.
double smoothed_loss(const LossHistory& history, int window);
// First recorded step whose trailing-window mean drops to `threshold` or
// below, or -1 if never reached.
std::int64_t steps_to_threshold(const LossHistory& history, double threshold, int window);

}  // namespace jcdp
