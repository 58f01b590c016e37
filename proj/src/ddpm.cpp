#include "jcdp/ddpm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "jcdp/container.hpp"
#include "jcdp/rng.hpp"

namespace jcdp {

namespace {

void check_training_inputs(const Dataset& raw, const DenoiserSpec& spec) {
  if (raw.size() == 0) throw std::invalid_argument("training dataset is empty");
  if (raw.images.dim(1) != spec.channels) {
    throw std::invalid_argument("dataset channels do not match denoiser spec");
  }
  if (spec.depth == 2 && (raw.images.dim(2) % 2 != 0 || raw.images.dim(3) % 2 != 0)) {
    throw std::invalid_argument("image resolution incompatible with depth-2 denoiser");
  }
}

// Runs `steps` optimizer steps, appending to state.loss_history.
void train_loop(TrainState& st, const Dataset& raw, int steps, int batch_size,
                double lr_scale, Rng& rng, const TrainOptions& opts) {
  const std::int64_t n = raw.size();
  const std::int64_t per = raw.images.numel() / n;
  const int t_max = st.schedule.T;
  const int interval = std::max(1, opts.record_interval);

  Tensor x0({batch_size, raw.images.dim(1), raw.images.dim(2), raw.images.dim(3)});
  Tensor eps = zeros_like(x0);
  std::vector<int> ts(static_cast<std::size_t>(batch_size));

  for (int s = 0; s < steps; ++s) {
    for (int b = 0; b < batch_size; ++b) {
      const std::int64_t idx = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
      const float* src = raw.images.ptr() + idx * per;
      float* dst = x0.ptr() + b * per;
      // Dataset images live in [0,1]; the model works on [-1,1].
      for (std::int64_t i = 0; i < per; ++i) {
        dst[i] = static_cast<float>(2.0 * static_cast<double>(src[i]) - 1.0);
      }
      ts[static_cast<std::size_t>(b)] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(t_max)));
    }
    rng.fill_normal(std::span<float>(eps.data));

    Tensor x_t = x0;
    for (int b = 0; b < batch_size; ++b) {
      const double abar = st.schedule.alpha_bar_t(ts[static_cast<std::size_t>(b)]);
      const float sa = static_cast<float>(std::sqrt(abar));
      const float sn = static_cast<float>(std::sqrt(1.0 - abar));
      float* xt = x_t.ptr() + b * per;
      const float* ep = eps.ptr() + b * per;
      for (std::int64_t i = 0; i < per; ++i) xt[i] = sa * xt[i] + sn * ep[i];
    }

    DenoiserCache cache;
    Tensor pred = st.model.forward(x_t, ts, cache);
    double loss = 0.0;
    Tensor dpred = zeros_like(pred);
    const double inv = 1.0 / static_cast<double>(pred.numel());
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
      const double r = static_cast<double>(pred.data[i]) - static_cast<double>(eps.data[i]);
      loss += r * r;
      dpred.data[i] = static_cast<float>(2.0 * r * inv);
    }
    loss *= inv;
    if (!std::isfinite(loss)) {
      throw std::runtime_error("non-finite training loss at step " + std::to_string(st.step) +
                               " (loss=" + std::to_string(loss) + ")");
    }

    std::vector<Tensor> grads = st.model.zero_grads();
    st.model.backward(dpred, cache, &grads);
    std::vector<const Tensor*> gp;
    gp.reserve(grads.size());
    for (const Tensor& g : grads) gp.push_back(&g);
    st.opt.step(st.model.params(), gp, lr_scale);

    ++st.step;
    if (st.step % interval == 0 || s == steps - 1) {
      st.loss_history.emplace_back(st.step, loss);
    }
  }
}

Checkpoint to_checkpoint(const TrainState& st) {
  Checkpoint ckpt;
  ckpt.kind = "ddpm";
  ckpt.meta = {
      {"spec",
       {{"channels", st.spec.channels},
        {"base_width", st.spec.base_width},
        {"depth", st.spec.depth},
        {"time_embedding_dim", st.spec.time_embedding_dim},
        {"parameter_count", st.spec.parameter_count()}}},
      {"schedule",
       {{"T", st.schedule.T},
        {"beta_start", st.schedule.beta.front()},
        {"beta_end", st.schedule.beta.back()},
        {"variance_mode",
         st.schedule.mode == VarianceMode::posterior ? "posterior" : "fixed_beta"}}},
      {"step", st.step},
      {"seed", st.seed},
  };
  const auto names = st.model.param_names();
  const auto params = st.model.params();
  for (std::size_t i = 0; i < names.size(); ++i) {
    ckpt.tensors.emplace_back(names[i], *params[i]);
  }
  return ckpt;
}

TrainState from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "ddpm") {
    throw std::runtime_error("checkpoint kind is '" + ckpt.kind + "', expected 'ddpm'");
  }
  TrainState st;
  try {
    const auto& spec = ckpt.meta.at("spec");
    st.spec.channels = spec.at("channels").get<int>();
    st.spec.base_width = spec.at("base_width").get<int>();
    st.spec.depth = spec.at("depth").get<int>();
    st.spec.time_embedding_dim = spec.at("time_embedding_dim").get<int>();
    const auto& sch = ckpt.meta.at("schedule");
    st.schedule = build_schedule(sch.at("T").get<int>(), sch.at("beta_start").get<double>(),
                                 sch.at("beta_end").get<double>(),
                                 sch.at("variance_mode").get<std::string>() == "posterior"
                                     ? VarianceMode::posterior
                                     : VarianceMode::fixed_beta);
    st.step = ckpt.meta.at("step").get<std::int64_t>();
    st.seed = ckpt.meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("corrupt checkpoint metadata: " + std::string(e.what()));
  }
  st.model = Denoiser(st.spec);
  const auto names = st.model.param_names();
  auto params = st.model.params();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const Tensor& saved = ckpt.tensor(names[i]);
    if (saved.shape != params[i]->shape) {
      throw std::runtime_error("checkpoint architecture mismatch on tensor '" + names[i] + "'");
    }
    *params[i] = saved;
  }
  st.opt = nn::Adam(nn::AdamConfig{});
  st.opt.init(st.model.params());
  return st;
}

}  // namespace

TrainState train_ddpm(const Dataset& raw_data, const DenoiserSpec& spec,
                      const NoiseSchedule& schedule, int steps, int batch_size,
                      std::uint64_t seed, const TrainOptions& opts) {
  check_training_inputs(raw_data, spec);
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (steps < 0) throw std::invalid_argument("step count must be nonnegative");
  TrainState st;
  st.spec = spec;
  st.schedule = schedule;
  st.seed = seed;
  st.model = Denoiser(spec);
  st.model.init_params(seed);
  st.opt = nn::Adam(nn::AdamConfig{});
  st.opt.init(st.model.params());
  Rng rng(Rng(seed).fork(0x7261696e));  // train stream
  train_loop(st, raw_data, steps, batch_size, 1.0, rng, opts);
  return st;
}

TrainState finetune_ddpm(const TrainState& source, const Dataset& raw_data, int steps,
                         double lr_scale, std::uint64_t seed, const TrainOptions& opts) {
  check_training_inputs(raw_data, source.spec);
  TrainState st = source;
  st.seed = seed;
  st.step = 0;
  st.loss_history.clear();
  st.opt = nn::Adam(nn::AdamConfig{});
  st.opt.init(st.model.params());
  Rng rng(Rng(seed).fork(0x66696e65));  // finetune stream
  train_loop(st, raw_data, steps, opts.batch_size, lr_scale, rng, opts);
  return st;
}

TrainState finetune_ddpm(const std::filesystem::path& source_ckpt, const Dataset& raw_data,
                         int steps, double lr_scale, std::uint64_t seed,
                         const TrainOptions& opts) {
  return finetune_ddpm(from_checkpoint(load_checkpoint(source_ckpt)), raw_data, steps, lr_scale,
                       seed, opts);
}

ImageBatch predict_noise(const TrainState& state, const ImageBatch& x_t, int t) {
  if (x_t.space != ValueSpace::model_sym) {
    throw std::invalid_argument("predict_noise expects model_sym inputs");
  }
  if (t < 1 || t > state.schedule.T) throw std::out_of_range("timestep out of range");
  std::vector<int> ts(static_cast<std::size_t>(x_t.batch()), t);
  DenoiserCache cache;
  ImageBatch out;
  out.data = state.model.forward(x_t.data, ts, cache);
  out.space = ValueSpace::model_sym;
  return out;
}

void save_ddpm_checkpoint(const std::filesystem::path& dir, const TrainState& state) {
  save_checkpoint(dir, to_checkpoint(state));
}

TrainState load_ddpm_checkpoint(const std::filesystem::path& dir) {
  return from_checkpoint(load_checkpoint(dir));
}

double smoothed_loss(const LossHistory& history, int window) {
  if (history.empty()) throw std::invalid_argument("empty loss history");
  const int w = std::max(1, std::min<int>(window, static_cast<int>(history.size())));
  double acc = 0.0;
  for (int i = 0; i < w; ++i) acc += history[history.size() - 1 - i].second;
  return acc / w;
}

std::int64_t steps_to_threshold(const LossHistory& history, double threshold, int window) {
  if (history.empty()) return -1;
  const std::size_t wmax = static_cast<std::size_t>(std::max(1, window));
  for (std::size_t i = 0; i < history.size(); ++i) {
    const std::size_t w = std::min(wmax, i + 1);
    double acc = 0.0;
    for (std::size_t j = 0; j < w; ++j) acc += history[i - j].second;
    if (acc / static_cast<double>(w) <= threshold) return history[i].first;
  }
  return -1;
}

}  // namespace jcdp
