#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <vector>

#include "helpers.hpp"
#include "jcdp/data.hpp"
#include "jcdp/ddpm.hpp"
#include "jcdp/rng.hpp"
#include "jcdp/schedule.hpp"
#include "jcdp/tensor.hpp"

using namespace jcdp;
using namespace jcdp::test;

namespace {

DenoiserSpec tiny_spec(int channels = 1) {
  DenoiserSpec spec;
  spec.channels = channels;
  spec.base_width = 8;
  spec.depth = 1;
  spec.time_embedding_dim = 8;
  return spec;
}

bool params_equal(const Denoiser& a, const Denoiser& b) {
  const auto pa = a.params();
  const auto pb = b.params();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    if (!bit_equal(*pa[i], *pb[i])) return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("ddpm") {

TEST_CASE("zero training steps keep the fresh initialization") {
  const Dataset ds = tiny_dataset(8, 4, 8, 50, 1);
  const DenoiserSpec spec = tiny_spec();
  const NoiseSchedule sch = default_schedule(25);

  TrainState st = train_ddpm(ds, spec, sch, 0, 4, 99);
  Denoiser fresh(spec);
  fresh.init_params(99);

  CHECK(params_equal(st.model, fresh));
  CHECK(st.step == 0);
  CHECK(st.loss_history.empty());
}

TEST_CASE("loss falls while memorizing a single image") {
  const Dataset ds = tiny_dataset(1, 1, 8, 51, 1);
  TrainState st = train_ddpm(ds, tiny_spec(), default_schedule(25), 600, 8, 100);

  REQUIRE(!st.loss_history.empty());
  const double first = st.loss_history.front().second;
  const double last = smoothed_loss(st.loss_history, 20);
  CHECK(last < 0.8 * first);
  CHECK(last < 1.0);
}

TEST_CASE("equal seeds reproduce the run exactly") {
  const Dataset ds = tiny_dataset(6, 3, 8, 52, 1);
  TrainState a = train_ddpm(ds, tiny_spec(), default_schedule(25), 30, 4, 101);
  TrainState b = train_ddpm(ds, tiny_spec(), default_schedule(25), 30, 4, 101);

  CHECK(a.loss_history == b.loss_history);
  CHECK(params_equal(a.model, b.model));

  TrainState c = train_ddpm(ds, tiny_spec(), default_schedule(25), 30, 4, 102);
  CHECK(!params_equal(a.model, c.model));
}

TEST_CASE("checkpoint round trip preserves predictions") {
  const Dataset ds = tiny_dataset(6, 3, 8, 53, 1);
  TrainState st = train_ddpm(ds, tiny_spec(), default_schedule(25), 20, 4, 103);

  const auto dir = scratch_dir("ddpm_ckpt");
  save_ddpm_checkpoint(dir, st);
  TrainState back = load_ddpm_checkpoint(dir);

  CHECK(back.step == st.step);
  CHECK(back.seed == st.seed);
  CHECK(back.spec.parameter_count() == st.spec.parameter_count());
  CHECK(back.schedule.T == st.schedule.T);
  CHECK(params_equal(back.model, st.model));

  Rng rng(64);
  ImageBatch probe;
  probe.data = random_tensor({2, 1, 8, 8}, rng, -0.9f, 0.9f);
  probe.space = ValueSpace::model_sym;
  const ImageBatch y1 = predict_noise(st, probe, 7);
  const ImageBatch y2 = predict_noise(back, probe, 7);
  CHECK(bit_equal(y1.data, y2.data));
  std::filesystem::remove_all(dir);
}

TEST_CASE("finetune from disk matches finetune from memory") {
  const Dataset surrogate = tiny_dataset(6, 3, 8, 54, 1);
  const Dataset target = tiny_dataset(6, 3, 8, 55, 1);
  TrainState base = train_ddpm(surrogate, tiny_spec(), default_schedule(25), 20, 4, 104);

  const auto dir = scratch_dir("ddpm_ft");
  save_ddpm_checkpoint(dir, base);

  TrainState mem = finetune_ddpm(base, target, 15, 0.5, 105);
  TrainState disk = finetune_ddpm(dir, target, 15, 0.5, 105);
  CHECK(params_equal(mem.model, disk.model));
  CHECK(mem.loss_history == disk.loss_history);
  std::filesystem::remove_all(dir);
}

TEST_CASE("finetune edge cases") {
  const Dataset ds = tiny_dataset(6, 3, 8, 56, 1);
  TrainState base = train_ddpm(ds, tiny_spec(), default_schedule(25), 20, 4, 106);

  TrainState zero = finetune_ddpm(base, ds, 0, 1.0, 107);
  CHECK(params_equal(zero.model, base.model));
  CHECK(zero.step == 0);
  CHECK(zero.loss_history.empty());

  TrainState frozen = finetune_ddpm(base, ds, 10, 0.0, 108);
  CHECK(params_equal(frozen.model, base.model));
  CHECK(frozen.step == 10);

  const Dataset wrong = tiny_dataset(4, 2, 8, 57, 3);
  CHECK_THROWS(finetune_ddpm(base, wrong, 5, 1.0, 109));
}

TEST_CASE("predict_noise validates its inputs") {
  const Dataset ds = tiny_dataset(4, 2, 8, 58, 1);
  TrainState st = train_ddpm(ds, tiny_spec(), default_schedule(25), 5, 4, 110);

  Rng rng(65);
  ImageBatch unit;
  unit.data = random_tensor({1, 1, 8, 8}, rng, 0.0f, 1.0f);
  unit.space = ValueSpace::data_unit;
  CHECK_THROWS_AS(predict_noise(st, unit, 3), std::invalid_argument);

  ImageBatch sym = to_model_sym(unit);
  CHECK_THROWS_AS(predict_noise(st, sym, 0), std::out_of_range);
  CHECK_THROWS_AS(predict_noise(st, sym, 26), std::out_of_range);
  CHECK_NOTHROW(predict_noise(st, sym, 25));
}

TEST_CASE("loss history summaries") {
  const LossHistory h = {{10, 1.0}, {20, 0.8}, {30, 0.6}, {40, 0.4}};

  CHECK(smoothed_loss(h, 2) == doctest::Approx(0.5));
  CHECK(smoothed_loss(h, 100) == doctest::Approx(0.7));  // window capped at size
  CHECK(smoothed_loss(h, 1) == doctest::Approx(0.4));

  // Trailing means with window 2: 1.0, 0.9, 0.7, 0.5.
  CHECK(steps_to_threshold(h, 0.7, 2) == 30);
  CHECK(steps_to_threshold(h, 0.95, 2) == 20);
  CHECK(steps_to_threshold(h, 0.1, 2) == -1);
  CHECK(steps_to_threshold({}, 0.5, 2) == -1);
  CHECK_THROWS(smoothed_loss({}, 2));
}

}  // TEST_SUITE
