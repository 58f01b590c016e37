#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "helpers.hpp"
#include "jcdp/classifier.hpp"
#include "jcdp/perceptual.hpp"
#include "jcdp/rng.hpp"
#include "jcdp/tensor.hpp"
#include "jcdp/toydata.hpp"

using namespace jcdp;
using namespace jcdp::test;

namespace {

FeatureExtractor smooth_probe_extractor(std::uint64_t seed) {
  ConvNetConfig cfg;
  cfg.in_channels = 3;
  cfg.image_size = 4;
  cfg.width = 4;
  cfg.num_classes = 4;
  cfg.act = Activation::silu;
  cfg.pool = Pooling::avg;
  FeatureExtractor phi;
  phi.net = ConvNet(cfg);
  phi.net.init_params(seed);
  return phi;
}

ImageBatch sym_batch(const Tensor& t) {
  ImageBatch b;
  b.data = t;
  b.space = ValueSpace::model_sym;
  return b;
}

}  // namespace

TEST_SUITE("perceptual") {

TEST_CASE("rotation by four quarter turns is the identity") {
  Rng rng(70);
  const Tensor x = random_tensor({2, 3, 6, 6}, rng);
  CHECK(bit_equal(rotate90(x, 4), x));
  CHECK(bit_equal(rotate90(x, 0), x));
  CHECK(bit_equal(rotate90(rotate90(x, 1), 3), x));
  CHECK(bit_equal(rotate90(x, -1), rotate90(x, 3)));
  CHECK(max_abs_diff(rotate90(x, 1), x) > 0.0);

  // One quarter turn moves the top-left corner to the bottom-left.
  Tensor probe({1, 1, 2, 2});
  probe.data = {1.0f, 2.0f, 3.0f, 4.0f};
  const Tensor r = rotate90(probe, 1);
  CHECK(r.data[0] == 2.0f);
  CHECK(r.data[1] == 4.0f);
  CHECK(r.data[2] == 1.0f);
  CHECK(r.data[3] == 3.0f);

  Tensor rect({1, 1, 2, 3});
  CHECK_THROWS(rotate90(rect, 1));
}

TEST_CASE("distance is a premetric on batches") {
  FeatureExtractor phi = smooth_probe_extractor(71);
  Rng rng(72);
  const ImageBatch a = sym_batch(random_tensor({3, 3, 4, 4}, rng, -0.8f, 0.8f));
  const ImageBatch b = sym_batch(random_tensor({3, 3, 4, 4}, rng, -0.8f, 0.8f));

  const auto daa = perceptual_distance(phi, a, a);
  for (double v : daa) CHECK(v == 0.0);

  const auto dab = perceptual_distance(phi, a, b);
  const auto dba = perceptual_distance(phi, b, a);
  REQUIRE(dab.size() == 3);
  for (std::size_t i = 0; i < dab.size(); ++i) {
    CHECK(dab[i] > 0.0);
    CHECK(dab[i] == dba[i]);
  }
}

TEST_CASE("distance gradient matches finite differences") {
  FeatureExtractor phi = smooth_probe_extractor(73);
  Rng rng(74);
  Tensor ta = random_tensor({2, 3, 4, 4}, rng, -0.8f, 0.8f);
  const ImageBatch b = sym_batch(random_tensor({2, 3, 4, 4}, rng, -0.8f, 0.8f));

  const ImageBatch g = distance_gradient(phi, sym_batch(ta), b);
  CHECK(g.space == ValueSpace::model_sym);
  REQUIRE(g.data.shape == ta.shape);

  auto total = [&](const Tensor& t) {
    const auto d = perceptual_distance(phi, sym_batch(t), b);
    double acc = 0.0;
    for (double v : d) acc += v;
    return acc;
  };

  const double h = 1e-3;
  std::vector<double> analytic, numeric;
  for (std::size_t i = 0; i < ta.data.size(); ++i) {
    const float keep = ta.data[i];
    ta.data[i] = float(keep + h);
    const double up = total(ta);
    ta.data[i] = float(keep - h);
    const double dn = total(ta);
    ta.data[i] = keep;
    analytic.push_back(double(g.data.data[i]));
    numeric.push_back((up - dn) / (2.0 * h));
  }
  CHECK(rel_error(analytic, numeric) < 1e-2);
}

TEST_CASE("gradient at zero distance is exactly zero") {
  FeatureExtractor phi = smooth_probe_extractor(75);
  Rng rng(76);
  const ImageBatch a = sym_batch(random_tensor({2, 3, 4, 4}, rng, -0.8f, 0.8f));
  const ImageBatch g = distance_gradient(phi, a, a);
  CHECK(max_abs(g.data) == 0.0f);
}

TEST_CASE("distance rejects mismatched inputs") {
  FeatureExtractor phi = smooth_probe_extractor(77);
  Rng rng(78);
  const ImageBatch a = sym_batch(random_tensor({1, 3, 4, 4}, rng, -0.8f, 0.8f));
  ImageBatch unit = a;
  unit.space = ValueSpace::data_unit;
  CHECK_THROWS_AS(perceptual_distance(phi, a, unit), std::invalid_argument);

  const ImageBatch other = sym_batch(random_tensor({2, 3, 4, 4}, rng, -0.8f, 0.8f));
  CHECK_THROWS(perceptual_distance(phi, a, other));
}

TEST_CASE("distance leaves the extractor parameters untouched") {
  FeatureExtractor phi = smooth_probe_extractor(79);
  std::vector<Tensor> before;
  for (const Tensor* p : std::as_const(phi.net).params()) before.push_back(*p);

  Rng rng(80);
  const ImageBatch a = sym_batch(random_tensor({2, 3, 4, 4}, rng, -0.8f, 0.8f));
  const ImageBatch b = sym_batch(random_tensor({2, 3, 4, 4}, rng, -0.8f, 0.8f));
  perceptual_distance(phi, a, b);
  distance_gradient(phi, a, b);

  const auto after = std::as_const(phi.net).params();
  for (std::size_t i = 0; i < after.size(); ++i) CHECK(bit_equal(before[i], *after[i]));
}

TEST_CASE("rotation pretext task is learnable on structured images") {
  ToyDataConfig cfg;
  cfg.num_classes = 4;
  cfg.image_size = 16;
  cfg.train_count = 128;
  cfg.test_count = 64;
  const ToySplits data = gen_toy_data(cfg, 81);

  FeatureExtractor phi = train_extractor(data.train, PseudoLabels::rotation, 150, 82);
  const double acc = rotation_accuracy(phi, data.test, 83);
  CHECK(acc > 0.35);  // chance is 0.25

  FeatureExtractor fresh = train_extractor(data.train, PseudoLabels::rotation, 0, 82);
  const double acc0 = rotation_accuracy(fresh, data.test, 83);
  CHECK(acc > acc0);
}

TEST_CASE("extractor training is deterministic") {
  const Dataset ds = tiny_dataset(32, 4, 16, 84);
  FeatureExtractor a = train_extractor(ds, PseudoLabels::rotation, 25, 85, "tag");
  FeatureExtractor b = train_extractor(ds, PseudoLabels::rotation, 25, 85, "tag");
  const auto pa = std::as_const(a.net).params();
  const auto pb = std::as_const(b.net).params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(*pa[i], *pb[i]));
}

TEST_CASE("extractor checkpoint round trip") {
  const Dataset ds = tiny_dataset(32, 4, 16, 86);
  FeatureExtractor phi = train_extractor(ds, PseudoLabels::rotation, 10, 87, "toy/train");

  const auto dir = scratch_dir("extractor");
  save_extractor(dir, phi);
  const FeatureExtractor back = load_extractor(dir);

  CHECK(back.trained_on == "toy/train");
  const auto pa = std::as_const(phi.net).params();
  const auto pb = std::as_const(back.net).params();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(bit_equal(*pa[i], *pb[i]));

  Rng rng(88);
  const ImageBatch a = sym_batch(random_tensor({2, 3, 16, 16}, rng, -0.8f, 0.8f));
  const ImageBatch b = sym_batch(random_tensor({2, 3, 16, 16}, rng, -0.8f, 0.8f));
  CHECK(perceptual_distance(phi, a, b) == perceptual_distance(back, a, b));
  std::filesystem::remove_all(dir);
}

TEST_CASE("true label mode uses dataset classes") {
  const Dataset ds = tiny_dataset(24, 6, 16, 89);
  FeatureExtractor phi = train_extractor(ds, PseudoLabels::true_labels, 5, 90);
  CHECK(phi.net.config().num_classes == 6);
}

}  // TEST_SUITE
