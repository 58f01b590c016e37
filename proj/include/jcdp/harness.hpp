#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "jcdp/classifier.hpp"
#include "jcdp/data.hpp"
#include "jcdp/ddpm.hpp"
#include "jcdp/forge.hpp"
#include "jcdp/perceptual.hpp"
#include "jcdp/purifier.hpp"
#include "jcdp/toydata.hpp"

namespace jcdp {

struct ClassifierSpec {
  int width = 16;
  Activation act = Activation::relu;
  Pooling pool = Pooling::max;
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 7;
};

struct TrainedClassifier {
  ConvNet net;
  // One clean-test accuracy per epoch when a test split is supplied.
  std::vector<double> test_accuracy;
};

// Seeded-shuffle minibatch SGD (Adam) on [0,1] images.
TrainedClassifier train_classifier(const Dataset& train, const ClassifierSpec& spec,
                                   const Dataset* test = nullptr);

// Fraction of correct predictions. The model head must match the label set.
double evaluate(const ConvNet& net, const Dataset& test);

struct ExperimentRecord {
  nlohmann::json config;
  nlohmann::json datasets;
  nlohmann::json metrics;
  double wall_seconds = 0.0;
  bool complete = false;
  std::string failed_stage;

  nlohmann::json to_json() const;
  static ExperimentRecord from_json(const nlohmann::json& j);
  // Flattened numeric metric table, keys sorted, doubles at full precision.
  // Wall-clock time stays out so equal-seed runs serialize byte-identically.
  std::string metrics_csv() const;
};

struct PipelineConfig {
  ToyDataConfig data;
  std::uint64_t data_seed = 11;
  int surrogate_count = 2000;
  // Draw the surrogate from the other generator family instead of the
  // benchmark's own.
  bool mismatch_surrogate = false;
  std::uint64_t surrogate_seed = 12;

  NoiseKind forge_kind = NoiseKind::emn_sample;
  PerturbationBudget budget;
  int emn_outer = 10;
  int emn_inner = 20;
  int lsp_patch = 4;
  std::uint64_t forge_seed = 13;

  int T = 60;
  VarianceMode variance = VarianceMode::posterior;
  DenoiserSpec denoiser;
  int ddpm_steps = 2000;
  int ddpm_batch = 16;
  std::uint64_t ddpm_seed = 14;

  int extractor_steps = 500;
  std::uint64_t extractor_seed = 15;

  bool purify_enabled = true;
  // T_p <= 0 derives the schedule default max(1, T/10) at run time.
  GuidanceParams guidance = GuidanceParams{.lambda1 = 1.0, .lambda2 = 1.0, .T_p = 0, .N = 4,
                                           .condition_mode = ConditionMode::fresh_noise};
  std::uint64_t purify_seed = 16;

  ClassifierSpec classifier;
};

// Pre-built stage outputs; any non-null entry replaces the matching stage.
// The caller is responsible for passing artifacts consistent with the config
// they claim to realize.
struct PipelineArtifacts {
  const ToySplits* data = nullptr;
  const Dataset* surrogate = nullptr;
  const UEDataset* ue = nullptr;
  const TrainState* ddpm = nullptr;
  const FeatureExtractor* extractor = nullptr;
};

nlohmann::json pipeline_config_json(const PipelineConfig& cfg);
nlohmann::json guidance_json(const GuidanceParams& g);
// Canonical id for a generated benchmark, e.g. "toy-f0-k4-s16-n2000+500-seed11".
std::string toy_id(const ToyDataConfig& cfg, std::uint64_t seed);

// End-to-end run: generate data, forge the unlearnable set, train the
// diffusion model and extractor on the surrogate, purify, then train and
// score the clean / unlearnable / purified classifier arms on the clean test
// split. A stage failure yields an incomplete record naming the stage.
ExperimentRecord run_pipeline(const PipelineConfig& cfg,
                              const PipelineArtifacts* reuse = nullptr);

struct AblationConfig {
  PipelineConfig base;
  // Finetune arm: pretrain on the other-family surrogate, then adapt to the
  // main surrogate. The scratch arm trains base.ddpm_steps from init.
  int pretrain_steps = 1500;
  int finetune_steps = 2000;
  double finetune_lr_scale = 1.0;
  std::uint64_t pretrain_seed = 21;
  // Loss-curve smoothing window (records) for the steps-to-threshold audit.
  int loss_window = 20;
  // Matched-compute purification sweep entries (N, T_p), run with the
  // scratch model and guidance on.
  std::vector<std::pair<int, int>> sweep;
  // When positive, purification and classifier arms use only the first k
  // training samples (the generator interleaves classes, so the slice stays
  // balanced).
  int train_subset = 0;
};

// Grid over {scratch, finetuned} x {guidance on, off}, one record per arm,
// plus one record per sweep entry.
std::vector<ExperimentRecord> run_ablation(const AblationConfig& cfg);

}  // namespace jcdp
