#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "jcdp/classifier.hpp"
#include "jcdp/container.hpp"
#include "jcdp/data.hpp"
#include "jcdp/ddpm.hpp"
#include "jcdp/forge.hpp"
#include "jcdp/harness.hpp"
#include "jcdp/perceptual.hpp"
#include "jcdp/pngio.hpp"
#include "jcdp/purifier.hpp"
#include "jcdp/schedule.hpp"
#include "jcdp/toydata.hpp"

namespace fs = std::filesystem;
using jcdp::Dataset;
using json = nlohmann::json;

namespace {

// Exit codes: 0 ok, 2 usage, 3 schema/validation, 4 missing file, 5 internal.
struct CliError : std::exception {
  std::string kind;
  int code;
  std::string msg;
  CliError(std::string k, int c, std::string m)
      : kind(std::move(k)), code(c), msg(std::move(m)) {}
  const char* what() const noexcept override { return msg.c_str(); }
};

[[noreturn]] void missing(const std::string& msg) { throw CliError("missing", 4, msg); }
[[noreturn]] void schema(const std::string& msg) { throw CliError("schema", 3, msg); }
[[noreturn]] void internal(const std::string& msg) { throw CliError("internal", 5, msg); }

int report(const std::string& kind, int code, const std::string& msg) {
  std::fprintf(stderr, "error[%s]: %s\n", kind.c_str(), msg.c_str());
  return code;
}

const fs::path& need_dataset(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) missing("no dataset at " + dir.string());
  return dir;
}

const fs::path& need_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) missing("no checkpoint at " + dir.string());
  return dir;
}

const fs::path& need_file(const fs::path& p) {
  if (!fs::exists(p)) missing("no such file: " + p.string());
  return p;
}

const std::map<std::string, jcdp::NoiseKind> kNoiseKinds{
    {"emn_sample", jcdp::NoiseKind::emn_sample},
    {"emn_class", jcdp::NoiseKind::emn_class},
    {"lsp", jcdp::NoiseKind::lsp},
    {"random_class_patch", jcdp::NoiseKind::random_class_patch}};
const std::map<std::string, jcdp::NormKind> kNorms{{"l_inf", jcdp::NormKind::l_inf},
                                                   {"linf", jcdp::NormKind::l_inf},
                                                   {"l2", jcdp::NormKind::l2}};
const std::map<std::string, jcdp::VarianceMode> kVariances{
    {"posterior", jcdp::VarianceMode::posterior},
    {"fixed_beta", jcdp::VarianceMode::fixed_beta}};
const std::map<std::string, jcdp::ConditionMode> kModes{
    {"fresh_noise", jcdp::ConditionMode::fresh_noise},
    {"frozen_track", jcdp::ConditionMode::frozen_track},
    {"deterministic_mean", jcdp::ConditionMode::deterministic_mean}};
const std::map<std::string, jcdp::Activation> kActs{{"relu", jcdp::Activation::relu},
                                                    {"silu", jcdp::Activation::silu}};
const std::map<std::string, jcdp::Pooling> kPools{{"max", jcdp::Pooling::max},
                                                  {"avg", jcdp::Pooling::avg}};

template <typename T>
auto enum_opt(CLI::App* sub, const std::string& flag, T& target,
              const std::map<std::string, T>& names, const std::string& help) {
  return sub->add_option(flag, target, help)
      ->transform(CLI::CheckedTransformer(names, CLI::ignore_case));
}

json provenance_of(const fs::path& dataset_dir) {
  return jcdp::load_manifest(dataset_dir).provenance;
}

json appended(json provenance, json record) {
  if (!provenance.is_array()) provenance = json::array();
  provenance.push_back(std::move(record));
  return provenance;
}

// --- gen-toy-data ------------------------------------------------------------

struct GenOpts {
  fs::path out;
  std::uint64_t seed = 0;
  jcdp::ToyDataConfig cfg;
};

void run_gen(const GenOpts& o) {
  const jcdp::ToySplits splits = jcdp::gen_toy_data(o.cfg, o.seed);
  jcdp::DatasetManifest m;
  m.name = jcdp::toy_id(o.cfg, o.seed);
  m.image_shape = {splits.train.images.dim(1), splits.train.images.dim(2),
                   splits.train.images.dim(3)};
  m.class_names = splits.train.class_names;
  m.provenance = json::array({{{"kind", "gen-toy-data"},
                               {"family", o.cfg.family},
                               {"num_classes", o.cfg.num_classes},
                               {"image_size", o.cfg.image_size},
                               {"train_count", o.cfg.train_count},
                               {"test_count", o.cfg.test_count},
                               {"seed", o.seed}}});
  jcdp::save_dataset(o.out, m, {{"train", splits.train}, {"test", splits.test}});
  std::printf("wrote %s (%s)\n", o.out.string().c_str(), m.name.c_str());
}

// --- forge-ue ----------------------------------------------------------------

struct ForgeOpts {
  fs::path in;
  std::string split = "train";
  fs::path out;
  std::uint64_t seed = 0;
  jcdp::NoiseKind kind = jcdp::NoiseKind::emn_sample;
  jcdp::PerturbationBudget budget;
  int emn_outer = 10;
  int emn_inner = 20;
  int patch = 4;
  int surrogate_width = 16;
};

void run_forge(const ForgeOpts& o) {
  const Dataset clean = jcdp::load_split(need_dataset(o.in), o.split);
  const jcdp::DatasetManifest src = jcdp::load_manifest(o.in);

  jcdp::UEDataset ue;
  switch (o.kind) {
    case jcdp::NoiseKind::emn_sample:
    case jcdp::NoiseKind::emn_class: {
      jcdp::ConvNetConfig scfg;
      scfg.width = o.surrogate_width;
      const auto mode = o.kind == jcdp::NoiseKind::emn_sample ? jcdp::EmnMode::sample_wise
                                                              : jcdp::EmnMode::class_wise;
      ue = jcdp::forge_emn(clean, scfg, o.budget, mode, o.emn_outer, o.emn_inner, o.seed);
      break;
    }
    case jcdp::NoiseKind::lsp:
      ue = jcdp::forge_lsp(clean, o.budget, o.patch, o.seed);
      break;
    case jcdp::NoiseKind::random_class_patch:
      ue = jcdp::forge_random_class_patch(clean, o.budget, o.seed);
      break;
  }

  const jcdp::BudgetReport audit = jcdp::verify_budget(ue, clean);
  if (!audit.ok()) {
    internal("forged dataset violates its own budget on " +
             std::to_string(audit.violators.size()) + " samples");
  }

  const std::string name = src.name + "+" + jcdp::noise_kind_name(ue.noise_kind);
  jcdp::save_single_split_dataset(
      o.out, name, ue.data, o.split,
      appended(src.provenance, {{"kind", "forge-ue"},
                                {"noise_kind", jcdp::noise_kind_name(ue.noise_kind)},
                                {"budget",
                                 {{"norm", jcdp::norm_name(ue.budget.norm)},
                                  {"epsilon", ue.budget.epsilon}}},
                                {"seed", o.seed},
                                {"clean_ref", src.name},
                                {"source_dataset", o.in.string()}}));
  std::printf("wrote %s (%s) max_norm=%.8f violations=0\n", o.out.string().c_str(), name.c_str(),
              audit.max_norm);
}

// --- train-ddpm / finetune-ddpm ----------------------------------------------

struct TrainDdpmOpts {
  fs::path data;
  std::string split = "train";
  fs::path out;
  std::uint64_t seed = 0;
  int steps = 2000;
  int batch = 16;
  int T = 60;
  jcdp::VarianceMode variance = jcdp::VarianceMode::posterior;
  jcdp::DenoiserSpec spec;
  int record_interval = 10;
};

void run_train_ddpm(const TrainDdpmOpts& o) {
  const Dataset ds = jcdp::load_split(need_dataset(o.data), o.split);
  jcdp::DenoiserSpec spec = o.spec;
  spec.channels = static_cast<int>(ds.images.dim(1));
  jcdp::TrainOptions topts;
  topts.record_interval = o.record_interval;
  topts.batch_size = o.batch;
  const jcdp::TrainState st = jcdp::train_ddpm(
      ds, spec, jcdp::default_schedule(o.T, o.variance), o.steps, o.batch, o.seed, topts);
  jcdp::save_ddpm_checkpoint(o.out, st);
  std::printf("wrote %s steps=%lld smoothed_loss=%.6f\n", o.out.string().c_str(),
              static_cast<long long>(st.step), jcdp::smoothed_loss(st.loss_history, 20));
}

struct FinetuneOpts {
  fs::path from;
  fs::path data;
  std::string split = "train";
  fs::path out;
  std::uint64_t seed = 0;
  int steps = 2000;
  int batch = 16;
  double lr_scale = 1.0;
  int record_interval = 10;
};

void run_finetune(const FinetuneOpts& o) {
  const Dataset ds = jcdp::load_split(need_dataset(o.data), o.split);
  jcdp::TrainOptions topts;
  topts.record_interval = o.record_interval;
  topts.batch_size = o.batch;
  const jcdp::TrainState st =
      jcdp::finetune_ddpm(need_checkpoint(o.from), ds, o.steps, o.lr_scale, o.seed, topts);
  jcdp::save_ddpm_checkpoint(o.out, st);
  std::printf("wrote %s steps=%lld smoothed_loss=%.6f\n", o.out.string().c_str(),
              static_cast<long long>(st.step), jcdp::smoothed_loss(st.loss_history, 20));
}

// --- train-extractor ---------------------------------------------------------

struct ExtractorOpts {
  fs::path data;
  std::string split = "train";
  fs::path out;
  std::uint64_t seed = 0;
  int steps = 500;
  int batch = 32;
};

void run_train_extractor(const ExtractorOpts& o) {
  const Dataset ds = jcdp::load_split(need_dataset(o.data), o.split);
  const std::string trained_on = jcdp::load_manifest(o.data).name;
  const jcdp::FeatureExtractor phi =
      jcdp::train_extractor(ds, jcdp::PseudoLabels::rotation, o.steps, o.seed, trained_on,
                            o.batch);
  jcdp::save_extractor(o.out, phi);
  std::printf("wrote %s rotation_accuracy=%.4f\n", o.out.string().c_str(),
              jcdp::rotation_accuracy(phi, ds, o.seed + 1));
}

// --- purify ------------------------------------------------------------------

struct PurifyOpts {
  fs::path in;
  std::string split = "train";
  fs::path ddpm;
  fs::path extractor;
  fs::path out;
  fs::path trace;
  std::uint64_t seed = 0;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  int T_p = 0;  // 0 keeps the schedule default max(1, T/10)
  int N = 4;
  jcdp::ConditionMode mode = jcdp::ConditionMode::fresh_noise;
  bool unconditional = false;
};

void run_purify(const PurifyOpts& o) {
  const Dataset ue = jcdp::load_split(need_dataset(o.in), o.split);
  const jcdp::DatasetManifest src = jcdp::load_manifest(o.in);
  const jcdp::TrainState st = jcdp::load_ddpm_checkpoint(need_checkpoint(o.ddpm));

  jcdp::GuidanceParams g = jcdp::default_guidance(st.schedule);
  g.lambda1 = o.lambda1;
  g.lambda2 = o.lambda2;
  g.N = o.N;
  g.condition_mode = o.mode;
  if (o.T_p > 0) g.T_p = o.T_p;

  jcdp::ImageBatch purified;
  jcdp::PurificationTrace trace;
  json how;
  if (o.unconditional) {
    std::tie(purified, trace) = jcdp::purify_unconditional(st, ue.batch(), g.T_p, g.N, o.seed);
    how = {{"unconditional", true}, {"T_p", g.T_p}, {"N", g.N}};
  } else {
    if (o.extractor.empty()) {
      schema("--extractor is required unless --unconditional is set");
    }
    const jcdp::FeatureExtractor phi = jcdp::load_extractor(need_checkpoint(o.extractor));
    std::tie(purified, trace) = jcdp::purify(st, phi, ue.batch(), g, o.seed);
    how = jcdp::guidance_json(g);
  }

  Dataset out;
  out.images = purified.data;
  out.labels = ue.labels;
  out.class_names = ue.class_names;
  const std::string name = src.name + "+purified";
  jcdp::save_single_split_dataset(
      o.out, name, out, o.split,
      appended(src.provenance,
               {{"kind", "purify"},
                {"source_dataset", o.in.string()},
                {"ddpm",
                 {{"checkpoint", o.ddpm.string()},
                  {"T", st.schedule.T},
                  {"steps", st.step}}},
                {"guidance", how},
                {"seed", o.seed}}));
  if (!o.trace.empty()) jcdp::write_text_atomic(o.trace, jcdp::trace_to_csv(trace));
  std::printf("wrote %s (%s) iterations=%zu final_psnr_to_input=%.4f\n", o.out.string().c_str(),
              name.c_str(), trace.psnr_to_input.size(),
              trace.psnr_to_input.empty() ? 0.0 : trace.psnr_to_input.back());
}

// --- train-classifier / evaluate ----------------------------------------------

struct TrainClsOpts {
  fs::path data;
  std::string split = "train";
  fs::path test_data;
  std::string test_split = "test";
  fs::path out;
  fs::path curve;
  std::uint64_t seed = 0;
  jcdp::ClassifierSpec spec;
};

void run_train_classifier(const TrainClsOpts& o) {
  const Dataset train = jcdp::load_split(need_dataset(o.data), o.split);
  Dataset test;
  const bool have_test = !o.test_data.empty();
  if (have_test) test = jcdp::load_split(need_dataset(o.test_data), o.test_split);
  jcdp::ClassifierSpec spec = o.spec;
  spec.seed = o.seed;
  const jcdp::TrainedClassifier tc =
      jcdp::train_classifier(train, spec, have_test ? &test : nullptr);
  jcdp::save_classifier(o.out, tc.net);
  if (!o.curve.empty()) {
    std::string csv = "epoch,accuracy\n";
    char buf[64];
    for (std::size_t i = 0; i < tc.test_accuracy.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i + 1, tc.test_accuracy[i]);
      csv += buf;
    }
    jcdp::write_text_atomic(o.curve, csv);
  }
  std::string extra;
  if (have_test) {
    char buf[48];
    std::snprintf(buf, sizeof buf, " test_accuracy=%.4f", jcdp::evaluate(tc.net, test));
    extra = buf;
  }
  std::printf("wrote %s train_accuracy=%.4f%s\n", o.out.string().c_str(),
              jcdp::evaluate(tc.net, train), extra.c_str());
}

struct EvalOpts {
  fs::path model;
  fs::path data;
  std::string split = "test";
  fs::path json_out;
};

void run_evaluate(const EvalOpts& o) {
  const jcdp::ConvNet net = jcdp::load_classifier(need_checkpoint(o.model));
  const Dataset ds = jcdp::load_split(need_dataset(o.data), o.split);
  const double acc = jcdp::evaluate(net, ds);
  if (!o.json_out.empty()) {
    const json j = {{"accuracy", acc},
                    {"dataset", jcdp::load_manifest(o.data).name},
                    {"split", o.split},
                    {"count", ds.size()}};
    jcdp::write_text_atomic(o.json_out, j.dump(2) + "\n");
  }
  std::printf("accuracy=%.6f\n", acc);
}

// --- experiment / ablation -----------------------------------------------------

struct PipeFlags {
  jcdp::PipelineConfig cfg;
  std::uint64_t seed = 0;
  bool mismatch = false;
  bool no_purify = false;
  CLI::Option* seed_opts[7] = {};

  void attach(CLI::App* sub) {
    sub->add_option("--seed", seed, "base seed; stage seeds default to seed+1..seed+7")
        ->required();
    sub->add_option("--classes", cfg.data.num_classes, "benchmark classes (4..10)");
    sub->add_option("--size", cfg.data.image_size, "image side (16 or 32)");
    sub->add_option("--train", cfg.data.train_count, "train sample count");
    sub->add_option("--test", cfg.data.test_count, "test sample count");
    sub->add_option("--family", cfg.data.family, "generator family (0 or 1)");
    sub->add_option("--surrogate-count", cfg.surrogate_count, "surrogate sample count");
    sub->add_flag("--mismatch", mismatch, "draw the surrogate from the other family");
    enum_opt(sub, "--forge-kind", cfg.forge_kind, kNoiseKinds, "unlearnable noise kind");
    enum_opt(sub, "--norm", cfg.budget.norm, kNorms, "budget norm");
    sub->add_option("--eps", cfg.budget.epsilon, "budget radius in [0,1] pixel units");
    sub->add_option("--emn-outer", cfg.emn_outer, "emn outer iterations");
    sub->add_option("--emn-inner", cfg.emn_inner, "emn inner steps");
    sub->add_option("--lsp-patch", cfg.lsp_patch, "lsp patch size");
    sub->add_option("--T", cfg.T, "diffusion timesteps");
    enum_opt(sub, "--variance", cfg.variance, kVariances, "reverse variance mode");
    sub->add_option("--ddpm-width", cfg.denoiser.base_width, "denoiser base width");
    sub->add_option("--ddpm-depth", cfg.denoiser.depth, "denoiser depth (1 or 2)");
    sub->add_option("--temb", cfg.denoiser.time_embedding_dim, "time embedding dim");
    sub->add_option("--ddpm-steps", cfg.ddpm_steps, "ddpm training steps");
    sub->add_option("--ddpm-batch", cfg.ddpm_batch, "ddpm batch size");
    sub->add_option("--extractor-steps", cfg.extractor_steps, "extractor training steps");
    sub->add_flag("--no-purify", no_purify, "skip the purification arm");
    sub->add_option("--lambda1", cfg.guidance.lambda1, "pixel guidance scale");
    sub->add_option("--lambda2", cfg.guidance.lambda2, "perceptual guidance scale");
    sub->add_option("--Tp", cfg.guidance.T_p, "purify diffusion depth (0 = T/10)");
    sub->add_option("--N", cfg.guidance.N, "purify iterations");
    enum_opt(sub, "--mode", cfg.guidance.condition_mode, kModes, "condition mode");
    sub->add_option("--cls-width", cfg.classifier.width, "classifier width");
    enum_opt(sub, "--cls-act", cfg.classifier.act, kActs, "classifier activation");
    enum_opt(sub, "--cls-pool", cfg.classifier.pool, kPools, "classifier pooling");
    sub->add_option("--cls-epochs", cfg.classifier.epochs, "classifier epochs");
    sub->add_option("--cls-batch", cfg.classifier.batch_size, "classifier batch size");
    sub->add_option("--cls-lr", cfg.classifier.lr, "classifier learning rate");
    seed_opts[0] = sub->add_option("--data-seed", cfg.data_seed, "");
    seed_opts[1] = sub->add_option("--surrogate-seed", cfg.surrogate_seed, "");
    seed_opts[2] = sub->add_option("--forge-seed", cfg.forge_seed, "");
    seed_opts[3] = sub->add_option("--ddpm-seed", cfg.ddpm_seed, "");
    seed_opts[4] = sub->add_option("--extractor-seed", cfg.extractor_seed, "");
    seed_opts[5] = sub->add_option("--purify-seed", cfg.purify_seed, "");
    seed_opts[6] = sub->add_option("--cls-seed", cfg.classifier.seed, "");
  }

  jcdp::PipelineConfig resolve() {
    jcdp::PipelineConfig out = cfg;
    out.mismatch_surrogate = mismatch;
    out.purify_enabled = !no_purify;
    std::uint64_t* fields[7] = {&out.data_seed,      &out.surrogate_seed, &out.forge_seed,
                                &out.ddpm_seed,      &out.extractor_seed, &out.purify_seed,
                                &out.classifier.seed};
    for (int i = 0; i < 7; ++i) {
      if (seed_opts[i]->count() == 0) *fields[i] = seed + std::uint64_t(i) + 1;
    }
    return out;
  }
};

void write_record(const fs::path& dir, const std::string& json_name,
                  const std::string& csv_name, const jcdp::ExperimentRecord& rec) {
  fs::create_directories(dir);
  jcdp::write_text_atomic(dir / json_name, rec.to_json().dump(2) + "\n");
  jcdp::write_text_atomic(dir / csv_name, rec.metrics_csv());
}

void run_experiment(PipeFlags& flags, const fs::path& out) {
  const jcdp::ExperimentRecord rec = jcdp::run_pipeline(flags.resolve());
  write_record(out, "record.json", "metrics.csv", rec);
  std::printf("wrote %s\n", (out / "record.json").string().c_str());
  if (!rec.complete) {
    internal("pipeline failed at stage " + rec.failed_stage + ": " +
             rec.metrics.value("error", "unknown"));
  }
  for (const auto& [arm, metrics] : rec.metrics.at("arms").items()) {
    std::printf("%s_accuracy=%.6f\n", arm.c_str(),
                metrics.at("final_accuracy").get<double>());
  }
}

struct AblationFlags {
  PipeFlags pipe;
  jcdp::AblationConfig acfg;
  std::vector<std::string> sweep;

  void attach(CLI::App* sub) {
    pipe.attach(sub);
    sub->add_option("--pretrain-steps", acfg.pretrain_steps, "other-family pretraining steps");
    sub->add_option("--finetune-steps", acfg.finetune_steps, "finetune steps");
    sub->add_option("--finetune-lr-scale", acfg.finetune_lr_scale, "finetune lr scale");
    sub->add_option("--pretrain-seed", acfg.pretrain_seed, "");
    sub->add_option("--loss-window", acfg.loss_window, "loss smoothing window (records)");
    sub->add_option("--sweep", sweep, "matched-compute entries as N:Tp")->delimiter(',');
    sub->add_option("--train-subset", acfg.train_subset, "limit arms to the first k samples");
  }

  jcdp::AblationConfig resolve() {
    acfg.base = pipe.resolve();
    acfg.sweep.clear();
    for (const std::string& s : sweep) {
      const auto colon = s.find(':');
      if (colon == std::string::npos || colon == 0 || colon + 1 == s.size()) {
        schema("bad --sweep entry '" + s + "', expected N:Tp");
      }
      try {
        acfg.sweep.emplace_back(std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1)));
      } catch (const std::exception&) {
        schema("bad --sweep entry '" + s + "', expected N:Tp");
      }
    }
    return acfg;
  }
};

void run_ablation_cmd(AblationFlags& flags, const fs::path& out) {
  const std::vector<jcdp::ExperimentRecord> records = jcdp::run_ablation(flags.resolve());
  fs::create_directories(out);
  json index = json::array();
  bool all_complete = true;
  for (std::size_t i = 0; i < records.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%02zu", i);
    const std::string json_name = "record-" + std::string(buf) + ".json";
    const std::string csv_name = "metrics-" + std::string(buf) + ".csv";
    write_record(out, json_name, csv_name, records[i]);
    json entry = {{"file", json_name},
                  {"metrics_csv", csv_name},
                  {"complete", records[i].complete}};
    if (records[i].metrics.contains("arm")) entry["arm"] = records[i].metrics["arm"];
    if (records[i].metrics.contains("sweep")) entry["sweep"] = records[i].metrics["sweep"];
    index.push_back(std::move(entry));
    all_complete = all_complete && records[i].complete;
  }
  jcdp::write_text_atomic(out / "index.json", index.dump(2) + "\n");
  std::printf("wrote %s (%zu records)\n", (out / "index.json").string().c_str(), records.size());
  if (!all_complete) internal("one or more ablation arms failed; see the records");
}

// --- plot ----------------------------------------------------------------------

struct PlotOpts {
  fs::path record;
  fs::path trace;
  fs::path out;
};

void run_plot(const PlotOpts& o) {
  const std::string text = [&] {
    std::ifstream f(need_file(o.record));
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }();
  const jcdp::ExperimentRecord rec = jcdp::ExperimentRecord::from_json(json::parse(text));
  fs::create_directories(o.out);
  std::vector<std::string> written;

  if (rec.metrics.contains("arms")) {
    std::vector<std::string> labels;
    std::vector<double> values;
    std::vector<jcdp::Series> curves;
    for (const auto& [arm, m] : rec.metrics.at("arms").items()) {
      labels.push_back(arm);
      values.push_back(m.at("final_accuracy").get<double>());
      curves.push_back({arm, m.at("accuracy_curve").get<std::vector<double>>()});
    }
    if (rec.metrics.contains("chance")) {
      labels.push_back("chance");
      values.push_back(rec.metrics.at("chance").get<double>());
    }
    jcdp::plot_bars(o.out / "accuracy.png", "test accuracy per arm", labels, values);
    written.push_back("accuracy.png");
    if (std::any_of(curves.begin(), curves.end(),
                    [](const jcdp::Series& s) { return !s.values.empty(); })) {
      jcdp::plot_lines(o.out / "curves.png", "test accuracy per epoch", curves, "accuracy");
      written.push_back("curves.png");
    }
  } else if (rec.metrics.contains("final_accuracy")) {
    jcdp::plot_bars(o.out / "accuracy.png", "test accuracy", {"arm"},
                    {rec.metrics.at("final_accuracy").get<double>()});
    written.push_back("accuracy.png");
  }

  if (rec.metrics.contains("psnr")) {
    std::vector<std::string> labels;
    std::vector<double> values;
    for (const auto& [key, v] : rec.metrics.at("psnr").items()) {
      labels.push_back(key);
      values.push_back(v.get<double>());
    }
    jcdp::plot_bars(o.out / "psnr.png", "mean psnr (db)", labels, values);
    written.push_back("psnr.png");
  }

  if (rec.metrics.contains("purify") &&
      rec.metrics.at("purify").contains("psnr_per_iteration")) {
    const auto vals =
        rec.metrics.at("purify").at("psnr_per_iteration").get<std::vector<double>>();
    if (!vals.empty()) {
      jcdp::plot_lines(o.out / "iterations.png", "psnr to input per iteration",
                       {{"psnr", vals}}, "db");
      written.push_back("iterations.png");
    }
  }

  if (!o.trace.empty()) {
    std::ifstream f(need_file(o.trace));
    std::string line;
    std::getline(f, line);
    if (line != "iteration,t,d1_norm,d2_norm,shift_norm") {
      schema("not a purification trace: " + o.trace.string());
    }
    jcdp::Series d1{"d1_norm", {}}, d2{"d2_norm", {}}, shift{"shift_norm", {}};
    while (std::getline(f, line)) {
      double a = 0, b = 0, c = 0, d = 0, e = 0;
      if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &a, &b, &c, &d, &e) != 5) {
        schema("bad trace row: " + line);
      }
      d1.values.push_back(c);
      d2.values.push_back(d);
      shift.values.push_back(e);
    }
    jcdp::plot_lines(o.out / "guidance.png", "guidance magnitudes per step", {d1, d2, shift});
    written.push_back("guidance.png");
  }

  if (written.empty()) schema("record holds nothing plottable");
  for (const auto& name : written) {
    std::printf("wrote %s\n", (o.out / name).string().c_str());
  }
}

// --- validate / png-export ------------------------------------------------------

struct ValidateOpts {
  fs::path path;
  bool no_chain = false;
};

void run_validate(const ValidateOpts& o) {
  if (!fs::exists(o.path)) missing("no such path: " + o.path.string());
  if (fs::is_regular_file(o.path)) {
    const jcdp::RawTensor t = jcdp::read_container(o.path);
    std::string shape;
    for (std::size_t i = 0; i < t.shape.size(); ++i) {
      shape += (i ? "x" : "") + std::to_string(t.shape[i]);
    }
    std::printf("ok container dtype=%d shape=%s\n", int(t.dtype), shape.c_str());
    return;
  }
  const fs::path manifest = o.path / "manifest.json";
  if (!fs::exists(manifest)) missing("no manifest.json under " + o.path.string());
  std::ifstream f(manifest);
  const json j = json::parse(f);
  const std::string format = j.value("format", "");
  if (format == "jcdp-checkpoint") {
    const jcdp::Checkpoint ckpt = jcdp::load_checkpoint(o.path);
    if (ckpt.kind == "ddpm") {
      jcdp::load_ddpm_checkpoint(o.path);
    } else if (ckpt.kind == "extractor") {
      jcdp::load_extractor(o.path);
    } else if (ckpt.kind == "classifier") {
      jcdp::load_classifier(o.path);
    } else {
      schema("unknown checkpoint kind '" + ckpt.kind + "'");
    }
    std::printf("ok checkpoint kind=%s tensors=%zu\n", ckpt.kind.c_str(), ckpt.tensors.size());
    return;
  }
  const auto issues = jcdp::validate_dataset(o.path, !o.no_chain);
  for (const auto& issue : issues) std::printf("violation: %s\n", issue.c_str());
  if (!issues.empty()) {
    schema("dataset failed validation with " + std::to_string(issues.size()) + " issue(s)");
  }
  std::printf("ok dataset name=%s\n", jcdp::load_manifest(o.path).name.c_str());
}

struct ExportOpts {
  fs::path in;
  std::string split = "train";
  fs::path out;
  int cols = 16;
  int limit = 64;
  int scale = 2;
};

void run_png_export(const ExportOpts& o) {
  const Dataset ds = jcdp::load_split(need_dataset(o.in), o.split);
  jcdp::write_png(o.out, jcdp::dataset_grid(ds, o.cols, o.limit, o.scale));
  std::printf("wrote %s\n", o.out.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unlearnable-example forging and diffusion purification toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "",
                 "key=value file, keys dotted (experiment.T=25) or under a [section]; "
                 "flags override the file");
  app.allow_config_extras(CLI::config_extras_mode::error);

  GenOpts gen;
  auto* sc = app.add_subcommand("gen-toy-data", "generate a procedural benchmark dataset");
  sc->add_option("--out", gen.out, "output dataset directory")->required();
  sc->add_option("--seed", gen.seed, "generator seed")->required();
  sc->add_option("--classes", gen.cfg.num_classes, "class count (4..10)");
  sc->add_option("--size", gen.cfg.image_size, "image side (16 or 32)");
  sc->add_option("--train", gen.cfg.train_count, "train sample count");
  sc->add_option("--test", gen.cfg.test_count, "test sample count");
  sc->add_option("--family", gen.cfg.family, "generator family (0 or 1)");
  sc->callback([&] { run_gen(gen); });

  ForgeOpts forge;
  sc = app.add_subcommand("forge-ue", "forge an unlearnable copy of a dataset");
  sc->add_option("--in", forge.in, "clean dataset directory")->required();
  sc->add_option("--split", forge.split, "split to perturb");
  sc->add_option("--out", forge.out, "output dataset directory")->required();
  enum_opt(sc, "--kind", forge.kind, kNoiseKinds, "noise kind")->required();
  enum_opt(sc, "--norm", forge.budget.norm, kNorms, "budget norm");
  sc->add_option("--eps", forge.budget.epsilon, "budget radius in [0,1] pixel units");
  sc->add_option("--emn-outer", forge.emn_outer, "emn outer iterations");
  sc->add_option("--emn-inner", forge.emn_inner, "emn inner steps");
  sc->add_option("--patch", forge.patch, "lsp patch size");
  sc->add_option("--surrogate-width", forge.surrogate_width, "emn surrogate width");
  sc->add_option("--seed", forge.seed, "forging seed")->required();
  sc->callback([&] { run_forge(forge); });

  TrainDdpmOpts tddpm;
  sc = app.add_subcommand("train-ddpm", "train a denoising diffusion model");
  sc->add_option("--data", tddpm.data, "training dataset directory")->required();
  sc->add_option("--split", tddpm.split, "split to train on");
  sc->add_option("--out", tddpm.out, "output checkpoint directory")->required();
  sc->add_option("--steps", tddpm.steps, "optimizer steps");
  sc->add_option("--batch", tddpm.batch, "batch size");
  sc->add_option("--T", tddpm.T, "diffusion timesteps");
  enum_opt(sc, "--variance", tddpm.variance, kVariances, "reverse variance mode");
  sc->add_option("--width", tddpm.spec.base_width, "denoiser base width");
  sc->add_option("--depth", tddpm.spec.depth, "denoiser depth (1 or 2)");
  sc->add_option("--temb", tddpm.spec.time_embedding_dim, "time embedding dim");
  sc->add_option("--record-interval", tddpm.record_interval, "loss record interval");
  sc->add_option("--seed", tddpm.seed, "training seed")->required();
  sc->callback([&] { run_train_ddpm(tddpm); });

  FinetuneOpts ft;
  sc = app.add_subcommand("finetune-ddpm", "continue a checkpoint on new data");
  sc->add_option("--from", ft.from, "source checkpoint directory")->required();
  sc->add_option("--data", ft.data, "training dataset directory")->required();
  sc->add_option("--split", ft.split, "split to train on");
  sc->add_option("--out", ft.out, "output checkpoint directory")->required();
  sc->add_option("--steps", ft.steps, "optimizer steps");
  sc->add_option("--batch", ft.batch, "batch size");
  sc->add_option("--lr-scale", ft.lr_scale, "learning-rate scale");
  sc->add_option("--record-interval", ft.record_interval, "loss record interval");
  sc->add_option("--seed", ft.seed, "training seed")->required();
  sc->callback([&] { run_finetune(ft); });

  ExtractorOpts ext;
  sc = app.add_subcommand("train-extractor", "train the rotation-pretext feature extractor");
  sc->add_option("--data", ext.data, "training dataset directory")->required();
  sc->add_option("--split", ext.split, "split to train on");
  sc->add_option("--out", ext.out, "output checkpoint directory")->required();
  sc->add_option("--steps", ext.steps, "optimizer steps");
  sc->add_option("--batch", ext.batch, "batch size");
  sc->add_option("--seed", ext.seed, "training seed")->required();
  sc->callback([&] { run_train_extractor(ext); });

  PurifyOpts pur;
  sc = app.add_subcommand("purify", "run guided reverse diffusion over a dataset");
  sc->add_option("--in", pur.in, "input (unlearnable) dataset directory")->required();
  sc->add_option("--split", pur.split, "split to purify");
  sc->add_option("--ddpm", pur.ddpm, "ddpm checkpoint directory")->required();
  sc->add_option("--extractor", pur.extractor, "extractor checkpoint directory");
  sc->add_option("--out", pur.out, "output dataset directory")->required();
  sc->add_option("--lambda1", pur.lambda1, "pixel guidance scale");
  sc->add_option("--lambda2", pur.lambda2, "perceptual guidance scale");
  sc->add_option("--Tp", pur.T_p, "diffusion depth per iteration (0 = T/10)");
  sc->add_option("--N", pur.N, "iteration count");
  enum_opt(sc, "--mode", pur.mode, kModes, "condition mode");
  sc->add_flag("--unconditional", pur.unconditional, "plain reverse sampling, no guidance");
  sc->add_option("--trace", pur.trace, "write the per-step trace CSV here");
  sc->add_option("--seed", pur.seed, "sampling seed")->required();
  sc->callback([&] { run_purify(pur); });

  TrainClsOpts tcls;
  sc = app.add_subcommand("train-classifier", "train a classifier on a dataset split");
  sc->add_option("--data", tcls.data, "training dataset directory")->required();
  sc->add_option("--split", tcls.split, "split to train on");
  sc->add_option("--test-data", tcls.test_data, "held-out dataset for the accuracy curve");
  sc->add_option("--test-split", tcls.test_split, "held-out split");
  sc->add_option("--out", tcls.out, "output checkpoint directory")->required();
  sc->add_option("--curve", tcls.curve, "write the per-epoch accuracy CSV here");
  sc->add_option("--epochs", tcls.spec.epochs, "training epochs");
  sc->add_option("--width", tcls.spec.width, "classifier width");
  enum_opt(sc, "--act", tcls.spec.act, kActs, "activation");
  enum_opt(sc, "--pool", tcls.spec.pool, kPools, "pooling");
  sc->add_option("--batch", tcls.spec.batch_size, "batch size");
  sc->add_option("--lr", tcls.spec.lr, "learning rate");
  sc->add_option("--seed", tcls.seed, "training seed")->required();
  sc->callback([&] { run_train_classifier(tcls); });

  EvalOpts ev;
  sc = app.add_subcommand("evaluate", "score a classifier checkpoint on a split");
  sc->add_option("--model", ev.model, "classifier checkpoint directory")->required();
  sc->add_option("--data", ev.data, "dataset directory")->required();
  sc->add_option("--split", ev.split, "split to score");
  sc->add_option("--json", ev.json_out, "write the result as JSON here");
  sc->callback([&] { run_evaluate(ev); });

  PipeFlags exp;
  fs::path exp_out;
  sc = app.add_subcommand("experiment", "run the full forge/train/purify/evaluate pipeline");
  sc->add_option("--out", exp_out, "output directory for record.json and metrics")->required();
  exp.attach(sc);
  sc->callback([&] { run_experiment(exp, exp_out); });

  AblationFlags abl;
  fs::path abl_out;
  sc = app.add_subcommand("ablation", "run the scratch/finetune x guidance on/off grid");
  sc->add_option("--out", abl_out, "output directory for the records")->required();
  abl.attach(sc);
  sc->callback([&] { run_ablation_cmd(abl, abl_out); });

  PlotOpts plot;
  sc = app.add_subcommand("plot", "render charts from an experiment record");
  sc->add_option("--record", plot.record, "experiment record JSON")->required();
  sc->add_option("--trace", plot.trace, "purification trace CSV");
  sc->add_option("--out", plot.out, "output directory for PNGs")->required();
  sc->callback([&] { run_plot(plot); });

  ValidateOpts val;
  sc = app.add_subcommand("validate", "check a container, dataset, or checkpoint");
  sc->add_option("path", val.path, "file or directory to validate")->required();
  sc->add_flag("--no-chain", val.no_chain, "skip the provenance chain walk");
  sc->callback([&] { run_validate(val); });

  ExportOpts png;
  sc = app.add_subcommand("png-export", "render a dataset split as a PNG sheet");
  sc->add_option("--in", png.in, "dataset directory")->required();
  sc->add_option("--split", png.split, "split to render");
  sc->add_option("--out", png.out, "output PNG path")->required();
  sc->add_option("--cols", png.cols, "images per row");
  sc->add_option("--limit", png.limit, "max images");
  sc->add_option("--scale", png.scale, "nearest-neighbor scale");
  sc->callback([&] { run_png_export(png); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return 0;  // --help and friends
    std::fprintf(stderr, "error[usage]: %s\n", e.what());
    return 2;
  } catch (const CliError& e) {
    return report(e.kind, e.code, e.msg);
  } catch (const fs::filesystem_error& e) {
    return report("missing", 4, e.what());
  } catch (const nlohmann::json::exception& e) {
    return report("schema", 3, e.what());
  } catch (const std::invalid_argument& e) {
    return report("schema", 3, e.what());
  } catch (const std::runtime_error& e) {
    return report("schema", 3, e.what());
  } catch (const std::exception& e) {
    return report("internal", 5, e.what());
  }
  return 0;
}
