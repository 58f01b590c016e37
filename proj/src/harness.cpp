#include "jcdp/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>

#include "jcdp/rng.hpp"
#include "jcdp/schedule.hpp"

namespace jcdp {

namespace {

using nlohmann::json;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Tensor gather_images(const Dataset& ds, const std::int64_t* idx, std::int64_t count) {
  const std::int64_t per = ds.images.numel() / std::max<std::int64_t>(1, ds.images.dim(0));
  Tensor out({count, ds.images.dim(1), ds.images.dim(2), ds.images.dim(3)});
  for (std::int64_t i = 0; i < count; ++i) {
    std::memcpy(out.ptr() + i * per, ds.images.ptr() + idx[i] * per,
                static_cast<std::size_t>(per) * sizeof(float));
  }
  return out;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

const char* act_name(Activation a) { return a == Activation::relu ? "relu" : "silu"; }
const char* pool_name(Pooling p) { return p == Pooling::max ? "max" : "avg"; }
const char* variance_name(VarianceMode m) {
  return m == VarianceMode::posterior ? "posterior" : "fixed_beta";
}

json budget_json(const PerturbationBudget& b) {
  return {{"norm", norm_name(b.norm)}, {"epsilon", b.epsilon}};
}

json toy_json(const ToyDataConfig& d) {
  return {{"num_classes", d.num_classes}, {"image_size", d.image_size},
          {"train_count", d.train_count}, {"test_count", d.test_count},
          {"family", d.family}};
}

// Numeric leaves only, "a.b[2].c" paths, in the container's own (sorted key /
// index) order.
void flatten_metrics(const json& j, const std::string& path, std::string& out) {
  if (j.is_object()) {
    for (const auto& [key, value] : j.items()) {
      flatten_metrics(value, path.empty() ? key : path + "." + key, out);
    }
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) {
      flatten_metrics(j[i], path + "[" + std::to_string(i) + "]", out);
    }
  } else if (j.is_boolean()) {
    out += path + "," + (j.get<bool>() ? "1" : "0") + "\n";
  } else if (j.is_number_integer()) {
    out += path + "," + std::to_string(j.get<std::int64_t>()) + "\n";
  } else if (j.is_number()) {
    out += path + "," + fmt_double(j.get<double>()) + "\n";
  }
}

ToyDataConfig surrogate_config(const PipelineConfig& cfg) {
  ToyDataConfig s = cfg.data;
  s.train_count = cfg.surrogate_count;
  s.test_count = 1;
  if (cfg.mismatch_surrogate) s.family ^= 1;
  return s;
}

UEDataset forge_any(const Dataset& clean, const PipelineConfig& cfg) {
  switch (cfg.forge_kind) {
    case NoiseKind::emn_sample:
      return forge_emn(clean, ConvNetConfig{}, cfg.budget, EmnMode::sample_wise, cfg.emn_outer,
                       cfg.emn_inner, cfg.forge_seed);
    case NoiseKind::emn_class:
      return forge_emn(clean, ConvNetConfig{}, cfg.budget, EmnMode::class_wise, cfg.emn_outer,
                       cfg.emn_inner, cfg.forge_seed);
    case NoiseKind::lsp:
      return forge_lsp(clean, cfg.budget, cfg.lsp_patch, cfg.forge_seed);
    case NoiseKind::random_class_patch:
      return forge_random_class_patch(clean, cfg.budget, cfg.forge_seed);
  }
  throw std::invalid_argument("unknown noise kind");
}

GuidanceParams resolved_guidance(const PipelineConfig& cfg) {
  GuidanceParams g = cfg.guidance;
  if (g.T_p <= 0) g.T_p = std::max(1, cfg.T / 10);
  return g;
}

struct ArmOutcome {
  std::vector<double> curve;
  double final_accuracy = 0.0;
};

ArmOutcome run_arm(const Dataset& train, const Dataset& test, const ClassifierSpec& spec) {
  TrainedClassifier tc = train_classifier(train, spec, &test);
  return {std::move(tc.test_accuracy), evaluate(tc.net, test)};
}

json arm_json(const ArmOutcome& a) {
  return {{"accuracy_curve", a.curve}, {"final_accuracy", a.final_accuracy}};
}

}  // namespace

std::string toy_id(const ToyDataConfig& d, std::uint64_t seed) {
  return "toy-f" + std::to_string(d.family) + "-k" + std::to_string(d.num_classes) + "-s" +
         std::to_string(d.image_size) + "-n" + std::to_string(d.train_count) + "+" +
         std::to_string(d.test_count) + "-seed" + std::to_string(seed);
}

TrainedClassifier train_classifier(const Dataset& train, const ClassifierSpec& spec,
                                   const Dataset* test) {
  const std::int64_t n = train.size();
  if (n == 0) throw std::invalid_argument("empty training set");
  const std::int64_t K = train.num_classes();
  if (K < 2) throw std::invalid_argument("training set needs at least two classes");
  for (std::int64_t y : train.labels) {
    if (y < 0 || y >= K) {
      throw std::invalid_argument("label " + std::to_string(y) + " outside the class range");
    }
  }
  if (train.images.dim(2) != train.images.dim(3)) {
    throw std::invalid_argument("classifier expects square images");
  }
  if (spec.epochs < 0 || spec.batch_size < 1) {
    throw std::invalid_argument("bad classifier schedule");
  }

  ConvNetConfig cfg;
  cfg.in_channels = static_cast<int>(train.images.dim(1));
  cfg.image_size = static_cast<int>(train.images.dim(2));
  cfg.width = spec.width;
  cfg.num_classes = static_cast<int>(K);
  cfg.act = spec.act;
  cfg.pool = spec.pool;

  TrainedClassifier out;
  out.net = ConvNet(cfg);
  Rng base(spec.seed);
  out.net.init_params(base.fork(0x636c66).seed());
  nn::AdamConfig oc;
  oc.lr = spec.lr;
  nn::Adam opt(oc);
  opt.init(out.net.params());
  Rng shuffle = base.fork(0x73687566);

  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::int64_t> yb;

  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    for (std::int64_t i = n - 1; i > 0; --i) {
      const std::int64_t j =
          static_cast<std::int64_t>(shuffle.below(static_cast<std::uint64_t>(i + 1)));
      std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    for (std::int64_t begin = 0; begin < n; begin += spec.batch_size) {
      const std::int64_t end = std::min<std::int64_t>(n, begin + spec.batch_size);
      Tensor xb = gather_images(train, perm.data() + begin, end - begin);
      yb.clear();
      for (std::int64_t i = begin; i < end; ++i) {
        yb.push_back(train.labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])]);
      }
      const double loss = ce_train_step(out.net, opt, xb, yb);
      if (!std::isfinite(loss)) {
        throw std::runtime_error("classifier loss diverged at epoch " + std::to_string(epoch));
      }
    }
    if (test) out.test_accuracy.push_back(accuracy_on(out.net, *test));
  }
  return out;
}

double evaluate(const ConvNet& net, const Dataset& test) {
  if (net.config().num_classes != test.num_classes()) {
    throw std::invalid_argument("classifier head does not match the label set");
  }
  return accuracy_on(net, test);
}

json ExperimentRecord::to_json() const {
  return {{"config", config},       {"datasets", datasets},
          {"metrics", metrics},     {"wall_seconds", wall_seconds},
          {"complete", complete},   {"failed_stage", failed_stage}};
}

ExperimentRecord ExperimentRecord::from_json(const json& j) {
  ExperimentRecord r;
  try {
    r.config = j.at("config");
    r.datasets = j.at("datasets");
    r.metrics = j.at("metrics");
    r.wall_seconds = j.at("wall_seconds").get<double>();
    r.complete = j.at("complete").get<bool>();
    r.failed_stage = j.at("failed_stage").get<std::string>();
  } catch (const json::exception& e) {
    throw std::runtime_error("corrupt experiment record: " + std::string(e.what()));
  }
  return r;
}

std::string ExperimentRecord::metrics_csv() const {
  std::string out = "metric,value\n";
  flatten_metrics(metrics, "", out);
  return out;
}

json guidance_json(const GuidanceParams& g) {
  return {{"lambda1", g.lambda1},
          {"lambda2", g.lambda2},
          {"T_p", g.T_p},
          {"N", g.N},
          {"condition_mode", condition_mode_name(g.condition_mode)}};
}

json pipeline_config_json(const PipelineConfig& cfg) {
  return {
      {"data", toy_json(cfg.data)},
      {"surrogate",
       {{"count", cfg.surrogate_count}, {"mismatch", cfg.mismatch_surrogate}}},
      {"forge",
       {{"kind", noise_kind_name(cfg.forge_kind)},
        {"budget", budget_json(cfg.budget)},
        {"emn_outer", cfg.emn_outer},
        {"emn_inner", cfg.emn_inner},
        {"lsp_patch", cfg.lsp_patch}}},
      {"ddpm",
       {{"T", cfg.T},
        {"variance_mode", variance_name(cfg.variance)},
        {"base_width", cfg.denoiser.base_width},
        {"depth", cfg.denoiser.depth},
        {"time_embedding_dim", cfg.denoiser.time_embedding_dim},
        {"steps", cfg.ddpm_steps},
        {"batch_size", cfg.ddpm_batch}}},
      {"extractor", {{"steps", cfg.extractor_steps}}},
      {"purify", {{"enabled", cfg.purify_enabled}, {"guidance", guidance_json(cfg.guidance)}}},
      {"classifier",
       {{"width", cfg.classifier.width},
        {"act", act_name(cfg.classifier.act)},
        {"pool", pool_name(cfg.classifier.pool)},
        {"epochs", cfg.classifier.epochs},
        {"batch_size", cfg.classifier.batch_size},
        {"lr", cfg.classifier.lr}}},
      {"seeds",
       {{"data", cfg.data_seed},
        {"surrogate", cfg.surrogate_seed},
        {"forge", cfg.forge_seed},
        {"ddpm", cfg.ddpm_seed},
        {"extractor", cfg.extractor_seed},
        {"purify", cfg.purify_seed},
        {"classifier", cfg.classifier.seed}}},
  };
}

ExperimentRecord run_pipeline(const PipelineConfig& cfg, const PipelineArtifacts* reuse) {
  ExperimentRecord rec;
  rec.config = pipeline_config_json(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  std::string stage = "gen_data";
  try {
    ToySplits local_data;
    const ToySplits* data = reuse && reuse->data ? reuse->data : nullptr;
    if (!data) {
      local_data = gen_toy_data(cfg.data, cfg.data_seed);
      data = &local_data;
    }
    const ToyDataConfig scfg = surrogate_config(cfg);
    Dataset local_surrogate;
    const Dataset* surrogate = reuse && reuse->surrogate ? reuse->surrogate : nullptr;
    if (!surrogate) {
      local_surrogate = gen_toy_data(scfg, cfg.surrogate_seed).train;
      surrogate = &local_surrogate;
    }
    const std::string clean_id = toy_id(cfg.data, cfg.data_seed);
    rec.datasets = {
        {"clean", {{"id", clean_id}, {"seed", cfg.data_seed}}},
        {"surrogate",
         {{"id", toy_id(scfg, cfg.surrogate_seed)},
          {"seed", cfg.surrogate_seed},
          {"mismatch", cfg.mismatch_surrogate}}},
    };

    stage = "forge_ue";
    UEDataset local_ue;
    const UEDataset* ue = reuse && reuse->ue ? reuse->ue : nullptr;
    if (!ue) {
      local_ue = forge_any(data->train, cfg);
      ue = &local_ue;
    }
    const std::string ue_id = clean_id + "+" + noise_kind_name(ue->noise_kind);
    rec.datasets["ue"] = {{"id", ue_id},
                          {"noise_kind", noise_kind_name(ue->noise_kind)},
                          {"budget", budget_json(ue->budget)},
                          {"seed", cfg.forge_seed},
                          {"source", clean_id}};
    const BudgetReport audit = verify_budget(*ue, data->train);
    rec.metrics["budget"] = {{"max_norm", audit.max_norm},
                             {"violations", audit.violators.size()}};

    stage = "train_ddpm";
    TrainState local_ddpm;
    const TrainState* ddpm = reuse && reuse->ddpm ? reuse->ddpm : nullptr;
    if (!ddpm) {
      TrainOptions topts;
      topts.batch_size = cfg.ddpm_batch;
      local_ddpm = train_ddpm(*surrogate, cfg.denoiser, default_schedule(cfg.T, cfg.variance),
                              cfg.ddpm_steps, cfg.ddpm_batch, cfg.ddpm_seed, topts);
      ddpm = &local_ddpm;
    }
    if (!ddpm->loss_history.empty()) {
      rec.metrics["ddpm"] = {{"final_smoothed_loss", smoothed_loss(ddpm->loss_history, 20)},
                             {"steps", ddpm->step}};
    }

    stage = "train_extractor";
    FeatureExtractor local_phi;
    const FeatureExtractor* phi = reuse && reuse->extractor ? reuse->extractor : nullptr;
    if (!phi) {
      local_phi = train_extractor(*surrogate, PseudoLabels::rotation, cfg.extractor_steps,
                                  cfg.extractor_seed, toy_id(scfg, cfg.surrogate_seed));
      phi = &local_phi;
    }

    stage = "purify";
    Dataset purified;
    bool have_purified = false;
    if (cfg.purify_enabled) {
      const GuidanceParams g = resolved_guidance(cfg);
      auto [pur, trace] = purify(*ddpm, *phi, ue->data.batch(), g, cfg.purify_seed);
      purified.images = std::move(pur.data);
      purified.labels = ue->data.labels;
      purified.class_names = ue->data.class_names;
      have_purified = true;
      rec.datasets["purified"] = {{"id", ue_id + "+purified"},
                                  {"source", ue_id},
                                  {"guidance", guidance_json(g)},
                                  {"ddpm_steps", ddpm->step},
                                  {"seed", cfg.purify_seed}};
      rec.metrics["purify"] = {{"psnr_per_iteration", trace.psnr_to_input},
                               {"steps", trace.steps.size()}};
    }

    stage = "train_classifiers";
    rec.metrics["chance"] = 1.0 / static_cast<double>(data->train.num_classes());
    rec.metrics["arms"]["clean"] = arm_json(run_arm(data->train, data->test, cfg.classifier));
    rec.metrics["arms"]["ue"] = arm_json(run_arm(ue->data, data->test, cfg.classifier));
    if (have_purified) {
      rec.metrics["arms"]["purified"] = arm_json(run_arm(purified, data->test, cfg.classifier));
    }

    stage = "evaluate";
    rec.metrics["psnr"] = {
        {"ue_vs_clean", mean_psnr(ue->data.batch(), data->train.batch())}};
    if (have_purified) {
      rec.metrics["psnr"]["purified_vs_clean"] = mean_psnr(purified.batch(), data->train.batch());
      rec.metrics["psnr"]["purified_vs_ue"] = mean_psnr(purified.batch(), ue->data.batch());
    }
    rec.complete = true;
  } catch (const std::exception& e) {
    rec.failed_stage = stage;
    rec.metrics["error"] = e.what();
  }
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

std::vector<ExperimentRecord> run_ablation(const AblationConfig& acfg) {
  const PipelineConfig& base = acfg.base;

  ToySplits data = gen_toy_data(base.data, base.data_seed);
  if (acfg.train_subset > 0 && acfg.train_subset < data.train.size()) {
    data.train = data.train.subset(0, acfg.train_subset);
  }
  const ToyDataConfig scfg = surrogate_config(base);
  Dataset surrogate = gen_toy_data(scfg, base.surrogate_seed).train;
  ToyDataConfig pcfg = scfg;
  pcfg.family ^= 1;
  Dataset pretrain_data = gen_toy_data(pcfg, acfg.pretrain_seed).train;

  UEDataset ue = forge_any(data.train, base);
  FeatureExtractor phi = train_extractor(surrogate, PseudoLabels::rotation, base.extractor_steps,
                                         base.extractor_seed, toy_id(scfg, base.surrogate_seed));

  TrainOptions topts;
  topts.batch_size = base.ddpm_batch;
  const NoiseSchedule ns = default_schedule(base.T, base.variance);
  TrainState scratch = train_ddpm(surrogate, base.denoiser, ns, base.ddpm_steps, base.ddpm_batch,
                                  base.ddpm_seed, topts);
  TrainState pre = train_ddpm(pretrain_data, base.denoiser, ns, acfg.pretrain_steps,
                              base.ddpm_batch, acfg.pretrain_seed, topts);
  TrainState tuned = finetune_ddpm(pre, surrogate, acfg.finetune_steps, acfg.finetune_lr_scale,
                                   base.ddpm_seed, topts);

  const double threshold = smoothed_loss(scratch.loss_history, acfg.loss_window);
  const std::int64_t scratch_steps =
      steps_to_threshold(scratch.loss_history, threshold, acfg.loss_window);
  const std::int64_t tuned_steps =
      steps_to_threshold(tuned.loss_history, threshold, acfg.loss_window);

  const GuidanceParams g = resolved_guidance(base);
  json shared_config = pipeline_config_json(base);
  shared_config["ablation"] = {{"pretrain_steps", acfg.pretrain_steps},
                               {"finetune_steps", acfg.finetune_steps},
                               {"finetune_lr_scale", acfg.finetune_lr_scale},
                               {"pretrain_seed", acfg.pretrain_seed},
                               {"loss_window", acfg.loss_window},
                               {"train_subset", acfg.train_subset}};
  json shared_datasets = {
      {"clean", {{"id", toy_id(base.data, base.data_seed)}, {"seed", base.data_seed}}},
      {"surrogate", {{"id", toy_id(scfg, base.surrogate_seed)}, {"seed", base.surrogate_seed}}},
      {"pretrain", {{"id", toy_id(pcfg, acfg.pretrain_seed)}, {"seed", acfg.pretrain_seed}}},
      {"ue",
       {{"noise_kind", noise_kind_name(ue.noise_kind)},
        {"budget", budget_json(ue.budget)},
        {"seed", base.forge_seed}}},
  };

  std::vector<ExperimentRecord> records;
  auto purified_arm = [&](const TrainState& model, bool guided, const GuidanceParams& gp) {
    ImageBatch pur = guided
                         ? purify(model, phi, ue.data.batch(), gp, base.purify_seed).first
                         : purify_unconditional(model, ue.data.batch(), gp.T_p, gp.N,
                                                base.purify_seed)
                               .first;
    Dataset pds;
    pds.images = std::move(pur.data);
    pds.labels = ue.data.labels;
    pds.class_names = ue.data.class_names;
    const double psnr = mean_psnr(pds.batch(), data.train.batch());
    const ArmOutcome outcome = run_arm(pds, data.test, base.classifier);
    return std::pair<double, double>(outcome.final_accuracy, psnr);
  };

  struct GridArm {
    const char* ddpm;
    const TrainState* model;
    bool guided;
  };
  const GridArm grid[4] = {{"scratch", &scratch, true},
                           {"scratch", &scratch, false},
                           {"finetuned", &tuned, true},
                           {"finetuned", &tuned, false}};
  for (const GridArm& arm : grid) {
    const auto a0 = std::chrono::steady_clock::now();
    ExperimentRecord rec;
    rec.config = shared_config;
    rec.datasets = shared_datasets;
    const auto [acc, psnr] = purified_arm(*arm.model, arm.guided, g);
    rec.metrics = {
        {"arm", {{"ddpm", arm.ddpm}, {"guidance", arm.guided}}},
        {"final_accuracy", acc},
        {"psnr_purified_vs_clean", psnr},
        {"ddpm",
         {{"threshold", threshold},
          {"steps_to_threshold",
           std::string(arm.ddpm) == "scratch" ? scratch_steps : tuned_steps},
          {"total_steps",
           std::string(arm.ddpm) == "scratch" ? scratch.step : tuned.step}}},
    };
    rec.complete = true;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - a0).count();
    records.push_back(std::move(rec));
  }

  for (const auto& [n_iter, t_p] : acfg.sweep) {
    const auto a0 = std::chrono::steady_clock::now();
    GuidanceParams gs = g;
    gs.N = n_iter;
    gs.T_p = t_p;
    ExperimentRecord rec;
    rec.config = shared_config;
    rec.datasets = shared_datasets;
    const auto [acc, psnr] = purified_arm(scratch, true, gs);
    rec.metrics = {{"sweep", {{"N", n_iter}, {"T_p", t_p}}},
                   {"final_accuracy", acc},
                   {"psnr_purified_vs_clean", psnr}};
    rec.complete = true;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - a0).count();
    records.push_back(std::move(rec));
  }

  return records;
}

}  // namespace jcdp
