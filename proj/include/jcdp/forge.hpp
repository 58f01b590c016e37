#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "jcdp/classifier.hpp"
#include "jcdp/data.hpp"

namespace jcdp {

enum class NormKind { l_inf, l2 };

std::string norm_name(NormKind n);
NormKind norm_from_name(const std::string& name);

struct PerturbationBudget {
  NormKind norm = NormKind::l_inf;
  double epsilon = 8.0 / 255.0;  // radius in data_unit space
};

enum class NoiseKind { emn_sample, emn_class, lsp, random_class_patch };

std::string noise_kind_name(NoiseKind k);

enum class EmnMode { sample_wise, class_wise };

// Perturbed copy of a clean dataset. Labels always equal the source labels;
// only images change, and ||image - clean||_norm <= epsilon holds per sample
// with the [0,1] clamp already applied.
struct UEDataset {
  Dataset data;
  NoiseKind noise_kind = NoiseKind::random_class_patch;
  PerturbationBudget budget;
  std::string clean_ref;
};

struct BudgetReport {
  std::vector<double> norms;
  std::vector<std::int64_t> violators;
  double max_norm = 0.0;

  bool ok() const { return violators.empty(); }
};

// Error-minimizing noise: alternate surrogate-classifier training with
// projected sign-gradient descent on delta minimizing the classifier loss.
// class_wise ties one delta to each label.
UEDataset forge_emn(const Dataset& clean, const ConvNetConfig& surrogate_spec,
                    const PerturbationBudget& budget, EmnMode mode, int outer_steps,
                    int inner_steps, std::uint64_t seed);

// Linearly separable patches: one random +-1 patch per class, tiled across
// the image and scaled to the l2 budget.
UEDataset forge_lsp(const Dataset& clean, const PerturbationBudget& budget, int patch_size,
                    std::uint64_t seed);

// One random full-image sign pattern per class, projected to the budget.
UEDataset forge_random_class_patch(const Dataset& clean, const PerturbationBudget& budget,
                                   std::uint64_t seed);

// Per-sample norm audit of ue against its clean source.
BudgetReport verify_budget(const UEDataset& ue, const Dataset& clean);

// Probe for shortcut separability: multinomial logistic regression on raw
// flattened inputs, returning training-set accuracy.
double linear_probe_accuracy(const Tensor& inputs, const std::vector<std::int64_t>& labels,
                             int num_classes, int steps, std::uint64_t seed);

}  // namespace jcdp
