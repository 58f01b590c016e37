#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "jcdp/classifier.hpp"
#include "jcdp/data.hpp"
#include "jcdp/tensor.hpp"

namespace jcdp {

enum class PseudoLabels { rotation, true_labels };

// Feature network for the perceptual distance: a small convolutional
// classifier whose two post-activation maps act as the tap layers. Inputs
// are model_sym images. Parameters are frozen wherever the distance is used.
struct FeatureExtractor {
  ConvNet net;
  std::string trained_on;
};

// Self-supervised by default: each image is rotated by k*90 degrees and the
// net predicts k. true_labels uses the dataset labels instead.
FeatureExtractor train_extractor(const Dataset& raw_data, PseudoLabels mode, int steps,
                                 std::uint64_t seed, const std::string& trained_on = "",
                                 int batch_size = 32);

// Rotation-task accuracy of the extractor head on a held-out set.
double rotation_accuracy(const FeatureExtractor& phi, const Dataset& data,
                         std::uint64_t seed);

// Channel-unit-normalized feature differences, one L2 norm per tap layer,
// summed over layers; one value per batch element.
std::vector<double> perceptual_distance(const FeatureExtractor& phi, const ImageBatch& a,
                                        const ImageBatch& b);

// Gradient of the summed distance with respect to `a`. Zero feature
// difference contributes a zero gradient (declared subgradient convention).
ImageBatch distance_gradient(const FeatureExtractor& phi, const ImageBatch& a,
                             const ImageBatch& b);

void save_extractor(const std::filesystem::path& dir, const FeatureExtractor& phi);
FeatureExtractor load_extractor(const std::filesystem::path& dir);

// k*90-degree counterclockwise rotation of every image, k in [0,4).
Tensor rotate90(const Tensor& images, int k);

}  // namespace jcdp
