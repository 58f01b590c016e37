#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "jcdp/data.hpp"
#include "jcdp/tensor.hpp"

namespace jcdp {

// Binary tensor container: magic "JCDP", u32 version, u8 dtype
// (0 = float32, 1 = uint8, 2 = int64), u8 ndim, ndim x u64 shape,
// then the row-major little-endian payload. File length must match the
// header exactly; unknown versions are rejected.
inline constexpr std::uint32_t kContainerVersion = 1;

enum class Dtype : std::uint8_t { f32 = 0, u8 = 1, i64 = 2 };

std::size_t dtype_size(Dtype d);

struct RawTensor {
  Dtype dtype = Dtype::f32;
  std::vector<std::int64_t> shape;
  std::vector<std::uint8_t> bytes;

  std::int64_t numel() const;
};

// All writes are atomic: data lands in a temp file that is renamed over the
// destination, so readers never observe a partial container.
void write_container(const std::filesystem::path& path, const RawTensor& t);
RawTensor read_container(const std::filesystem::path& path);

void write_f32(const std::filesystem::path& path, const Tensor& t);
Tensor read_f32(const std::filesystem::path& path);
void write_i64(const std::filesystem::path& path, const std::vector<std::int64_t>& v);
std::vector<std::int64_t> read_i64(const std::filesystem::path& path);

std::uint64_t file_hash(const std::filesystem::path& path);

void write_text_atomic(const std::filesystem::path& path, const std::string& text);

// --- dataset directories ---------------------------------------------------
//
// A dataset is a directory with manifest.json plus one image and one label
// container per split. Provenance is an append-only list of records; a
// purified dataset names its UE source, which names its clean source.
inline constexpr int kDatasetManifestVersion = 1;

struct DatasetManifest {
  std::string name;
  std::vector<std::int64_t> image_shape;  // (C, H, W)
  std::vector<std::string> class_names;
  // split -> {images file, labels file, count}
  struct SplitRef {
    std::string images_file;
    std::string labels_file;
    std::int64_t count = 0;
  };
  std::map<std::string, SplitRef> splits;
  nlohmann::json provenance = nlohmann::json::array();
};

void save_dataset(const std::filesystem::path& dir, const DatasetManifest& manifest,
                  const std::map<std::string, Dataset>& splits);
DatasetManifest load_manifest(const std::filesystem::path& dir);
Dataset load_split(const std::filesystem::path& dir, const std::string& split);
std::map<std::string, Dataset> load_all_splits(const std::filesystem::path& dir);

// Convenience: single-split save with provenance carried over.
void save_single_split_dataset(const std::filesystem::path& dir, const std::string& name,
                               const Dataset& data, const std::string& split,
                               const nlohmann::json& provenance);

// Validates containers, shapes, label ranges and (optionally) walks the
// provenance chain through `source_dataset` references. Returns a list of
// human-readable violations; empty means valid.
std::vector<std::string> validate_dataset(const std::filesystem::path& dir, bool follow_chain);

// --- checkpoints -------------------------------------------------------------
//
// A checkpoint is a directory with manifest.json ({kind, meta, tensor names})
// plus one f32 container per named tensor. Loaders reject unknown versions
// and missing tensors.
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::string kind;  // "ddpm" | "extractor" | "classifier"
  nlohmann::json meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace jcdp
