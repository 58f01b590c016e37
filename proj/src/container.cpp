#include "jcdp/container.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

#include "jcdp/rng.hpp"

namespace jcdp {
namespace fs = std::filesystem;

std::size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::f32: return 4;
    case Dtype::u8: return 1;
    case Dtype::i64: return 8;
  }
  throw std::invalid_argument("unknown dtype code");
}

std::int64_t RawTensor::numel() const { return numel_of(shape); }

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path.string());
  in.seekg(0, std::ios::end);
  const auto len = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
  if (len > 0) in.read(reinterpret_cast<char*>(buf.data()), len);
  if (!in) throw std::runtime_error("read failed: " + path.string());
  return buf;
}

void write_file_atomic(const fs::path& path, const void* data, std::size_t n) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for write: " + tmp.string());
    out.write(static_cast<const char*>(data), std::streamsize(n));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

void write_container(const fs::path& path, const RawTensor& t) {
  const std::size_t expect = std::size_t(t.numel()) * dtype_size(t.dtype);
  if (t.bytes.size() != expect)
    throw std::invalid_argument("container payload size does not match shape");
  if (t.shape.size() > 255) throw std::invalid_argument("container ndim > 255");

  std::string header;
  header.append("JCDP");
  put_u32(header, kContainerVersion);
  header.push_back(char(std::uint8_t(t.dtype)));
  header.push_back(char(std::uint8_t(t.shape.size())));
  for (auto d : t.shape) put_u64(header, std::uint64_t(d));

  std::string blob = header;
  blob.append(reinterpret_cast<const char*>(t.bytes.data()), t.bytes.size());
  write_file_atomic(path, blob.data(), blob.size());
}

RawTensor read_container(const fs::path& path) {
  const auto buf = read_file(path);
  const std::string where = path.string();
  if (buf.size() < 10) throw std::runtime_error("container truncated header: " + where);
  if (std::memcmp(buf.data(), "JCDP", 4) != 0)
    throw std::runtime_error("bad container magic: " + where);
  const std::uint32_t version = get_u32(buf.data() + 4);
  if (version != kContainerVersion)
    throw std::runtime_error("unsupported container version " + std::to_string(version) + ": " +
                             where);
  const std::uint8_t dtype_code = buf[8];
  if (dtype_code > 2) throw std::runtime_error("unknown dtype code: " + where);
  const std::uint8_t ndim = buf[9];
  const std::size_t header = 10 + std::size_t(ndim) * 8;
  if (buf.size() < header) throw std::runtime_error("container truncated shape: " + where);

  RawTensor t;
  t.dtype = Dtype(dtype_code);
  t.shape.resize(ndim);
  for (int i = 0; i < int(ndim); ++i) {
    const std::uint64_t d = get_u64(buf.data() + 10 + 8 * i);
    if (d > std::uint64_t(1) << 40) throw std::runtime_error("implausible dimension: " + where);
    t.shape[std::size_t(i)] = std::int64_t(d);
  }
  const std::size_t payload = std::size_t(t.numel()) * dtype_size(t.dtype);
  if (buf.size() != header + payload)
    throw std::runtime_error("container payload length mismatch: " + where);
  t.bytes.assign(buf.begin() + std::ptrdiff_t(header), buf.end());
  return t;
}

void write_f32(const fs::path& path, const Tensor& t) {
  RawTensor raw;
  raw.dtype = Dtype::f32;
  raw.shape = t.shape;
  raw.bytes.resize(t.data.size() * 4);
  std::memcpy(raw.bytes.data(), t.data.data(), raw.bytes.size());
  write_container(path, raw);
}

Tensor read_f32(const fs::path& path) {
  const RawTensor raw = read_container(path);
  if (raw.dtype != Dtype::f32) throw std::runtime_error("expected float32 container: " + path.string());
  Tensor t(raw.shape);
  std::memcpy(t.data.data(), raw.bytes.data(), raw.bytes.size());
  return t;
}

void write_i64(const fs::path& path, const std::vector<std::int64_t>& v) {
  RawTensor raw;
  raw.dtype = Dtype::i64;
  raw.shape = {std::int64_t(v.size())};
  raw.bytes.resize(v.size() * 8);
  std::memcpy(raw.bytes.data(), v.data(), raw.bytes.size());
  write_container(path, raw);
}

std::vector<std::int64_t> read_i64(const fs::path& path) {
  const RawTensor raw = read_container(path);
  if (raw.dtype != Dtype::i64) throw std::runtime_error("expected int64 container: " + path.string());
  std::vector<std::int64_t> v(static_cast<std::size_t>(raw.numel()));
  std::memcpy(v.data(), raw.bytes.data(), raw.bytes.size());
  return v;
}

std::uint64_t file_hash(const fs::path& path) {
  const auto buf = read_file(path);
  return fnv1a64(buf.data(), buf.size());
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, text.data(), text.size());
}

// --- dataset directories ---------------------------------------------------

namespace {

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["format"] = "jcdp-dataset";
  j["version"] = kDatasetManifestVersion;
  j["name"] = m.name;
  j["image_shape"] = m.image_shape;
  j["class_names"] = m.class_names;
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [split, ref] : m.splits) {
    splits[split] = {{"images", ref.images_file}, {"labels", ref.labels_file}, {"count", ref.count}};
  }
  j["splits"] = splits;
  j["provenance"] = m.provenance;
  return j;
}

DatasetManifest manifest_from_json(const nlohmann::json& j, const std::string& where) {
  if (!j.contains("format") || j["format"] != "jcdp-dataset")
    throw std::runtime_error("not a dataset manifest: " + where);
  if (!j.contains("version") || !j["version"].is_number_integer() ||
      j["version"].get<int>() != kDatasetManifestVersion)
    throw std::runtime_error("unsupported dataset manifest version: " + where);
  DatasetManifest m;
  m.name = j.at("name").get<std::string>();
  m.image_shape = j.at("image_shape").get<std::vector<std::int64_t>>();
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  for (const auto& [split, ref] : j.at("splits").items()) {
    DatasetManifest::SplitRef r;
    r.images_file = ref.at("images").get<std::string>();
    r.labels_file = ref.at("labels").get<std::string>();
    r.count = ref.at("count").get<std::int64_t>();
    m.splits[split] = r;
  }
  if (j.contains("provenance")) m.provenance = j["provenance"];
  return m;
}

}  // namespace

void save_dataset(const fs::path& dir, const DatasetManifest& manifest,
                  const std::map<std::string, Dataset>& splits) {
  fs::create_directories(dir);
  DatasetManifest m = manifest;
  for (const auto& [split, data] : splits) {
    const std::string img_file = split + "_images.jt";
    const std::string lbl_file = split + "_labels.jt";
    write_f32(dir / img_file, data.images);
    write_i64(dir / lbl_file, data.labels);
    m.splits[split] = {img_file, lbl_file, data.size()};
  }
  write_text_atomic(dir / "manifest.json", manifest_to_json(m).dump(2) + "\n");
}

DatasetManifest load_manifest(const fs::path& dir) {
  const fs::path mp = dir / "manifest.json";
  std::ifstream in(mp);
  if (!in) throw std::runtime_error("cannot open manifest: " + mp.string());
  nlohmann::json j;
  in >> j;
  return manifest_from_json(j, mp.string());
}

Dataset load_split(const fs::path& dir, const std::string& split) {
  const DatasetManifest m = load_manifest(dir);
  auto it = m.splits.find(split);
  if (it == m.splits.end())
    throw std::runtime_error("dataset has no split '" + split + "': " + dir.string());
  Dataset d;
  d.images = read_f32(dir / it->second.images_file);
  d.labels = read_i64(dir / it->second.labels_file);
  d.class_names = m.class_names;
  if (d.images.ndim() != 4 || d.images.dim(0) != std::int64_t(d.labels.size()))
    throw std::runtime_error("split image/label count mismatch: " + dir.string());
  return d;
}

std::map<std::string, Dataset> load_all_splits(const fs::path& dir) {
  const DatasetManifest m = load_manifest(dir);
  std::map<std::string, Dataset> out;
  for (const auto& [split, ref] : m.splits) out[split] = load_split(dir, split);
  return out;
}

void save_single_split_dataset(const fs::path& dir, const std::string& name, const Dataset& data,
                               const std::string& split, const nlohmann::json& provenance) {
  DatasetManifest m;
  m.name = name;
  m.image_shape = {data.images.dim(1), data.images.dim(2), data.images.dim(3)};
  m.class_names = data.class_names;
  m.provenance = provenance.is_array() ? provenance : nlohmann::json::array({provenance});
  save_dataset(dir, m, {{split, data}});
}

std::vector<std::string> validate_dataset(const fs::path& dir, bool follow_chain) {
  std::vector<std::string> issues;
  DatasetManifest m;
  try {
    m = load_manifest(dir);
  } catch (const std::exception& e) {
    issues.push_back(std::string("manifest: ") + e.what());
    return issues;
  }
  for (const auto& [split, ref] : m.splits) {
    try {
      const RawTensor img = read_container(dir / ref.images_file);
      if (img.dtype != Dtype::f32)
        issues.push_back(split + ": images dtype is not float32");
      else if (img.shape.size() != 4)
        issues.push_back(split + ": images are not rank-4");
      else {
        if (img.shape[0] != ref.count)
          issues.push_back(split + ": image count disagrees with manifest");
        std::vector<std::int64_t> chw(img.shape.begin() + 1, img.shape.end());
        if (chw != m.image_shape) issues.push_back(split + ": image shape disagrees with manifest");
        const float* vals = reinterpret_cast<const float*>(img.bytes.data());
        for (std::int64_t i = 0; i < img.numel(); ++i) {
          const float v = vals[i];
          if (!(v >= 0.0f && v <= 1.0f)) {
            issues.push_back(split + ": image values leave [0,1]");
            break;
          }
        }
      }
      const RawTensor lbl = read_container(dir / ref.labels_file);
      if (lbl.dtype != Dtype::i64)
        issues.push_back(split + ": labels dtype is not int64");
      else {
        if (lbl.shape.size() != 1 || lbl.shape[0] != ref.count)
          issues.push_back(split + ": label count disagrees with manifest");
        const auto* labels = reinterpret_cast<const std::int64_t*>(lbl.bytes.data());
        for (std::int64_t i = 0; i < lbl.numel(); ++i) {
          if (labels[i] < 0 || labels[i] >= std::int64_t(m.class_names.size())) {
            issues.push_back(split + ": label outside class range");
            break;
          }
        }
      }
    } catch (const std::exception& e) {
      issues.push_back(split + ": " + e.what());
    }
  }
  if (follow_chain) {
    for (const auto& rec : m.provenance) {
      if (rec.contains("source_dataset")) {
        const fs::path src = rec["source_dataset"].get<std::string>();
        const fs::path resolved = src.is_absolute() ? src : dir.parent_path() / src;
        if (!fs::exists(resolved / "manifest.json")) {
          issues.push_back("provenance source missing: " + resolved.string());
        } else {
          auto sub = validate_dataset(resolved, true);
          for (auto& s : sub) issues.push_back("source " + src.string() + ": " + s);
        }
      }
    }
  }
  return issues;
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw std::runtime_error("checkpoint is missing tensor '" + name + "'");
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "jcdp-checkpoint";
  manifest["version"] = kCheckpointVersion;
  manifest["kind"] = ckpt.kind;
  manifest["meta"] = ckpt.meta;
  nlohmann::json names = nlohmann::json::array();
  for (const auto& [name, tensor] : ckpt.tensors) {
    names.push_back(name);
    write_f32(dir / (name + ".jt"), tensor);
  }
  manifest["tensors"] = names;
  write_text_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw std::runtime_error("cannot open checkpoint manifest: " + mpath.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const std::exception& e) {
    throw std::runtime_error("corrupt checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "jcdp-checkpoint") {
    throw std::runtime_error("not a checkpoint manifest: " + mpath.string());
  }
  if (manifest.value("version", -1) != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version in " + mpath.string());
  }
  Checkpoint ckpt;
  ckpt.kind = manifest.value("kind", "");
  ckpt.meta = manifest.value("meta", nlohmann::json::object());
  for (const auto& name : manifest.at("tensors")) {
    const std::string n = name.get<std::string>();
    ckpt.tensors.emplace_back(n, read_f32(dir / (n + ".jt")));
  }
  return ckpt;
}

}  // namespace jcdp
