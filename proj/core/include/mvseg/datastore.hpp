#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mvseg/blocks.hpp"
#include "mvseg/optim.hpp"
#include "mvseg/phantom.hpp"

// On-disk formats. Raw arrays are little-endian and row-major; their
// dimensions live in UTF-8 JSON sidecars.
//
//   <dataset>/manifest.json
//   <dataset>/<id>/meta.json
//   <dataset>/<id>/sa_img.f32le   (n_slices, H, W)
//   <dataset>/<id>/sa_msk.u8      (n_slices, H, W)
//   <dataset>/<id>/la{1,2,3}_img.f32le, la{1,2,3}_msk.u8   (H, W)
//   <dataset>/<id>/targets.u8     (6, H, W)
//   <priors>/<id>.f32le           (4, 512) in view order LA1, LA2, LA3, Mid-V

namespace mvseg {

namespace fs = std::filesystem;

inline constexpr int kDatasetFormatVersion = 1;
inline constexpr int kCheckpointFormatVersion = 1;

// 64-bit FNV-1a, hex encoded.
std::string fnv1a_hex(std::string_view text);

enum class Split { kTrain, kTest };
const char* to_string(Split s);

struct ManifestEntry {
  std::string id;
  std::string path;  // relative to the dataset directory
  std::uint64_t seed = 0;
  Split split = Split::kTrain;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  std::vector<ManifestEntry> subjects;
  std::array<double, 3> spacing{1.8, 1.8, 10.0};
  std::uint64_t generator_seed = 0;
  std::string config_hash;
  // Directory the manifest was read from; not serialized.
  fs::path root;

  std::vector<std::string> ids(Split s) const;
  const ManifestEntry& entry(const std::string& id) const;
  fs::path subject_dir(const std::string& id) const { return root / entry(id).path; }
  // Unique ids; throws CorruptionError otherwise.
  void validate() const;
};

void write_manifest(const DatasetManifest& manifest, const fs::path& dataset_dir);
// Checks that every listed subject directory exists.
DatasetManifest read_manifest(const fs::path& dataset_dir);

void write_subject(const Subject& subject, const fs::path& dir);
Subject read_subject(const fs::path& dir);

// Deterministic sample without replacement of ceil(fraction * n_train)
// training ids; the test split is untouched.
DatasetManifest subsample_split(const DatasetManifest& manifest, double fraction,
                                std::uint64_t seed);

// Raw little-endian arrays.
void write_f32le(const fs::path& path, std::span<const float> values);
std::vector<float> read_f32le(const fs::path& path, std::size_t expected_count);
void write_u8(const fs::path& path, std::span<const std::uint8_t> values);
std::vector<std::uint8_t> read_u8(const fs::path& path, std::size_t expected_count);

inline constexpr std::size_t kCodeSize = 512;
using PriorCodes = std::array<std::vector<float>, kNumSourceViews>;

fs::path prior_path(const fs::path& priors_dir, const std::string& id);
void write_priors(const fs::path& path, const PriorCodes& codes);
PriorCodes read_priors(const fs::path& path, std::size_t code_size = kCodeSize);

// Writes `bytes` to a sibling temp file and renames it into place.
void write_file_atomic(const fs::path& path, std::span<const char> bytes);
void write_text_atomic(const fs::path& path, const std::string& text);
std::string read_text(const fs::path& path);

// ------------------------------------------------------------ checkpoints

enum class ModelKind { kShapeMae, kMvUnet, kUnet2d };
const char* to_string(ModelKind k);
ModelKind parse_model_kind(const std::string& s);

struct NamedArray {
  std::string name;
  std::string dtype;  // "f32le" or "f64le"
  std::vector<int> shape;
  std::vector<char> bytes;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  ModelKind kind = ModelKind::kShapeMae;
  std::int64_t epoch = 0;
  std::int64_t optimizer_steps = 0;
  std::string rng_state;
  std::string config_json = "{}";
  std::vector<NamedArray> weights;    // parameters, then buffers
  std::vector<NamedArray> optimizer;  // "m/<name>", "v/<name>"
};

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path);
Checkpoint load_checkpoint(const fs::path& path);

template <typename T>
std::vector<NamedArray> export_arrays(const nn::ParamList<T>& params);

// Copies checkpoint weights into `params`. Fails with ModelMismatch listing
// missing and unexpected names, or on any shape mismatch.
template <typename T>
void import_weights(const Checkpoint& ckpt, nn::ParamList<T>& params);

template <typename T>
std::vector<NamedArray> export_optimizer(nn::Adam<T>& adam);

template <typename T>
void import_optimizer(const Checkpoint& ckpt, nn::Adam<T>& adam);

class ModelMismatch : public Error {
 public:
  using Error::Error;
};

}  // namespace mvseg
