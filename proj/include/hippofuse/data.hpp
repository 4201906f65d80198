#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hippofuse/model.hpp"
#include "hippofuse/tensor.hpp"

namespace hippofuse {

enum class Diagnosis { kAD, kMCI, kNC };

const char* to_string(Diagnosis d);
Diagnosis diagnosis_from_string(std::string_view s);
Modality modality_from_string(std::string_view s);

struct Volume {
  Tensor grid;  // [D, H, W]
  std::string subject_id;
  Modality modality = Modality::kSmri;
};

struct SubjectRecord {
  std::string id;
  Diagnosis diagnosis = Diagnosis::kNC;
  std::map<Modality, std::string> volume_paths;  // relative to the manifest
};

struct RoiSpec {
  std::string name;                      // left_hippocampus | right_hippocampus
  std::array<std::int64_t, 3> center{};  // voxel coordinates in [D, H, W] order
  std::size_t size = 28;
};

struct TransformRecord {
  std::array<int, 3> shift{0, 0, 0};  // voxels, per [D, H, W] axis
  double sigma = 0.0;
};

// Provenance of one train/test sample, original or generated.
struct SampleRef {
  std::string sample_id;
  std::string subject_id;
  Diagnosis diagnosis = Diagnosis::kNC;
  TransformRecord transform;
  bool original = false;
};

struct AugmentationPlan {
  std::map<Diagnosis, std::vector<SampleRef>> train;  // n_max * k per class
  nlohmann::json to_json() const;
};

struct TestSets {
  std::map<Diagnosis, std::vector<SampleRef>> test0, test1, test2;
  nlohmann::json to_json() const;
};

struct DatasetManifest {
  std::uint64_t seed = 1;
  int k = 10;
  std::array<std::size_t, 3> volume_shape{121, 145, 121};
  std::map<std::string, std::array<std::int64_t, 3>> roi_centers;
  std::vector<SubjectRecord> subjects;
  std::map<Diagnosis, std::vector<std::string>> test_subjects;

  static DatasetManifest from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  static DatasetManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  const SubjectRecord& subject(const std::string& id) const;
  bool is_test_subject(const std::string& id) const;
  std::vector<const SubjectRecord*> train_subjects(Diagnosis d) const;
  std::vector<const SubjectRecord*> test_subjects_of(Diagnosis d) const;
  RoiSpec roi(const std::string& name, std::size_t size) const;
  void validate() const;  // disjoint test/train, paths present, centers known
};

// Caches volumes by (subject, modality); loads NIfTI files on miss.
class VolumeStore {
 public:
  VolumeStore() = default;
  explicit VolumeStore(std::filesystem::path base_dir) : base_(std::move(base_dir)) {}

  void put(const std::string& subject_id, Modality m, Tensor grid);
  const Tensor& get(const SubjectRecord& subject, Modality m);
  bool contains(const std::string& subject_id, Modality m) const;

 private:
  std::filesystem::path base_;
  std::map<std::pair<std::string, int>, Tensor> cache_;
};

// Window origin = center - floor(size/2) + shift per axis; the shift moves the
// crop window inside the full volume, so no padding is ever introduced.
Tensor extract_roi(const Tensor& grid, const RoiSpec& spec,
                   std::array<int, 3> shift = {0, 0, 0});

// Separable Gaussian with kernel radius ceil(3*sigma), renormalized weights and
// edge-replicate boundaries; sigma = 0 returns the input bit-identically.
Tensor gaussian_blur3d(const Tensor& roi, double sigma);

// Left ROI unchanged plus the right ROI mirrored along the sagittal (x) axis.
std::pair<Tensor, Tensor> merge_lr(const Tensor& left_roi, const Tensor& right_roi);

// Balancing augmentation: every class is filled up to n_max*k samples with
// random shifts in {-2..2}^3 and blur sigma in [0, 1.2]; originals retained.
AugmentationPlan balance_and_augment(
    const std::map<Diagnosis, std::vector<std::string>>& train_subjects, int k,
    std::uint64_t seed);

// test0 = originals; test1 = 10x per class via shifts only; test2 = 10x per
// class via shifts plus blur.
TestSets build_test_sets(
    const std::map<Diagnosis, std::vector<std::string>>& test_subjects,
    std::uint64_t seed);

struct ValidationSplit {
  std::map<Diagnosis, std::vector<std::size_t>> fit;  // indices into the pool
  std::map<Diagnosis, std::vector<std::size_t>> val;
};

// Fresh stratified 90/10 partition per epoch index; disjoint and exhaustive.
ValidationSplit make_validation_split(
    const std::map<Diagnosis, std::size_t>& pool_sizes, double validation_fraction,
    std::uint64_t seed, long epoch_index);

struct SynthParams {
  std::map<Diagnosis, std::size_t> subjects_per_class;
  std::array<std::size_t, 3> volume_shape{121, 145, 121};
  std::map<std::string, std::array<std::int64_t, 3>> roi_centers;  // empty: defaults
  double separation = 2.0;
  std::uint64_t seed = 1;
  int k = 10;
  std::size_t test_per_class = 12;
};

struct SynthDataset {
  DatasetManifest manifest;
  VolumeStore store;  // volumes in memory, not on disk
};

// Phantom cohort: each volume holds a smooth background plus an ellipsoidal
// blob at each hippocampus center whose radius and intensity shift with the
// class label; both modalities derive from the same anatomy under different
// contrast transforms.
SynthDataset synth_dataset(const SynthParams& params);

// Internal sample store: raw little-endian float32 blob + JSON sidecar.
void write_sample_blob(const std::filesystem::path& prefix, const Tensor& t,
                       const nlohmann::json& provenance);
std::pair<Tensor, nlohmann::json> read_sample_blob(const std::filesystem::path& prefix);

}  // namespace hippofuse
