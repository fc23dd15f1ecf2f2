#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fuseret/preprocess.hpp"
#include "fuseret/tensor.hpp"

namespace fuseret {

/// Grades: 0 Normal, 1 mild NPDR, 2 moderate NPDR, 3 severe NPDR, 4 PDR, 5 PRP.
struct SampleRecord {
  std::string eye_id;
  std::string patient_id;
  int grade = 0;
  // Relative paths resolve against the manifest's directory.
  std::string cfp;
  std::string octa_structure;
  std::string octa_flow;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::vector<SampleRecord> samples;
  std::filesystem::path base_dir;

  /// Unique eye ids, grades in range. Does not touch the files.
  void validate() const;
  const SampleRecord& find(const std::string& eye_id) const;
  std::filesystem::path resolve(const std::string& relative) const;
};

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const Manifest& manifest, const std::filesystem::path& path);

struct Fold {
  std::vector<std::string> train;
  std::vector<std::string> val;
};

struct FoldPlan {
  int k = 5;
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  std::vector<std::string> test;
  std::vector<Fold> folds;

  /// Throws std::logic_error on any partition or patient-leak violation.
  void validate(const Manifest& manifest) const;
};

FoldPlan load_fold_plan(const std::filesystem::path& path);
void save_fold_plan(const FoldPlan& plan, const std::filesystem::path& path);

/// Patients are shuffled and split: round(test_fraction * P) go to the test
/// list, the rest into k validation groups whose sizes differ by at most one.
/// All eyes of a patient travel together.
FoldPlan kfold_split_by_patient(const Manifest& manifest, int k, double test_fraction,
                                std::uint64_t seed);

struct PreprocessConfig {
  Index center_crop = 0;  // 0: the largest centered square
  Index image_size = 64;
  Extent3 volume_crop{28, 32, 28};
};

/// One eye after deterministic preprocessing. The random 3D crop is applied
/// later, per batch.
struct LoadedSample {
  std::string eye_id;
  int grade = 0;
  TensorF image;   // [3, S, S]
  TensorF volume;  // [2, D, H, W]
};

LoadedSample load_sample(const Manifest& manifest, const SampleRecord& record,
                         const PreprocessConfig& cfg);

/// Loads the listed eyes in list order.
std::vector<LoadedSample> load_samples(const Manifest& manifest,
                                       const std::vector<std::string>& eye_ids,
                                       const PreprocessConfig& cfg);

}  // namespace fuseret
