#pragma once

#include <filesystem>

#include "fuseret/dataset.hpp"
#include "fuseret/random.hpp"

namespace fuseret {

/// Synthetic multimodal eyes with modality-specific grade signals.
///
/// Image: bright peripheral blobs, 3 per level; level 0 for grades 0-2 and
/// 1, 2, 3 for grades 3, 4, 5. Grade 5 also carries a ring of dark
/// scar-grid dots.
/// Flow volume: a dark central dropout column of radius proportional to the
/// level; level 1, 2 for grades 1, 2 and level 0 otherwise.
///
/// Each modality alone therefore confuses a group of grades, while the
/// pair identifies every grade.
struct SynthConfig {
  int n_patients = 60;
  int eyes_per_patient = 2;  // 1 or 2
  Index image_size = 64;
  Extent3 volume_shape{32, 32, 32};
  double noise_level = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

int blob_level(int grade);
int dropout_level(int grade);

struct SynthEye {
  TensorF image;      // [3, S, S]
  TensorF structure;  // [D, H, W]
  TensorF flow;       // [D, H, W]
};

SynthEye synthesize_eye(int grade, const SynthConfig& cfg, Rng& rng);

/// Writes tensor files under `out_dir` plus `out_dir/manifest.json`. Grades
/// cycle through 0-5 over the eyes and are then shuffled, so every grade
/// appears equally often when the eye count is a multiple of 6.
Manifest synthesize_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace fuseret
