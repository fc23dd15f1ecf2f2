#pragma once

#include <array>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fuseret/dataset.hpp"
#include "fuseret/model.hpp"

namespace fuseret {

inline constexpr int kNumCutoffs = 4;
inline constexpr std::array<const char*, kNumCutoffs> kCutoffNames{">=mild", ">=moderate",
                                                                   ">=severe", ">=PDR"};

using CutoffLabels = std::array<int, kNumCutoffs>;
using CutoffScores = std::array<double, kNumCutoffs>;

/// Label k (k = 1..4) is 1 iff grade >= k; grade 5 is positive everywhere.
CutoffLabels cutoff_binarize(int grade);

/// Tail mass: score_k = sum of probs over the classes positive at cutoff k.
CutoffScores cutoff_score(std::span<const double> probs);

class UndefinedAucError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Mann-Whitney AUC, (concordant + 0.5 * tied) / (P * N), by a sorted sweep
/// over tie groups. Throws UndefinedAucError without both classes.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Severest prediction: the highest grade among the crops.
int severest(std::span<const int> crop_grades);

/// Elementwise max of the per-crop cutoff scores.
CutoffScores max_scores(std::span<const CutoffScores> crop_scores);

struct TtaPrediction {
  int grade = 0;
  std::vector<int> crop_grades;
  std::vector<std::vector<double>> crop_probs;
  CutoffScores scores{};
};

/// N random 3D crops, each paired with the full image; eval-mode forward.
TtaPrediction predict_tta(FusionModel<float>& model, const LoadedSample& sample, int n_crops,
                          Extent3 crop, Rng& rng);

using CutoffAucs = std::array<std::optional<double>, kNumCutoffs>;

/// Per-cutoff AUCs; a cutoff lacking positives or negatives stays empty.
CutoffAucs cutoff_aucs(std::span<const CutoffScores> scores, std::span<const int> grades);

struct EvalResult {
  std::vector<std::string> eye_ids;
  std::vector<int> grades;
  std::vector<int> predicted;
  std::vector<CutoffScores> scores;
  CutoffAucs auc;
  std::array<std::array<int, kNumGrades>, kNumGrades> confusion{};  // [true][predicted]
  double accuracy = 0.0;
};

struct EvalConfig {
  int n_crops = 10;
  std::uint64_t seed = 0;
};

/// Crop offsets for an eye come from a stream keyed by (seed, eye_id), so an
/// eye scores the same whatever subset it is evaluated in.
EvalResult evaluate_model(FusionModel<float>& model, std::span<const LoadedSample> samples,
                          Extent3 crop, const EvalConfig& cfg);

}  // namespace fuseret
