#pragma once

#include <filesystem>
#include <string>

#include "fuseret/dataset.hpp"
#include "fuseret/evaluation.hpp"
#include "fuseret/model.hpp"
#include "fuseret/training.hpp"
#include "json.hpp"

namespace fuseret {

using nlohmann::json;

struct SplitConfig {
  int k = 5;
  double test_fraction = 0.2;
};

/// Everything a run needs. Randomness derives from `train.seed` through the
/// named streams "data", "init", "mixup", "crops" and "split".
struct RunConfig {
  std::string preset = "tiny";  // tiny | resnet50
  ModelConfig model;
  TrainConfig train;
  PreprocessConfig preprocess;
  EvalConfig eval;
  SplitConfig split;
  std::string manifest;
  std::string folds;

  /// Model with train.se_enabled applied to both encoders.
  ModelConfig resolved_model() const;
  /// Copy with eval.seed tied to train.seed.
  RunConfig resolved() const;
  void validate() const;
};

json to_json(const EncoderConfig& c);
EncoderConfig encoder_from_json(const json& j, EncoderConfig base);
json to_json(const ModelConfig& c);
ModelConfig model_from_json(const json& j);
json to_json(const TrainConfig& c);
json to_json(const RunConfig& c);

/// Missing keys keep their defaults; "preset" expands before explicit
/// encoder fields are applied.
RunConfig run_config_from_json(const json& j);

/// JSON if the first non-blank character is '{', otherwise `key = value`
/// lines with dotted keys ("train.lr_max = 0.002") and '#' comments. Values
/// parse as JSON when they can and as strings otherwise.
RunConfig load_run_config(const std::filesystem::path& path);
json parse_key_values(const std::string& text);

/// Writes `config.json` (resolved config plus "version") into `dir`.
void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& dir);

std::string version_string();

}  // namespace fuseret
