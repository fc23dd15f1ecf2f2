#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "fuseret/config.hpp"
#include "fuseret/report.hpp"
#include "fuseret/training.hpp"

namespace fuseret {

/// Preprocessed samples keyed by eye id.
struct SampleStore {
  std::vector<LoadedSample> samples;
  std::unordered_map<std::string, std::size_t> index;

  std::vector<LoadedSample> select(const std::vector<std::string>& eye_ids) const;
};

SampleStore load_store(const Manifest& manifest, const PreprocessConfig& cfg);

using LogFn = std::function<void(const std::string&)>;

struct FoldOutcome {
  int fold = 0;
  std::vector<EpochStats> epochs;
  EvalResult val;
  std::optional<EvalResult> test;  // empty when the plan has no test eyes
};

struct CrossvalResult {
  std::vector<FoldOutcome> folds;
  RowSummary val;
  RowSummary test;
};

/// Trains one model per fold from the same seed-derived initialization and
/// scores it on the fold's validation eyes and the fixed test eyes. With a
/// non-empty `out_dir`, writes per fold `fold<k>/` (checkpoint, epochs.csv,
/// val/test reports and predictions) and aggregate reports.
/// Failures are rethrown prefixed with the fold id.
CrossvalResult fit_crossval(const SampleStore& store, const FoldPlan& plan, const RunConfig& cfg,
                            const std::filesystem::path& out_dir, const std::string& row_name,
                            const LogFn& log = {});

struct AblationRow {
  std::string name;
  Modality modality;
  bool se;
  bool mixup;
};

/// The six ablation rows: image only, volume only (both without SE and
/// mixup), then multimodal with every SE/mixup combination.
const std::vector<AblationRow>& ablation_rows();

RunConfig row_config(const RunConfig& base, const AblationRow& row);

struct AblationResult {
  EvalReport val;
  EvalReport test;
  std::vector<double> row_seconds;
};

/// Rows run on up to `threads` workers; each row is deterministic on its own
/// and results are assembled in row order. Rows write to `out_dir/<slug>/`.
AblationResult run_ablation(const SampleStore& store, const FoldPlan& plan, const RunConfig& base,
                            const std::filesystem::path& out_dir, int threads,
                            const LogFn& log = {});

std::string row_slug(const std::string& name);

}  // namespace fuseret
