#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fuseret/config.hpp"
#include "fuseret/evaluation.hpp"

namespace fuseret {

/// One report row: a model variant scored on one split across folds.
struct RowSummary {
  std::string name;
  std::vector<CutoffAucs> folds;
  CutoffAucs mean;  // over the folds where the cutoff is defined
  CutoffAucs std;   // sample standard deviation, 0 for a single fold
  /// AUC of the per-eye scores averaged over every fold that scored the eye.
  /// For the fixed test split this is the fold ensemble; for validation
  /// splits each eye is scored once, giving the out-of-fold AUC.
  CutoffAucs pooled;

  /// Mean of `mean` over its defined cutoffs; empty if none is defined.
  std::optional<double> mean_auc() const;
};

RowSummary summarize(const std::string& name, std::span<const EvalResult> per_fold);

/// The six-row ablation grid (or any subset of it) for one split.
struct EvalReport {
  std::string split;
  std::vector<RowSummary> rows;

  json to_json() const;
  std::string to_csv() const;
  std::string to_table() const;
  /// `<stem>.json` and `<stem>.csv` in `dir`.
  void write(const std::filesystem::path& dir, const std::string& stem) const;
};

json to_json(const EvalResult& r);
/// Per-eye predictions and scores, one line per eye.
std::string predictions_csv(const EvalResult& r);

}  // namespace fuseret
