#include "fuseret/crossval.hpp"

#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "fuseret/checkpoint.hpp"

namespace fuseret {

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

std::string epochs_csv(const std::vector<EpochStats>& epochs) {
  std::ostringstream out;
  out << "epoch,mean_loss,lr\n";
  char buf[96];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g\n", e.epoch, e.mean_loss, e.lr.back());
    out << buf;
  }
  return out.str();
}

void write_eval(const EvalResult& r, const std::filesystem::path& dir, const std::string& stem) {
  write_text(dir / (stem + "_report.json"), to_json(r).dump(2) + "\n");
  write_text(dir / (stem + "_predictions.csv"), predictions_csv(r));
}

}  // namespace

std::vector<LoadedSample> SampleStore::select(const std::vector<std::string>& eye_ids) const {
  std::vector<LoadedSample> out;
  out.reserve(eye_ids.size());
  for (const auto& id : eye_ids) {
    auto it = index.find(id);
    if (it == index.end()) throw std::out_of_range("sample store: unknown eye " + id);
    out.push_back(samples[it->second]);
  }
  return out;
}

SampleStore load_store(const Manifest& manifest, const PreprocessConfig& cfg) {
  SampleStore store;
  for (const auto& rec : manifest.samples) {
    store.index[rec.eye_id] = store.samples.size();
    store.samples.push_back(load_sample(manifest, rec, cfg));
  }
  return store;
}

CrossvalResult fit_crossval(const SampleStore& store, const FoldPlan& plan, const RunConfig& cfg,
                            const std::filesystem::path& out_dir, const std::string& row_name,
                            const LogFn& log) {
  cfg.validate();
  const RunConfig run = cfg.resolved();
  const bool write = !out_dir.empty();
  if (write) write_resolved_config(run, out_dir);
  const std::vector<LoadedSample> test = store.select(plan.test);

  CrossvalResult result;
  std::vector<EvalResult> val_results, test_results;
  for (int f = 0; f < plan.k; ++f) {
    try {
      const Fold& fold = plan.folds.at(static_cast<std::size_t>(f));
      const auto train = store.select(fold.train);
      const auto val = store.select(fold.val);
      if (train.empty()) throw std::invalid_argument("empty training set");
      FusionModel<float> model(run.model, run.train.seed);
      TrainState state = make_train_state(run.train, f, static_cast<Index>(train.size()));
      FoldOutcome outcome;
      outcome.fold = f;
      for (int e = 0; e < run.train.epochs; ++e) {
        outcome.epochs.push_back(
            train_epoch(model, train, run.train, run.preprocess.volume_crop, e, state));
        if (log) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "%s fold %d epoch %d loss %.5f lr %.3g", row_name.c_str(),
                        f, e, outcome.epochs.back().mean_loss, outcome.epochs.back().lr.back());
          log(buf);
        }
      }
      if (!val.empty()) {
        outcome.val = evaluate_model(model, val, run.preprocess.volume_crop, run.eval);
        val_results.push_back(outcome.val);
      }
      if (!test.empty()) {
        outcome.test = evaluate_model(model, test, run.preprocess.volume_crop, run.eval);
        test_results.push_back(*outcome.test);
      }
      if (write) {
        const auto dir = out_dir / ("fold" + std::to_string(f));
        save_checkpoint(model, dir);
        write_text(dir / "epochs.csv", epochs_csv(outcome.epochs));
        if (!val.empty()) write_eval(outcome.val, dir, "val");
        if (outcome.test) write_eval(*outcome.test, dir, "test");
      }
      result.folds.push_back(std::move(outcome));
    } catch (const std::exception& e) {
      throw std::runtime_error("fold " + std::to_string(f) + ": " + e.what());
    }
  }
  result.val = summarize(row_name, val_results);
  result.test = summarize(row_name, test_results);
  if (write) {
    EvalReport{"val", {result.val}}.write(out_dir, "report_val");
    EvalReport{"test", {result.test}}.write(out_dir, "report_test");
  }
  return result;
}

const std::vector<AblationRow>& ablation_rows() {
  static const std::vector<AblationRow> rows{
      {"UWF-CFP only", Modality::cfp_only, false, false},
      {"OCTA only", Modality::octa_only, false, false},
      {"multimodal", Modality::multimodal, true, true},
      {"multimodal-SE", Modality::multimodal, false, true},
      {"multimodal-MM", Modality::multimodal, true, false},
      {"multimodal-SE-MM", Modality::multimodal, false, false},
  };
  return rows;
}

RunConfig row_config(const RunConfig& base, const AblationRow& row) {
  RunConfig c = base;
  c.model.modality = row.modality;
  c.train.se_enabled = row.se;
  c.train.mixup.enabled = row.mixup;
  return c;
}

std::string row_slug(const std::string& name) {
  std::string s;
  for (char ch : name) {
    s += std::isalnum(static_cast<unsigned char>(ch))
             ? static_cast<char>(std::tolower(static_cast<unsigned char>(ch)))
             : '_';
  }
  return s;
}

AblationResult run_ablation(const SampleStore& store, const FoldPlan& plan, const RunConfig& base,
                            const std::filesystem::path& out_dir, int threads, const LogFn& log) {
  const auto& rows = ablation_rows();
  const std::size_t n = rows.size();
  std::vector<std::optional<CrossvalResult>> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::vector<double> seconds(n, 0.0);
  std::mutex log_mutex;
  LogFn safe_log;
  if (log) {
    safe_log = [&](const std::string& line) {
      std::lock_guard lock(log_mutex);
      log(line);
    };
  }
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      const auto start = std::chrono::steady_clock::now();
      try {
        const auto dir = out_dir.empty() ? out_dir : out_dir / row_slug(rows[i].name);
        results[i] = fit_crossval(store, plan, row_config(base, rows[i]), dir, rows[i].name,
                                  safe_log);
      } catch (...) {
        errors[i] = std::current_exception();
      }
      seconds[i] =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
  };
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  {
    std::vector<std::jthread> pool;
    for (int t = 1; t < workers; ++t) pool.emplace_back(worker);
    worker();
  }
  AblationResult out{{"val", {}}, {"test", {}}, seconds};
  for (std::size_t i = 0; i < n; ++i) {
    if (errors[i]) {
      try {
        std::rethrow_exception(errors[i]);
      } catch (const std::exception& e) {
        throw std::runtime_error("ablation row '" + rows[i].name + "': " + e.what());
      }
    }
    out.val.rows.push_back(results[i]->val);
    out.test.rows.push_back(results[i]->test);
  }
  if (!out_dir.empty()) {
    write_resolved_config(base, out_dir);
    out.val.write(out_dir, "ablation_val");
    out.test.write(out_dir, "ablation_test");
  }
  return out;
}

}  // namespace fuseret
