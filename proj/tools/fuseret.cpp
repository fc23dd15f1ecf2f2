#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "fuseret/checkpoint.hpp"
#include "fuseret/config.hpp"
#include "fuseret/crossval.hpp"
#include "fuseret/gradcheck_suite.hpp"
#include "fuseret/ops.hpp"
#include "fuseret/report.hpp"
#include "fuseret/synth.hpp"

using namespace fuseret;
namespace fs = std::filesystem;

namespace {

void write_json_file(const fs::path& path, const json& doc) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void log_line(const std::string& line) { std::cerr << line << '\n'; }

// Flags given on the command line override the config file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::string> modality;
  std::optional<std::string> preset;
  bool no_se = false;
  bool no_mixup = false;

  void add(CLI::App* app) {
    app->add_option("--seed", seed, "Root seed");
    app->add_option("--epochs", epochs, "Training epochs");
    app->add_option("--modality", modality, "multimodal | cfp_only | octa_only");
    app->add_option("--preset", preset, "tiny | resnet50");
    app->add_flag("--no-se", no_se, "Disable squeeze-and-excitation");
    app->add_flag("--no-mixup", no_mixup, "Disable manifold mixup");
  }

  RunConfig apply(const std::string& config_path) const {
    json j = json::object();
    if (!config_path.empty()) j = to_json(load_run_config(config_path));
    if (preset) {
      j["model"]["preset"] = *preset;
      j["model"].erase("encoder2d");
      j["model"].erase("encoder3d");
    }
    RunConfig c = run_config_from_json(j);
    if (seed) c.train.seed = *seed;
    if (epochs) c.train.epochs = *epochs;
    if (modality) c.model.modality = modality_from_string(*modality);
    if (no_se) c.train.se_enabled = false;
    if (no_mixup) c.train.mixup.enabled = false;
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal SE-ResNet fusion with manifold mixup"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);

  // synth
  SynthConfig synth;
  std::string synth_out;
  auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic multimodal dataset");
  cmd_synth->add_option("--patients", synth.n_patients, "Number of patients")->capture_default_str();
  cmd_synth->add_option("--eyes", synth.eyes_per_patient, "Eyes per patient (1 or 2)")->capture_default_str();
  cmd_synth->add_option("--noise", synth.noise_level, "Gaussian noise level")->capture_default_str();
  cmd_synth->add_option("--image-size", synth.image_size, "Image extent")->capture_default_str();
  cmd_synth->add_option("--seed", synth.seed, "Seed")->capture_default_str();
  cmd_synth->add_option("--out", synth_out, "Output directory")->required();

  // split
  std::string split_manifest, split_out;
  SplitConfig split;
  std::uint64_t split_seed = 0;
  auto* cmd_split = app.add_subcommand("split", "Patient-disjoint k-fold plan with a fixed test set");
  cmd_split->add_option("--manifest", split_manifest, "manifest.json")->required();
  cmd_split->add_option("--k", split.k, "Folds")->capture_default_str();
  cmd_split->add_option("--test-fraction", split.test_fraction, "Fraction of patients held out")->capture_default_str();
  cmd_split->add_option("--seed", split_seed, "Seed")->capture_default_str();
  cmd_split->add_option("--out", split_out, "Output directory (writes folds.json)")->required();

  // train
  std::string train_manifest, train_folds, train_config, train_out;
  Overrides train_over;
  auto* cmd_train = app.add_subcommand("train", "Cross-validated training and evaluation");
  cmd_train->add_option("--manifest", train_manifest, "manifest.json")->required();
  cmd_train->add_option("--folds", train_folds, "folds.json")->required();
  cmd_train->add_option("--config", train_config, "Config file (JSON or key = value)");
  cmd_train->add_option("--out", train_out, "Output directory")->required();
  train_over.add(cmd_train);

  // eval
  std::string eval_ck, eval_manifest, eval_split = "test", eval_folds, eval_out;
  int eval_fold = 0;
  std::optional<int> eval_crops;
  std::optional<std::uint64_t> eval_seed;
  std::optional<Extent3> eval_crop;
  std::optional<Index> eval_image;
  auto* cmd_eval = app.add_subcommand("eval", "Score a checkpoint with crop TTA");
  cmd_eval->add_option("--checkpoint", eval_ck, "Checkpoint directory")->required();
  cmd_eval->add_option("--manifest", eval_manifest, "manifest.json")->required();
  cmd_eval->add_option("--split", eval_split, "test | val | all")->capture_default_str();
  cmd_eval->add_option("--folds", eval_folds, "folds.json (for test/val)");
  cmd_eval->add_option("--fold", eval_fold, "Fold for --split val")->capture_default_str();
  cmd_eval->add_option("--crops", eval_crops, "TTA crops (default: the run's setting)");
  cmd_eval->add_option("--seed", eval_seed, "Crop seed (default: the run's seed)");
  cmd_eval->add_option("--crop-size", eval_crop, "3D crop d h w (default: the run's setting)");
  cmd_eval->add_option("--image-size", eval_image, "Image extent (default: the run's setting)");
  cmd_eval->add_option("--out", eval_out, "Output directory")->required();

  // ablate
  std::string abl_manifest, abl_folds, abl_config, abl_out;
  int abl_threads = 1;
  Overrides abl_over;
  auto* cmd_ablate = app.add_subcommand("ablate", "Train and score all six ablation rows");
  cmd_ablate->add_option("--manifest", abl_manifest, "manifest.json")->required();
  cmd_ablate->add_option("--folds", abl_folds, "folds.json")->required();
  cmd_ablate->add_option("--config", abl_config, "Base config file");
  cmd_ablate->add_option("--out", abl_out, "Output directory")->required();
  cmd_ablate->add_option("--threads", abl_threads, "Rows trained in parallel")->capture_default_str();
  abl_over.add(cmd_ablate);

  // gradcheck
  std::string corrupt;
  auto* cmd_grad = app.add_subcommand("gradcheck", "Finite-difference check of every op");
  cmd_grad->add_option("--corrupt", corrupt, "Scale the gradient of one op (negative control)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cmd_synth) {
      const Manifest m = synthesize_dataset(synth, synth_out);
      write_json_file(fs::path(synth_out) / "config.json",
                      {{"command", "synth"},
                       {"version", version_string()},
                       {"patients", synth.n_patients},
                       {"eyes_per_patient", synth.eyes_per_patient},
                       {"noise_level", synth.noise_level},
                       {"image_size", synth.image_size},
                       {"volume_shape", synth.volume_shape},
                       {"seed", synth.seed}});
      std::cout << "wrote " << m.samples.size() << " eyes to " << synth_out << '\n';
    } else if (*cmd_split) {
      const Manifest m = load_manifest(split_manifest);
      const FoldPlan plan = kfold_split_by_patient(m, split.k, split.test_fraction, split_seed);
      plan.validate(m);
      save_fold_plan(plan, fs::path(split_out) / "folds.json");
      write_json_file(fs::path(split_out) / "config.json",
                      {{"command", "split"},
                       {"version", version_string()},
                       {"manifest", split_manifest},
                       {"k", split.k},
                       {"test_fraction", split.test_fraction},
                       {"seed", split_seed}});
      std::cout << "test eyes: " << plan.test.size() << ", folds: " << plan.k << '\n';
    } else if (*cmd_train) {
      RunConfig cfg = train_over.apply(train_config);
      cfg.manifest = train_manifest;
      cfg.folds = train_folds;
      const Manifest m = load_manifest(train_manifest);
      const FoldPlan plan = load_fold_plan(train_folds);
      plan.validate(m);
      const SampleStore store = load_store(m, cfg.preprocess);
      const auto result = fit_crossval(store, plan, cfg, train_out, "run", log_line);
      std::cout << EvalReport{"val", {result.val}}.to_table()
                << EvalReport{"test", {result.test}}.to_table();
    } else if (*cmd_eval) {
      FusionModel<float> model = load_checkpoint(eval_ck);
      const Manifest m = load_manifest(eval_manifest);
      std::vector<std::string> ids;
      if (eval_split == "all") {
        for (const auto& s : m.samples) ids.push_back(s.eye_id);
      } else {
        if (eval_folds.empty()) throw std::invalid_argument("--folds is required for --split " + eval_split);
        const FoldPlan plan = load_fold_plan(eval_folds);
        if (eval_split == "test") ids = plan.test;
        else if (eval_split == "val") ids = plan.folds.at(static_cast<std::size_t>(eval_fold)).val;
        else throw std::invalid_argument("--split must be test, val or all");
      }
      // Unset options fall back to the config of the run that wrote the checkpoint.
      RunConfig run;
      if (const auto run_cfg = fs::canonical(eval_ck).parent_path() / "config.json";
          fs::exists(run_cfg)) {
        run = load_run_config(run_cfg).resolved();
      }
      if (eval_seed) run.eval.seed = *eval_seed;
      if (eval_crops) run.eval.n_crops = *eval_crops;
      if (eval_crop) run.preprocess.volume_crop = *eval_crop;
      if (eval_image) run.preprocess.image_size = *eval_image;
      const auto samples = load_samples(m, ids, run.preprocess);
      const EvalResult r = evaluate_model(model, samples, run.preprocess.volume_crop, run.eval);
      fs::create_directories(eval_out);
      json doc = to_json(r);
      doc["version"] = version_string();
      doc["config"] = {{"checkpoint", eval_ck},
                       {"split", eval_split},
                       {"fold", eval_fold},
                       {"crops", run.eval.n_crops},
                       {"seed", run.eval.seed},
                       {"volume_crop", run.preprocess.volume_crop},
                       {"image_size", run.preprocess.image_size},
                       {"center_crop", run.preprocess.center_crop}};
      write_json_file(fs::path(eval_out) / "report.json", doc);
      write_json_file(fs::path(eval_out) / "config.json",
                      {{"command", "eval"}, {"version", version_string()}, {"settings", doc["config"]}});
      std::ofstream(fs::path(eval_out) / "predictions.csv") << predictions_csv(r);
      std::cout << EvalReport{eval_split, {summarize("checkpoint", std::vector<EvalResult>{r})}}.to_table()
                << "accuracy " << r.accuracy << '\n';
    } else if (*cmd_ablate) {
      RunConfig cfg = abl_over.apply(abl_config);
      cfg.manifest = abl_manifest;
      cfg.folds = abl_folds;
      const Manifest m = load_manifest(abl_manifest);
      const FoldPlan plan = load_fold_plan(abl_folds);
      plan.validate(m);
      const SampleStore store = load_store(m, cfg.preprocess);
      const auto start = std::chrono::steady_clock::now();
      const auto result = run_ablation(store, plan, cfg, abl_out, abl_threads, log_line);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cout << result.val.to_table() << result.test.to_table();
      std::printf("ablate wall time %.1f s\n", secs);
    } else if (*cmd_grad) {
      if (!corrupt.empty()) set_gradient_corruption(corrupt);
      const auto rows = run_gradcheck_suite();
      bool ok = true;
      for (const auto& r : rows) {
        std::printf("%-24s %12.3e  %s  (%.2fs)\n", r.op.c_str(), r.max_rel_error,
                    r.passed ? "ok" : "FAIL", r.seconds);
        ok = ok && r.passed;
      }
      if (!ok) {
        for (const auto& r : rows)
          if (!r.passed) std::fprintf(stderr, "gradcheck failed: %s\n", r.op.c_str());
        return 1;
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
