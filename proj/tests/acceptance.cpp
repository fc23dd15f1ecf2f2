// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <thread>

#include "CLI11.hpp"
#include "fuseret/crossval.hpp"
#include "fuseret/gradcheck_suite.hpp"
#include "fuseret/mixup.hpp"
#include "fuseret/ops.hpp"
#include "fuseret/optim.hpp"
#include "fuseret/synth.hpp"
#include "oracles.hpp"

using namespace fuseret;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetSeconds = 300.0;
constexpr double kConvTol = 1e-10;
constexpr double kAdamTol = 1e-10;
constexpr double kMixTol = 1e-9;
constexpr double kBetaMeanTol = 0.01;
constexpr double kBetaVarTol = 0.01;
constexpr double kBetaVar = 0.1786;
constexpr double kTrendMargin = 0.03;
constexpr double kAblateBudgetSeconds = 30.0 * 60.0;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double max_abs_diff(const TensorD& a, const TensorD& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  double worst = 0.0;
  for (Index i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

Outcome gradient_integrity() {
  const auto start = Clock::now();
  const auto rows = run_gradcheck_suite(kGradTol);
  const double secs = seconds_since(start);
  Outcome o;
  double worst = 0.0;
  std::string failed;
  std::set<std::string> seen;
  for (const auto& r : rows) {
    seen.insert(r.op);
    worst = std::max(worst, r.max_rel_error);
    if (!r.passed) failed += " " + r.op;
  }
  for (const char* op : {"conv2d", "conv3d", "batch_norm", "linear", "se_gate", "bottleneck_block_2d",
                         "bottleneck_block_3d", "softmax_cross_entropy", "fused_model"}) {
    if (!seen.count(op)) failed += std::string(" missing:") + op;
  }
  o.pass = failed.empty() && secs < kGradBudgetSeconds;
  o.detail = fmt("%zu ops, worst rel error %.2e (< %.0e), %.1f s (< %.0f s)%s", rows.size(), worst,
                 kGradTol, secs, kGradBudgetSeconds, failed.empty() ? "" : (" failed:" + failed).c_str());
  return o;
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(101);
  int auc_mismatch = 0;
  std::uniform_int_distribution<int> size(2, 50), levels(1, 10), coin(0, 1);
  for (int t = 0; t < 1000; ++t) {
    const int n = size(rng);
    std::uniform_int_distribution<int> level(0, levels(rng));
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> l(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) s[i] = level(rng) / 7.0, l[i] = coin(rng);
    l[0] = 0, l[1] = 1;
    auc_mismatch += roc_auc(s, l) != oracle::pair_count_auc(s, l);
  }

  double conv_err = 0.0;
  std::uniform_int_distribution<int> small(1, 3), ext(3, 7), kern(1, 3), stride(1, 2), pad(0, 1);
  for (int t = 0; t < 100; ++t) {
    const Index N = small(rng), C = small(rng), K = small(rng), k = kern(rng);
    const int st = stride(rng), pd = pad(rng);
    const TensorD b = oracle::random_tensor({K}, rng);
    if (t % 2 == 0) {
      const auto x = oracle::random_tensor({N, C, ext(rng), ext(rng)}, rng);
      const auto w = oracle::random_tensor({K, C, k, k}, rng);
      conv_err = std::max(conv_err, max_abs_diff(conv2d(x, w, b, st, pd), oracle::conv2d(x, w, b, st, pd)));
    } else {
      const auto x = oracle::random_tensor({N, C, ext(rng), ext(rng), ext(rng)}, rng);
      const auto w = oracle::random_tensor({K, C, k, k, k}, rng);
      conv_err = std::max(conv_err, max_abs_diff(conv3d(x, w, b, st, pd), oracle::conv3d(x, w, b, st, pd)));
    }
  }

  double adam_err = 0.0;
  for (double wd : {1e-4, 0.0, 0.05}) {
    AdamWConfig cfg;
    cfg.weight_decay = wd;
    oracle::ReferenceAdamW ref{1e-2, cfg.beta1, cfg.beta2, cfg.eps, wd};
    OptimizerState state;
    std::vector<TensorD> p{TensorD({1}, -0.7)};
    p[0].set_requires_grad(true);
    double theta = -0.7;
    for (int t = 0; t < 100; ++t) {
      p[0].zero_grad();
      // f = theta^4 / 4 + theta^2
      sum(add(scale(mul(mul(p[0], p[0]), mul(p[0], p[0])), 0.25), mul(p[0], p[0]))).backward();
      theta = ref.step(theta, theta * theta * theta + 2.0 * theta);
      adamw_step<double>(p, state, 1e-2, cfg);
      adam_err = std::max(adam_err, std::abs(p[0][0] - theta));
    }
  }
  Outcome o;
  o.pass = auc_mismatch == 0 && conv_err < kConvTol && adam_err < kAdamTol;
  o.detail = fmt("AUC mismatches %d/1000, conv max diff %.2e (< %.0e), AdamW max diff %.2e (< %.0e)",
                 auc_mismatch, conv_err, kConvTol, adam_err, kAdamTol);
  return o;
}

Outcome mixup_identities() {
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> grade(0, 5), rows(1, 8);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double mix_err = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const Index n = rows(rng);
    auto logits = oracle::random_tensor({n, 6}, rng, -5.0, 5.0);
    std::vector<int> gi, gj;
    for (Index i = 0; i < n; ++i) gi.push_back(grade(rng)), gj.push_back(grade(rng));
    const auto yi = one_hot<double>(gi, 6), yj = one_hot<double>(gj, 6);
    const double lam = u(rng);
    // Independent label-mix value from the explicit-softmax oracle.
    TensorD soft({n, 6});
    for (Index i = 0; i < soft.numel(); ++i) soft[i] = lam * yi[i] + (1.0 - lam) * yj[i];
    mix_err = std::max(mix_err, std::abs(mixed_loss(logits, yi, yj, lam).item() -
                                         oracle::naive_cross_entropy(logits, soft)));
  }

  // One optimizer step with lambda pinned to 1 against mixup switched off.
  SynthConfig sc;
  sc.image_size = 32;
  sc.volume_shape = {16, 16, 16};
  Rng data(3);
  std::vector<LoadedSample> samples;
  for (int i = 0; i < 4; ++i) {
    auto eye = synthesize_eye(i + 1, sc, data);
    samples.push_back({"e" + std::to_string(i), i + 1, eye.image, stack_structure_flow(eye.structure, eye.flow)});
  }
  TrainConfig off;
  off.mixup.enabled = false;
  TrainConfig one = off;
  one.mixup.enabled = true;
  one.mixup.fixed_lambda = 1.0;
  FusionModel<float> ma(ModelConfig{}, 6), mb(ModelConfig{}, 6);
  TrainState sa = make_train_state(off, 0, 4), sb = make_train_state(one, 0, 4);
  Rng crops(9);
  const std::vector<Index> idx{0, 1, 2, 3};
  const Batch batch = make_batch(samples, idx, {16, 16, 16}, Modality::multimodal, crops);
  const auto ra = train_step(ma, batch, off, sa), rb = train_step(mb, batch, one, sb);
  bool bitwise = ra.loss == rb.loss;
  auto pa = ma.parameters(), pb = mb.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) {
    bitwise = bitwise && std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(),
                                    pb[i].tensor.data().begin());
  }

  MixupConfig beta;
  Rng draws(42);
  double mean = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double l = sample_lambda(beta, draws);
    mean += l, sq += l * l;
  }
  mean /= n;
  const double var = sq / n - mean * mean;

  Outcome o;
  o.pass = mix_err < kMixTol && bitwise && std::abs(mean - 0.5) < kBetaMeanTol &&
           std::abs(var - kBetaVar) < kBetaVarTol;
  o.detail = fmt("loss-mix vs label-mix max diff %.2e (< %.0e), lambda=1 step %s, Beta mean %.4f var %.4f",
                 mix_err, kMixTol, bitwise ? "bitwise identical" : "DIFFERS", mean, var);
  return o;
}

Outcome split_hygiene() {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> patients(5, 80), kk(2, 8), eyes(1, 2), grade(0, 5);
  std::uniform_real_distribution<double> frac(0.0, 0.4);
  int violations = 0, plans = 0;
  while (plans < 1000) {
    Manifest m;
    const int P = patients(rng);
    for (int p = 0; p < P; ++p) {
      const std::string pid = fmt("P%03d", p);
      for (int e = 0, ne = eyes(rng); e < ne; ++e)
        m.samples.push_back({pid + (e ? "_OS" : "_OD"), pid, grade(rng), "", "", ""});
    }
    const int k = kk(rng);
    const double f = frac(rng);
    FoldPlan plan;
    try {
      plan = kfold_split_by_patient(m, k, f, rng());
    } catch (const std::invalid_argument&) {
      continue;  // too few patients for k folds
    }
    ++plans;
    std::map<std::string, std::string> patient_of;
    for (const auto& s : m.samples) patient_of[s.eye_id] = s.patient_id;
    auto patients_in = [&](const std::vector<std::string>& ids) {
      std::set<std::string> out;
      for (const auto& id : ids) out.insert(patient_of.at(id));
      return out;
    };
    auto disjoint = [](const std::set<std::string>& a, const std::set<std::string>& b) {
      return std::none_of(a.begin(), a.end(), [&](const auto& x) { return b.count(x); });
    };
    const auto test = patients_in(plan.test);
    std::multiset<std::string> val_union;
    bool ok = static_cast<int>(plan.folds.size()) == k;
    for (const auto& fold : plan.folds) {
      const auto tr = patients_in(fold.train), va = patients_in(fold.val);
      ok = ok && disjoint(tr, va) && disjoint(tr, test) && disjoint(va, test);
      ok = ok && fold.train.size() + fold.val.size() + plan.test.size() == m.samples.size();
      for (const auto& e : fold.val) val_union.insert(e);
    }
    for (const auto& s : m.samples) {
      const bool in_test = std::count(plan.test.begin(), plan.test.end(), s.eye_id) == 1;
      ok = ok && (in_test ? val_union.count(s.eye_id) == 0 : val_union.count(s.eye_id) == 1);
    }
    violations += !ok;
  }
  return {violations == 0, fmt("%d plans, %d violations", plans, violations)};
}

Outcome tta_contract() {
  long cases = 0, failures = 0;
  for (int n = 1; n <= 4; ++n) {
    std::vector<int> t(static_cast<std::size_t>(n), 0);
    while (true) {
      ++cases;
      const int base = severest(t);
      failures += base != *std::max_element(t.begin(), t.end());
      auto perm = t;
      std::sort(perm.begin(), perm.end());
      do failures += severest(perm) != base;
      while (std::next_permutation(perm.begin(), perm.end()));
      for (std::size_t i = 0; i < t.size(); ++i) {
        for (int up = t[i] + 1; up < 6; ++up) {
          auto raised = t;
          raised[i] = up;
          failures += severest(raised) < base;
        }
      }
      if (n < 4) {
        for (int extra = 0; extra < 6; ++extra) {
          auto more = t;
          more.push_back(extra);
          failures += severest(more) < base;
        }
      }
      std::size_t pos = 0;
      while (pos < t.size() && ++t[pos] == 6) t[pos++] = 0;
      if (pos == t.size()) break;
    }
  }
  return {failures == 0, fmt("%ld tuples (N = 1..4), %ld failures", cases, failures)};
}

struct TrendSetup {
  fs::path work;
  int threads;
};

Outcome trend_reproduction(const TrendSetup& setup) {
  const fs::path dir = setup.work / "trend";
  fs::remove_all(dir);
  SynthConfig sc;
  sc.n_patients = 60;
  sc.eyes_per_patient = 2;
  sc.seed = 1;
  const Manifest m = synthesize_dataset(sc, dir / "data");
  const FoldPlan plan = kfold_split_by_patient(m, 5, 0.2, 1);
  RunConfig cfg;
  cfg.train.seed = 1;
  cfg.train.epochs = 20;
  const auto start = Clock::now();
  const SampleStore store = load_store(m, cfg.preprocess);
  const auto abl = run_ablation(store, plan, cfg, dir / "ablate", setup.threads,
                                [](const std::string& line) {
                                  if (line.find("epoch 19 ") != std::string::npos) std::fprintf(stderr, "%s\n", line.c_str());
                                });
  const double secs = seconds_since(start);
  std::fputs(abl.test.to_table().c_str(), stderr);

  auto mild = [&](int row) { return abl.test.rows[static_cast<std::size_t>(row)].mean[0]; };
  const auto mm = mild(2), cfp = mild(0), octa = mild(1);
  const auto full = abl.test.rows[2].mean_auc(), bare = abl.test.rows[5].mean_auc();
  Outcome o;
  o.pass = mm && cfp && octa && full && bare && *mm - *cfp >= kTrendMargin &&
           *mm - *octa >= kTrendMargin && *full > *bare && secs < kAblateBudgetSeconds;
  auto v = [](const std::optional<double>& x) { return x ? *x : std::nan(""); };
  o.detail = fmt("test >=mild AUC multimodal %.4f vs CFP %.4f / OCTA %.4f (margin >= %.2f); mean AUC "
                 "full %.4f vs -SE-MM %.4f; ablate %.0f s on %d thread(s) (< %.0f s)",
                 v(mm), v(cfp), v(octa), kTrendMargin, v(full), v(bare), secs, setup.threads,
                 kAblateBudgetSeconds);
  return o;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(in), {}};
  }
  return out;
}

Outcome determinism(const fs::path& work) {
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  const std::string cli = FUSERET_CLI;
  auto sh = [&](const std::string& args) {
    const std::string cmd = "\"" + cli + "\" " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  const std::string d = dir.string();
  bool ok = sh("synth --patients 12 --seed 2 --out " + d + "/data") &&
            sh("split --manifest " + d + "/data/manifest.json --k 3 --seed 2 --out " + d + "/split");
  for (const char* run : {"a", "b"}) {
    ok = ok && sh("train --manifest " + d + "/data/manifest.json --folds " + d +
                  "/split/folds.json --epochs 2 --seed 7 --out " + d + "/" + run);
  }
  if (!ok) return {false, "a CLI step failed"};
  const auto a = tree_bytes(dir / "a"), b = tree_bytes(dir / "b");
  int differ = 0, checkpoints = 0, reports = 0;
  for (const auto& [name, bytes] : a) {
    differ += !b.count(name) || b.at(name) != bytes;
    checkpoints += name.ends_with("checkpoint.bin");
    reports += name.find("report") != std::string::npos;
  }
  differ += a.size() != b.size();
  return {differ == 0 && checkpoints == 3 && reports > 0,
          fmt("%zu files compared (%d checkpoints, %d reports), %d differ", a.size(), checkpoints,
              reports, differ)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  fs::path work = fs::temp_directory_path() / "fuseret_acceptance";
  int threads = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  app.add_option("--work", work, "Scratch directory")->capture_default_str();
  app.add_option("--threads", threads, "Ablation rows trained in parallel")->capture_default_str();
  std::vector<std::string> only;
  app.add_option("--only", only, "Run just the named criteria");
  CLI11_PARSE(app, argc, argv);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient integrity", gradient_integrity},
      {"oracle equivalence", oracle_equivalence},
      {"mixup identities", mixup_identities},
      {"split hygiene", split_hygiene},
      {"TTA contract", tta_contract},
      {"trend reproduction", [&] { return trend_reproduction({work, threads}); }},
      {"determinism", [&] { return determinism(work); }},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
                seconds_since(start));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
