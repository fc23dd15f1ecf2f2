#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "fuseret/dataset.hpp"
#include "fuseret/preprocess.hpp"
#include "fuseret/synth.hpp"
#include "oracles.hpp"

using namespace fuseret;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("fuseret_test_data_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Bilinear resize written as a tent-filter sum over every source pixel.
TensorD tent_resize(const TensorD& img, Index out) {
  const Index C = img.dim(0), H = img.dim(1), W = img.dim(2);
  TensorD r({C, out, out});
  for (Index c = 0; c < C; ++c)
    for (Index i = 0; i < out; ++i)
      for (Index j = 0; j < out; ++j) {
        const double sy = out == 1 ? 0.0 : double(i) * double(H - 1) / double(out - 1);
        const double sx = out == 1 ? 0.0 : double(j) * double(W - 1) / double(out - 1);
        double acc = 0.0;
        for (Index y = 0; y < H; ++y)
          for (Index x = 0; x < W; ++x)
            acc += std::max(0.0, 1.0 - std::abs(sy - y)) * std::max(0.0, 1.0 - std::abs(sx - x)) *
                   img.at({c, y, x});
        r.at({c, i, j}) = acc;
      }
  return r;
}

Manifest synthetic_manifest(int patients, std::mt19937_64& rng) {
  Manifest m;
  std::uniform_int_distribution<int> eyes(1, 2), grade(0, 5);
  for (int p = 0; p < patients; ++p) {
    const int n = eyes(rng);
    for (int e = 0; e < n; ++e) {
      const std::string pid = "p" + std::to_string(p);
      m.samples.push_back({pid + (e ? "_OS" : "_OD"), pid, grade(rng), "", "", ""});
    }
  }
  return m;
}

std::vector<char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Hand-coded template features: total image brightness (blob count minus
// scar dots) and total flow (dropout area).
std::array<double, 2> oracle_features(const SynthEye& eye) {
  double image = 0.0, flow = 0.0;
  for (float v : eye.image.data()) image += v;
  for (float v : eye.flow.data()) flow += v;
  return {image, flow};
}

struct Labeled {
  std::vector<std::array<double, 2>> x;
  std::vector<int> y;
};

Labeled draw_eyes(int n, double noise, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.noise_level = noise;
  Rng rng(seed);
  Labeled out;
  for (int i = 0; i < n; ++i) {
    const int g = i % 6;
    out.x.push_back(oracle_features(synthesize_eye(g, cfg, rng)));
    out.y.push_back(g);
  }
  return out;
}

// Nearest class centroid on the chosen feature columns, standardized.
double centroid_accuracy(const Labeled& train, const Labeled& test, std::vector<int> cols) {
  std::array<double, 2> mean{}, sd{};
  for (int c : cols) {
    for (const auto& x : train.x) mean[c] += x[c];
    mean[c] /= double(train.x.size());
    for (const auto& x : train.x) sd[c] += (x[c] - mean[c]) * (x[c] - mean[c]);
    sd[c] = std::sqrt(sd[c] / double(train.x.size()));
  }
  std::array<std::array<double, 2>, 6> centroid{};
  std::array<int, 6> count{};
  for (std::size_t i = 0; i < train.x.size(); ++i) {
    for (int c : cols) centroid[train.y[i]][c] += (train.x[i][c] - mean[c]) / sd[c];
    ++count[train.y[i]];
  }
  for (int g = 0; g < 6; ++g)
    for (int c : cols) centroid[g][c] /= count[g];
  int correct = 0;
  for (std::size_t i = 0; i < test.x.size(); ++i) {
    int best = 0;
    double best_d = 1e300;
    for (int g = 0; g < 6; ++g) {
      double d = 0.0;
      for (int c : cols) {
        const double v = (test.x[i][c] - mean[c]) / sd[c] - centroid[g][c];
        d += v * v;
      }
      if (d < best_d) best_d = d, best = g;
    }
    correct += best == test.y[i];
  }
  return double(correct) / double(test.x.size());
}

// Multinomial logistic regression on one standardized feature, full-batch
// gradient descent.
double probe_accuracy(const Labeled& train, const Labeled& test, int col) {
  double mean = 0.0, sd = 0.0;
  for (const auto& x : train.x) mean += x[col];
  mean /= double(train.x.size());
  for (const auto& x : train.x) sd += (x[col] - mean) * (x[col] - mean);
  sd = std::sqrt(sd / double(train.x.size()));
  std::array<double, 6> w{}, b{};
  const double n = double(train.x.size());
  for (int it = 0; it < 3000; ++it) {
    std::array<double, 6> gw{}, gb{};
    for (std::size_t i = 0; i < train.x.size(); ++i) {
      const double f = (train.x[i][col] - mean) / sd;
      std::array<double, 6> p{};
      double z = 0.0, top = -1e300;
      for (int g = 0; g < 6; ++g) top = std::max(top, w[g] * f + b[g]);
      for (int g = 0; g < 6; ++g) z += p[g] = std::exp(w[g] * f + b[g] - top);
      for (int g = 0; g < 6; ++g) {
        const double e = p[g] / z - (train.y[i] == g);
        gw[g] += e * f / n;
        gb[g] += e / n;
      }
    }
    for (int g = 0; g < 6; ++g) w[g] -= 2.0 * gw[g], b[g] -= 2.0 * gb[g];
  }
  int correct = 0;
  for (std::size_t i = 0; i < test.x.size(); ++i) {
    const double f = (test.x[i][col] - mean) / sd;
    int best = 0;
    for (int g = 1; g < 6; ++g)
      if (w[g] * f + b[g] > w[best] * f + b[best]) best = g;
    correct += best == test.y[i];
  }
  return double(correct) / double(test.x.size());
}

}  // namespace

TEST_CASE("center_crop2d") {
  TensorD img({1, 4, 4});
  for (Index i = 0; i < 16; ++i) img[i] = double(i);
  auto c = center_crop2d(img, 2);
  CHECK(c.shape() == Shape{1, 2, 2});
  CHECK(c.at({0, 0, 0}) == 5.0);
  CHECK(c.at({0, 0, 1}) == 6.0);
  CHECK(c.at({0, 1, 0}) == 9.0);
  CHECK(c.at({0, 1, 1}) == 10.0);
  auto same = center_crop2d(img, 4);
  for (Index i = 0; i < 16; ++i) CHECK(same[i] == img[i]);
  CHECK_THROWS_AS(center_crop2d(img, 5), DimensionError);

  // 3900 -> 3584 starts at (158, 158).
  TensorF big({1, 3900, 3900});
  for (Index i = 0; i < big.numel(); ++i) big[i] = float(i % 3900 + 10000 * (i / 3900 % 1000));
  auto cropped = center_crop2d(big, 3584);
  CHECK(cropped.shape() == Shape{1, 3584, 3584});
  CHECK(cropped[0] == big.at({0, 158, 158}));
}

TEST_CASE("resize2d") {
  TensorD flat({2, 5, 7}, 0.25);
  auto r = resize2d(flat, 9);
  CHECK(r.shape() == Shape{2, 9, 9});
  for (double v : r.data()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

  TensorD blocks({1, 4, 4});
  const double vals[2][2] = {{1, 2}, {3, 4}};
  for (Index y = 0; y < 4; ++y)
    for (Index x = 0; x < 4; ++x) blocks.at({0, y, x}) = vals[y / 2][x / 2];
  auto half = resize2d(blocks, 2);
  CHECK(half.at({0, 0, 0}) == 1.0);
  CHECK(half.at({0, 0, 1}) == 2.0);
  CHECK(half.at({0, 1, 0}) == 3.0);
  CHECK(half.at({0, 1, 1}) == 4.0);

  std::mt19937_64 rng(1);
  for (Index out : {1, 3, 5, 8, 13}) {
    auto img = oracle::random_tensor({1, 8, 8}, rng);
    auto got = resize2d(img, out);
    auto want = tent_resize(img, out);
    for (Index i = 0; i < got.numel(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-6);
  }
  CHECK_THROWS_AS(resize2d(flat, 0), std::invalid_argument);
}

TEST_CASE("stack_structure_flow") {
  std::mt19937_64 rng(2);
  auto s = oracle::random_tensor({3, 4, 5}, rng);
  auto f = oracle::random_tensor({3, 4, 5}, rng);
  auto v = stack_structure_flow(s, f);
  CHECK(v.shape() == Shape{2, 3, 4, 5});
  for (Index i = 0; i < s.numel(); ++i) {
    CHECK(v[i] == s[i]);
    CHECK(v[s.numel() + i] == f[i]);
  }
  auto other = oracle::random_tensor({3, 5, 4}, rng);
  CHECK_THROWS_AS(stack_structure_flow(s, other), DimensionError);
}

TEST_CASE("random_crop3d") {
  std::mt19937_64 gen(3);
  auto vol = oracle::random_tensor({2, 6, 5, 7}, gen);
  Rng rng(11);
  auto full = random_crop3d(vol, {6, 5, 7}, rng);
  for (Index i = 0; i < vol.numel(); ++i) CHECK(full[i] == vol[i]);

  auto part = crop3d(vol, {2, 3, 4}, {1, 2, 3});
  CHECK(part.shape() == Shape{2, 2, 3, 4});
  CHECK(part.at({1, 1, 2, 3}) == vol.at({1, 2, 4, 6}));

  // Full-resolution geometry: 2x500x224x500 -> 224^3.
  const Shape big{2, 500, 224, 500};
  Index lo0 = 1000, hi0 = -1, lo2 = 1000, hi2 = -1;
  for (int t = 0; t < 5000; ++t) {
    auto off = draw_crop_offsets(big, {224, 224, 224}, rng);
    REQUIRE(off[1] == 0);
    lo0 = std::min(lo0, off[0]), hi0 = std::max(hi0, off[0]);
    lo2 = std::min(lo2, off[2]), hi2 = std::max(hi2, off[2]);
  }
  CHECK(lo0 >= 0);
  CHECK(hi0 <= 276);
  CHECK(lo2 >= 0);
  CHECK(hi2 <= 276);
  CHECK(hi0 > 250);
  CHECK(lo0 < 25);

  Rng a(5), b(5);
  auto ca = random_crop3d(vol, {3, 3, 3}, a);
  auto cb = random_crop3d(vol, {3, 3, 3}, b);
  for (Index i = 0; i < ca.numel(); ++i) CHECK(ca[i] == cb[i]);
  CHECK_THROWS_AS(random_crop3d(vol, {7, 5, 7}, a), DimensionError);
}

TEST_CASE("kfold_split_by_patient examples") {
  Manifest m;
  for (int p = 0; p < 50; ++p) {
    const std::string pid = "p" + std::to_string(p);
    m.samples.push_back({pid + "_OD", pid, p % 6, "", "", ""});
    if (p % 3 == 0) m.samples.push_back({pid + "_OS", pid, (p + 1) % 6, "", "", ""});
  }
  auto plan = kfold_split_by_patient(m, 5, 0.2, 7);
  plan.validate(m);
  std::set<std::string> test_patients;
  for (const auto& e : plan.test) test_patients.insert(m.find(e).patient_id);
  CHECK(test_patients.size() == 10);
  for (const auto& fold : plan.folds) {
    std::set<std::string> val_patients;
    for (const auto& e : fold.val) val_patients.insert(m.find(e).patient_id);
    CHECK(val_patients.size() == 8);
  }
  auto again = kfold_split_by_patient(m, 5, 0.2, 7);
  CHECK(again.test == plan.test);
  for (int f = 0; f < 5; ++f) CHECK(again.folds[f].val == plan.folds[f].val);

  Manifest few;
  for (int p = 0; p < 4; ++p) few.samples.push_back({"e" + std::to_string(p), "p" + std::to_string(p), 0, "", "", ""});
  CHECK_THROWS_AS(kfold_split_by_patient(few, 5, 0.0, 1), std::invalid_argument);
}

TEST_CASE("fold plan validation rejects leaks") {
  std::mt19937_64 rng(8);
  auto m = synthetic_manifest(30, rng);
  auto plan = kfold_split_by_patient(m, 5, 0.2, 3);
  plan.validate(m);

  // Move one val eye into train while its fellow eye stays in val.
  for (const auto& s : m.samples) {
    if (s.eye_id.ends_with("_OS")) {
      for (auto& fold : plan.folds) {
        auto it = std::find(fold.val.begin(), fold.val.end(), s.eye_id);
        if (it == fold.val.end()) continue;
        fold.val.erase(it);
        fold.train.push_back(s.eye_id);
        CHECK_THROWS_AS(plan.validate(m), std::logic_error);
        return;
      }
    }
  }
  FAIL("no two-eye validation patient found");
}

TEST_CASE("randomized fold plans keep patients disjoint") {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> patients(10, 60), k(2, 6);
  std::uniform_real_distribution<double> frac(0.0, 0.4);
  for (int trial = 0; trial < 200; ++trial) {
    auto m = synthetic_manifest(patients(rng), rng);
    const int kk = k(rng);
    auto plan = kfold_split_by_patient(m, kk, frac(rng), rng());
    REQUIRE_NOTHROW(plan.validate(m));
    std::vector<std::size_t> sizes;
    for (const auto& f : plan.folds) {
      std::set<std::string> p;
      for (const auto& e : f.val) p.insert(m.find(e).patient_id);
      sizes.push_back(p.size());
    }
    CHECK(*std::max_element(sizes.begin(), sizes.end()) -
              *std::min_element(sizes.begin(), sizes.end()) <=
          1);
  }
}

TEST_CASE("manifest and fold plan round trip") {
  const auto dir = scratch_dir("manifest");
  std::mt19937_64 rng(10);
  auto m = synthetic_manifest(12, rng);
  m.seed = 99;
  save_manifest(m, dir / "manifest.json");
  auto back = load_manifest(dir / "manifest.json");
  CHECK(back.seed == 99);
  REQUIRE(back.samples.size() == m.samples.size());
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    CHECK(back.samples[i].eye_id == m.samples[i].eye_id);
    CHECK(back.samples[i].grade == m.samples[i].grade);
  }
  auto plan = kfold_split_by_patient(m, 3, 0.25, 4);
  save_fold_plan(plan, dir / "folds.json");
  auto plan2 = load_fold_plan(dir / "folds.json");
  CHECK(plan2.test == plan.test);
  CHECK(plan2.folds[2].train == plan.folds[2].train);

  m.samples.push_back(m.samples.front());
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
  m.samples.pop_back();
  m.samples.front().grade = 6;
  CHECK_THROWS_AS(m.validate(), std::invalid_argument);
}

TEST_CASE("synthetic dataset is balanced and byte-reproducible") {
  SynthConfig cfg;
  cfg.n_patients = 60;
  cfg.eyes_per_patient = 1;
  cfg.seed = 21;
  const auto a = scratch_dir("synth_a"), b = scratch_dir("synth_b");
  auto ma = synthesize_dataset(cfg, a);
  synthesize_dataset(cfg, b);
  std::map<int, int> histogram;
  for (const auto& s : ma.samples) ++histogram[s.grade];
  for (int g = 0; g < 6; ++g) CHECK(histogram[g] == 10);
  for (const auto& s : ma.samples) {
    for (const auto& rel : {s.cfp, s.octa_structure, s.octa_flow}) {
      REQUIRE(file_bytes(a / rel) == file_bytes(b / rel));
    }
  }
  CHECK(file_bytes(a / "manifest.json") == file_bytes(b / "manifest.json"));

  PreprocessConfig pre;
  auto loaded = load_samples(ma, {ma.samples[0].eye_id, ma.samples[1].eye_id}, pre);
  CHECK(loaded[0].image.shape() == Shape{3, 64, 64});
  CHECK(loaded[0].volume.shape() == Shape{2, 32, 32, 32});
  auto reloaded = load_samples(load_manifest(b / "manifest.json"), {ma.samples[0].eye_id}, pre);
  Rng ra(1), rb(1);
  auto ba = random_crop3d(loaded[0].volume, pre.volume_crop, ra);
  auto bb = random_crop3d(reloaded[0].volume, pre.volume_crop, rb);
  for (Index i = 0; i < ba.numel(); ++i) REQUIRE(ba[i] == bb[i]);
}

TEST_CASE("synthetic signals: fused oracle is exact, single modalities hit their ceilings") {
  const auto train = draw_eyes(120, 0.0, 31);
  const auto test = draw_eyes(600, 0.0, 32);
  CHECK(centroid_accuracy(train, test, {0, 1}) == 1.0);
  const double image_only = centroid_accuracy(train, test, {0});
  const double flow_only = centroid_accuracy(train, test, {1});
  MESSAGE("noise 0: image-only " << image_only << ", flow-only " << flow_only);
  CHECK(image_only <= 4.0 / 6.0 + 0.05);
  CHECK(flow_only <= 3.0 / 6.0 + 0.05);
}

TEST_CASE("linear probes stay under the designed ceilings at noise 0.1") {
  const auto train = draw_eyes(600, 0.1, 41);
  const auto test = draw_eyes(600, 0.1, 42);
  const double image_only = probe_accuracy(train, test, 0);
  const double flow_only = probe_accuracy(train, test, 1);
  MESSAGE("noise 0.1 probe: image-only " << image_only << ", flow-only " << flow_only);
  CHECK(image_only <= 4.0 / 6.0 + 0.05);
  CHECK(flow_only <= 3.0 / 6.0 + 0.05);
  CHECK(image_only > 0.5);
  CHECK(flow_only > 0.4);
  CHECK(centroid_accuracy(train, test, {0, 1}) > 0.95);
}
