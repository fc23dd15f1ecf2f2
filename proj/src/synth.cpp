#include "fuseret/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "fuseret/tensor_io.hpp"

namespace fuseret {

namespace {

constexpr float kChannelWeight[3] = {0.6f, 0.35f, 0.2f};
constexpr double kBlobAmplitude = 0.9;
constexpr double kScarAmplitude = -0.5;
constexpr double kDropoutFactor = 0.1;

void add_gaussian(TensorF& image, double cy, double cx, double sigma, double amplitude) {
  const Index S = image.dim(1);
  const Index reach = static_cast<Index>(std::ceil(3.0 * sigma));
  const Index y0 = std::max<Index>(0, static_cast<Index>(cy) - reach);
  const Index y1 = std::min<Index>(S - 1, static_cast<Index>(cy) + reach);
  const Index x0 = std::max<Index>(0, static_cast<Index>(cx) - reach);
  const Index x1 = std::min<Index>(S - 1, static_cast<Index>(cx) + reach);
  for (Index y = y0; y <= y1; ++y)
    for (Index x = x0; x <= x1; ++x) {
      const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      const auto v = static_cast<float>(amplitude * std::exp(-d2 / (2.0 * sigma * sigma)));
      for (Index c = 0; c < 3; ++c) image.at({c, y, x}) += v;
    }
}

void add_noise(TensorF& t, double level, Rng& rng) {
  if (level <= 0.0) return;
  std::normal_distribution<double> n(0.0, level);
  for (auto& v : t.data()) v += static_cast<float>(n(rng));
}

}  // namespace

void SynthConfig::validate() const {
  if (n_patients < 1) throw std::invalid_argument("synth: n_patients must be >= 1");
  if (eyes_per_patient < 1 || eyes_per_patient > 2) {
    throw std::invalid_argument("synth: eyes_per_patient must be 1 or 2");
  }
  if (image_size < 16) throw std::invalid_argument("synth: image_size must be >= 16");
  for (Index e : volume_shape) {
    if (e < 8) throw std::invalid_argument("synth: volume extents must be >= 8");
  }
  if (!(noise_level >= 0.0)) throw std::invalid_argument("synth: noise_level must be >= 0");
}

int blob_level(int grade) { return grade >= 3 ? grade - 2 : 0; }

int dropout_level(int grade) { return grade == 1 || grade == 2 ? grade : 0; }

SynthEye synthesize_eye(int grade, const SynthConfig& cfg, Rng& rng) {
  if (grade < 0 || grade > 5) throw std::invalid_argument("synth: grade out of range");
  std::uniform_real_distribution<double> u(0.0, 1.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;
  SynthEye eye;

  const Index S = cfg.image_size;
  const double R = 0.5 * static_cast<double>(S);
  eye.image = TensorF({3, S, S});
  for (Index y = 0; y < S; ++y)
    for (Index x = 0; x < S; ++x) {
      const double dy = (y + 0.5 - R) / R, dx = (x + 0.5 - R) / R;
      const double r2 = dy * dy + dx * dx;
      const double base = r2 <= 1.0 ? 0.5 * (1.0 - 0.5 * r2) : 0.0;
      for (Index c = 0; c < 3; ++c) eye.image.at({c, y, x}) = static_cast<float>(kChannelWeight[c] * base);
    }
  const double blob_sigma = static_cast<double>(S) / 24.0;
  for (int b = 0; b < 3 * blob_level(grade); ++b) {
    const double radius = (0.55 + 0.3 * u(rng)) * R;
    const double angle = two_pi * u(rng);
    add_gaussian(eye.image, R + radius * std::sin(angle), R + radius * std::cos(angle), blob_sigma,
                 kBlobAmplitude);
  }
  if (grade == 5) {
    const double spacing = static_cast<double>(S) / 8.0;
    for (double cy = 0.5 * spacing; cy < S; cy += spacing)
      for (double cx = 0.5 * spacing; cx < S; cx += spacing) {
        const double r = std::hypot(cy - R, cx - R) / R;
        if (r > 0.6 && r < 0.95) add_gaussian(eye.image, cy, cx, 1.0, kScarAmplitude);
      }
  }
  add_noise(eye.image, cfg.noise_level, rng);

  const auto [D, H, W] = cfg.volume_shape;
  eye.structure = TensorF({D, H, W});
  eye.flow = TensorF({D, H, W});
  const double phase_d = two_pi * u(rng), phase_w = two_pi * u(rng);
  const double level = dropout_level(grade);
  const double cd = 0.5 * static_cast<double>(D) + (u(rng) - 0.5) * 2.0;
  const double cw = 0.5 * static_cast<double>(W) + (u(rng) - 0.5) * 2.0;
  const double dropout_radius = level * static_cast<double>(std::min(D, W)) / 8.0;
  for (Index z = 0; z < D; ++z)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        const double layer = 0.5 + 0.3 * std::sin(two_pi * static_cast<double>(y) / 8.0);
        eye.structure.at({z, y, x}) = static_cast<float>(layer);
        double vessels = 0.6 + 0.25 * std::sin(two_pi * z / 6.0 + phase_d) *
                                   std::sin(two_pi * x / 6.0 + phase_w);
        if (std::hypot(z + 0.5 - cd, x + 0.5 - cw) < dropout_radius) vessels *= kDropoutFactor;
        eye.flow.at({z, y, x}) = static_cast<float>(vessels);
      }
  add_noise(eye.structure, cfg.noise_level, rng);
  add_noise(eye.flow, cfg.noise_level, rng);
  return eye;
}

Manifest synthesize_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  const int n_eyes = cfg.n_patients * cfg.eyes_per_patient;
  std::vector<int> grades(static_cast<std::size_t>(n_eyes));
  for (int i = 0; i < n_eyes; ++i) grades[static_cast<std::size_t>(i)] = i % 6;
  Rng order = stream(cfg.seed, "data");
  std::shuffle(grades.begin(), grades.end(), order);

  std::filesystem::create_directories(out_dir / "cfp");
  std::filesystem::create_directories(out_dir / "octa");
  Manifest m;
  m.seed = cfg.seed;
  m.base_dir = out_dir;
  static constexpr const char* kSide[2] = {"OD", "OS"};
  for (int i = 0; i < n_eyes; ++i) {
    char patient[16];
    std::snprintf(patient, sizeof patient, "P%04d", i / cfg.eyes_per_patient);
    const std::string eye_id = std::string(patient) + "_" + kSide[i % cfg.eyes_per_patient];
    Rng rng = stream(cfg.seed, "data", static_cast<std::uint64_t>(i) + 1);
    const int grade = grades[static_cast<std::size_t>(i)];
    const SynthEye eye = synthesize_eye(grade, cfg, rng);
    SampleRecord rec{eye_id, patient, grade, "cfp/" + eye_id + ".frtn",
                     "octa/" + eye_id + "_structure.frtn", "octa/" + eye_id + "_flow.frtn"};
    save_tensor(out_dir / rec.cfp, eye.image);
    save_tensor(out_dir / rec.octa_structure, eye.structure);
    save_tensor(out_dir / rec.octa_flow, eye.flow);
    m.samples.push_back(std::move(rec));
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

}  // namespace fuseret
