#include "fuseret/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "fuseret/random.hpp"
#include "fuseret/tensor_io.hpp"
#include "json.hpp"

namespace fuseret {

using nlohmann::json;

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json(const json& doc, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << '\n';
}

}  // namespace

void Manifest::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& s : samples) {
    if (s.eye_id.empty() || s.patient_id.empty()) {
      throw std::invalid_argument("manifest: empty eye_id or patient_id");
    }
    if (s.grade < 0 || s.grade > 5) {
      throw std::invalid_argument("manifest: eye " + s.eye_id + " has grade " +
                                  std::to_string(s.grade));
    }
    if (!seen.insert(s.eye_id).second) {
      throw std::invalid_argument("manifest: duplicate eye_id " + s.eye_id);
    }
  }
}

const SampleRecord& Manifest::find(const std::string& eye_id) const {
  auto it = std::find_if(samples.begin(), samples.end(),
                         [&](const SampleRecord& s) { return s.eye_id == eye_id; });
  if (it == samples.end()) throw std::out_of_range("manifest: unknown eye_id " + eye_id);
  return *it;
}

std::filesystem::path Manifest::resolve(const std::string& relative) const {
  const std::filesystem::path p(relative);
  return p.is_absolute() ? p : base_dir / p;
}

Manifest load_manifest(const std::filesystem::path& path) {
  const json doc = read_json(path);
  Manifest m;
  m.base_dir = path.parent_path();
  m.seed = doc.value("seed", std::uint64_t{0});
  for (const auto& s : doc.at("samples")) {
    m.samples.push_back({s.at("eye_id").get<std::string>(), s.at("patient_id").get<std::string>(),
                         s.at("grade").get<int>(), s.at("cfp").get<std::string>(),
                         s.at("octa_structure").get<std::string>(),
                         s.at("octa_flow").get<std::string>()});
  }
  m.validate();
  return m;
}

void save_manifest(const Manifest& manifest, const std::filesystem::path& path) {
  json samples = json::array();
  for (const auto& s : manifest.samples) {
    samples.push_back({{"eye_id", s.eye_id},
                       {"patient_id", s.patient_id},
                       {"grade", s.grade},
                       {"cfp", s.cfp},
                       {"octa_structure", s.octa_structure},
                       {"octa_flow", s.octa_flow}});
  }
  write_json({{"seed", manifest.seed}, {"samples", samples}}, path);
}

void FoldPlan::validate(const Manifest& manifest) const {
  if (static_cast<int>(folds.size()) != k) {
    throw std::logic_error("fold plan: " + std::to_string(folds.size()) + " folds, k = " +
                           std::to_string(k));
  }
  std::unordered_map<std::string, std::string> patient_of;
  for (const auto& s : manifest.samples) patient_of[s.eye_id] = s.patient_id;
  auto patient = [&](const std::string& eye) -> const std::string& {
    auto it = patient_of.find(eye);
    if (it == patient_of.end()) throw std::logic_error("fold plan: unknown eye " + eye);
    return it->second;
  };

  std::unordered_set<std::string> test_eyes, test_patients;
  for (const auto& e : test) {
    if (!test_eyes.insert(e).second) throw std::logic_error("fold plan: duplicate test eye " + e);
    test_patients.insert(patient(e));
  }
  std::set<std::string> pool;
  for (const auto& s : manifest.samples) {
    if (test_eyes.count(s.eye_id)) continue;
    if (test_patients.count(s.patient_id)) {
      throw std::logic_error("fold plan: patient " + s.patient_id + " in test and non-test");
    }
    pool.insert(s.eye_id);
  }

  std::unordered_set<std::string> covered;
  for (int f = 0; f < k; ++f) {
    const Fold& fold = folds[static_cast<std::size_t>(f)];
    const std::string where = "fold plan: fold " + std::to_string(f) + ": ";
    std::unordered_set<std::string> val_patients;
    std::set<std::string> both;
    for (const auto& e : fold.val) {
      if (!pool.count(e)) throw std::logic_error(where + "val eye " + e + " not in pool");
      if (!covered.insert(e).second) throw std::logic_error(where + "eye " + e + " validated twice");
      val_patients.insert(patient(e));
      both.insert(e);
    }
    for (const auto& e : fold.train) {
      if (!pool.count(e)) throw std::logic_error(where + "train eye " + e + " not in pool");
      if (val_patients.count(patient(e))) {
        throw std::logic_error(where + "patient " + patient(e) + " in train and val");
      }
      if (!both.insert(e).second) throw std::logic_error(where + "eye " + e + " listed twice");
    }
    if (both != pool) throw std::logic_error(where + "train and val do not cover the pool");
  }
  if (covered.size() != pool.size()) {
    throw std::logic_error("fold plan: validation sets do not partition the non-test eyes");
  }
}

FoldPlan load_fold_plan(const std::filesystem::path& path) {
  const json doc = read_json(path);
  FoldPlan plan;
  plan.k = doc.at("k").get<int>();
  plan.seed = doc.at("seed").get<std::uint64_t>();
  plan.test_fraction = doc.at("test_fraction").get<double>();
  plan.test = doc.at("test").get<std::vector<std::string>>();
  for (const auto& f : doc.at("folds")) {
    plan.folds.push_back(
        {f.at("train").get<std::vector<std::string>>(), f.at("val").get<std::vector<std::string>>()});
  }
  return plan;
}

void save_fold_plan(const FoldPlan& plan, const std::filesystem::path& path) {
  json folds = json::array();
  for (const auto& f : plan.folds) folds.push_back({{"train", f.train}, {"val", f.val}});
  write_json({{"k", plan.k},
              {"seed", plan.seed},
              {"test_fraction", plan.test_fraction},
              {"test", plan.test},
              {"folds", folds}},
             path);
}

FoldPlan kfold_split_by_patient(const Manifest& manifest, int k, double test_fraction,
                                std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("kfold: k must be at least 2");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("kfold: test_fraction must lie in [0,1)");
  }
  manifest.validate();
  // Manifest order, one entry per patient.
  std::vector<std::string> patients;
  std::map<std::string, std::vector<std::string>> eyes_of;
  for (const auto& s : manifest.samples) {
    auto& eyes = eyes_of[s.patient_id];
    if (eyes.empty()) patients.push_back(s.patient_id);
    eyes.push_back(s.eye_id);
  }
  const auto P = static_cast<Index>(patients.size());
  const auto n_test = static_cast<Index>(std::llround(test_fraction * static_cast<double>(P)));
  if (P - n_test < k) {
    throw std::invalid_argument("kfold: " + std::to_string(P - n_test) +
                                " non-test patients for k = " + std::to_string(k));
  }
  Rng rng = stream(seed, "split");
  std::shuffle(patients.begin(), patients.end(), rng);

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.test_fraction = test_fraction;
  for (Index p = 0; p < n_test; ++p) {
    for (const auto& e : eyes_of[patients[static_cast<std::size_t>(p)]]) plan.test.push_back(e);
  }
  const Index rest = P - n_test;
  std::vector<int> group(static_cast<std::size_t>(rest));
  for (Index i = 0; i < rest; ++i) {
    // Group g covers [g * rest / k, (g + 1) * rest / k).
    group[static_cast<std::size_t>(i)] = static_cast<int>(i * k / rest);
  }
  plan.folds.resize(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    Fold& fold = plan.folds[static_cast<std::size_t>(f)];
    for (Index i = 0; i < rest; ++i) {
      const auto& eyes = eyes_of[patients[static_cast<std::size_t>(n_test + i)]];
      auto& side = group[static_cast<std::size_t>(i)] == f ? fold.val : fold.train;
      side.insert(side.end(), eyes.begin(), eyes.end());
    }
  }
  return plan;
}

LoadedSample load_sample(const Manifest& manifest, const SampleRecord& record,
                         const PreprocessConfig& cfg) {
  LoadedSample out;
  out.eye_id = record.eye_id;
  out.grade = record.grade;
  try {
    TensorF image = load_tensor<float>(manifest.resolve(record.cfp));
    if (image.ndim() != 3) throw DimensionError("image must be [C,H,W]");
    const Index crop = cfg.center_crop > 0 ? cfg.center_crop : std::min(image.dim(1), image.dim(2));
    image = center_crop2d(image, crop);
    out.image = crop == cfg.image_size ? image : resize2d(image, cfg.image_size);
    out.volume = stack_structure_flow(load_tensor<float>(manifest.resolve(record.octa_structure)),
                                      load_tensor<float>(manifest.resolve(record.octa_flow)));
  } catch (const std::exception& e) {
    throw std::runtime_error("eye " + record.eye_id + ": " + e.what());
  }
  return out;
}

std::vector<LoadedSample> load_samples(const Manifest& manifest,
                                       const std::vector<std::string>& eye_ids,
                                       const PreprocessConfig& cfg) {
  std::vector<LoadedSample> out;
  out.reserve(eye_ids.size());
  for (const auto& id : eye_ids) out.push_back(load_sample(manifest, manifest.find(id), cfg));
  return out;
}

}  // namespace fuseret
