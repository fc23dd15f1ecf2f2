#include "fuseret/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fuseret {

namespace {

template <typename T>
void maybe(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

EncoderConfig preset_encoder(const std::string& preset, int dims) {
  if (preset == "tiny") return EncoderConfig::tiny(dims);
  if (preset == "resnet50") return EncoderConfig::resnet50(dims);
  throw std::invalid_argument("unknown preset '" + preset + "'");
}

}  // namespace

std::string version_string() { return FUSERET_VERSION; }

json to_json(const EncoderConfig& c) {
  return {{"spatial_dims", c.spatial_dims},   {"in_channels", c.in_channels},
          {"stem_channels", c.stem_channels}, {"stem_kernel", c.stem_kernel},
          {"stage_blocks", c.stage_blocks},   {"stage_channels", c.stage_channels},
          {"expansion", c.expansion},         {"se_reduction", c.se_reduction},
          {"se_enabled", c.se_enabled}};
}

EncoderConfig encoder_from_json(const json& j, EncoderConfig c) {
  maybe(j, "spatial_dims", c.spatial_dims);
  maybe(j, "in_channels", c.in_channels);
  maybe(j, "stem_channels", c.stem_channels);
  maybe(j, "stem_kernel", c.stem_kernel);
  maybe(j, "stage_blocks", c.stage_blocks);
  maybe(j, "stage_channels", c.stage_channels);
  maybe(j, "expansion", c.expansion);
  maybe(j, "se_reduction", c.se_reduction);
  maybe(j, "se_enabled", c.se_enabled);
  return c;
}

json to_json(const ModelConfig& c) {
  return {{"modality", to_string(c.modality)},
          {"encoder2d", to_json(c.encoder2d)},
          {"encoder3d", to_json(c.encoder3d)},
          {"num_classes", c.num_classes}};
}

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  if (j.contains("modality")) c.modality = modality_from_string(j.at("modality").get<std::string>());
  if (j.contains("encoder2d")) c.encoder2d = encoder_from_json(j.at("encoder2d"), c.encoder2d);
  if (j.contains("encoder3d")) c.encoder3d = encoder_from_json(j.at("encoder3d"), c.encoder3d);
  maybe(j, "num_classes", c.num_classes);
  return c;
}

json to_json(const TrainConfig& c) {
  json mixup = {{"enabled", c.mixup.enabled}, {"alpha", c.mixup.alpha}};
  if (c.mixup.fixed_lambda) mixup["fixed_lambda"] = *c.mixup.fixed_lambda;
  return {{"lr_max", c.lr_max},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"seed", c.seed},
          {"se_enabled", c.se_enabled},
          {"mixup", mixup},
          {"schedule",
           {{"pct_start", c.schedule.pct_start},
            {"div_factor", c.schedule.div_factor},
            {"final_div_factor", c.schedule.final_div_factor}}}};
}

json to_json(const RunConfig& c) {
  json model = to_json(c.model);
  model["preset"] = c.preset;
  return {{"model", model},
          {"train", to_json(c.train)},
          {"preprocess",
           {{"center_crop", c.preprocess.center_crop},
            {"image_size", c.preprocess.image_size},
            {"volume_crop", c.preprocess.volume_crop}}},
          {"eval", {{"n_crops", c.eval.n_crops}, {"seed", c.eval.seed}}},
          {"split", {{"k", c.split.k}, {"test_fraction", c.split.test_fraction}}},
          {"manifest", c.manifest},
          {"folds", c.folds}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  if (j.contains("model")) {
    const json& m = j.at("model");
    maybe(m, "preset", c.preset);
    c.model.encoder2d = preset_encoder(c.preset, 2);
    c.model.encoder3d = preset_encoder(c.preset, 3);
    if (m.contains("modality")) {
      c.model.modality = modality_from_string(m.at("modality").get<std::string>());
    }
    if (m.contains("encoder2d")) c.model.encoder2d = encoder_from_json(m.at("encoder2d"), c.model.encoder2d);
    if (m.contains("encoder3d")) c.model.encoder3d = encoder_from_json(m.at("encoder3d"), c.model.encoder3d);
    maybe(m, "num_classes", c.model.num_classes);
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    maybe(t, "lr_max", c.train.lr_max);
    maybe(t, "weight_decay", c.train.weight_decay);
    maybe(t, "batch_size", c.train.batch_size);
    maybe(t, "epochs", c.train.epochs);
    maybe(t, "beta1", c.train.beta1);
    maybe(t, "beta2", c.train.beta2);
    maybe(t, "eps", c.train.eps);
    maybe(t, "seed", c.train.seed);
    maybe(t, "se_enabled", c.train.se_enabled);
    if (t.contains("mixup")) {
      const json& mx = t.at("mixup");
      maybe(mx, "enabled", c.train.mixup.enabled);
      maybe(mx, "alpha", c.train.mixup.alpha);
      if (mx.contains("fixed_lambda") && !mx.at("fixed_lambda").is_null()) {
        c.train.mixup.fixed_lambda = mx.at("fixed_lambda").get<double>();
      }
    }
    if (t.contains("schedule")) {
      const json& s = t.at("schedule");
      maybe(s, "pct_start", c.train.schedule.pct_start);
      maybe(s, "div_factor", c.train.schedule.div_factor);
      maybe(s, "final_div_factor", c.train.schedule.final_div_factor);
    }
  }
  if (j.contains("preprocess")) {
    const json& p = j.at("preprocess");
    maybe(p, "center_crop", c.preprocess.center_crop);
    maybe(p, "image_size", c.preprocess.image_size);
    maybe(p, "volume_crop", c.preprocess.volume_crop);
  }
  if (j.contains("eval")) {
    maybe(j.at("eval"), "n_crops", c.eval.n_crops);
    maybe(j.at("eval"), "seed", c.eval.seed);
  }
  if (j.contains("split")) {
    maybe(j.at("split"), "k", c.split.k);
    maybe(j.at("split"), "test_fraction", c.split.test_fraction);
  }
  maybe(j, "manifest", c.manifest);
  maybe(j, "folds", c.folds);
  if (j.contains("seed")) c.train.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

ModelConfig RunConfig::resolved_model() const {
  ModelConfig m = model;
  m.encoder2d.se_enabled = train.se_enabled;
  m.encoder3d.se_enabled = train.se_enabled;
  return m;
}

RunConfig RunConfig::resolved() const {
  RunConfig r = *this;
  r.model = resolved_model();
  r.eval.seed = train.seed;
  return r;
}

void RunConfig::validate() const {
  const ModelConfig m = resolved_model();
  if (m.modality != Modality::octa_only) m.encoder2d.validate();
  if (m.modality != Modality::cfp_only) m.encoder3d.validate();
  train.validate();
  if (eval.n_crops < 1) throw std::invalid_argument("eval.n_crops must be >= 1");
  if (preprocess.image_size < 1) throw std::invalid_argument("preprocess.image_size must be >= 1");
  for (Index e : preprocess.volume_crop) {
    if (e < 1) throw std::invalid_argument("preprocess.volume_crop extents must be >= 1");
  }
  if (split.k < 2) throw std::invalid_argument("split.k must be >= 2");
}

json parse_key_values(const std::string& text) {
  json out = json::object();
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string raw = trim(line.substr(eq + 1));
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    json* node = &out;
    std::size_t start = 0;
    for (auto dot = key.find('.'); dot != std::string::npos; dot = key.find('.', start)) {
      node = &(*node)[key.substr(start, dot - start)];
      start = dot + 1;
    }
    (*node)[key.substr(start)] = value;
  }
  return out;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  try {
    const json j = first != std::string::npos && text[first] == '{' ? json::parse(text)
                                                                     : parse_key_values(text);
    return run_config_from_json(j);
  } catch (const json::exception& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json j = to_json(cfg.resolved());
  j["version"] = version_string();
  std::ofstream out(dir / "config.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "config.json").string());
  out << j.dump(2) << '\n';
}

}  // namespace fuseret
