#include "fuseret/checkpoint.hpp"

#include <fstream>
#include <map>

#include "fuseret/config.hpp"
#include "fuseret/tensor_io.hpp"

namespace fuseret {

void save_checkpoint(FusionModel<float>& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream bin(dir / "checkpoint.bin", std::ios::binary);
  if (!bin) throw std::runtime_error("cannot write " + (dir / "checkpoint.bin").string());
  json tensors = json::array();
  std::uint64_t offset = 0;
  for (const auto& p : model.parameters()) {
    tensors.push_back({{"name", p.name},
                       {"offset", offset},
                       {"shape", p.tensor.shape()},
                       {"trainable", p.trainable}});
    offset += write_tensor(bin, p.tensor);
  }
  bin.close();
  if (!bin) throw std::runtime_error("write failed: " + (dir / "checkpoint.bin").string());
  const json doc = {{"format_version", kCheckpointFormatVersion},
                    {"version", version_string()},
                    {"model", to_json(model.config())},
                    {"tensors", tensors}};
  std::ofstream side(dir / "checkpoint.json");
  side << doc.dump(2) << '\n';
  if (!side) throw std::runtime_error("write failed: " + (dir / "checkpoint.json").string());
}

FusionModel<float> load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream side(dir / "checkpoint.json");
  if (!side) throw FormatError("missing " + (dir / "checkpoint.json").string());
  json doc;
  try {
    doc = json::parse(side);
  } catch (const json::exception& e) {
    throw FormatError("checkpoint.json: " + std::string(e.what()));
  }
  if (doc.value("format_version", 0) != kCheckpointFormatVersion) {
    throw FormatError("checkpoint.json: unsupported format_version");
  }
  FusionModel<float> model(model_from_json(doc.at("model")), 0);

  std::ifstream bin(dir / "checkpoint.bin", std::ios::binary);
  if (!bin) throw FormatError("missing " + (dir / "checkpoint.bin").string());
  std::map<std::string, std::pair<std::uint64_t, Shape>> index;
  for (const auto& t : doc.at("tensors")) {
    index[t.at("name").get<std::string>()] = {t.at("offset").get<std::uint64_t>(),
                                              t.at("shape").get<Shape>()};
  }
  auto params = model.parameters();
  if (index.size() != params.size()) {
    throw FormatError("checkpoint: " + std::to_string(index.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = index.find(p.name);
    if (it == index.end()) throw FormatError("checkpoint: missing tensor " + p.name);
    bin.seekg(static_cast<std::streamoff>(it->second.first));
    TensorF stored = read_tensor<float>(bin);
    if (stored.shape() != p.tensor.shape() || stored.shape() != it->second.second) {
      throw FormatError("checkpoint: tensor " + p.name + " has shape " + shape_str(stored.shape()) +
                        ", expected " + shape_str(p.tensor.shape()));
    }
    std::copy(stored.data().begin(), stored.data().end(), p.tensor.data().begin());
  }
  return model;
}

}  // namespace fuseret
