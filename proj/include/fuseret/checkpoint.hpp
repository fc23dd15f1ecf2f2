#pragma once

#include <filesystem>

#include "fuseret/model.hpp"

namespace fuseret {

inline constexpr int kCheckpointFormatVersion = 1;

/// `dir/checkpoint.bin`: tensor records back to back, in parameter order,
/// running statistics included. `dir/checkpoint.json`: format version, tool
/// version, model config, and per tensor its name, byte offset and shape.
void save_checkpoint(FusionModel<float>& model, const std::filesystem::path& dir);

/// Rebuilds the model from the sidecar config and overwrites every tensor.
/// Throws FormatError on missing, extra or misshapen tensors.
FusionModel<float> load_checkpoint(const std::filesystem::path& dir);

}  // namespace fuseret
