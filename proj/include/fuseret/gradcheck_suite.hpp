#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fuseret {

inline constexpr double kGradcheckTolerance = 1e-4;

struct GradcheckRow {
  std::string op;
  double max_rel_error = 0.0;
  bool passed = false;
  double seconds = 0.0;
};

/// Finite-difference checks in double on micro shapes: every layer primitive,
/// the SE gate, 2D and 3D bottleneck blocks, and the fused two-branch model.
/// Each row reports the worst coordinate over all of the op's inputs.
std::vector<GradcheckRow> run_gradcheck_suite(double tolerance = kGradcheckTolerance,
                                              std::uint64_t seed = 1);

}  // namespace fuseret
