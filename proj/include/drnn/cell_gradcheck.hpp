#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "drnn/cells.hpp"

namespace drnn {

struct GradcheckOptions {
  std::size_t configs = 20;
  double step = 1e-5;
  double tolerance = 1e-5;
  /// Configurations with any relu input closer than this to 0 are redrawn.
  double kink_margin = 1e-4;
  std::uint64_t seed = 1;
  /// Mutation hook: negate the analytic gradient of the first parameter.
  bool inject_sign_flip = false;
};

struct ParameterCheck {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};

struct CellGradcheckResult {
  CellKind kind = CellKind::drnn;
  std::vector<ParameterCheck> parameters;
  std::size_t configs_checked = 0;
  std::size_t configs_redrawn = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

/// Random small configurations (hidden 2-8, input 1-4, length 1-6) with the
/// loss sum_t r_t . h_t; compares tape gradients to central differences.
CellGradcheckResult gradcheck_cell(CellKind kind, const GradcheckOptions& options);

}  // namespace drnn
