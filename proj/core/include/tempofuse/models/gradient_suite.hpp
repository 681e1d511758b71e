#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace tempofuse::models {

struct GradientSuiteOptions {
  std::size_t seeds = 50;
  std::uint64_t base_seed = 0;
  /// Backbone blocks and channel width of the whole-model cases.
  std::size_t blocks = 2;
  std::size_t channels = 8;
  double tolerance = 1e-4;
  std::size_t coords_per_tensor = 12;
  bool layers = true;
  bool models = true;
};

struct GradientCaseResult {
  std::string name;
  std::size_t seeds = 0;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::string worst;
  bool passed = false;
};

/// Central-difference checks in double precision for every layer kind on
/// randomized small shapes and for every model kind at reduced capacity.
/// Dropout is held inactive; batch normalization stays in training mode.
std::vector<GradientCaseResult> run_gradient_suite(
    const GradientSuiteOptions& options,
    const std::function<void(const GradientCaseResult&)>& on_case = {});

}  // namespace tempofuse::models
