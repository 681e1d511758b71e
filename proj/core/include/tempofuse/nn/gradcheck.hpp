#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tempofuse/nn/tensor.hpp"

namespace tempofuse::nn {

struct GradCheckOptions {
  double step = 1e-5;
  /// Coordinates probed per tensor; tensors at most this large are probed fully.
  std::size_t coords_per_tensor = 32;
  /// Lower bound on the relative-error denominator so that near-zero
  /// gradients are compared absolutely.
  double denominator_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  /// Probes dropped because the perturbation flipped a ReLU sign or a pooling winner.
  std::size_t skipped = 0;
  std::string worst;  // "<tensor>[<index>]" of the largest error

  bool passed(double tolerance) const { return checked > 0 && max_rel_error < tolerance; }
};

struct GradCheckTarget {
  std::string name;
  Tensor<double>* tensor;
};

/// Compares reverse-mode gradients of the scalar built by `loss_fn` with
/// central differences. `loss_fn` must rebuild the graph from the current
/// values of the targets on every call.
GradCheckReport finite_difference_check(const std::function<Tensor<double>()>& loss_fn,
                                        const std::vector<GradCheckTarget>& targets,
                                        const GradCheckOptions& options = {});

}  // namespace tempofuse::nn
