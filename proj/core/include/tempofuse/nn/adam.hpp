#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tempofuse/nn/tensor.hpp"

namespace tempofuse::nn {

struct AdamConfig {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamMoments {
  std::vector<T> m;
  std::vector<T> v;
};

/// One bias-corrected Adam update of `params` in place. `step` counts from 1.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamMoments<T>& state,
               const AdamConfig& cfg, std::uint64_t step);

/// Adam over a fixed list of parameter tensors. A parameter with no
/// accumulated gradient is treated as having a zero gradient.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>*> params, AdamConfig cfg);

  void step();
  void zero_grad();

  std::uint64_t steps() const noexcept { return step_; }
  const AdamConfig& config() const noexcept { return cfg_; }
  std::vector<AdamMoments<T>>& moments() noexcept { return moments_; }
  const std::vector<AdamMoments<T>>& moments() const noexcept { return moments_; }
  /// Restores a saved state; moment lengths must match the parameters.
  void restore(std::uint64_t step, std::vector<AdamMoments<T>> moments);

 private:
  std::vector<Tensor<T>*> params_;
  AdamConfig cfg_;
  std::vector<AdamMoments<T>> moments_;
  std::uint64_t step_ = 0;
};

}  // namespace tempofuse::nn
