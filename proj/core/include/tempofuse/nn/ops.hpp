#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tempofuse/nn/tensor.hpp"
#include "tempofuse/rng.hpp"

namespace tempofuse::nn {

struct Conv2dGeometry {
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
};

/// floor((in + 2 pad - k) / stride) + 1; throws when the kernel does not fit.
std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                            std::size_t pad);

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sum(const Tensor<T>& a);
/// sum(a * weights) with constant weights; a scalar.
template <typename T> Tensor<T> weighted_sum(const Tensor<T>& a, std::span<const T> weights);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> relu(const Tensor<T>& x);

/// Cross-correlation. x [N,C,H,W], w [O,C,kh,kw], bias [O] or undefined.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 Conv2dGeometry geo);

/// x [N,C,T], w [O,C,k], bias [O] or undefined.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad);

/// Running statistics owned by a batch-norm layer.
template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);
};

/// Per-channel (axis 1) normalization over every other axis. Training mode
/// uses batch statistics and updates the running estimates.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormState<T>& state, bool training);

/// Non-overlapping k x k max pooling with floor semantics over [N,C,H,W].
template <typename T> Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t k);
/// Max over every axis after the first two: [N,C,...] -> [N,C].
template <typename T> Tensor<T> global_max_pool(const Tensor<T>& x);
/// [N,C,T] -> [N,C,L]; bin i averages frames [floor(iT/L), ceil((i+1)T/L)).
template <typename T> Tensor<T> adaptive_mean_pool1d(const Tensor<T>& x, std::size_t out_len);

/// x [N,F], w [O,F], bias [O] -> [N,O]
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

/// Inverted dropout: zeroes with probability p and scales survivors by
/// 1/(1-p). Identity when inactive.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng* rng, bool active);

/// Row-wise softmax of [N,K].
template <typename T> Tensor<T> softmax(const Tensor<T>& logits);

/// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> labels);

}  // namespace tempofuse::nn
