#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "tempofuse/nn/ops.hpp"
#include "tempofuse/rng.hpp"

namespace tempofuse::nn {

enum class LayerKind { conv1d, conv2d, batchnorm, dense, relu, maxpool, meanpool, dropout, softmax };

std::string_view to_string(LayerKind kind);

/// Hyperparameters of one layer. Fields that a kind does not use are ignored.
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in_channels = 0;   // conv input channels, dense input features, batchnorm channels
  std::size_t out_channels = 0;  // conv filters, dense output features
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  bool bias = true;
  std::size_t pool = 2;     // maxpool window
  std::size_t out_len = 1;  // meanpool output length
  double rate = 0.0;        // dropout probability

  static LayerSpec conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                          std::size_t pad, bool bias = true);
  static LayerSpec conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
                          std::size_t pad, bool bias = true);
  static LayerSpec batchnorm(std::size_t channels);
  static LayerSpec dense(std::size_t in, std::size_t out);
  static LayerSpec relu();
  static LayerSpec maxpool(std::size_t window);
  static LayerSpec meanpool(std::size_t out_len);
  static LayerSpec dropout(double rate);
  static LayerSpec softmax();

  void validate() const;
  /// Output shape for an input shape; throws on incompatible input.
  Shape infer_shape(const Shape& in) const;
  /// Parameter shapes in the order Layer::parameters returns them.
  std::vector<Shape> parameter_shapes() const;
};

struct ForwardContext {
  bool training = false;
  /// Dropout masks are drawn only when training and this is set.
  bool dropout_active = true;
  Rng* rng = nullptr;
};

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
struct BufferRef {
  std::string name;
  std::vector<T>* values;
};

/// A LayerSpec with its parameters. Weights are He-uniform, biases zero,
/// batchnorm scale one and shift zero.
template <typename T>
class Layer {
 public:
  Layer() = default;
  Layer(LayerSpec spec, Rng& init);

  Tensor<T> forward(const Tensor<T>& x, const ForwardContext& ctx);

  const LayerSpec& spec() const noexcept { return spec_; }
  std::vector<ParamRef<T>> parameters(const std::string& prefix);
  std::vector<BufferRef<T>> buffers(const std::string& prefix);

 private:
  LayerSpec spec_;
  Tensor<T> weight_;
  Tensor<T> bias_;
  BatchNormState<T> bn_;
};

}  // namespace tempofuse::nn
