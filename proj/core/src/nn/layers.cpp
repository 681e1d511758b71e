#include "tempofuse/nn/layers.hpp"

#include <cmath>

#include "tempofuse/error.hpp"

namespace tempofuse::nn {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::batchnorm: return "batchnorm";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::meanpool: return "meanpool";
    case LayerKind::dropout: return "dropout";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

LayerSpec LayerSpec::conv1d(std::size_t in, std::size_t out, std::size_t kernel,
                            std::size_t stride, std::size_t pad, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::conv1d;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_w = kernel;
  s.stride_w = stride;
  s.pad_w = pad;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::conv2d(std::size_t in, std::size_t out, std::size_t kernel,
                            std::size_t stride, std::size_t pad, bool bias) {
  LayerSpec s;
  s.kind = LayerKind::conv2d;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = s.kernel_w = kernel;
  s.stride_h = s.stride_w = stride;
  s.pad_h = s.pad_w = pad;
  s.bias = bias;
  return s;
}

LayerSpec LayerSpec::batchnorm(std::size_t channels) {
  LayerSpec s;
  s.kind = LayerKind::batchnorm;
  s.in_channels = channels;
  return s;
}

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out) {
  LayerSpec s;
  s.kind = LayerKind::dense;
  s.in_channels = in;
  s.out_channels = out;
  return s;
}

LayerSpec LayerSpec::relu() { return LayerSpec{}; }

LayerSpec LayerSpec::maxpool(std::size_t window) {
  LayerSpec s;
  s.kind = LayerKind::maxpool;
  s.pool = window;
  return s;
}

LayerSpec LayerSpec::meanpool(std::size_t out_len) {
  LayerSpec s;
  s.kind = LayerKind::meanpool;
  s.out_len = out_len;
  return s;
}

LayerSpec LayerSpec::dropout(double rate) {
  LayerSpec s;
  s.kind = LayerKind::dropout;
  s.rate = rate;
  return s;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec s;
  s.kind = LayerKind::softmax;
  return s;
}

void LayerSpec::validate() const {
  const std::string name(to_string(kind));
  auto positive = [&](std::size_t v, const char* field) {
    require(v > 0, ErrorCode::invalid_argument, name + ": " + field + " must be > 0");
  };
  switch (kind) {
    case LayerKind::conv1d:
    case LayerKind::conv2d:
      positive(in_channels, "in_channels");
      positive(out_channels, "out_channels");
      positive(kernel_h, "kernel_h");
      positive(kernel_w, "kernel_w");
      positive(stride_h, "stride_h");
      positive(stride_w, "stride_w");
      break;
    case LayerKind::batchnorm:
      positive(in_channels, "channels");
      break;
    case LayerKind::dense:
      positive(in_channels, "in_features");
      positive(out_channels, "out_features");
      break;
    case LayerKind::maxpool:
      positive(pool, "pool");
      break;
    case LayerKind::meanpool:
      positive(out_len, "out_len");
      break;
    case LayerKind::dropout:
      require(rate >= 0.0 && rate < 1.0, ErrorCode::invalid_argument,
              "dropout: rate must be in [0, 1)");
      break;
    case LayerKind::relu:
    case LayerKind::softmax:
      break;
  }
}

Shape LayerSpec::infer_shape(const Shape& in) const {
  validate();
  const std::string name(to_string(kind));
  auto need_rank = [&](std::size_t r) {
    require(in.size() == r, ErrorCode::shape,
            name + ": expected rank " + std::to_string(r) + " input, got " + shape_string(in));
  };
  auto need_channels = [&](std::size_t c) {
    require(c == in_channels, ErrorCode::shape,
            name + ": expected " + std::to_string(in_channels) + " channels, got " +
                std::to_string(c));
  };
  switch (kind) {
    case LayerKind::conv1d:
      need_rank(3);
      need_channels(in[1]);
      return {in[0], out_channels, conv_out_extent(in[2], kernel_w, stride_w, pad_w)};
    case LayerKind::conv2d:
      need_rank(4);
      need_channels(in[1]);
      return {in[0], out_channels, conv_out_extent(in[2], kernel_h, stride_h, pad_h),
              conv_out_extent(in[3], kernel_w, stride_w, pad_w)};
    case LayerKind::batchnorm:
      require(in.size() >= 2, ErrorCode::shape, "batchnorm: expected [N,C,...] input");
      need_channels(in[1]);
      return in;
    case LayerKind::dense:
      need_rank(2);
      need_channels(in[1]);
      return {in[0], out_channels};
    case LayerKind::maxpool:
      need_rank(4);
      require(in[2] >= pool && in[3] >= pool, ErrorCode::shape,
              "maxpool: input " + shape_string(in) + " smaller than the window");
      return {in[0], in[1], in[2] / pool, in[3] / pool};
    case LayerKind::meanpool:
      need_rank(3);
      require(in[2] >= 1, ErrorCode::shape, "meanpool: empty time axis");
      return {in[0], in[1], out_len};
    case LayerKind::softmax:
      need_rank(2);
      return in;
    case LayerKind::relu:
    case LayerKind::dropout:
      return in;
  }
  return in;
}

std::vector<Shape> LayerSpec::parameter_shapes() const {
  switch (kind) {
    case LayerKind::conv1d: {
      std::vector<Shape> s{{out_channels, in_channels, kernel_w}};
      if (bias) s.push_back({out_channels});
      return s;
    }
    case LayerKind::conv2d: {
      std::vector<Shape> s{{out_channels, in_channels, kernel_h, kernel_w}};
      if (bias) s.push_back({out_channels});
      return s;
    }
    case LayerKind::dense:
      return {{out_channels, in_channels}, {out_channels}};
    case LayerKind::batchnorm:
      return {{in_channels}, {in_channels}};
    default:
      return {};
  }
}

template <typename T>
Layer<T>::Layer(LayerSpec spec, Rng& init) : spec_(spec) {
  spec_.validate();
  const auto shapes = spec_.parameter_shapes();
  switch (spec_.kind) {
    case LayerKind::conv1d:
    case LayerKind::conv2d:
    case LayerKind::dense: {
      const std::size_t fan_in = numel(shapes[0]) / shapes[0][0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::vector<T> w(numel(shapes[0]));
      for (auto& v : w) v = static_cast<T>(init.uniform(-bound, bound));
      weight_ = Tensor<T>::from(shapes[0], std::move(w), true);
      if (shapes.size() > 1) bias_ = Tensor<T>::zeros(shapes[1], true);
      break;
    }
    case LayerKind::batchnorm:
      weight_ = Tensor<T>::full(shapes[0], T(1), true);
      bias_ = Tensor<T>::zeros(shapes[1], true);
      bn_.running_mean.assign(spec_.in_channels, T(0));
      bn_.running_var.assign(spec_.in_channels, T(1));
      break;
    default:
      break;
  }
}

template <typename T>
Tensor<T> Layer<T>::forward(const Tensor<T>& x, const ForwardContext& ctx) {
  switch (spec_.kind) {
    case LayerKind::conv1d:
      return conv1d(x, weight_, bias_, spec_.stride_w, spec_.pad_w);
    case LayerKind::conv2d:
      return conv2d(x, weight_, bias_,
                    Conv2dGeometry{spec_.stride_h, spec_.stride_w, spec_.pad_h, spec_.pad_w});
    case LayerKind::batchnorm:
      return batch_norm(x, weight_, bias_, bn_, ctx.training);
    case LayerKind::dense:
      return linear(x, weight_, bias_);
    case LayerKind::relu:
      return relu(x);
    case LayerKind::maxpool:
      return max_pool2d(x, spec_.pool);
    case LayerKind::meanpool:
      return adaptive_mean_pool1d(x, spec_.out_len);
    case LayerKind::dropout:
      return dropout(x, spec_.rate, ctx.rng, ctx.training && ctx.dropout_active);
    case LayerKind::softmax:
      return softmax(x);
  }
  return x;
}

template <typename T>
std::vector<ParamRef<T>> Layer<T>::parameters(const std::string& prefix) {
  std::vector<ParamRef<T>> out;
  if (spec_.kind == LayerKind::batchnorm) {
    out.push_back({prefix + ".gamma", &weight_});
    out.push_back({prefix + ".beta", &bias_});
    return out;
  }
  if (weight_.defined()) out.push_back({prefix + ".weight", &weight_});
  if (bias_.defined()) out.push_back({prefix + ".bias", &bias_});
  return out;
}

template <typename T>
std::vector<BufferRef<T>> Layer<T>::buffers(const std::string& prefix) {
  if (spec_.kind != LayerKind::batchnorm) return {};
  return {{prefix + ".running_mean", &bn_.running_mean},
          {prefix + ".running_var", &bn_.running_var}};
}

template class Layer<float>;
template class Layer<double>;

}  // namespace tempofuse::nn
