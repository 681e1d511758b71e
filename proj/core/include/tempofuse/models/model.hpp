#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tempofuse/nn/layers.hpp"

namespace tempofuse::models {

enum class ModelKind { mel_only, ftg_only, actg_only, early_fusion, late_fusion };

/// CLI spelling: mel_only, ftg_only, actg_only, early, late.
std::string_view to_string(ModelKind kind);
/// Accepts the CLI spelling and the long forms early_fusion / late_fusion.
ModelKind model_kind_from_string(std::string_view name);

bool uses_mel(ModelKind kind);
bool uses_fourier(ModelKind kind);
bool uses_autocorr(ModelKind kind);

/// Residual Mel-spectrogram feature extractor.
struct BackboneConfig {
  /// Output channels of each block; its length is the block count.
  std::vector<std::size_t> channels = std::vector<std::size_t>(7, 128);
  std::size_t mel_bands = 128;

  std::size_t n_blocks() const noexcept { return channels.size(); }
  std::size_t feature_width() const { return channels.back(); }
  void validate(std::size_t frames) const;
};

/// Four parallel 1-D convolutions per tempogram, a 2-D convolution over the
/// stacked pooled outputs, and a global max pool.
struct TempoBranchConfig {
  std::array<std::size_t, 4> kernels{3, 3, 5, 5};
  std::array<std::size_t, 4> strides{2, 3, 3, 5};
  std::size_t channels = 64;
  /// Each 1-D branch output is mean-pooled over time to this length.
  std::size_t pool_len = 8;
  std::size_t embed_channels = 64;
  std::size_t embed_kernel = 3;
  std::size_t fourier_bins = 193;
  std::size_t autocorr_bins = 384;

  void validate(std::size_t frames) const;
};

/// dense(hidden) + ReLU + dropout + dense(n_classes)
struct ClassifierConfig {
  std::size_t hidden = 512;
  std::size_t n_classes = 30;
  double dropout = 0.5;

  void validate() const;
};

struct ModelConfig {
  ModelKind kind = ModelKind::mel_only;
  std::size_t frames = 200;
  BackboneConfig backbone;
  TempoBranchConfig tempo;
  ClassifierConfig classifier;
  /// Optional; when present its length must equal n_classes.
  std::vector<std::string> class_names;

  void validate() const;
  /// Width of the vector fed to the classifier.
  std::size_t classifier_input() const;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

/// Batch of aligned chunks. Tensors not used by the model kind may be left
/// undefined. mel [N,1,bands,frames], fourier [N,193,frames],
/// autocorr [N,384,frames].
template <typename T>
struct ModelInput {
  nn::Tensor<T> mel;
  nn::Tensor<T> fourier;
  nn::Tensor<T> autocorr;
};

template <typename T>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Logits [N, n_classes].
  nn::Tensor<T> forward(const ModelInput<T>& input, const nn::ForwardContext& ctx);

  const ModelConfig& config() const noexcept { return cfg_; }
  /// Stable order; names are dotted paths.
  std::vector<nn::ParamRef<T>> parameters();
  std::vector<nn::BufferRef<T>> buffers();
  std::size_t parameter_count();

 private:
  struct Impl;
  ModelConfig cfg_;
  std::unique_ptr<Impl> impl_;
};

/// Parameter count implied by a config, without building the model.
std::size_t parameter_count(const ModelConfig& cfg);

}  // namespace tempofuse::models
