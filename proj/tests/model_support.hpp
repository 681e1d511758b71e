#pragma once

#include "tempofuse/models/model.hpp"
#include "tempofuse/rng.hpp"

namespace test_support {

inline tempofuse::models::ModelConfig small_config(tempofuse::models::ModelKind kind,
                                                   std::size_t n_classes = 5) {
  tempofuse::models::ModelConfig cfg;
  cfg.kind = kind;
  cfg.backbone.channels = {8, 8};
  cfg.tempo.channels = 8;
  cfg.tempo.embed_channels = 8;
  cfg.classifier.hidden = 16;
  cfg.classifier.n_classes = n_classes;
  return cfg;
}

template <typename T>
tempofuse::nn::Tensor<T> randn(const tempofuse::nn::Shape& shape, tempofuse::Rng& rng) {
  std::vector<T> v(tempofuse::nn::numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal());
  return tempofuse::nn::Tensor<T>::from(shape, std::move(v));
}

/// Random chunks for every modality the config consumes.
template <typename T>
tempofuse::models::ModelInput<T> random_input(const tempofuse::models::ModelConfig& cfg,
                                              std::size_t n, tempofuse::Rng& rng) {
  using namespace tempofuse::models;
  ModelInput<T> in;
  if (uses_mel(cfg.kind)) in.mel = randn<T>({n, 1, cfg.backbone.mel_bands, cfg.frames}, rng);
  if (uses_fourier(cfg.kind)) in.fourier = randn<T>({n, cfg.tempo.fourier_bins, cfg.frames}, rng);
  if (uses_autocorr(cfg.kind)) in.autocorr = randn<T>({n, cfg.tempo.autocorr_bins, cfg.frames}, rng);
  return in;
}

inline const std::vector<tempofuse::models::ModelKind>& all_kinds() {
  using tempofuse::models::ModelKind;
  static const std::vector<ModelKind> kinds{ModelKind::mel_only, ModelKind::ftg_only,
                                            ModelKind::actg_only, ModelKind::early_fusion,
                                            ModelKind::late_fusion};
  return kinds;
}

}  // namespace test_support
