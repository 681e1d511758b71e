#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tempofuse/features.hpp"
#include "tempofuse/models/model.hpp"
#include "tempofuse/nn/adam.hpp"

namespace tempofuse::models {

struct OptimizerSnapshot {
  std::uint64_t step = 0;
  nn::AdamConfig config;
  std::vector<nn::AdamMoments<float>> moments;

  bool operator==(const OptimizerSnapshot& o) const;
};

/// Everything needed to rebuild a trained model. Values are stored in
/// single precision in the model's parameter order.
struct Checkpoint {
  ModelConfig config;
  std::vector<std::vector<float>> parameters;
  std::vector<std::vector<float>> buffers;
  /// Absent for inference-only checkpoints.
  std::optional<OptimizerSnapshot> optimizer;
  std::vector<features::NormalizationStats> stats;
  /// Feature extraction settings the model was trained on.
  features::FeatureConfig features;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
Checkpoint capture(Model<T>& model, const nn::Adam<T>* optimizer = nullptr,
                   std::vector<features::NormalizationStats> stats = {});

/// Copies parameters and running statistics into `model`; throws on any
/// config or shape mismatch.
template <typename T>
void restore(const Checkpoint& ckpt, Model<T>& model);

template <typename T>
void restore_optimizer(const Checkpoint& ckpt, nn::Adam<T>& optimizer);

Model<float> build_model(const Checkpoint& ckpt);

/// "TFCK" | u32 version | u32 config length | canonical JSON |
/// u32 count | tagged matrices | u32 CRC32
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& what);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace tempofuse::models
