#include "tempofuse/models/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include "tempofuse/binary_format.hpp"
#include "tempofuse/error.hpp"

namespace tempofuse::models {

namespace {

constexpr std::uint8_t kTagParam = 0x20;
constexpr std::uint8_t kTagBuffer = 0x21;
constexpr std::uint8_t kTagAdamM = 0x22;
constexpr std::uint8_t kTagAdamV = 0x23;

template <typename T>
std::vector<float> to_float(std::span<const T> v) {
  return std::vector<float>(v.begin(), v.end());
}

TaggedMatrix as_matrix(std::uint8_t tag, const nn::Shape& shape, std::vector<float> values) {
  TaggedMatrix m;
  m.tag = tag;
  m.rows = static_cast<std::uint32_t>(shape.empty() ? 1 : shape[0]);
  m.cols = static_cast<std::uint32_t>(m.rows == 0 ? 0 : values.size() / m.rows);
  m.values = std::move(values);
  return m;
}

}  // namespace

bool OptimizerSnapshot::operator==(const OptimizerSnapshot& o) const {
  if (step != o.step || config.lr != o.config.lr || config.beta1 != o.config.beta1 ||
      config.beta2 != o.config.beta2 || config.eps != o.config.eps ||
      moments.size() != o.moments.size()) {
    return false;
  }
  for (std::size_t i = 0; i < moments.size(); ++i) {
    if (moments[i].m != o.moments[i].m || moments[i].v != o.moments[i].v) return false;
  }
  return true;
}

template <typename T>
Checkpoint capture(Model<T>& model, const nn::Adam<T>* optimizer,
                   std::vector<features::NormalizationStats> stats) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  for (const auto& p : model.parameters()) {
    ckpt.parameters.push_back(to_float<T>(std::as_const(*p.tensor).data()));
  }
  for (const auto& b : model.buffers()) ckpt.buffers.push_back(to_float<T>(*b.values));
  if (optimizer != nullptr) {
    OptimizerSnapshot snap;
    snap.step = optimizer->steps();
    snap.config = optimizer->config();
    for (const auto& mom : optimizer->moments()) {
      snap.moments.push_back({to_float<T>(mom.m), to_float<T>(mom.v)});
    }
    ckpt.optimizer = std::move(snap);
  }
  ckpt.stats = std::move(stats);
  return ckpt;
}

template <typename T>
void restore(const Checkpoint& ckpt, Model<T>& model) {
  nlohmann::json a = ckpt.config;
  nlohmann::json b = model.config();
  require(a == b, ErrorCode::invalid_argument, "checkpoint config does not match the model");
  auto params = model.parameters();
  auto buffers = model.buffers();
  require(params.size() == ckpt.parameters.size(), ErrorCode::shape,
          "checkpoint has " + std::to_string(ckpt.parameters.size()) +
              " parameter tensors, config implies " + std::to_string(params.size()));
  require(buffers.size() == ckpt.buffers.size(), ErrorCode::shape,
          "checkpoint has " + std::to_string(ckpt.buffers.size()) +
              " buffers, config implies " + std::to_string(buffers.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].tensor->data();
    const auto& src = ckpt.parameters[i];
    require(src.size() == dst.size(), ErrorCode::shape,
            "parameter " + params[i].name + " has " + std::to_string(src.size()) +
                " values, expected " + std::to_string(dst.size()));
    std::copy(src.begin(), src.end(), dst.begin());
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    auto& dst = *buffers[i].values;
    const auto& src = ckpt.buffers[i];
    require(src.size() == dst.size(), ErrorCode::shape,
            "buffer " + buffers[i].name + " length mismatch");
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

template <typename T>
void restore_optimizer(const Checkpoint& ckpt, nn::Adam<T>& optimizer) {
  require(ckpt.optimizer.has_value(), ErrorCode::state,
          "checkpoint has no optimizer state (inference only)");
  std::vector<nn::AdamMoments<T>> moments;
  for (const auto& m : ckpt.optimizer->moments) {
    moments.push_back({std::vector<T>(m.m.begin(), m.m.end()),
                       std::vector<T>(m.v.begin(), m.v.end())});
  }
  optimizer.restore(ckpt.optimizer->step, std::move(moments));
}

Model<float> build_model(const Checkpoint& ckpt) {
  Model<float> model(ckpt.config, 0);
  restore(ckpt, model);
  return model;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Model<float> shape_model(ckpt.config, 0);
  auto params = shape_model.parameters();
  require(params.size() == ckpt.parameters.size(), ErrorCode::shape,
          "checkpoint parameter count does not match its config");

  nlohmann::json header;
  header["model"] = ckpt.config;
  header["features"] = ckpt.features;
  if (ckpt.optimizer) {
    const auto& o = *ckpt.optimizer;
    header["optimizer"] = {{"step", o.step},
                           {"lr", o.config.lr},
                           {"beta1", o.config.beta1},
                           {"beta2", o.config.beta2},
                           {"eps", o.config.eps}};
  } else {
    header["optimizer"] = nullptr;
  }
  const std::string json = header.dump();

  std::vector<TaggedMatrix> matrices;
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(ckpt.parameters[i].size() == params[i].tensor->numel(), ErrorCode::shape,
            "parameter " + params[i].name + " length mismatch");
    matrices.push_back(as_matrix(kTagParam, params[i].tensor->shape(), ckpt.parameters[i]));
  }
  for (const auto& b : ckpt.buffers) matrices.push_back(as_matrix(kTagBuffer, {b.size()}, b));
  if (ckpt.optimizer) {
    require(ckpt.optimizer->moments.size() == params.size(), ErrorCode::shape,
            "optimizer state does not match the parameter list");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& mom = ckpt.optimizer->moments[i];
      matrices.push_back(as_matrix(kTagAdamM, params[i].tensor->shape(), mom.m));
      matrices.push_back(as_matrix(kTagAdamV, params[i].tensor->shape(), mom.v));
    }
  }
  for (const auto& s : ckpt.stats) {
    require(s.mean.size() == s.std.size(), ErrorCode::shape, "stats mean/std length mismatch");
    TaggedMatrix m;
    m.tag = static_cast<std::uint8_t>(features::kStatsTagBase + static_cast<std::uint8_t>(s.kind));
    m.rows = 2;
    m.cols = static_cast<std::uint32_t>(s.mean.size());
    m.values = s.mean;
    m.values.insert(m.values.end(), s.std.begin(), s.std.end());
    matrices.push_back(std::move(m));
  }

  ByteWriter body;
  body.put_u32(kCheckpointVersion);
  body.put_u32(static_cast<std::uint32_t>(json.size()));
  body.put_bytes(std::span(reinterpret_cast<const std::uint8_t*>(json.data()), json.size()));
  body.put_matrices(matrices);
  const auto payload = body.take();

  ByteWriter out;
  out.put_tag("TFCK");
  out.put_bytes(payload);
  out.put_u32(crc32(payload));
  return out.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& what) {
  const auto payload = checked_payload(bytes, "TFCK", what);
  ByteReader in(payload, what);
  const std::uint32_t version = in.get_u32();
  require(version == kCheckpointVersion, ErrorCode::format,
          what + ": unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t json_len = in.get_u32();
  const auto json_bytes = in.get_bytes(json_len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(json_bytes.begin(), json_bytes.end());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, what + ": bad checkpoint header: " + e.what());
  }

  Checkpoint ckpt;
  try {
    ckpt.config = header.at("model").get<ModelConfig>();
    ckpt.features = header.at("features").get<features::FeatureConfig>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, what + ": bad model config: " + e.what());
  }
  const auto matrices = in.get_matrices();
  require(in.remaining() == 0, ErrorCode::format, what + ": trailing bytes after matrices");

  Model<float> shape_model(ckpt.config, 0);
  auto params = shape_model.parameters();
  auto buffers = shape_model.buffers();
  std::vector<nn::AdamMoments<float>> moments;
  std::size_t n_m = 0, n_v = 0;
  for (const auto& m : matrices) {
    if (m.tag == kTagParam) {
      const std::size_t i = ckpt.parameters.size();
      require(i < params.size(), ErrorCode::shape, what + ": more parameters than the config implies");
      const auto& shape = params[i].tensor->shape();
      require(m.rows == shape[0] && m.values.size() == params[i].tensor->numel(),
              ErrorCode::shape,
              what + ": parameter " + params[i].name + " stored as " + std::to_string(m.rows) +
                  "x" + std::to_string(m.cols) + ", config implies " + nn::shape_string(shape));
      ckpt.parameters.push_back(m.values);
    } else if (m.tag == kTagBuffer) {
      const std::size_t i = ckpt.buffers.size();
      require(i < buffers.size() && m.values.size() == buffers[i].values->size(),
              ErrorCode::shape, what + ": buffer list does not match the config");
      ckpt.buffers.push_back(m.values);
    } else if (m.tag == kTagAdamM || m.tag == kTagAdamV) {
      std::size_t& idx = m.tag == kTagAdamM ? n_m : n_v;
      require(idx < params.size() && m.values.size() == params[idx].tensor->numel(),
              ErrorCode::shape, what + ": optimizer state does not match the config");
      if (moments.size() <= idx) moments.resize(idx + 1);
      (m.tag == kTagAdamM ? moments[idx].m : moments[idx].v) = m.values;
      ++idx;
    } else if (m.tag > features::kStatsTagBase && m.tag <= features::kStatsTagBase + 3) {
      require(m.rows == 2, ErrorCode::format, what + ": stats matrix must have 2 rows");
      features::NormalizationStats s;
      s.kind = static_cast<features::FeatureKind>(m.tag - features::kStatsTagBase);
      s.mean.assign(m.values.begin(), m.values.begin() + m.cols);
      s.std.assign(m.values.begin() + m.cols, m.values.end());
      ckpt.stats.push_back(std::move(s));
    } else {
      fail(ErrorCode::format, what + ": unknown matrix tag " + std::to_string(m.tag));
    }
  }
  require(ckpt.parameters.size() == params.size(), ErrorCode::shape,
          what + ": has " + std::to_string(ckpt.parameters.size()) +
              " parameter tensors, config implies " + std::to_string(params.size()));
  require(ckpt.buffers.size() == buffers.size(), ErrorCode::shape,
          what + ": buffer count does not match the config");

  const auto& opt = header.contains("optimizer") ? header["optimizer"] : nlohmann::json();
  if (!opt.is_null()) {
    require(n_m == params.size() && n_v == params.size(), ErrorCode::format,
            what + ": incomplete optimizer state");
    OptimizerSnapshot snap;
    try {
      snap.step = opt.at("step").get<std::uint64_t>();
      snap.config.lr = opt.at("lr").get<double>();
      snap.config.beta1 = opt.at("beta1").get<double>();
      snap.config.beta2 = opt.at("beta2").get<double>();
      snap.config.eps = opt.at("eps").get<double>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::format, what + ": bad optimizer header: " + e.what());
    }
    snap.moments = std::move(moments);
    ckpt.optimizer = std::move(snap);
  } else {
    require(n_m == 0 && n_v == 0, ErrorCode::format,
            what + ": optimizer moments without an optimizer header");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_checkpoint(bytes, path.string());
}

template Checkpoint capture<float>(Model<float>&, const nn::Adam<float>*,
                                   std::vector<features::NormalizationStats>);
template Checkpoint capture<double>(Model<double>&, const nn::Adam<double>*,
                                    std::vector<features::NormalizationStats>);
template void restore<float>(const Checkpoint&, Model<float>&);
template void restore<double>(const Checkpoint&, Model<double>&);
template void restore_optimizer<float>(const Checkpoint&, nn::Adam<float>&);
template void restore_optimizer<double>(const Checkpoint&, nn::Adam<double>&);

}  // namespace tempofuse::models
