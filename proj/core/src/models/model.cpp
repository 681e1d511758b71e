#include "tempofuse/models/model.hpp"

#include <nlohmann/json.hpp>

#include "tempofuse/error.hpp"

namespace tempofuse::models {

using nn::Layer;
using nn::LayerSpec;
using nn::Tensor;

std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::mel_only: return "mel_only";
    case ModelKind::ftg_only: return "ftg_only";
    case ModelKind::actg_only: return "actg_only";
    case ModelKind::early_fusion: return "early";
    case ModelKind::late_fusion: return "late";
  }
  return "?";
}

ModelKind model_kind_from_string(std::string_view name) {
  if (name == "mel_only") return ModelKind::mel_only;
  if (name == "ftg_only") return ModelKind::ftg_only;
  if (name == "actg_only") return ModelKind::actg_only;
  if (name == "early" || name == "early_fusion") return ModelKind::early_fusion;
  if (name == "late" || name == "late_fusion") return ModelKind::late_fusion;
  fail(ErrorCode::invalid_argument,
       "unknown model kind '" + std::string(name) +
           "' (expected mel_only, ftg_only, actg_only, early, late)");
}

bool uses_mel(ModelKind kind) {
  return kind == ModelKind::mel_only || kind == ModelKind::early_fusion ||
         kind == ModelKind::late_fusion;
}
bool uses_fourier(ModelKind kind) {
  return kind == ModelKind::ftg_only || kind == ModelKind::early_fusion ||
         kind == ModelKind::late_fusion;
}
bool uses_autocorr(ModelKind kind) {
  return kind == ModelKind::actg_only || kind == ModelKind::early_fusion ||
         kind == ModelKind::late_fusion;
}

void BackboneConfig::validate(std::size_t frames) const {
  require(!channels.empty(), ErrorCode::invalid_argument, "backbone needs at least one block");
  for (auto c : channels) {
    require(c > 0, ErrorCode::invalid_argument, "backbone channel counts must be > 0");
  }
  require(mel_bands > 0, ErrorCode::invalid_argument, "mel_bands must be > 0");
  std::size_t h = mel_bands, w = frames;
  for (std::size_t i = 0; i < channels.size(); ++i) {
    h /= 2;
    w /= 2;
    require(h >= 1 && w >= 1, ErrorCode::invalid_argument,
            "a " + std::to_string(mel_bands) + "x" + std::to_string(frames) +
                " input does not survive " + std::to_string(channels.size()) + " 2x2 poolings");
  }
}

void TempoBranchConfig::validate(std::size_t frames) const {
  for (std::size_t i = 0; i < 4; ++i) {
    require(kernels[i] > 0 && strides[i] > 0, ErrorCode::invalid_argument,
            "tempo branch kernels and strides must be > 0");
    require(kernels[i] <= frames, ErrorCode::invalid_argument,
            "tempo branch kernel " + std::to_string(kernels[i]) + " exceeds " +
                std::to_string(frames) + " frames");
  }
  require(channels > 0 && embed_channels > 0 && pool_len > 0, ErrorCode::invalid_argument,
          "tempo branch widths must be > 0");
  require(embed_kernel % 2 == 1, ErrorCode::invalid_argument,
          "tempo branch 2-D kernel must be odd");
  require(fourier_bins > 0 && autocorr_bins > 0, ErrorCode::invalid_argument,
          "tempogram bin counts must be > 0");
}

void ClassifierConfig::validate() const {
  require(hidden > 0, ErrorCode::invalid_argument, "classifier hidden width must be > 0");
  require(n_classes >= 1, ErrorCode::invalid_argument, "n_classes must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::invalid_argument,
          "dropout must be in [0, 1)");
}

void ModelConfig::validate() const {
  require(frames > 0, ErrorCode::invalid_argument, "frames must be > 0");
  if (uses_mel(kind)) backbone.validate(frames);
  if (kind != ModelKind::mel_only) tempo.validate(frames);
  classifier.validate();
  require(class_names.empty() || class_names.size() == classifier.n_classes,
          ErrorCode::invalid_argument,
          "class table has " + std::to_string(class_names.size()) + " names for " +
              std::to_string(classifier.n_classes) + " classes");
}

std::size_t ModelConfig::classifier_input() const {
  std::size_t width = 0;
  if (uses_mel(kind)) width += backbone.feature_width();
  if (kind != ModelKind::mel_only) width += tempo.embed_channels;
  return width;
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = nlohmann::json{
      {"kind", std::string(to_string(cfg.kind))},
      {"frames", cfg.frames},
      {"backbone", {{"channels", cfg.backbone.channels}, {"mel_bands", cfg.backbone.mel_bands}}},
      {"tempo",
       {{"kernels", cfg.tempo.kernels},
        {"strides", cfg.tempo.strides},
        {"channels", cfg.tempo.channels},
        {"pool_len", cfg.tempo.pool_len},
        {"embed_channels", cfg.tempo.embed_channels},
        {"embed_kernel", cfg.tempo.embed_kernel},
        {"fourier_bins", cfg.tempo.fourier_bins},
        {"autocorr_bins", cfg.tempo.autocorr_bins}}},
      {"classifier",
       {{"hidden", cfg.classifier.hidden},
        {"n_classes", cfg.classifier.n_classes},
        {"dropout", cfg.classifier.dropout}}},
      {"class_names", cfg.class_names}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  try {
    ModelConfig out;
    out.kind = model_kind_from_string(j.at("kind").get<std::string>());
    out.frames = j.value("frames", out.frames);
    if (j.contains("backbone")) {
      const auto& b = j.at("backbone");
      out.backbone.channels = b.value("channels", out.backbone.channels);
      out.backbone.mel_bands = b.value("mel_bands", out.backbone.mel_bands);
    }
    if (j.contains("tempo")) {
      const auto& t = j.at("tempo");
      out.tempo.kernels = t.value("kernels", out.tempo.kernels);
      out.tempo.strides = t.value("strides", out.tempo.strides);
      out.tempo.channels = t.value("channels", out.tempo.channels);
      out.tempo.pool_len = t.value("pool_len", out.tempo.pool_len);
      out.tempo.embed_channels = t.value("embed_channels", out.tempo.embed_channels);
      out.tempo.embed_kernel = t.value("embed_kernel", out.tempo.embed_kernel);
      out.tempo.fourier_bins = t.value("fourier_bins", out.tempo.fourier_bins);
      out.tempo.autocorr_bins = t.value("autocorr_bins", out.tempo.autocorr_bins);
    }
    if (j.contains("classifier")) {
      const auto& c = j.at("classifier");
      out.classifier.hidden = c.value("hidden", out.classifier.hidden);
      out.classifier.n_classes = c.value("n_classes", out.classifier.n_classes);
      out.classifier.dropout = c.value("dropout", out.classifier.dropout);
    }
    out.class_names = j.value("class_names", out.class_names);
    cfg = std::move(out);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::format, std::string("model config: ") + e.what());
  }
}

namespace {

template <typename T>
struct ResidualBlock {
  Layer<T> conv_a, bn_a, conv_b, bn_b, proj;
  bool has_proj = false;
};

}  // namespace

template <typename T>
struct Model<T>::Impl {
  std::vector<ResidualBlock<T>> blocks;
  std::vector<Layer<T>> tempo_convs;
  Layer<T> embed_conv;
  Layer<T> hidden, output;
  std::size_t tempo_groups = 0;
};

template <typename T>
Model<T>::Model(ModelConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), impl_(std::make_unique<Impl>()) {
  cfg_.validate();
  Rng init(seed);
  if (uses_mel(cfg_.kind)) {
    std::size_t in = 1;
    for (const std::size_t out : cfg_.backbone.channels) {
      ResidualBlock<T> b;
      b.conv_a = Layer<T>(LayerSpec::conv2d(in, out, 3, 1, 1, false), init);
      b.bn_a = Layer<T>(LayerSpec::batchnorm(out), init);
      b.conv_b = Layer<T>(LayerSpec::conv2d(out, out, 3, 1, 1, false), init);
      b.bn_b = Layer<T>(LayerSpec::batchnorm(out), init);
      if (in != out) {
        b.has_proj = true;
        b.proj = Layer<T>(LayerSpec::conv2d(in, out, 1, 1, 0, true), init);
      }
      impl_->blocks.push_back(std::move(b));
      in = out;
    }
  }
  if (cfg_.kind != ModelKind::mel_only) {
    const auto& t = cfg_.tempo;
    std::vector<std::size_t> inputs;
    switch (cfg_.kind) {
      case ModelKind::ftg_only: inputs = {t.fourier_bins}; break;
      case ModelKind::actg_only: inputs = {t.autocorr_bins}; break;
      case ModelKind::early_fusion: inputs = {t.fourier_bins + t.autocorr_bins}; break;
      case ModelKind::late_fusion: inputs = {t.fourier_bins, t.autocorr_bins}; break;
      case ModelKind::mel_only: break;
    }
    impl_->tempo_groups = inputs.size();
    for (const std::size_t rows : inputs) {
      for (std::size_t k = 0; k < 4; ++k) {
        impl_->tempo_convs.emplace_back(
            LayerSpec::conv1d(rows, t.channels, t.kernels[k], t.strides[k], 0, true), init);
      }
    }
    impl_->embed_conv = Layer<T>(
        LayerSpec::conv2d(t.channels, t.embed_channels, t.embed_kernel, 1, t.embed_kernel / 2),
        init);
  }
  impl_->hidden = Layer<T>(LayerSpec::dense(cfg_.classifier_input(), cfg_.classifier.hidden), init);
  impl_->output =
      Layer<T>(LayerSpec::dense(cfg_.classifier.hidden, cfg_.classifier.n_classes), init);
}

template <typename T>
Model<T>::~Model() = default;
template <typename T>
Model<T>::Model(Model&&) noexcept = default;
template <typename T>
Model<T>& Model<T>::operator=(Model&&) noexcept = default;

namespace {

void need(bool ok, const std::string& msg) { require(ok, ErrorCode::shape, msg); }

template <typename T>
void check_tempogram(const Tensor<T>& t, const char* name, std::size_t rows, std::size_t n,
                     std::size_t frames, ModelKind kind) {
  require(t.defined(), ErrorCode::invalid_argument,
          std::string("model kind ") + std::string(to_string(kind)) + " needs a " + name +
              " tempogram input");
  need(t.rank() == 3 && t.dim(0) == n && t.dim(1) == rows && t.dim(2) == frames,
       std::string(name) + " tempogram input must be [" + std::to_string(n) + "x" +
           std::to_string(rows) + "x" + std::to_string(frames) + "], got " +
           nn::shape_string(t.shape()));
}

}  // namespace

template <typename T>
Tensor<T> Model<T>::forward(const ModelInput<T>& input, const nn::ForwardContext& ctx) {
  const auto kind = cfg_.kind;
  std::size_t n = 0;
  for (const auto* t : {&input.mel, &input.fourier, &input.autocorr}) {
    if (t->defined() && t->rank() > 0) {
      n = t->dim(0);
      break;
    }
  }
  need(n > 0, "model input has no batch");

  std::vector<Tensor<T>> features;
  if (uses_mel(kind)) {
    require(input.mel.defined(), ErrorCode::invalid_argument,
            "model kind " + std::string(to_string(kind)) + " needs a mel input");
    const auto& m = input.mel;
    need(m.rank() == 4 && m.dim(0) == n && m.dim(1) == 1 && m.dim(2) == cfg_.backbone.mel_bands &&
             m.dim(3) == cfg_.frames,
         "mel input must be [" + std::to_string(n) + "x1x" +
             std::to_string(cfg_.backbone.mel_bands) + "x" + std::to_string(cfg_.frames) +
             "], got " + nn::shape_string(m.shape()));
    Tensor<T> h = m;
    for (auto& b : impl_->blocks) {
      auto a = nn::relu(b.bn_a.forward(b.conv_a.forward(h, ctx), ctx));
      auto y = b.bn_b.forward(b.conv_b.forward(a, ctx), ctx);
      auto skip = b.has_proj ? b.proj.forward(h, ctx) : h;
      h = nn::max_pool2d(nn::relu(nn::add(y, skip)), std::size_t{2});
    }
    features.push_back(nn::global_max_pool(h));
  }

  if (kind != ModelKind::mel_only) {
    const auto& t = cfg_.tempo;
    std::vector<Tensor<T>> groups;
    if (uses_fourier(kind)) {
      check_tempogram(input.fourier, "fourier", t.fourier_bins, n, cfg_.frames, kind);
    }
    if (uses_autocorr(kind)) {
      check_tempogram(input.autocorr, "autocorrelation", t.autocorr_bins, n, cfg_.frames, kind);
    }
    switch (kind) {
      case ModelKind::ftg_only: groups = {input.fourier}; break;
      case ModelKind::actg_only: groups = {input.autocorr}; break;
      case ModelKind::early_fusion:
        groups = {nn::concat<T>({input.fourier, input.autocorr}, 1)};
        break;
      case ModelKind::late_fusion: groups = {input.fourier, input.autocorr}; break;
      case ModelKind::mel_only: break;
    }
    std::vector<Tensor<T>> pooled;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      for (std::size_t k = 0; k < 4; ++k) {
        auto y = nn::relu(impl_->tempo_convs[g * 4 + k].forward(groups[g], ctx));
        y = nn::adaptive_mean_pool1d(y, t.pool_len);
        pooled.push_back(nn::reshape(y, {n, t.channels, 1, t.pool_len}));
      }
    }
    auto stacked = nn::concat(pooled, 2);
    features.push_back(nn::global_max_pool(nn::relu(impl_->embed_conv.forward(stacked, ctx))));
  }

  auto z = features.size() == 1 ? features.front() : nn::concat(features, 1);
  auto h = nn::relu(impl_->hidden.forward(z, ctx));
  h = nn::dropout(h, cfg_.classifier.dropout, ctx.rng, ctx.training && ctx.dropout_active);
  return impl_->output.forward(h, ctx);
}

template <typename T>
std::vector<nn::ParamRef<T>> Model<T>::parameters() {
  std::vector<nn::ParamRef<T>> out;
  auto append = [&out](Layer<T>& layer, const std::string& prefix) {
    for (auto& p : layer.parameters(prefix)) out.push_back(std::move(p));
  };
  for (std::size_t i = 0; i < impl_->blocks.size(); ++i) {
    auto& b = impl_->blocks[i];
    const std::string p = "backbone.block" + std::to_string(i);
    append(b.conv_a, p + ".conv_a");
    append(b.bn_a, p + ".bn_a");
    append(b.conv_b, p + ".conv_b");
    append(b.bn_b, p + ".bn_b");
    if (b.has_proj) append(b.proj, p + ".proj");
  }
  for (std::size_t i = 0; i < impl_->tempo_convs.size(); ++i) {
    const std::size_t g = i / 4;
    std::string group = impl_->tempo_groups == 2 ? (g == 0 ? "fourier" : "autocorr") : "input";
    append(impl_->tempo_convs[i], "tempo." + group + ".conv1d_" + std::to_string(i % 4));
  }
  if (cfg_.kind != ModelKind::mel_only) append(impl_->embed_conv, "tempo.conv2d");
  append(impl_->hidden, "classifier.hidden");
  append(impl_->output, "classifier.output");
  return out;
}

template <typename T>
std::vector<nn::BufferRef<T>> Model<T>::buffers() {
  std::vector<nn::BufferRef<T>> out;
  for (std::size_t i = 0; i < impl_->blocks.size(); ++i) {
    auto& b = impl_->blocks[i];
    const std::string p = "backbone.block" + std::to_string(i);
    for (auto& r : b.bn_a.buffers(p + ".bn_a")) out.push_back(std::move(r));
    for (auto& r : b.bn_b.buffers(p + ".bn_b")) out.push_back(std::move(r));
  }
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() {
  std::size_t total = 0;
  for (const auto& p : parameters()) total += p.tensor->numel();
  return total;
}

std::size_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  std::size_t total = 0;
  auto add = [&total](const LayerSpec& spec) {
    for (const auto& s : spec.parameter_shapes()) total += nn::numel(s);
  };
  if (uses_mel(cfg.kind)) {
    std::size_t in = 1;
    for (const std::size_t out : cfg.backbone.channels) {
      add(LayerSpec::conv2d(in, out, 3, 1, 1, false));
      add(LayerSpec::batchnorm(out));
      add(LayerSpec::conv2d(out, out, 3, 1, 1, false));
      add(LayerSpec::batchnorm(out));
      if (in != out) add(LayerSpec::conv2d(in, out, 1, 1, 0, true));
      in = out;
    }
  }
  if (cfg.kind != ModelKind::mel_only) {
    const auto& t = cfg.tempo;
    std::vector<std::size_t> inputs;
    if (cfg.kind == ModelKind::early_fusion) {
      inputs = {t.fourier_bins + t.autocorr_bins};
    } else {
      if (uses_fourier(cfg.kind)) inputs.push_back(t.fourier_bins);
      if (uses_autocorr(cfg.kind)) inputs.push_back(t.autocorr_bins);
    }
    for (const std::size_t rows : inputs) {
      for (std::size_t k = 0; k < 4; ++k) {
        add(LayerSpec::conv1d(rows, t.channels, t.kernels[k], t.strides[k], 0, true));
      }
    }
    add(LayerSpec::conv2d(t.channels, t.embed_channels, t.embed_kernel, 1, t.embed_kernel / 2));
  }
  add(LayerSpec::dense(cfg.classifier_input(), cfg.classifier.hidden));
  add(LayerSpec::dense(cfg.classifier.hidden, cfg.classifier.n_classes));
  return total;
}

template class Model<float>;
template class Model<double>;

}  // namespace tempofuse::models
