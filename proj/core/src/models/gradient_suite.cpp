#include "tempofuse/models/gradient_suite.hpp"

#include <algorithm>

#include "tempofuse/models/model.hpp"
#include "tempofuse/nn/gradcheck.hpp"
#include "tempofuse/nn/layers.hpp"
#include "tempofuse/rng.hpp"

namespace tempofuse::models {

namespace {

using nn::Tensor;
using T = double;

/// Random tensor with entries in N(0, 1).
Tensor<T> randn(const nn::Shape& shape, Rng& rng, bool grad = true) {
  std::vector<T> v(nn::numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor<T>::from(shape, std::move(v), grad);
}

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

/// A loss that weights every output entry differently, so that no gradient
/// cancels by symmetry.
struct Projection {
  std::vector<T> weights;
  Tensor<T> operator()(const Tensor<T>& y) {
    if (weights.size() != y.numel()) weights.clear();
    return nn::weighted_sum(y, std::span<const T>(weights));
  }
};

std::vector<T> random_weights(std::size_t n, Rng& rng) {
  std::vector<T> w(n);
  for (auto& x : w) x = rng.normal();
  return w;
}

struct Case {
  std::function<Tensor<T>()> loss;
  std::vector<nn::GradCheckTarget> targets;
  // Keeps layers and tensors alive for the closure.
  std::vector<std::shared_ptr<void>> keep;
};

template <typename X>
std::shared_ptr<X> hold(Case& c, X value) {
  auto p = std::make_shared<X>(std::move(value));
  c.keep.push_back(p);
  return p;
}

/// Builds `layer` on a fresh input and checks input and parameter gradients.
Case layer_case(nn::LayerSpec spec, const nn::Shape& in_shape, Rng& rng, bool training = true) {
  Case c;
  auto layer = hold(c, nn::Layer<T>(spec, rng));
  auto x = hold(c, randn(in_shape, rng));
  const auto out_shape = spec.infer_shape(in_shape);
  auto w = hold(c, random_weights(nn::numel(out_shape), rng));
  c.loss = [layer, x, w, training] {
    const nn::ForwardContext ctx{training, false, nullptr};
    return nn::weighted_sum(layer->forward(*x, ctx), std::span<const T>(*w));
  };
  c.targets.push_back({"x", x.get()});
  for (auto& p : layer->parameters(std::string(nn::to_string(spec.kind)))) {
    c.targets.push_back({p.name, p.tensor});
  }
  return c;
}

Case make_layer_case(const std::string& name, Rng& rng) {
  if (name == "dense") {
    const auto f = pick(rng, 1, 6);
    return layer_case(nn::LayerSpec::dense(f, pick(rng, 1, 6)), {pick(rng, 2, 4), f}, rng);
  }
  if (name == "conv2d") {
    const auto k = pick(rng, 1, 3);
    const auto c = pick(rng, 1, 3);
    auto spec = nn::LayerSpec::conv2d(c, pick(rng, 1, 4), k, pick(rng, 1, 2), pick(rng, 0, k - 1),
                                      rng.below(2) == 0);
    return layer_case(spec, {2, c, pick(rng, k, k + 5), pick(rng, k, k + 5)}, rng);
  }
  if (name == "conv2d_3x3") {
    const auto c = pick(rng, 1, 4);
    auto spec = nn::LayerSpec::conv2d(c, pick(rng, 1, 4), 3, 1, 1, rng.below(2) == 0);
    return layer_case(spec, {2, c, pick(rng, 1, 7), pick(rng, 1, 9)}, rng);
  }
  if (name == "conv2d_wide") {
    // Enough channels to take the matrix-multiply path.
    const auto c = pick(rng, 17, 20);
    auto spec = nn::LayerSpec::conv2d(c, 16, pick(rng, 1, 3), 1, 1, true);
    return layer_case(spec, {2, c, pick(rng, 3, 4), pick(rng, 3, 4)}, rng);
  }
  if (name == "conv1d") {
    const auto k = pick(rng, 1, 5);
    const auto c = pick(rng, 1, 4);
    auto spec = nn::LayerSpec::conv1d(c, pick(rng, 1, 4), k, pick(rng, 1, 5), pick(rng, 0, 2));
    return layer_case(spec, {2, c, pick(rng, k, k + 12)}, rng);
  }
  if (name == "batchnorm") {
    const auto c = pick(rng, 1, 4);
    const bool four_d = rng.below(2) == 0;
    const nn::Shape shape = four_d ? nn::Shape{pick(rng, 2, 3), c, pick(rng, 1, 4), pick(rng, 1, 4)}
                                   : nn::Shape{pick(rng, 2, 6), c};
    return layer_case(nn::LayerSpec::batchnorm(c), shape, rng);
  }
  if (name == "batchnorm_eval") {
    const auto c = pick(rng, 1, 4);
    return layer_case(nn::LayerSpec::batchnorm(c), {pick(rng, 1, 3), c, 3, 2}, rng, false);
  }
  if (name == "relu") {
    return layer_case(nn::LayerSpec::relu(), {pick(rng, 1, 3), pick(rng, 1, 5), pick(rng, 1, 5)},
                      rng);
  }
  if (name == "maxpool") {
    const auto k = pick(rng, 2, 3);
    return layer_case(nn::LayerSpec::maxpool(k),
                      {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, k, 3 * k + 1),
                       pick(rng, k, 3 * k + 1)},
                      rng);
  }
  if (name == "meanpool") {
    return layer_case(nn::LayerSpec::meanpool(pick(rng, 1, 8)),
                      {pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 20)}, rng);
  }
  if (name == "dropout") {
    return layer_case(nn::LayerSpec::dropout(0.5), {pick(rng, 1, 3), pick(rng, 1, 6)}, rng);
  }
  if (name == "softmax") {
    return layer_case(nn::LayerSpec::softmax(), {pick(rng, 1, 4), pick(rng, 2, 6)}, rng);
  }
  if (name == "cross_entropy") {
    Case c;
    const auto n = pick(rng, 1, 4), k = pick(rng, 2, 6);
    auto x = hold(c, randn({n, k}, rng));
    auto labels = hold(c, std::vector<std::size_t>(n));
    for (auto& l : *labels) l = rng.below(k);
    c.loss = [x, labels] { return nn::cross_entropy(*x, std::span<const std::size_t>(*labels)); };
    c.targets.push_back({"logits", x.get()});
    return c;
  }
  if (name == "global_maxpool") {
    Case c;
    auto x = hold(c, randn({pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 1, 4), pick(rng, 1, 4)}, rng));
    auto w = hold(c, random_weights(x->dim(0) * x->dim(1), rng));
    c.loss = [x, w] { return nn::weighted_sum(nn::global_max_pool(*x), std::span<const T>(*w)); };
    c.targets.push_back({"x", x.get()});
    return c;
  }
  if (name == "concat") {
    Case c;
    const auto n = pick(rng, 1, 3);
    auto a = hold(c, randn({n, pick(rng, 1, 4), 3}, rng));
    auto b = hold(c, randn({n, pick(rng, 1, 4), 3}, rng));
    auto w = hold(c, random_weights(n * (a->dim(1) + b->dim(1)) * 3, rng));
    c.loss = [a, b, w] {
      auto y = nn::concat<T>({*a, *b}, 1);
      y = nn::reshape(y, {y.numel()});
      return nn::weighted_sum(y, std::span<const T>(*w));
    };
    c.targets.push_back({"a", a.get()});
    c.targets.push_back({"b", b.get()});
    return c;
  }
  // residual block: conv-bn-relu-conv-bn, projected skip, relu, pool
  Case c;
  Rng& r = rng;
  const auto cin = pick(r, 1, 3), cout = pick(r, 2, 4);
  auto ca = hold(c, nn::Layer<T>(nn::LayerSpec::conv2d(cin, cout, 3, 1, 1, false), r));
  auto ba = hold(c, nn::Layer<T>(nn::LayerSpec::batchnorm(cout), r));
  auto cb = hold(c, nn::Layer<T>(nn::LayerSpec::conv2d(cout, cout, 3, 1, 1, false), r));
  auto bb = hold(c, nn::Layer<T>(nn::LayerSpec::batchnorm(cout), r));
  auto pr = hold(c, nn::Layer<T>(nn::LayerSpec::conv2d(cin, cout, 1, 1, 0, true), r));
  auto x = hold(c, randn({2, cin, pick(r, 2, 6), pick(r, 2, 6)}, r));
  auto w = hold(c, random_weights(2 * cout * (x->dim(2) / 2) * (x->dim(3) / 2), r));
  c.loss = [=] {
    const nn::ForwardContext ctx{true, false, nullptr};
    auto a = nn::relu(ba->forward(ca->forward(*x, ctx), ctx));
    auto y = bb->forward(cb->forward(a, ctx), ctx);
    auto h = nn::max_pool2d(nn::relu(nn::add(y, pr->forward(*x, ctx))), std::size_t{2});
    return nn::weighted_sum(h, std::span<const T>(*w));
  };
  c.targets.push_back({"x", x.get()});
  const char* prefixes[] = {"conv_a", "bn_a", "conv_b", "bn_b", "proj"};
  std::size_t li = 0;
  for (auto* l : {ca.get(), ba.get(), cb.get(), bb.get(), pr.get()}) {
    for (auto& p : l->parameters(prefixes[li++])) {
      c.targets.push_back({p.name, p.tensor});
    }
  }
  return c;
}

/// Reduced model: small input extents keep the check fast while every
/// layer of the architecture stays on the path.
ModelConfig reduced_config(ModelKind kind, const GradientSuiteOptions& o) {
  ModelConfig cfg;
  cfg.kind = kind;
  cfg.frames = 24;
  cfg.backbone.channels.assign(o.blocks, o.channels);
  cfg.backbone.mel_bands = 16;
  cfg.tempo.channels = o.channels;
  cfg.tempo.embed_channels = o.channels;
  cfg.tempo.pool_len = 4;
  cfg.tempo.fourier_bins = 7;
  cfg.tempo.autocorr_bins = 9;
  cfg.classifier.hidden = 2 * o.channels;
  cfg.classifier.n_classes = 5;
  return cfg;
}

Case make_model_case(ModelKind kind, const GradientSuiteOptions& o, Rng& rng) {
  Case c;
  const auto cfg = reduced_config(kind, o);
  auto model = hold(c, Model<T>(cfg, rng.next()));
  const std::size_t n = 3;
  auto input = hold(c, ModelInput<T>{});
  if (uses_mel(kind)) input->mel = randn({n, 1, cfg.backbone.mel_bands, cfg.frames}, rng, false);
  if (uses_fourier(kind)) input->fourier = randn({n, cfg.tempo.fourier_bins, cfg.frames}, rng, false);
  if (uses_autocorr(kind)) {
    input->autocorr = randn({n, cfg.tempo.autocorr_bins, cfg.frames}, rng, false);
  }
  auto labels = hold(c, std::vector<std::size_t>(n));
  for (auto& l : *labels) l = rng.below(cfg.classifier.n_classes);
  auto w = hold(c, random_weights(n * cfg.classifier.n_classes, rng));
  c.loss = [model, input, labels, w] {
    const nn::ForwardContext ctx{true, false, nullptr};
    auto logits = model->forward(*input, ctx);
    return nn::add(nn::cross_entropy(logits, std::span<const std::size_t>(*labels)),
                   nn::weighted_sum(logits, std::span<const T>(*w)));
  };
  for (auto& p : model->parameters()) c.targets.push_back({p.name, p.tensor});
  return c;
}

}  // namespace

std::vector<GradientCaseResult> run_gradient_suite(
    const GradientSuiteOptions& options,
    const std::function<void(const GradientCaseResult&)>& on_case) {
  std::vector<std::string> names;
  if (options.layers) {
    names = {"dense",   "conv2d",  "conv2d_3x3", "conv2d_wide",   "conv1d",
             "batchnorm", "batchnorm_eval", "relu",   "maxpool", "global_maxpool",
             "meanpool", "dropout", "softmax",    "cross_entropy", "concat",
             "residual_block"};
  }
  const std::vector<ModelKind> kinds = {ModelKind::mel_only, ModelKind::ftg_only,
                                        ModelKind::actg_only, ModelKind::early_fusion,
                                        ModelKind::late_fusion};
  const std::size_t n_layer_cases = names.size();
  if (options.models) {
    for (auto k : kinds) names.push_back("model:" + std::string(to_string(k)));
  }

  std::vector<GradientCaseResult> results;
  for (std::size_t ci = 0; ci < names.size(); ++ci) {
    GradientCaseResult res;
    res.name = names[ci];
    for (std::size_t s = 0; s < options.seeds; ++s) {
      Rng rng(mix_seed(options.base_seed, ci * 1000003ULL + s));
      Case c = ci < n_layer_cases ? make_layer_case(names[ci], rng)
                                  : make_model_case(kinds[ci - n_layer_cases], options, rng);
      nn::GradCheckOptions gopt;
      gopt.coords_per_tensor = options.coords_per_tensor;
      gopt.seed = rng.next();
      const auto rep = nn::finite_difference_check(c.loss, c.targets, gopt);
      ++res.seeds;
      res.checked += rep.checked;
      res.skipped += rep.skipped;
      if (rep.max_rel_error >= res.max_rel_error) {
        res.max_rel_error = rep.max_rel_error;
        res.worst = rep.worst + " (seed " + std::to_string(s) + ")";
      }
    }
    res.passed = res.checked > 0 && res.max_rel_error < options.tolerance;
    if (on_case) on_case(res);
    results.push_back(std::move(res));
  }
  return results;
}

}  // namespace tempofuse::models
