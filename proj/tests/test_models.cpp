#include <doctest.h>

#include <cmath>
#include <fstream>

#include "model_support.hpp"
#include "support.hpp"
#include "tempofuse/binary_format.hpp"
#include "tempofuse/error.hpp"
#include "tempofuse/models/checkpoint.hpp"
#include "tempofuse/models/gradient_suite.hpp"
#include "tempofuse/models/model.hpp"
#include "tempofuse/nn/adam.hpp"
#include "tempofuse/nn/ops.hpp"

using namespace tempofuse;
using namespace tempofuse::models;
using test_support::all_kinds;
using test_support::random_input;
using test_support::small_config;

namespace {

std::vector<float> values(const nn::Tensor<float>& t) { return {t.data().begin(), t.data().end()}; }

std::size_t count_prefix(Model<float>& m, const std::string& prefix) {
  std::size_t n = 0;
  for (auto& p : m.parameters()) {
    if (p.name.rfind(prefix, 0) == 0 && p.name.find(".weight") != std::string::npos) ++n;
  }
  return n;
}

nn::Tensor<float>* find_param(Model<float>& m, const std::string& name) {
  for (auto& p : m.parameters()) {
    if (p.name == name) return p.tensor;
  }
  FAIL("no parameter " << name);
  return nullptr;
}

}  // namespace

TEST_CASE("default mel-only model maps 1x1x128x200 to 30 logits") {
  ModelConfig cfg;
  Model<float> model(cfg, 1);
  Rng rng(2);
  const auto logits = model.forward(random_input<float>(cfg, 1, rng), {});
  CHECK(logits.shape() == nn::Shape{1, 30});
}

TEST_CASE("parameter counts of the default configs") {
  // by hand: block = 9 c_in c + 9 c^2 + 4 c (+ c_in c + c projection),
  // tempo conv1d = 64 rows k + 64, conv2d = 64*64*9 + 64, dense = in out + out
  const std::pair<ModelKind, std::size_t> table[] = {
      {ModelKind::mel_only, 2003358}, {ModelKind::ftg_only, 283486},
      {ModelKind::actg_only, 479070}, {ModelKind::early_fusion, 2664158},
      {ModelKind::late_fusion, 2664414}};
  for (auto [kind, expected] : table) {
    ModelConfig cfg;
    cfg.kind = kind;
    CAPTURE(to_string(kind));
    CHECK(parameter_count(cfg) == expected);
  }
  ModelConfig ftg;
  ftg.kind = ModelKind::ftg_only;
  CHECK(Model<float>(ftg, 0).parameter_count() == 283486);
}

TEST_CASE("classifier input widths") {
  ModelConfig cfg;
  CHECK(cfg.classifier_input() == 128);
  cfg.kind = ModelKind::late_fusion;
  CHECK(cfg.classifier_input() == 192);
  cfg.kind = ModelKind::ftg_only;
  CHECK(cfg.classifier_input() == 64);
}

TEST_CASE("tempo branch structure") {
  Model<float> early(small_config(ModelKind::early_fusion), 3);
  Model<float> late(small_config(ModelKind::late_fusion), 3);
  CHECK(count_prefix(early, "tempo.input.conv1d") == 4);
  CHECK(count_prefix(late, "tempo.fourier.conv1d") + count_prefix(late, "tempo.autocorr.conv1d") == 8);
  // early fusion stacks 193 + 384 = 577 input rows
  CHECK(find_param(early, "tempo.input.conv1d_0.weight")->shape() == nn::Shape{8, 577, 3});
  CHECK(find_param(late, "tempo.fourier.conv1d_3.weight")->shape() == nn::Shape{8, 193, 5});
  CHECK(find_param(late, "tempo.autocorr.conv1d_0.weight")->shape() == nn::Shape{8, 384, 3});
}

TEST_CASE("tempogram-only models check their row counts") {
  Rng rng(4);
  Model<float> ftg(small_config(ModelKind::ftg_only), 5);
  ModelInput<float> in;
  in.fourier = test_support::randn<float>({2, 384, 200}, rng);
  CHECK_THROWS_AS(ftg.forward(in, {}), Error);
  in.fourier = test_support::randn<float>({2, 193, 200}, rng);
  CHECK(ftg.forward(in, {}).shape() == nn::Shape{2, 5});

  Model<float> actg(small_config(ModelKind::actg_only), 5);
  ModelInput<float> in2;
  in2.autocorr = test_support::randn<float>({2, 193, 200}, rng);
  CHECK_THROWS_AS(actg.forward(in2, {}), Error);
  ModelInput<float> none;
  CHECK_THROWS(actg.forward(none, {}));
}

TEST_CASE("zero tempograms with zero biases give a uniform softmax") {
  for (auto kind : {ModelKind::ftg_only, ModelKind::actg_only}) {
    auto cfg = small_config(kind, 30);
    Model<float> model(cfg, 6);
    ModelInput<float> in;
    if (uses_fourier(kind)) in.fourier = nn::Tensor<float>::zeros({1, 193, 200});
    if (uses_autocorr(kind)) in.autocorr = nn::Tensor<float>::zeros({1, 384, 200});
    const auto p = nn::softmax(model.forward(in, {}));
    for (float v : p.data()) CHECK(v == doctest::Approx(1.0 / 30));
  }
}

TEST_CASE("a zeroed output layer gives a uniform softmax") {
  auto cfg = small_config(ModelKind::mel_only, 30);
  Model<float> model(cfg, 7);
  for (auto& v : find_param(model, "classifier.output.weight")->data()) v = 0.0f;
  Rng rng(8);
  const auto p = nn::softmax(model.forward(random_input<float>(cfg, 3, rng), {}));
  for (float v : p.data()) CHECK(v == doctest::Approx(1.0 / 30));
}

TEST_CASE("eval-mode forward is per-sample and deterministic") {
  for (auto kind : all_kinds()) {
    CAPTURE(to_string(kind));
    const auto cfg = small_config(kind);
    Model<float> model(cfg, 9);
    Rng rng(10);
    const auto in = random_input<float>(cfg, 2, rng);
    const auto a = values(model.forward(in, {}));
    CHECK(a == values(model.forward(in, {})));

    ModelInput<float> doubled;
    auto twice = [](const nn::Tensor<float>& t) {
      return t.defined() ? nn::concat<float>({t, t}, 0) : t;
    };
    doubled.mel = twice(in.mel);
    doubled.fourier = twice(in.fourier);
    doubled.autocorr = twice(in.autocorr);
    const auto b = values(model.forward(doubled, {}));
    REQUIRE(b.size() == 2 * a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-5));
      CHECK(b[i + a.size()] == doctest::Approx(a[i]).epsilon(1e-5));
    }
    const auto p = nn::softmax(model.forward(in, {}));
    for (std::size_t r = 0; r < 2; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < 5; ++c) s += p.data()[r * 5 + c];
      CHECK(s == doctest::Approx(1.0));
    }
  }
}

TEST_CASE("early and late fusion take the same inputs and give the same output shape") {
  const auto ce = small_config(ModelKind::early_fusion), cl = small_config(ModelKind::late_fusion);
  Model<float> early(ce, 11), late(cl, 11);
  Rng rng(12);
  const auto in = random_input<float>(ce, 3, rng);
  CHECK(early.forward(in, {}).shape() == late.forward(in, {}).shape());
}

TEST_CASE("a silenced tempo embedding leaves fusion a function of the Mel chunk") {
  const auto cfg = small_config(ModelKind::late_fusion);
  Model<float> model(cfg, 13);
  for (auto& v : find_param(model, "tempo.conv2d.weight")->data()) v = 0.0f;
  for (auto& v : find_param(model, "tempo.conv2d.bias")->data()) v = 0.0f;
  Rng rng(14);
  auto a = random_input<float>(cfg, 2, rng);
  auto b = a;
  Rng other(15);
  const auto c = random_input<float>(cfg, 2, other);
  b.fourier = c.fourier;
  b.autocorr = c.autocorr;
  CHECK(values(model.forward(a, {})) == values(model.forward(b, {})));
}

TEST_CASE("every fusion parameter receives gradient") {
  for (auto kind : {ModelKind::early_fusion, ModelKind::late_fusion}) {
    CAPTURE(to_string(kind));
    const auto cfg = small_config(kind);
    Model<float> model(cfg, 16);
    Rng rng(17);
    auto logits = model.forward(random_input<float>(cfg, 4, rng), {true, false, nullptr});
    std::vector<std::size_t> labels{0, 1, 2, 3};
    auto loss = nn::cross_entropy(logits, std::span<const std::size_t>(labels));
    nn::backward(loss);
    for (auto& p : model.parameters()) {
      CAPTURE(p.name);
      const auto g = p.tensor->grad();
      REQUIRE(g.size() == p.tensor->numel());
      CHECK(std::any_of(g.begin(), g.end(), [](float v) { return v != 0.0f; }));
    }
  }
}

TEST_CASE("whole models pass the gradient check") {
  GradientSuiteOptions o;
  o.layers = false;
  o.seeds = 3;
  o.base_seed = 99;
  const auto results = run_gradient_suite(o);
  CHECK(results.size() == 5);
  for (const auto& r : results) {
    CAPTURE(r.name);
    CAPTURE(r.worst);
    CHECK(r.passed);
  }
}

TEST_CASE("checkpoint round trip reproduces the forward pass") {
  test_support::TempDir dir;
  for (auto kind : all_kinds()) {
    CAPTURE(to_string(kind));
    auto cfg = small_config(kind);
    cfg.class_names = {"a", "b", "c", "d", "e"};
    Model<float> model(cfg, 18);
    Rng rng(19);
    const auto in = random_input<float>(cfg, 3, rng);
    // one training step so running statistics move away from their defaults
    model.forward(in, {true, false, nullptr});
    const auto before = values(model.forward(in, {}));

    const auto path = dir / (std::string(to_string(kind)) + ".tfck");
    save_checkpoint(capture(model), path);
    const auto ckpt = load_checkpoint(path);
    CHECK_FALSE(ckpt.optimizer.has_value());
    auto restored = build_model(ckpt);
    CHECK(values(restored.forward(in, {})) == before);
    CHECK(encode_checkpoint(ckpt) == read_file_bytes(path));
  }
}

TEST_CASE("optimizer state survives a checkpoint") {
  const auto cfg = small_config(ModelKind::ftg_only);
  Model<float> model(cfg, 20);
  std::vector<nn::Tensor<float>*> params;
  for (auto& p : model.parameters()) params.push_back(p.tensor);
  nn::Adam<float> adam(params, {});
  Rng rng(21);
  auto logits = model.forward(random_input<float>(cfg, 2, rng), {true, false, nullptr});
  std::vector<std::size_t> labels{1, 2};
  auto loss = nn::cross_entropy(logits, std::span<const std::size_t>(labels));
  nn::backward(loss);
  adam.step();

  const auto ckpt = decode_checkpoint(encode_checkpoint(capture(model, &adam)), "memory");
  REQUIRE(ckpt.optimizer.has_value());
  CHECK(ckpt.optimizer->step == 1);
  Model<float> other(cfg, 99);
  restore(ckpt, other);
  std::vector<nn::Tensor<float>*> p2;
  for (auto& p : other.parameters()) p2.push_back(p.tensor);
  nn::Adam<float> adam3(p2, {});
  restore_optimizer(ckpt, adam3);
  CHECK(adam3.steps() == 1);
}

TEST_CASE("tampered or mismatched checkpoints are rejected") {
  test_support::TempDir dir;
  const auto cfg = small_config(ModelKind::mel_only);
  Model<float> model(cfg, 22);
  auto bytes = encode_checkpoint(capture(model));
  auto tampered = bytes;
  tampered[tampered.size() / 2] ^= 0x01;
  try {
    decode_checkpoint(tampered, "tampered");
    FAIL("tampered checkpoint accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::checksum);
  }
  auto truncated = bytes;
  truncated.resize(bytes.size() - 100);
  CHECK_THROWS_AS(decode_checkpoint(truncated, "truncated"), Error);

  auto other_cfg = cfg;
  other_cfg.classifier.hidden = 32;
  Model<float> other(other_cfg, 1);
  CHECK_THROWS_AS(restore(decode_checkpoint(bytes, "ok"), other), Error);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.tfck"), Error);
}

TEST_CASE("config json round trip and validation") {
  auto cfg = small_config(ModelKind::late_fusion);
  cfg.class_names = {"a", "b", "c", "d", "e"};
  const nlohmann::json j = cfg;
  const auto back = j.get<ModelConfig>();
  CHECK(nlohmann::json(back) == j);
  CHECK(model_kind_from_string("early") == ModelKind::early_fusion);
  CHECK(model_kind_from_string("late_fusion") == ModelKind::late_fusion);
  CHECK_THROWS(model_kind_from_string("middle"));
  auto bad = cfg;
  bad.class_names.pop_back();
  CHECK_THROWS(bad.validate());
  bad = cfg;
  bad.backbone.channels.assign(8, 8);  // 2^8 > 200 frames
  CHECK_THROWS(bad.validate());
}
