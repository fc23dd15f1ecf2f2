#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "fuseret/gradcheck.hpp"
#include "fuseret/model.hpp"
#include "oracles.hpp"

using namespace fuseret;

namespace {

bool bitwise_equal(const TensorD& a, const TensorD& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

TensorD rows(const TensorD& t, const std::vector<Index>& order) {
  Index width = t.numel() / t.dim(0);
  TensorD out(t.shape());
  for (std::size_t i = 0; i < order.size(); ++i) {
    std::copy_n(t.data().data() + order[i] * width, width, out.data().data() + i * width);
  }
  return out;
}

ModelConfig small_config(Modality modality = Modality::multimodal) {
  ModelConfig cfg;
  cfg.modality = modality;
  for (auto* enc : {&cfg.encoder2d, &cfg.encoder3d}) {
    enc->stem_channels = 4;
    enc->stage_blocks = {1, 1};
    enc->stage_channels = {4, 8};
    enc->expansion = 2;
    enc->se_reduction = 4;
  }
  return cfg;
}

}  // namespace

TEST_CASE("se_gate with zero excitation halves the input") {
  std::mt19937_64 rng(1);
  auto x = oracle::random_tensor({2, 4, 3, 3}, rng);
  auto y = se_gate(x, TensorD({1, 4}, 0.0), TensorD({4, 1}, 0.0));
  for (Index i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i] / 2);
}

TEST_CASE("se_gate saturates to identity") {
  std::mt19937_64 rng(2);
  auto x = oracle::random_tensor({1, 4, 2, 2}, rng, 0.1, 1.0);
  TensorD w1({2, 4}, 1.0);
  TensorD w2({4, 2}, 50.0);  // pre-activation >= 8 for positive inputs
  auto y = se_gate(x, w1, w2);
  for (Index i = 0; i < x.numel(); ++i) CHECK(std::abs(y[i] - x[i]) < 1e-3);
}

TEST_CASE("se_gate matches hand-rolled pool-mlp-sigmoid-scale") {
  std::mt19937_64 rng(3);
  auto x = oracle::random_tensor({1, 4, 2, 2}, rng);
  auto w1 = oracle::random_tensor({2, 4}, rng);
  auto w2 = oracle::random_tensor({4, 2}, rng);
  auto y = se_gate(x, w1, w2);
  double pooled[4];
  for (Index c = 0; c < 4; ++c) {
    pooled[c] = 0;
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 2; ++j) pooled[c] += x.at({0, c, i, j}) / 4.0;
  }
  double hidden[2];
  for (Index h = 0; h < 2; ++h) {
    hidden[h] = 0;
    for (Index c = 0; c < 4; ++c) hidden[h] += w1.at({h, c}) * pooled[c];
    hidden[h] = std::max(0.0, hidden[h]);
  }
  for (Index c = 0; c < 4; ++c) {
    double pre = 0;
    for (Index h = 0; h < 2; ++h) pre += w2.at({c, h}) * hidden[h];
    const double gate = 1.0 / (1.0 + std::exp(-pre));
    CHECK(gate > 0.0);
    CHECK(gate < 1.0);
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 2; ++j) {
        CHECK(std::abs(y.at({0, c, i, j}) - x.at({0, c, i, j}) * gate) < 1e-10);
      }
  }
  CHECK_THROWS_AS(se_gate(x, TensorD({2, 3}), w2), DimensionError);
}

TEST_CASE("se gates stay strictly inside (0,1)") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = oracle::random_tensor({2, 8, 3, 3}, rng, -2, 2);
    auto w1 = oracle::random_tensor({2, 8}, rng, -3, 3);
    auto w2 = oracle::random_tensor({8, 2}, rng, -3, 3);
    auto y = se_gate(x, w1, w2);
    for (Index i = 0; i < x.numel(); ++i) {
      if (x[i] == 0.0) continue;
      const double ratio = y[i] / x[i];
      CHECK(ratio > 0.0);
      CHECK(ratio < 1.0);
    }
  }
}

TEST_CASE("identity-configured bottleneck block gives relu(2x)") {
  Rng rng(5);
  BottleneckBlock<double> block(2, 4, 4, 1, 1, 2, true, rng);
  REQUIRE_FALSE(block.shortcut.has_value());
  for (auto* w : {&block.conv1, &block.conv3}) {
    std::fill(w->data().begin(), w->data().end(), 0.0);
    for (Index c = 0; c < 4; ++c) w->at({c, c, 0, 0}) = 1.0;
  }
  std::fill(block.conv2.data().begin(), block.conv2.data().end(), 0.0);
  for (Index c = 0; c < 4; ++c) block.conv2.at({c, c, 1, 1}) = 1.0;
  for (auto* bn : {&block.bn1, &block.bn2, &block.bn3}) {
    std::fill(bn->stats.running_var.data().begin(), bn->stats.running_var.data().end(),
              1.0 - kBatchNormEps);
  }
  std::fill(block.se_w1->data().begin(), block.se_w1->data().end(), 1.0);
  std::fill(block.se_w2->data().begin(), block.se_w2->data().end(), 1000.0);

  std::mt19937_64 data_rng(6);
  auto x = oracle::random_tensor({2, 4, 5, 5}, data_rng);
  auto y = block.forward(x, NormMode::eval);
  for (Index i = 0; i < x.numel(); ++i) {
    CHECK(std::abs(y[i] - std::max(0.0, 2.0 * x[i])) < 1e-3);
  }
}

TEST_CASE("zeroed expand conv leaves relu(shortcut(x))") {
  Rng rng(7);
  BottleneckBlock<double> block(3, 4, 2, 4, 2, 4, true, rng);
  REQUIRE(block.shortcut.has_value());
  std::fill(block.conv3.data().begin(), block.conv3.data().end(), 0.0);
  std::mt19937_64 data_rng(8);
  auto x = oracle::random_tensor({1, 4, 4, 4, 4}, data_rng);
  auto y = block.forward(x, NormMode::eval);
  auto skip = relu((*block.shortcut_bn)(conv3d(x, *block.shortcut, TensorD(), 2, 0), NormMode::eval));
  CHECK(bitwise_equal(y, skip));
}

TEST_CASE("bottleneck block equals composed primitives bitwise") {
  for (int dims : {2, 3}) {
    Rng rng(9 + dims);
    BottleneckBlock<double> block(dims, 6, 3, 4, 2, 4, true, rng);
    BottleneckBlock<double> twin = block;  // shares weights, separate stats copies below
    std::mt19937_64 data_rng(10);
    Shape shape{2, 6, 5, 6};
    if (dims == 3) shape.push_back(4);
    auto x = oracle::random_tensor(shape, data_rng);
    auto y = block.forward(x, NormMode::train);

    const TensorD none;
    BatchNormStats<double> s1(3), s2(3), s3(12), s4(12);
    auto h = relu(batch_norm(conv(x, twin.conv1, none, 1, 0), twin.bn1.gamma, twin.bn1.beta, s1, NormMode::train));
    h = relu(batch_norm(conv(h, twin.conv2, none, 2, 1), twin.bn2.gamma, twin.bn2.beta, s2, NormMode::train));
    h = batch_norm(conv(h, twin.conv3, none, 1, 0), twin.bn3.gamma, twin.bn3.beta, s3, NormMode::train);
    auto pooled = global_avg_pool(h);
    auto gates = sigmoid(linear(relu(linear(pooled, *twin.se_w1, none)), *twin.se_w2, none));
    h = channel_scale(h, gates);
    auto skip = batch_norm(conv(x, *twin.shortcut, none, 2, 0), twin.shortcut_bn->gamma,
                           twin.shortcut_bn->beta, s4, NormMode::train);
    auto expect = relu(add(h, skip));
    CHECK(bitwise_equal(y, expect));
  }
}

TEST_CASE("gradcheck through SE gate and bottleneck block") {
  std::mt19937_64 rng(11);
  auto x = oracle::random_tensor({2, 4, 3, 3}, rng);
  auto w1 = oracle::random_tensor({2, 4}, rng);
  auto w2 = oracle::random_tensor({4, 2}, rng);
  auto mask = oracle::random_tensor({2, 4, 3, 3}, rng);
  CHECK(gradcheck([&](const TensorD& p) { return sum(mul(se_gate(p, w1, w2), mask)); }, x) < 1e-4);
  CHECK(gradcheck([&](const TensorD& p) { return sum(mul(se_gate(x, p, w2), mask)); }, w1) < 1e-4);
  CHECK(gradcheck([&](const TensorD& p) { return sum(mul(se_gate(x, w1, p), mask)); }, w2) < 1e-4);

  Rng init(12);
  BottleneckBlock<double> block(2, 4, 2, 2, 2, 2, true, init);
  auto bx = oracle::random_tensor({2, 4, 4, 4}, rng);
  auto bmask = oracle::random_tensor({2, 4, 2, 2}, rng);
  CHECK(gradcheck([&](const TensorD& p) { return sum(mul(block.forward(p, NormMode::train), bmask)); }, bx) < 1e-4);
  CHECK(gradcheck(
            [&](const TensorD& p) {
              BottleneckBlock<double> b = block;
              b.conv2 = p;
              return sum(mul(b.forward(bx, NormMode::train), bmask));
            },
            block.conv2.clone()) < 1e-4);
}

TEST_CASE("encoder output shapes for the tiny presets") {
  Rng rng(13);
  Encoder<float> enc2d(EncoderConfig::tiny(2), rng);
  CHECK(enc2d.config().feature_dim() == 256);
  auto f2 = enc2d.encode(TensorF({2, 3, 64, 64}, 0.5f), NormMode::train);
  CHECK(f2.shape() == Shape{2, 256});

  Encoder<float> enc3d(EncoderConfig::tiny(3), rng);
  auto f3 = enc3d.encode(TensorF({1, 2, 32, 32, 32}, 0.25f), NormMode::eval);
  CHECK(f3.shape() == Shape{1, 256});
}

TEST_CASE("identical samples encode identically") {
  Rng rng(14);
  Encoder<double> enc(EncoderConfig::tiny(2), rng);
  auto f = enc.encode(TensorD({3, 3, 32, 32}, 0.0), NormMode::train);
  for (Index n = 1; n < 3; ++n)
    for (Index j = 0; j < 256; ++j) CHECK(f.at({n, j}) == f.at({0, j}));
}

TEST_CASE("undersized input names the failing stage") {
  Rng rng(15);
  Encoder<double> enc(EncoderConfig::tiny(2), rng);
  try {
    enc.encode(TensorD({1, 3, 12, 32}), NormMode::eval);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("stage 4") != std::string::npos);
  }
  CHECK_THROWS_AS(enc.encode(TensorD({1, 2, 32, 32}), NormMode::eval), DimensionError);
}

TEST_CASE("fusion model shapes and feature layout") {
  FusionModel<float> model(ModelConfig{}, 1);
  CHECK(model.fusion_dim() == 512);
  auto out = model.fuse_and_classify(TensorF({2, 3, 64, 64}, 0.1f), TensorF({2, 2, 32, 32, 32}, 0.2f),
                                     NormMode::eval);
  CHECK(out.features.shape() == Shape{2, 512});
  CHECK(out.logits.shape() == Shape{2, 6});
  CHECK_THROWS_AS(model.fuse_and_classify(TensorF({2, 3, 64, 64}), TensorF({1, 2, 32, 32, 32}),
                                          NormMode::eval),
                  DimensionError);
}

TEST_CASE("fusion coordinates depend only on their own branch") {
  FusionModel<double> model(small_config(), 2);
  std::mt19937_64 rng(16);
  auto x2 = oracle::random_tensor({2, 3, 8, 8}, rng);
  auto x3 = oracle::random_tensor({2, 2, 8, 8, 8}, rng);
  auto base = model.features(x2, x3, NormMode::eval);
  const Index f2 = model.config().encoder2d.feature_dim();

  auto z3 = model.features(x2, TensorD(x3.shape(), 0.0), NormMode::eval);
  auto x2p = oracle::random_tensor({2, 3, 8, 8}, rng);
  auto z2 = model.features(x2p, x3, NormMode::eval);
  bool changed3 = false, changed2 = false;
  for (Index n = 0; n < 2; ++n)
    for (Index j = 0; j < model.fusion_dim(); ++j) {
      if (j < f2) {
        CHECK(z3.at({n, j}) == base.at({n, j}));
        changed2 |= z2.at({n, j}) != base.at({n, j});
      } else {
        CHECK(z2.at({n, j}) == base.at({n, j}));
        changed3 |= z3.at({n, j}) != base.at({n, j});
      }
    }
  CHECK(changed2);
  CHECK(changed3);
}

TEST_CASE("eval forward is pure and batch equivariant") {
  FusionModel<double> model(small_config(), 3);
  std::mt19937_64 rng(17);
  auto x2 = oracle::random_tensor({4, 3, 8, 8}, rng);
  auto x3 = oracle::random_tensor({4, 2, 8, 8, 8}, rng);
  auto a = model.fuse_and_classify(x2, x3, NormMode::eval);
  auto b = model.fuse_and_classify(x2, x3, NormMode::eval);
  CHECK(bitwise_equal(a.logits, b.logits));
  CHECK(bitwise_equal(a.features, b.features));

  std::vector<Index> perm{2, 0, 3, 1};
  auto p = model.fuse_and_classify(rows(x2, perm), rows(x3, perm), NormMode::eval);
  CHECK(bitwise_equal(p.logits, rows(a.logits, perm)));
  CHECK(bitwise_equal(p.features, rows(a.features, perm)));
}

TEST_CASE("parameter names are stable and unimodal models drop a branch") {
  FusionModel<float> model(ModelConfig{}, 4);
  auto params = model.parameters();
  std::vector<std::string> names;
  for (auto& p : params) names.push_back(p.name);
  CHECK(std::find(names.begin(), names.end(), "enc2d.stem.weight") != names.end());
  CHECK(std::find(names.begin(), names.end(), "enc3d.stage4.block1.se.w2") != names.end());
  CHECK(std::find(names.begin(), names.end(), "head.bias") != names.end());
  auto sorted = names;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());

  ModelConfig cfp;
  cfp.modality = Modality::cfp_only;
  FusionModel<float> only2d(cfp, 4);
  CHECK(only2d.fusion_dim() == 256);
  CHECK(only2d.encoder3d() == nullptr);
  // same seed, same 2D weights regardless of the other branch
  auto a = model.encoder2d()->stages()[0][0].conv2;
  auto b = only2d.encoder2d()->stages()[0][0].conv2;
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  ModelConfig no_se;
  no_se.encoder2d.se_enabled = no_se.encoder3d.se_enabled = false;
  FusionModel<float> plain(no_se, 4);
  CHECK(plain.parameters().size() == params.size() - 16);
  auto c = plain.encoder3d()->stages()[3][0].conv3;
  auto d = model.encoder3d()->stages()[3][0].conv3;
  CHECK(std::equal(c.data().begin(), c.data().end(), d.data().begin()));
}

TEST_CASE("resnet50 preset parameter count") {
  Index total = 0;
  {
    ModelConfig cfg;
    cfg.modality = Modality::cfp_only;
    cfg.encoder2d = EncoderConfig::resnet50(2);
    FusionModel<float> model(cfg, 0);
    for (auto& p : model.parameters()) {
      if (p.trainable) total += p.tensor.numel();
    }
  }
  // SE-ResNet50 is about 28.1M with its 1000-way head; this build has a
  // 6-way head and bias-free SE excitation layers.
  MESSAGE("SE-ResNet50 (2D, 6-class head) trainable parameters: " << total);
  CHECK(total > 20'000'000);
}
