#include "fuseret/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <functional>

#include "fuseret/gradcheck.hpp"
#include "fuseret/model.hpp"
#include "fuseret/ops.hpp"
#include "fuseret/random.hpp"

namespace fuseret {

namespace {

using Fn = std::function<TensorD(const TensorD&)>;

TensorD uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  TensorD t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Scalar probe <out, R> with R fixed by `seed`.
TensorD project(const TensorD& out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, uniform(out.shape(), rng)));
}

EncoderConfig micro_encoder(int dims) {
  EncoderConfig c;
  c.spatial_dims = dims;
  c.in_channels = dims == 2 ? 3 : 2;
  c.stem_channels = 4;
  c.stem_kernel = 3;
  c.stage_blocks = {1, 1};
  c.stage_channels = {2, 4};
  c.expansion = 2;
  c.se_reduction = 2;
  return c;
}

}  // namespace

std::vector<GradcheckRow> run_gradcheck_suite(double tolerance, std::uint64_t seed) {
  Rng rng = stream(seed, "gradcheck");
  const TensorD none;
  std::vector<GradcheckRow> rows;
  auto run = [&](const std::string& op, std::vector<std::pair<Fn, TensorD>> checks) {
    const auto start = std::chrono::steady_clock::now();
    GradcheckRow row{op};
    for (auto& [fn, point] : checks) row.max_rel_error = std::max(row.max_rel_error, gradcheck(fn, point));
    row.passed = row.max_rel_error < tolerance;
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    rows.push_back(row);
  };

  {
    auto x = uniform({2, 2, 5, 5}, rng), w = uniform({3, 2, 3, 3}, rng), b = uniform({3}, rng);
    run("conv2d", {{[=](const TensorD& p) { return project(conv2d(p, w, b, 2, 1), 11); }, x},
                   {[=](const TensorD& p) { return project(conv2d(x, p, b, 2, 1), 11); }, w},
                   {[=](const TensorD& p) { return project(conv2d(x, w, p, 2, 1), 11); }, b}});
  }
  {
    auto x = uniform({1, 2, 4, 4, 4}, rng), w = uniform({2, 2, 3, 3, 3}, rng), b = uniform({2}, rng);
    run("conv3d", {{[=](const TensorD& p) { return project(conv3d(p, w, b, 1, 1), 12); }, x},
                   {[=](const TensorD& p) { return project(conv3d(x, p, b, 1, 1), 12); }, w},
                   {[=](const TensorD& p) { return project(conv3d(x, w, p, 1, 1), 12); }, b}});
  }
  {
    auto x = uniform({3, 2, 3, 3}, rng), g = uniform({2}, rng, 0.5, 1.5), b = uniform({2}, rng);
    auto bn = [](const TensorD& x, const TensorD& g, const TensorD& b) {
      BatchNormStats<double> stats(2);
      return project(batch_norm(x, g, b, stats, NormMode::train), 13);
    };
    run("batch_norm", {{[=](const TensorD& p) { return bn(p, g, b); }, x},
                       {[=](const TensorD& p) { return bn(x, p, b); }, g},
                       {[=](const TensorD& p) { return bn(x, g, p); }, b}});
  }
  {
    auto x = uniform({2, 3, 2, 3}, rng);
    run("global_avg_pool", {{[](const TensorD& p) { return project(global_avg_pool(p), 14); }, x}});
  }
  {
    auto x = uniform({3, 4}, rng), w = uniform({5, 4}, rng), b = uniform({5}, rng);
    run("linear", {{[=](const TensorD& p) { return project(linear(p, w, b), 15); }, x},
                   {[=](const TensorD& p) { return project(linear(x, p, b), 15); }, w},
                   {[=](const TensorD& p) { return project(linear(x, w, p), 15); }, b}});
  }
  {
    // Keep values away from the kink at 0.
    auto x = uniform({2, 5}, rng, 0.1, 1.0);
    for (Index i = 0; i < x.numel(); i += 2) x[i] = -x[i];
    run("relu", {{[](const TensorD& p) { return project(relu(p), 16); }, x}});
  }
  {
    auto x = uniform({2, 5}, rng, -3.0, 3.0);
    run("sigmoid", {{[](const TensorD& p) { return project(sigmoid(p), 17); }, x}});
  }
  {
    auto f = uniform({2, 3, 2, 2}, rng), g = uniform({2, 3}, rng);
    run("channel_scale", {{[=](const TensorD& p) { return project(channel_scale(p, g), 18); }, f},
                          {[=](const TensorD& p) { return project(channel_scale(f, p), 18); }, g}});
  }
  {
    auto a = uniform({2, 3}, rng), b = uniform({2, 2}, rng);
    run("concat_features",
        {{[=](const TensorD& p) { return project(concat_features(p, b), 19); }, a},
         {[=](const TensorD& p) { return project(concat_features(a, p), 19); }, b}});
  }
  {
    auto z = uniform({4, 3}, rng);
    const std::vector<Index> pair{2, 0, 3, 1};
    run("mix_rows", {{[=](const TensorD& p) { return project(mix_rows(p, pair, 0.3), 20); }, z}});
  }
  {
    auto x = uniform({2, 8, 2, 2}, rng), w1 = uniform({2, 8}, rng), w2 = uniform({8, 2}, rng);
    run("se_gate", {{[=](const TensorD& p) { return project(se_gate(p, w1, w2), 21); }, x},
                    {[=](const TensorD& p) { return project(se_gate(x, p, w2), 21); }, w1},
                    {[=](const TensorD& p) { return project(se_gate(x, w1, p), 21); }, w2}});
  }
  {
    auto logits = uniform({3, 6}, rng, -2.0, 2.0);
    TensorD target({3, 6}, 0.0);
    target.at({0, 1}) = 1.0;
    target.at({1, 4}) = 0.3;
    target.at({1, 5}) = 0.7;
    target.at({2, 0}) = 1.0;
    run("softmax_cross_entropy",
        {{[=](const TensorD& p) { return softmax_cross_entropy(p, target); }, logits}});
  }
  for (int dims : {2, 3}) {
    Rng init = stream(seed, "gradcheck.block", static_cast<std::uint64_t>(dims));
    auto block = std::make_shared<BottleneckBlock<double>>(dims, 4, 2, 4, 2, 4, true, init);
    Shape s = dims == 2 ? Shape{2, 4, 4, 4} : Shape{2, 4, 4, 4, 4};
    auto x = uniform(s, rng);
    run("bottleneck_block_" + std::to_string(dims) + "d",
        {{[=](const TensorD& p) { return project(block->forward(p, NormMode::train), 22); }, x}});
  }
  {
    ModelConfig mc;
    mc.encoder2d = micro_encoder(2);
    mc.encoder3d = micro_encoder(3);
    auto model = std::make_shared<FusionModel<double>>(mc, seed);
    auto x2d = uniform({2, 3, 8, 8}, rng), x3d = uniform({2, 2, 8, 8, 8}, rng);
    TensorD target({2, 6}, 0.0);
    target.at({0, 2}) = 1.0;
    target.at({1, 5}) = 1.0;
    auto loss = [model, target](const TensorD& a, const TensorD& b) {
      return softmax_cross_entropy(model->fuse_and_classify(a, b, NormMode::train).logits, target);
    };
    const TensorD head = model->head_weight();
    run("fused_model",
        {{[=](const TensorD& p) { return loss(p, x3d); }, x2d},
         {[=](const TensorD& p) { return loss(x2d, p); }, x3d},
         {[=](const TensorD& p) {
            model->head_weight() = p;
            auto out = loss(x2d, x3d);
            model->head_weight() = head;
            return out;
          },
          head.clone()}});
  }
  return rows;
}

}  // namespace fuseret
