#include "fuseret/model.hpp"

#include <cmath>
#include <stdexcept>

namespace fuseret {

namespace {

template <typename Scalar>
Tensor<Scalar> normal_param(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<Scalar> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<Scalar>(dist(rng));
  t.set_requires_grad(true);
  return t;
}

template <typename Scalar>
Tensor<Scalar> conv_weight(int spatial_dims, Index out_c, Index in_c, Index kernel, Rng& rng) {
  Shape shape{out_c, in_c};
  Index fan_in = in_c;
  for (int i = 0; i < spatial_dims; ++i) {
    shape.push_back(kernel);
    fan_in *= kernel;
  }
  // He initialization for relu networks
  return normal_param<Scalar>(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

template <typename Scalar>
Tensor<Scalar> trainable_fill(Index n, Scalar value) {
  Tensor<Scalar> t({n}, value);
  t.set_requires_grad(true);
  return t;
}

}  // namespace

Index EncoderConfig::total_stride() const { return Index{1} << stage_channels.size(); }

void EncoderConfig::validate() const {
  if (spatial_dims != 2 && spatial_dims != 3) {
    throw std::invalid_argument("encoder spatial_dims must be 2 or 3");
  }
  if (in_channels < 1 || stem_channels < 1 || expansion < 1 || se_reduction < 1) {
    throw std::invalid_argument("encoder channel counts must be positive");
  }
  if (stem_kernel < 1 || stem_kernel % 2 == 0) {
    throw std::invalid_argument("encoder stem_kernel must be odd and positive");
  }
  if (stage_blocks.empty() || stage_blocks.size() != stage_channels.size()) {
    throw std::invalid_argument("stage_blocks and stage_channels must be non-empty and equal length");
  }
  for (std::size_t i = 0; i < stage_blocks.size(); ++i) {
    if (stage_blocks[i] < 1 || stage_channels[i] < 1) {
      throw std::invalid_argument("every stage needs >= 1 block and >= 1 channel");
    }
  }
}

EncoderConfig EncoderConfig::tiny(int spatial_dims) {
  EncoderConfig cfg;
  cfg.spatial_dims = spatial_dims;
  cfg.in_channels = spatial_dims == 2 ? 3 : 2;
  return cfg;
}

EncoderConfig EncoderConfig::resnet50(int spatial_dims) {
  EncoderConfig cfg = tiny(spatial_dims);
  cfg.stem_channels = 64;
  cfg.stem_kernel = 7;
  cfg.stage_blocks = {3, 4, 6, 3};
  cfg.stage_channels = {64, 128, 256, 512};
  return cfg;
}

bool operator==(const EncoderConfig& a, const EncoderConfig& b) {
  return a.spatial_dims == b.spatial_dims && a.in_channels == b.in_channels &&
         a.stem_channels == b.stem_channels && a.stem_kernel == b.stem_kernel &&
         a.stage_blocks == b.stage_blocks && a.stage_channels == b.stage_channels &&
         a.expansion == b.expansion && a.se_reduction == b.se_reduction &&
         a.se_enabled == b.se_enabled;
}

std::string to_string(Modality m) {
  switch (m) {
    case Modality::multimodal: return "multimodal";
    case Modality::cfp_only: return "cfp_only";
    case Modality::octa_only: return "octa_only";
  }
  return "?";
}

Modality modality_from_string(const std::string& s) {
  if (s == "multimodal") return Modality::multimodal;
  if (s == "cfp_only") return Modality::cfp_only;
  if (s == "octa_only") return Modality::octa_only;
  throw std::invalid_argument("unknown modality '" + s + "'");
}

Index ModelConfig::fusion_dim() const {
  switch (modality) {
    case Modality::multimodal: return encoder2d.feature_dim() + encoder3d.feature_dim();
    case Modality::cfp_only: return encoder2d.feature_dim();
    case Modality::octa_only: return encoder3d.feature_dim();
  }
  return 0;
}

bool operator==(const ModelConfig& a, const ModelConfig& b) {
  return a.modality == b.modality && a.encoder2d == b.encoder2d && a.encoder3d == b.encoder3d &&
         a.num_classes == b.num_classes;
}

Index se_hidden_width(Index channels, int reduction) {
  return std::max<Index>(1, channels / reduction);
}

template <typename Scalar>
BatchNormLayer<Scalar>::BatchNormLayer(Index channels)
    : gamma(trainable_fill<Scalar>(channels, Scalar(1))),
      beta(trainable_fill<Scalar>(channels, Scalar(0))),
      stats(channels) {}

template <typename Scalar>
Tensor<Scalar> BatchNormLayer<Scalar>::operator()(const Tensor<Scalar>& x, NormMode mode) {
  return batch_norm(x, gamma, beta, stats, mode);
}

template <typename Scalar>
void BatchNormLayer<Scalar>::collect(const std::string& prefix, ParameterList<Scalar>& out) {
  out.push_back({prefix + ".gamma", gamma, true});
  out.push_back({prefix + ".beta", beta, true});
  out.push_back({prefix + ".running_mean", stats.running_mean, false});
  out.push_back({prefix + ".running_var", stats.running_var, false});
}

template <typename Scalar>
Tensor<Scalar> se_gate(const Tensor<Scalar>& features, const Tensor<Scalar>& w1,
                       const Tensor<Scalar>& w2) {
  if (features.ndim() < 3) {
    throw DimensionError("se_gate: features need [N,C,spatial...], got " +
                         shape_str(features.shape()));
  }
  const Index c = features.dim(1);
  if (w1.ndim() != 2 || w2.ndim() != 2 || w1.dim(1) != c || w2.dim(0) != c ||
      w2.dim(1) != w1.dim(0)) {
    throw DimensionError("se_gate: channel mismatch, features " + shape_str(features.shape()) +
                         ", w1 " + shape_str(w1.shape()) + ", w2 " + shape_str(w2.shape()));
  }
  const Tensor<Scalar> none;
  auto squeezed = global_avg_pool(features);
  auto hidden = relu(linear(squeezed, w1, none));
  auto gates = sigmoid(linear(hidden, w2, none));
  return channel_scale(features, gates);
}

template <typename Scalar>
BottleneckBlock<Scalar>::BottleneckBlock(int dims, Index in_channels, Index mid_channels,
                                         int expansion, int block_stride, int se_reduction,
                                         bool se_enabled, Rng& rng)
    : spatial_dims(dims),
      stride(block_stride),
      conv1(conv_weight<Scalar>(dims, mid_channels, in_channels, 1, rng)),
      conv2(conv_weight<Scalar>(dims, mid_channels, mid_channels, 3, rng)),
      conv3(conv_weight<Scalar>(dims, mid_channels * expansion, mid_channels, 1, rng)),
      bn1(mid_channels),
      bn2(mid_channels),
      bn3(mid_channels * expansion) {
  const Index out_channels = mid_channels * expansion;
  const Index hidden = se_hidden_width(out_channels, se_reduction);
  // Drawn even when SE is off: no other weight may depend on se_enabled.
  auto w1 = normal_param<Scalar>({hidden, out_channels},
                                 std::sqrt(2.0 / static_cast<double>(out_channels)), rng);
  auto w2 = normal_param<Scalar>({out_channels, hidden},
                                 std::sqrt(1.0 / static_cast<double>(hidden)), rng);
  if (se_enabled) {
    se_w1 = w1;
    se_w2 = w2;
  }
  if (stride != 1 || in_channels != out_channels) {
    shortcut = conv_weight<Scalar>(dims, out_channels, in_channels, 1, rng);
    shortcut_bn.emplace(out_channels);
  }
}

template <typename Scalar>
Tensor<Scalar> BottleneckBlock<Scalar>::forward(const Tensor<Scalar>& x, NormMode mode) {
  if (x.ndim() != spatial_dims + 2) {
    throw DimensionError("bottleneck_block: expected rank " + std::to_string(spatial_dims + 2) +
                         " input, got " + shape_str(x.shape()));
  }
  for (int a = 2; a < x.ndim(); ++a) {
    if (x.dim(a) < 1) {
      throw DimensionError("bottleneck_block: empty spatial axis " + std::to_string(a) + " in " +
                           shape_str(x.shape()));
    }
  }
  const Tensor<Scalar> none;
  auto h = relu(bn1(conv(x, conv1, none, 1, 0), mode));
  h = relu(bn2(conv(h, conv2, none, stride, 1), mode));
  h = bn3(conv(h, conv3, none, 1, 0), mode);
  if (se_w1) h = se_gate(h, *se_w1, *se_w2);
  auto skip = shortcut ? (*shortcut_bn)(conv(x, *shortcut, none, stride, 0), mode) : x;
  return relu(add(h, skip));
}

template <typename Scalar>
void BottleneckBlock<Scalar>::collect(const std::string& prefix, ParameterList<Scalar>& out) {
  out.push_back({prefix + ".conv1.weight", conv1, true});
  bn1.collect(prefix + ".bn1", out);
  out.push_back({prefix + ".conv2.weight", conv2, true});
  bn2.collect(prefix + ".bn2", out);
  out.push_back({prefix + ".conv3.weight", conv3, true});
  bn3.collect(prefix + ".bn3", out);
  if (se_w1) {
    out.push_back({prefix + ".se.w1", *se_w1, true});
    out.push_back({prefix + ".se.w2", *se_w2, true});
  }
  if (shortcut) {
    out.push_back({prefix + ".shortcut.weight", *shortcut, true});
    shortcut_bn->collect(prefix + ".shortcut_bn", out);
  }
}

template <typename Scalar>
Encoder<Scalar>::Encoder(EncoderConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  stem_ = conv_weight<Scalar>(config_.spatial_dims, config_.stem_channels, config_.in_channels,
                              config_.stem_kernel, rng);
  stem_bn_ = BatchNormLayer<Scalar>(config_.stem_channels);
  Index in_channels = config_.stem_channels;
  for (std::size_t s = 0; s < config_.stage_blocks.size(); ++s) {
    std::vector<BottleneckBlock<Scalar>> blocks;
    for (int b = 0; b < config_.stage_blocks[s]; ++b) {
      const int stride = (s > 0 && b == 0) ? 2 : 1;
      blocks.emplace_back(config_.spatial_dims, in_channels, config_.stage_channels[s],
                          config_.expansion, stride, config_.se_reduction, config_.se_enabled,
                          rng);
      in_channels = blocks.back().out_channels();
    }
    stages_.push_back(std::move(blocks));
  }
}

template <typename Scalar>
void Encoder<Scalar>::check_input(const Tensor<Scalar>& x) const {
  const int rank = config_.spatial_dims + 2;
  if (x.ndim() != rank) {
    throw DimensionError("encode: expected rank-" + std::to_string(rank) + " input [N," +
                         std::to_string(config_.in_channels) + ",...], got " +
                         shape_str(x.shape()));
  }
  if (x.dim(1) != config_.in_channels) {
    throw DimensionError("encode: expected " + std::to_string(config_.in_channels) +
                         " input channels, got " + shape_str(x.shape()));
  }
  for (int a = 2; a < rank; ++a) {
    Index cumulative = 2;  // stem
    if (x.dim(a) < cumulative) {
      throw DimensionError("encode: input extent " + std::to_string(x.dim(a)) + " on axis " +
                           std::to_string(a) + " is too small for the stem (stride 2)");
    }
    for (std::size_t s = 1; s < stages_.size(); ++s) {
      cumulative *= 2;
      if (x.dim(a) < cumulative) {
        throw DimensionError("encode: input extent " + std::to_string(x.dim(a)) + " on axis " +
                             std::to_string(a) + " is too small for stage " + std::to_string(s + 1) +
                             " (cumulative stride " + std::to_string(cumulative) + ")");
      }
    }
  }
}

template <typename Scalar>
Tensor<Scalar> Encoder<Scalar>::encode(const Tensor<Scalar>& x, NormMode mode) {
  check_input(x);
  const Tensor<Scalar> none;
  auto h = relu(stem_bn_(conv(x, stem_, none, 2, config_.stem_kernel / 2), mode));
  for (auto& stage : stages_) {
    for (auto& block : stage) h = block.forward(h, mode);
  }
  return global_avg_pool(h);
}

template <typename Scalar>
void Encoder<Scalar>::collect(const std::string& prefix, ParameterList<Scalar>& out) {
  out.push_back({prefix + ".stem.weight", stem_, true});
  stem_bn_.collect(prefix + ".stem_bn", out);
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    for (std::size_t b = 0; b < stages_[s].size(); ++b) {
      stages_[s][b].collect(prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b + 1),
                            out);
    }
  }
}

template <typename Scalar>
FusionModel<Scalar>::FusionModel(ModelConfig config, std::uint64_t init_seed)
    : config_(std::move(config)) {
  if (config_.num_classes < 2) throw std::invalid_argument("num_classes must be >= 2");
  if (config_.modality != Modality::octa_only) {
    if (config_.encoder2d.spatial_dims != 2) throw std::invalid_argument("encoder2d must be 2D");
    Rng rng = stream(init_seed, "init.enc2d");
    enc2d_.emplace(config_.encoder2d, rng);
  }
  if (config_.modality != Modality::cfp_only) {
    if (config_.encoder3d.spatial_dims != 3) throw std::invalid_argument("encoder3d must be 3D");
    Rng rng = stream(init_seed, "init.enc3d");
    enc3d_.emplace(config_.encoder3d, rng);
  }
  Rng rng = stream(init_seed, "init.head");
  const Index f = config_.fusion_dim();
  const double bound = 1.0 / std::sqrt(static_cast<double>(f));
  std::uniform_real_distribution<double> dist(-bound, bound);
  head_w_ = Tensor<Scalar>({config_.num_classes, f});
  for (auto& v : head_w_.data()) v = static_cast<Scalar>(dist(rng));
  head_w_.set_requires_grad(true);
  head_b_ = trainable_fill<Scalar>(config_.num_classes, Scalar(0));
}

template <typename Scalar>
Tensor<Scalar> FusionModel<Scalar>::features(const Tensor<Scalar>& x2d, const Tensor<Scalar>& x3d,
                                             NormMode mode) {
  switch (config_.modality) {
    case Modality::cfp_only: return enc2d_->encode(x2d, mode);
    case Modality::octa_only: return enc3d_->encode(x3d, mode);
    case Modality::multimodal: break;
  }
  if (x2d.dim(0) != x3d.dim(0)) {
    throw DimensionError("fuse_and_classify: batch mismatch, 2D " + shape_str(x2d.shape()) +
                         " vs 3D " + shape_str(x3d.shape()));
  }
  auto f2 = enc2d_->encode(x2d, mode);
  auto f3 = enc3d_->encode(x3d, mode);
  return concat_features(f2, f3);
}

template <typename Scalar>
Tensor<Scalar> FusionModel<Scalar>::classify(const Tensor<Scalar>& fusion_features) {
  return linear(fusion_features, head_w_, head_b_);
}

template <typename Scalar>
FusionOutput<Scalar> FusionModel<Scalar>::fuse_and_classify(const Tensor<Scalar>& x2d,
                                                            const Tensor<Scalar>& x3d,
                                                            NormMode mode) {
  auto z = features(x2d, x3d, mode);
  auto logits = classify(z);
  return {logits, z};
}

template <typename Scalar>
ParameterList<Scalar> FusionModel<Scalar>::parameters() {
  ParameterList<Scalar> out;
  if (enc2d_) enc2d_->collect("enc2d", out);
  if (enc3d_) enc3d_->collect("enc3d", out);
  out.push_back({"head.weight", head_w_, true});
  out.push_back({"head.bias", head_b_, true});
  return out;
}

template <typename Scalar>
std::vector<Tensor<Scalar>> FusionModel<Scalar>::trainable() {
  std::vector<Tensor<Scalar>> out;
  for (auto& p : parameters()) {
    if (p.trainable) out.push_back(p.tensor);
  }
  return out;
}

template <typename Scalar>
void FusionModel<Scalar>::zero_grad() {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

template Tensor<float> se_gate(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> se_gate(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);
template struct BatchNormLayer<float>;
template struct BatchNormLayer<double>;
template struct BottleneckBlock<float>;
template struct BottleneckBlock<double>;
template class Encoder<float>;
template class Encoder<double>;
template class FusionModel<float>;
template class FusionModel<double>;

}  // namespace fuseret
