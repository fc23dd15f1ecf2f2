#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fuseret/ops.hpp"
#include "fuseret/random.hpp"
#include "fuseret/tensor.hpp"

namespace fuseret {

inline constexpr int kNumGrades = 6;

/// Shape of one SE-ResNet encoder. The stem is a strided convolution
/// (stride 2, no max-pool); stage s > 0 downsamples by 2 in its first block.
struct EncoderConfig {
  int spatial_dims = 2;  // 2 for images, 3 for volumes
  int in_channels = 3;
  int stem_channels = 16;
  int stem_kernel = 3;
  std::vector<int> stage_blocks{1, 1, 1, 1};
  std::vector<int> stage_channels{8, 16, 32, 64};
  int expansion = 4;
  int se_reduction = 16;
  bool se_enabled = true;

  Index feature_dim() const { return static_cast<Index>(stage_channels.back()) * expansion; }
  /// Total downsampling factor applied to every spatial axis.
  Index total_stride() const;
  void validate() const;

  /// Desk-scale preset: one block per stage, channels [8,16,32,64].
  static EncoderConfig tiny(int spatial_dims);
  /// ResNet50 layout: [3,4,6,3] blocks, channels [64,128,256,512], 7x7 stem.
  static EncoderConfig resnet50(int spatial_dims);
};

bool operator==(const EncoderConfig& a, const EncoderConfig& b);

enum class Modality { multimodal, cfp_only, octa_only };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct ModelConfig {
  Modality modality = Modality::multimodal;
  EncoderConfig encoder2d = EncoderConfig::tiny(2);
  EncoderConfig encoder3d = EncoderConfig::tiny(3);
  int num_classes = kNumGrades;

  /// Width of the representation fed to the classifier.
  Index fusion_dim() const;
};

bool operator==(const ModelConfig& a, const ModelConfig& b);

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Tensor<Scalar> tensor;
  bool trainable = true;  // false for batch-norm running statistics
};

template <typename Scalar>
using ParameterList = std::vector<NamedTensor<Scalar>>;

template <typename Scalar>
struct BatchNormLayer {
  Tensor<Scalar> gamma;
  Tensor<Scalar> beta;
  BatchNormStats<Scalar> stats;

  explicit BatchNormLayer(Index channels = 0);
  Tensor<Scalar> operator()(const Tensor<Scalar>& x, NormMode mode);
  void collect(const std::string& prefix, ParameterList<Scalar>& out);
};

/// Squeeze-and-excitation: gates = sigmoid(w2 * relu(w1 * avgpool(x))),
/// output = x scaled per channel by its gate. w1 is [hidden, C], w2 [C, hidden].
template <typename Scalar>
Tensor<Scalar> se_gate(const Tensor<Scalar>& features, const Tensor<Scalar>& w1,
                       const Tensor<Scalar>& w2);

/// Excitation hidden width for C gated channels: max(1, C / reduction).
Index se_hidden_width(Index channels, int reduction);

/// 1x1 reduce -> 3x3(x3) -> 1x1 expand with batch norm and relu, SE on the
/// expanded features, residual addition, final relu. The shortcut is a
/// strided 1x1 projection with batch norm when stride > 1 or widths differ.
template <typename Scalar>
struct BottleneckBlock {
  int spatial_dims = 2;
  int stride = 1;
  Tensor<Scalar> conv1, conv2, conv3;
  BatchNormLayer<Scalar> bn1, bn2, bn3;
  std::optional<Tensor<Scalar>> se_w1, se_w2;
  std::optional<Tensor<Scalar>> shortcut;
  std::optional<BatchNormLayer<Scalar>> shortcut_bn;

  BottleneckBlock(int spatial_dims, Index in_channels, Index mid_channels, int expansion,
                  int stride, int se_reduction, bool se_enabled, Rng& rng);

  Index out_channels() const { return conv3.dim(0); }
  Tensor<Scalar> forward(const Tensor<Scalar>& x, NormMode mode);
  void collect(const std::string& prefix, ParameterList<Scalar>& out);
};

template <typename Scalar>
Tensor<Scalar> bottleneck_block(const Tensor<Scalar>& x, BottleneckBlock<Scalar>& block,
                                NormMode mode) {
  return block.forward(x, mode);
}

/// Stem conv + batch norm + relu, bottleneck stages, global average pool.
template <typename Scalar>
class Encoder {
 public:
  Encoder(EncoderConfig config, Rng& rng);

  const EncoderConfig& config() const { return config_; }
  /// [N, C, spatial...] -> [N, feature_dim].
  Tensor<Scalar> encode(const Tensor<Scalar>& x, NormMode mode);
  void collect(const std::string& prefix, ParameterList<Scalar>& out);

  std::vector<std::vector<BottleneckBlock<Scalar>>>& stages() { return stages_; }

 private:
  void check_input(const Tensor<Scalar>& x) const;

  EncoderConfig config_;
  Tensor<Scalar> stem_;
  BatchNormLayer<Scalar> stem_bn_;
  std::vector<std::vector<BottleneckBlock<Scalar>>> stages_;
};

template <typename Scalar>
struct FusionOutput {
  Tensor<Scalar> logits;    // [N, num_classes]
  Tensor<Scalar> features;  // [N, fusion_dim]; 2D coordinates first, then 3D
};

/// Two encoders joined by feature concatenation and a linear classifier.
/// Unimodal configurations keep only the matching encoder.
template <typename Scalar>
class FusionModel {
 public:
  /// Each component draws its initial weights from its own sub-stream of
  /// `init_seed`, so toggling one branch leaves the others unchanged.
  FusionModel(ModelConfig config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  Index fusion_dim() const { return config_.fusion_dim(); }

  /// Fusion-layer representation: concat(encode2d(x2d), encode3d(x3d)).
  /// The input of an absent branch may be undefined.
  Tensor<Scalar> features(const Tensor<Scalar>& x2d, const Tensor<Scalar>& x3d, NormMode mode);
  Tensor<Scalar> classify(const Tensor<Scalar>& fusion_features);
  FusionOutput<Scalar> fuse_and_classify(const Tensor<Scalar>& x2d, const Tensor<Scalar>& x3d,
                                         NormMode mode);

  /// Stable names: "enc2d.*", "enc3d.*", "head.weight", "head.bias".
  ParameterList<Scalar> parameters();
  std::vector<Tensor<Scalar>> trainable();
  void zero_grad();

  Encoder<Scalar>* encoder2d() { return enc2d_ ? &*enc2d_ : nullptr; }
  Encoder<Scalar>* encoder3d() { return enc3d_ ? &*enc3d_ : nullptr; }
  Tensor<Scalar>& head_weight() { return head_w_; }
  Tensor<Scalar>& head_bias() { return head_b_; }

 private:
  ModelConfig config_;
  std::optional<Encoder<Scalar>> enc2d_;
  std::optional<Encoder<Scalar>> enc3d_;
  Tensor<Scalar> head_w_;
  Tensor<Scalar> head_b_;
};

}  // namespace fuseret
