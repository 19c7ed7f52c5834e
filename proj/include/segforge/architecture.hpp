#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "segforge/layers.hpp"
#include "segforge/ops.hpp"

namespace segforge {

// Hyperparameters of the SE-ResNet encoder / U-Net decoder network.
struct ModelConfig {
  std::array<int, 4> stage_depths{3, 8, 36, 3};
  std::array<int, 4> stage_widths{64, 128, 256, 512};  // bottleneck width M; output is 4M
  int stem_channels = 64;
  int reduction_ratio = 16;
  int in_channels = 3;  // T1ce, T2, FLAIR
  int num_classes = 4;
  std::array<int, 2> input_size{128, 128};
  std::array<int, 5> decoder_channels{256, 128, 64, 32, 16};

  // Throws ConfigError naming the first violated invariant.
  void validate() const;

  // Channel counts at the five encoder taps (stem, stage1..stage4).
  std::array<int, 5> tap_channels() const;

  bool operator==(const ModelConfig&) const = default;

  // SE-ResNet-152 encoder at full width.
  static ModelConfig full();
  // Small network for gradient checks and CPU overfit runs.
  static ModelConfig desk();
};

enum class ParamRole { Weight, Bias, Gamma, Beta };

// A learnable tensor plus what the initializer needs to know about it.
template <typename T>
struct NamedParam {
  std::string name;
  BasicTensor<T> tensor;
  ParamRole role;
  std::int64_t fan_in = 0;
};

template <typename T>
struct NamedBuffer {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
struct ParamSet {
  std::vector<NamedParam<T>> params;
  std::vector<NamedBuffer<T>> buffers;  // batch-norm running statistics
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
         std::int64_t padding, bool with_bias);

  BasicTensor<T> forward(const BasicTensor<T>& x) const;
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  BasicTensor<T> weight;
  std::optional<BasicTensor<T>> bias;
  std::int64_t stride = 1;
  std::int64_t padding = 0;
};

template <typename T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(std::int64_t channels) : state(BatchNormState<T>::make(channels)) {}

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) { return batch_norm(x, state, mode); }
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  BatchNormState<T> state;
};

template <typename T>
class Dense {
 public:
  Dense() = default;
  Dense(std::int64_t in, std::int64_t out);

  BasicTensor<T> forward(const BasicTensor<T>& x) const { return dense(x, weight, bias); }
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  BasicTensor<T> weight;  // [in, out]
  BasicTensor<T> bias;    // [out]
};

// Squeeze-and-excitation channel gating:
//   gate = sigmoid(fc2(relu(fc1(global_avg_pool(x)))))  with shape [N,C,1,1]
//   out  = x * gate
template <typename T>
class SEBlock {
 public:
  SEBlock() = default;
  SEBlock(std::int64_t channels, std::int64_t reduction);

  BasicTensor<T> gate(const BasicTensor<T>& x) const;
  BasicTensor<T> forward(const BasicTensor<T>& x) const { return mul(x, gate(x)); }
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  std::int64_t channels = 0;
  Dense<T> fc1, fc2;
};

// 1x1 -> 3x3 (stride s) -> 1x1 residual bottleneck with SE on the residual
// branch, ahead of the addition:
//   out = relu(se(bn3(conv3(relu(bn2(conv2(relu(bn1(conv1(x))))))))) + shortcut(x))
template <typename T>
class Bottleneck {
 public:
  Bottleneck() = default;
  Bottleneck(std::int64_t in_channels, std::int64_t width, std::int64_t stride,
             std::int64_t reduction);

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode);
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  std::int64_t in_channels = 0, width = 0, stride = 1;
  Conv2d<T> conv1, conv2, conv3;
  BatchNorm2d<T> bn1, bn2, bn3;
  SEBlock<T> se;
  struct Projection {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;
  };
  std::optional<Projection> downsample;  // present iff in != 4*width or stride == 2
};

// Encoder feature maps at strides 2, 4, 8, 16, 32.
template <typename T>
using EncoderTaps = std::array<BasicTensor<T>, 5>;

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  explicit Encoder(const ModelConfig& cfg);

  EncoderTaps<T> forward(const BasicTensor<T>& x, Mode mode);
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  Conv2d<T> stem_conv;
  BatchNorm2d<T> stem_bn;
  std::array<std::vector<Bottleneck<T>>, 4> stages;
};

// Upsample x2, concatenate the skip (if any), then two conv3x3-bn-relu refinements.
template <typename T>
class DecoderStage {
 public:
  DecoderStage() = default;
  DecoderStage(std::int64_t in_channels, std::int64_t skip_channels, std::int64_t out_channels);

  BasicTensor<T> forward(const BasicTensor<T>& x, const BasicTensor<T>* skip, Mode mode);
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  std::int64_t in_channels = 0, skip_channels = 0, out_channels = 0;
  Conv2d<T> conv1, conv2;
  BatchNorm2d<T> bn1, bn2;
};

template <typename T>
class Decoder {
 public:
  Decoder() = default;
  explicit Decoder(const ModelConfig& cfg);

  // Consumes the encoder taps; output has decoder_channels[4] channels at input resolution.
  BasicTensor<T> forward(const EncoderTaps<T>& taps, Mode mode);
  void collect(const std::string& prefix, ParamSet<T>& out) const;

  std::array<DecoderStage<T>, 5> stages;
};

// Full segmentation network. forward() returns raw per-class logits
// [N, num_classes, H, W].
template <typename T>
class SegModel {
 public:
  explicit SegModel(const ModelConfig& cfg);

  BasicTensor<T> forward(const BasicTensor<T>& x);
  EncoderTaps<T> encode(const BasicTensor<T>& x);

  void set_mode(Mode m) noexcept { mode_ = m; }
  Mode mode() const noexcept { return mode_; }
  const ModelConfig& config() const noexcept { return cfg_; }

  // Parameters and buffers in a fixed, documented order with unique dotted names.
  ParamSet<T> parameters() const;
  void zero_grad();

  Encoder<T> encoder;
  Decoder<T> decoder;
  Conv2d<T> head;

 private:
  ModelConfig cfg_;
  Mode mode_ = Mode::Train;
};

// He-style scaled uniform: weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)),
// biases and beta 0, gamma 1, running mean 0 and variance 1.
template <typename T>
void init_parameters(SegModel<T>& model, std::uint64_t seed);

template <typename T>
void init_parameters(ParamSet<T>& set, std::uint64_t seed);

}  // namespace segforge
