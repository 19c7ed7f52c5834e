#include "segforge/architecture.hpp"

#include <cmath>

namespace segforge {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  for (int d : stage_depths) {
    if (d < 1) fail("stage_depths entries must be >= 1");
  }
  for (int w : stage_widths) {
    if (w < 1) fail("stage_widths entries must be >= 1");
  }
  for (int c : decoder_channels) {
    if (c < 1) fail("decoder_channels entries must be >= 1");
  }
  if (stem_channels < 1) fail("stem_channels must be >= 1");
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (reduction_ratio < 1) fail("reduction_ratio must be >= 1");
  for (int w : stage_widths) {
    if ((4 * w) % reduction_ratio != 0) {
      fail("reduction_ratio " + std::to_string(reduction_ratio) +
           " does not divide stage output channels " + std::to_string(4 * w));
    }
  }
  for (int s : input_size) {
    if (s < 32 || s % 32 != 0) {
      fail("input_size " + std::to_string(input_size[0]) + "x" + std::to_string(input_size[1]) +
           " must be a positive multiple of 32");
    }
  }
}

std::array<int, 5> ModelConfig::tap_channels() const {
  return {stem_channels, 4 * stage_widths[0], 4 * stage_widths[1], 4 * stage_widths[2],
          4 * stage_widths[3]};
}

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.stage_depths = {1, 1, 1, 1};
  c.stage_widths = {16, 32, 64, 128};
  c.stem_channels = 16;
  c.reduction_ratio = 4;
  c.input_size = {64, 64};
  return c;
}

// ---------------------------------------------------------------------------

template <typename T>
Conv2d<T>::Conv2d(std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride_,
                  std::int64_t padding_, bool with_bias)
    : weight(BasicTensor<T>::zeros(Shape{out, in, kernel, kernel}, true)),
      stride(stride_),
      padding(padding_) {
  if (with_bias) bias = BasicTensor<T>::zeros(Shape{out}, true);
}

template <typename T>
BasicTensor<T> Conv2d<T>::forward(const BasicTensor<T>& x) const {
  return conv2d(x, weight, bias ? &*bias : nullptr, stride, padding);
}

template <typename T>
void Conv2d<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  const auto fan_in = weight.dim(1) * weight.dim(2) * weight.dim(3);
  out.params.push_back({prefix + ".weight", weight, ParamRole::Weight, fan_in});
  if (bias) out.params.push_back({prefix + ".bias", *bias, ParamRole::Bias, fan_in});
}

template <typename T>
void BatchNorm2d<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  out.params.push_back({prefix + ".gamma", state.gamma, ParamRole::Gamma, 0});
  out.params.push_back({prefix + ".beta", state.beta, ParamRole::Beta, 0});
  out.buffers.push_back({prefix + ".running_mean", state.running_mean});
  out.buffers.push_back({prefix + ".running_var", state.running_var});
}

template <typename T>
Dense<T>::Dense(std::int64_t in, std::int64_t out)
    : weight(BasicTensor<T>::zeros(Shape{in, out}, true)),
      bias(BasicTensor<T>::zeros(Shape{out}, true)) {}

template <typename T>
void Dense<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  out.params.push_back({prefix + ".weight", weight, ParamRole::Weight, weight.dim(0)});
  out.params.push_back({prefix + ".bias", bias, ParamRole::Bias, weight.dim(0)});
}

// ---------------------------------------------------------------------------

template <typename T>
SEBlock<T>::SEBlock(std::int64_t channels_, std::int64_t reduction)
    : channels(channels_) {
  if (reduction < 1 || channels_ % reduction != 0) {
    throw ConfigError("SE block: reduction " + std::to_string(reduction) + " does not divide " +
                      std::to_string(channels_) + " channels");
  }
  fc1 = Dense<T>(channels_, channels_ / reduction);
  fc2 = Dense<T>(channels_ / reduction, channels_);
}

template <typename T>
BasicTensor<T> SEBlock<T>::gate(const BasicTensor<T>& x) const {
  if (x.rank() != 4 || x.dim(1) != channels) {
    throw ShapeError("SE block over " + std::to_string(channels) + " channels got input " +
                     x.shape().str());
  }
  const auto n = x.dim(0);
  auto squeezed = reshape(global_avg_pool(x), Shape{n, channels});
  auto hidden = relu(fc1.forward(squeezed));
  auto excited = sigmoid(fc2.forward(hidden));
  return reshape(excited, Shape{n, channels, 1, 1});
}

template <typename T>
void SEBlock<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  fc1.collect(prefix + ".fc1", out);
  fc2.collect(prefix + ".fc2", out);
}

// ---------------------------------------------------------------------------

template <typename T>
Bottleneck<T>::Bottleneck(std::int64_t in, std::int64_t width_, std::int64_t stride_,
                          std::int64_t reduction)
    : in_channels(in), width(width_), stride(stride_) {
  if (stride_ != 1 && stride_ != 2) throw ConfigError("bottleneck stride must be 1 or 2");
  const auto out = 4 * width_;
  conv1 = Conv2d<T>(in, width_, 1, 1, 0, false);
  bn1 = BatchNorm2d<T>(width_);
  conv2 = Conv2d<T>(width_, width_, 3, stride_, 1, false);
  bn2 = BatchNorm2d<T>(width_);
  conv3 = Conv2d<T>(width_, out, 1, 1, 0, false);
  bn3 = BatchNorm2d<T>(out);
  se = SEBlock<T>(out, reduction);
  if (in != out || stride_ == 2) {
    downsample = Projection{Conv2d<T>(in, out, 1, stride_, 0, false), BatchNorm2d<T>(out)};
  }
}

template <typename T>
BasicTensor<T> Bottleneck<T>::forward(const BasicTensor<T>& x, Mode mode) {
  if (x.rank() != 4 || x.dim(1) != in_channels) {
    throw ShapeError("bottleneck expects " + std::to_string(in_channels) + " channels, got " +
                     x.shape().str());
  }
  auto y = relu(bn1.forward(conv1.forward(x), mode));
  y = relu(bn2.forward(conv2.forward(y), mode));
  y = bn3.forward(conv3.forward(y), mode);
  y = se.forward(y);
  auto shortcut = downsample ? downsample->bn.forward(downsample->conv.forward(x), mode) : x;
  return relu(add(y, shortcut));
}

template <typename T>
void Bottleneck<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  conv2.collect(prefix + ".conv2", out);
  bn2.collect(prefix + ".bn2", out);
  conv3.collect(prefix + ".conv3", out);
  bn3.collect(prefix + ".bn3", out);
  se.collect(prefix + ".se", out);
  if (downsample) {
    downsample->conv.collect(prefix + ".downsample.conv", out);
    downsample->bn.collect(prefix + ".downsample.bn", out);
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Encoder<T>::Encoder(const ModelConfig& cfg)
    : stem_conv(cfg.in_channels, cfg.stem_channels, 7, 2, 3, false), stem_bn(cfg.stem_channels) {
  std::int64_t channels = cfg.stem_channels;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::int64_t width = cfg.stage_widths[s];
    for (int b = 0; b < cfg.stage_depths[s]; ++b) {
      const std::int64_t stride = (b == 0 && s > 0) ? 2 : 1;
      stages[s].emplace_back(channels, width, stride, cfg.reduction_ratio);
      channels = 4 * width;
    }
  }
}

template <typename T>
EncoderTaps<T> Encoder<T>::forward(const BasicTensor<T>& x, Mode mode) {
  EncoderTaps<T> taps;
  taps[0] = relu(stem_bn.forward(stem_conv.forward(x), mode));
  auto y = max_pool2d(taps[0], 3, 2, 1);
  for (std::size_t s = 0; s < 4; ++s) {
    for (auto& block : stages[s]) y = block.forward(y, mode);
    taps[s + 1] = y;
  }
  return taps;
}

template <typename T>
void Encoder<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  stem_conv.collect(prefix + ".stem.conv", out);
  stem_bn.collect(prefix + ".stem.bn", out);
  for (std::size_t s = 0; s < 4; ++s) {
    for (std::size_t b = 0; b < stages[s].size(); ++b) {
      stages[s][b].collect(prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b),
                           out);
    }
  }
}

// ---------------------------------------------------------------------------

template <typename T>
DecoderStage<T>::DecoderStage(std::int64_t in, std::int64_t skip, std::int64_t out)
    : in_channels(in),
      skip_channels(skip),
      out_channels(out),
      conv1(in + skip, out, 3, 1, 1, false),
      conv2(out, out, 3, 1, 1, false),
      bn1(out),
      bn2(out) {}

template <typename T>
BasicTensor<T> DecoderStage<T>::forward(const BasicTensor<T>& x, const BasicTensor<T>* skip,
                                        Mode mode) {
  if (x.dim(1) != in_channels || (skip != nullptr) != (skip_channels > 0) ||
      (skip && skip->dim(1) != skip_channels)) {
    throw ShapeError("decoder stage expects " + std::to_string(in_channels) + "+" +
                      std::to_string(skip_channels) + " channels, got " + x.shape().str() +
                      (skip ? " + " + skip->shape().str() : std::string()));
  }
  auto y = upsample_nearest(x, 2);
  if (skip) y = concat_channels(y, *skip);
  y = relu(bn1.forward(conv1.forward(y), mode));
  return relu(bn2.forward(conv2.forward(y), mode));
}

template <typename T>
void DecoderStage<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  conv1.collect(prefix + ".conv1", out);
  bn1.collect(prefix + ".bn1", out);
  conv2.collect(prefix + ".conv2", out);
  bn2.collect(prefix + ".bn2", out);
}

template <typename T>
Decoder<T>::Decoder(const ModelConfig& cfg) {
  const auto taps = cfg.tap_channels();
  const auto& dc = cfg.decoder_channels;
  // Stage i consumes the deeper output and the tap one level up; the last has no skip.
  stages[0] = DecoderStage<T>(taps[4], taps[3], dc[0]);
  stages[1] = DecoderStage<T>(dc[0], taps[2], dc[1]);
  stages[2] = DecoderStage<T>(dc[1], taps[1], dc[2]);
  stages[3] = DecoderStage<T>(dc[2], taps[0], dc[3]);
  stages[4] = DecoderStage<T>(dc[3], 0, dc[4]);
}

template <typename T>
BasicTensor<T> Decoder<T>::forward(const EncoderTaps<T>& taps, Mode mode) {
  auto y = stages[0].forward(taps[4], &taps[3], mode);
  y = stages[1].forward(y, &taps[2], mode);
  y = stages[2].forward(y, &taps[1], mode);
  y = stages[3].forward(y, &taps[0], mode);
  return stages[4].forward(y, nullptr, mode);
}

template <typename T>
void Decoder<T>::collect(const std::string& prefix, ParamSet<T>& out) const {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    stages[i].collect(prefix + ".stage" + std::to_string(i + 1), out);
  }
}

// ---------------------------------------------------------------------------

namespace {
const ModelConfig& validated(const ModelConfig& cfg) {
  cfg.validate();
  return cfg;
}
}  // namespace

template <typename T>
SegModel<T>::SegModel(const ModelConfig& cfg)
    : encoder(validated(cfg)),
      decoder(cfg),
      head(cfg.decoder_channels[4], cfg.num_classes, 1, 1, 0, true),
      cfg_(cfg) {}

template <typename T>
EncoderTaps<T> SegModel<T>::encode(const BasicTensor<T>& x) {
  if (x.rank() != 4 || x.dim(1) != cfg_.in_channels) {
    throw ShapeError("model expects [N," + std::to_string(cfg_.in_channels) + ",H,W], got " +
                     x.shape().str());
  }
  if (x.dim(2) % 32 != 0 || x.dim(3) % 32 != 0) {
    throw ShapeError("model input spatial size must be a multiple of 32, got " + x.shape().str());
  }
  return encoder.forward(x, mode_);
}

template <typename T>
BasicTensor<T> SegModel<T>::forward(const BasicTensor<T>& x) {
  auto taps = encode(x);
  return head.forward(decoder.forward(taps, mode_));
}

template <typename T>
ParamSet<T> SegModel<T>::parameters() const {
  ParamSet<T> set;
  encoder.collect("encoder", set);
  decoder.collect("decoder", set);
  head.collect("head", set);
  return set;
}

template <typename T>
void SegModel<T>::zero_grad() {
  for (auto& p : parameters().params) p.tensor.clear_grad();
}

template <typename T>
void init_parameters(ParamSet<T>& set, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& p : set.params) {
    auto data = p.tensor.data();
    switch (p.role) {
      case ParamRole::Weight: {
        const double bound = std::sqrt(6.0 / static_cast<double>(p.fan_in));
        for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
      case ParamRole::Bias:
      case ParamRole::Beta:
        std::fill(data.begin(), data.end(), T(0));
        break;
      case ParamRole::Gamma:
        std::fill(data.begin(), data.end(), T(1));
        break;
    }
    p.tensor.clear_grad();
  }
  for (auto& b : set.buffers) {
    const bool is_var = b.name.ends_with("running_var");
    auto data = b.tensor.data();
    std::fill(data.begin(), data.end(), is_var ? T(1) : T(0));
  }
}

template <typename T>
void init_parameters(SegModel<T>& model, std::uint64_t seed) {
  auto set = model.parameters();
  init_parameters(set, seed);
}

#define SEGFORGE_INSTANTIATE(T)                                    \
  template class Conv2d<T>;                                        \
  template class BatchNorm2d<T>;                                   \
  template class Dense<T>;                                         \
  template class SEBlock<T>;                                       \
  template class Bottleneck<T>;                                    \
  template class Encoder<T>;                                       \
  template class DecoderStage<T>;                                  \
  template class Decoder<T>;                                       \
  template class SegModel<T>;                                      \
  template void init_parameters(ParamSet<T>&, std::uint64_t);      \
  template void init_parameters(SegModel<T>&, std::uint64_t);

SEGFORGE_INSTANTIATE(float)
SEGFORGE_INSTANTIATE(double)
#undef SEGFORGE_INSTANTIATE

}  // namespace segforge
