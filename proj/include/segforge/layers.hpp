#pragma once

#include <optional>

#include "segforge/autograd.hpp"
#include "segforge/tensor.hpp"

namespace segforge {

// Cross-correlation with zero padding. x [N,C,H,W], weight [O,C,kh,kw],
// optional bias [O]. Output [N,O,(H+2p-kh)/s+1,(W+2p-kw)/s+1].
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>* bias, std::int64_t stride, std::int64_t padding);

enum class Mode { Train, Eval };

// Per-channel batch normalization. In Train mode the batch statistics are
// used and the running estimates updated in place:
//   running = (1 - momentum) * running + momentum * batch
// (unbiased variance for the running estimate). Eval mode is the fixed affine
// map gamma * (x - running_mean) / sqrt(running_var + eps) + beta.
template <typename T>
struct BatchNormState {
  BasicTensor<T> gamma, beta;                 // [C], learnable
  BasicTensor<T> running_mean, running_var;   // [C], buffers
  T momentum = T(0.1);
  T epsilon = T(1e-5);

  static BatchNormState make(std::int64_t channels);
};

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, BatchNormState<T>& state, Mode mode);

// Window maximum over k x k windows. Padded positions never win. Backward
// routes each gradient to the first (row-major) maximum of its window.
template <typename T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& x, std::int64_t kernel, std::int64_t stride,
                          std::int64_t padding = 0);

// [N,C,H,W] -> [N,C,1,1] spatial mean.
template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x);

// Replicates every pixel into a factor x factor block.
template <typename T>
BasicTensor<T> upsample_nearest(const BasicTensor<T>& x, std::int64_t factor);

// Channels of a followed by channels of b.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b);

// x [N,K] * weight [K,M] + bias [M].
template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                     const BasicTensor<T>& bias);

}  // namespace segforge
