#include "segforge/layers.hpp"

#include <cmath>
#include <limits>

#include "segforge/kernels.hpp"

namespace segforge {
namespace {

template <typename T>
void require_nchw(const char* op, const BasicTensor<T>& x) {
  if (!x.defined()) throw ContractError(std::string(op) + ": undefined input");
  if (x.rank() != 4) throw ShapeError(std::string(op) + ": expected NCHW input, got " + x.shape().str());
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>* bias, std::int64_t stride, std::int64_t padding) {
  require_nchw("conv2d", x);
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be OIHW, got " + weight.shape().str());
  if (stride < 1 || padding < 0) throw ContractError("conv2d: invalid stride/padding");
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c) {
    throw ShapeError("conv2d: input has " + std::to_string(c) + " channels, weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != o)) {
    throw ShapeError("conv2d: bias shape " + bias->shape().str() + " for " + std::to_string(o) +
                     " filters");
  }
  const auto span_h = h + 2 * padding - kh;
  const auto span_w = w + 2 * padding - kw;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d: kernel " + weight.shape().str() + " larger than padded input " +
                     x.shape().str());
  }
  const kernels::ConvGeometry g{c, h, w, kh, kw, stride, padding, span_h / stride + 1,
                                span_w / stride + 1};
  const auto plane = g.out_h * g.out_w;
  const auto patch = c * kh * kw;
  const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;

  std::vector<T> out(static_cast<std::size_t>(n * o * plane));
  std::vector<T> columns(pointwise ? 0 : static_cast<std::size_t>(patch * plane));
  const T* xd = x.data().data();
  for (std::int64_t i = 0; i < n; ++i) {
    const T* image = xd + i * c * h * w;
    const T* cols = image;
    if (!pointwise) {
      kernels::im2col(g, image, columns.data());
      cols = columns.data();
    }
    T* dst = out.data() + i * o * plane;
    kernels::gemm<T>(false, false, o, plane, patch, weight.data().data(), cols, dst, false);
    if (bias) {
      const auto bd = bias->data();
      for (std::int64_t f = 0; f < o; ++f) {
        for (std::int64_t p = 0; p < plane; ++p) dst[f * plane + p] += bd[f];
      }
    }
  }

  BasicTensor<T> result(Shape{n, o, g.out_h, g.out_w}, std::move(out));
  if (needs_tape<T>({&x, &weight, bias})) {
    auto xi = x.impl(), wi = weight.impl(), oi = result.impl();
    std::shared_ptr<detail::TensorStorage<T>> bi = bias ? bias->impl() : nullptr;
    record<T>("conv2d", {&x, &weight, bias}, result, [=] {
      if (oi->grad.empty()) return;
      std::vector<T> cols_buf(pointwise ? 0 : static_cast<std::size_t>(patch * plane));
      if (wi->requires_grad) wi->ensure_grad();
      if (xi->requires_grad) xi->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i) {
        const T* dy = oi->grad.data() + i * o * plane;
        const T* image = xi->data.data() + i * c * h * w;
        if (wi->requires_grad) {
          const T* cols = image;
          if (!pointwise) {
            kernels::im2col(g, image, cols_buf.data());
            cols = cols_buf.data();
          }
          // dW += dY * cols^T
          kernels::gemm<T>(false, true, o, patch, plane, dy, cols, wi->grad.data(), true);
        }
        if (xi->requires_grad) {
          T* dx = xi->grad.data() + i * c * h * w;
          if (pointwise) {
            kernels::gemm<T>(true, false, patch, plane, o, wi->data.data(), dy, dx, true);
          } else {
            kernels::gemm<T>(true, false, patch, plane, o, wi->data.data(), dy, cols_buf.data(),
                             false);
            kernels::col2im(g, cols_buf.data(), dx);
          }
        }
      }
      if (bi && bi->requires_grad) {
        bi->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
          for (std::int64_t f = 0; f < o; ++f) {
            const T* dy = oi->grad.data() + (i * o + f) * plane;
            T acc = 0;
            for (std::int64_t p = 0; p < plane; ++p) acc += dy[p];
            bi->grad[f] += acc;
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
BatchNormState<T> BatchNormState<T>::make(std::int64_t channels) {
  BatchNormState s;
  s.gamma = BasicTensor<T>::full(Shape{channels}, T(1), true);
  s.beta = BasicTensor<T>::zeros(Shape{channels}, true);
  s.running_mean = BasicTensor<T>::zeros(Shape{channels});
  s.running_var = BasicTensor<T>::full(Shape{channels}, T(1));
  return s;
}

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& x, BatchNormState<T>& state, Mode mode) {
  require_nchw("batch_norm", x);
  const auto n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (state.gamma.numel() != c || state.beta.numel() != c || state.running_mean.numel() != c ||
      state.running_var.numel() != c) {
    throw ShapeError("batch_norm: input has " + std::to_string(c) +
                     " channels, parameters have " + std::to_string(state.gamma.numel()));
  }
  const auto count = n * plane;
  if (mode == Mode::Train && count < 2) {
    throw ContractError("batch_norm: train mode needs at least 2 values per channel, got " +
                        std::to_string(count));
  }

  const T* xd = x.data().data();
  const auto gamma = state.gamma.data();
  const auto beta = state.beta.data();
  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::Train) {
    auto rm = state.running_mean.data();
    auto rv = state.running_var.data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const T* p = xd + (i * c + ch) * plane;
        for (std::int64_t q = 0; q < plane; ++q) s += p[q];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const T* p = xd + (i * c + ch) * plane;
        for (std::int64_t q = 0; q < plane; ++q) {
          const double d = p[q] - mu;
          ss += d * d;
        }
      }
      const double var = ss / static_cast<double>(count);
      mean[ch] = static_cast<T>(mu);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(state.epsilon)));
      const double unbiased = ss / static_cast<double>(count - 1);
      const double m = state.momentum;
      rm[ch] = static_cast<T>((1.0 - m) * rm[ch] + m * mu);
      rv[ch] = static_cast<T>((1.0 - m) * rv[ch] + m * unbiased);
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (std::int64_t ch = 0; ch < c; ++ch) {
      mean[ch] = rm[ch];
      inv_std[ch] = T(1) / std::sqrt(std::max(rv[ch], T(0)) + state.epsilon);
    }
  }

  std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<T> out(xhat.size());
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto base = (i * c + ch) * plane;
      for (std::int64_t q = 0; q < plane; ++q) {
        const T v = (xd[base + q] - mean[ch]) * inv_std[ch];
        xhat[base + q] = v;
        out[base + q] = gamma[ch] * v + beta[ch];
      }
    }
  }

  BasicTensor<T> result(x.shape(), std::move(out));
  if (needs_tape<T>({&x, &state.gamma, &state.beta})) {
    auto xi = x.impl(), gi = state.gamma.impl(), bi = state.beta.impl(), oi = result.impl();
    const bool train = mode == Mode::Train;
    record<T>("batch_norm", {&x, &state.gamma, &state.beta}, result,
              [=, xhat = std::move(xhat), inv_std = std::move(inv_std)] {
                if (oi->grad.empty()) return;
                const T* dy = oi->grad.data();
                std::vector<T> sum_dy(c, T(0)), sum_dy_xhat(c, T(0));
                for (std::int64_t i = 0; i < n; ++i) {
                  for (std::int64_t ch = 0; ch < c; ++ch) {
                    const auto base = (i * c + ch) * plane;
                    T a = 0, b = 0;
                    for (std::int64_t q = 0; q < plane; ++q) {
                      a += dy[base + q];
                      b += dy[base + q] * xhat[base + q];
                    }
                    sum_dy[ch] += a;
                    sum_dy_xhat[ch] += b;
                  }
                }
                if (gi->requires_grad) {
                  gi->ensure_grad();
                  for (std::int64_t ch = 0; ch < c; ++ch) gi->grad[ch] += sum_dy_xhat[ch];
                }
                if (bi->requires_grad) {
                  bi->ensure_grad();
                  for (std::int64_t ch = 0; ch < c; ++ch) bi->grad[ch] += sum_dy[ch];
                }
                if (!xi->requires_grad) return;
                xi->ensure_grad();
                const T m = static_cast<T>(count);
                for (std::int64_t i = 0; i < n; ++i) {
                  for (std::int64_t ch = 0; ch < c; ++ch) {
                    const auto base = (i * c + ch) * plane;
                    const T k = gi->data[ch] * inv_std[ch];
                    for (std::int64_t q = 0; q < plane; ++q) {
                      if (train) {
                        // dx = gamma*inv_std/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
                        xi->grad[base + q] += k / m *
                                              (m * dy[base + q] - sum_dy[ch] -
                                               xhat[base + q] * sum_dy_xhat[ch]);
                      } else {
                        xi->grad[base + q] += k * dy[base + q];
                      }
                    }
                  }
                }
              });
  }
  return result;
}

template <typename T>
BasicTensor<T> max_pool2d(const BasicTensor<T>& x, std::int64_t kernel, std::int64_t stride,
                          std::int64_t padding) {
  require_nchw("max_pool2d", x);
  if (kernel < 1 || stride < 1 || padding < 0 || padding >= kernel) {
    throw ContractError("max_pool2d: invalid kernel/stride/padding");
  }
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h + 2 * padding < kernel || w + 2 * padding < kernel) {
    throw ShapeError("max_pool2d: window " + std::to_string(kernel) + " larger than input " +
                     x.shape().str());
  }
  const auto oh = (h + 2 * padding - kernel) / stride + 1;
  const auto ow = (w + 2 * padding - kernel) / stride + 1;
  std::vector<T> out(static_cast<std::size_t>(n * c * oh * ow));
  std::vector<std::int64_t> argmax(out.size());
  const T* xd = x.data().data();
  std::size_t o = 0;
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    const T* src = xd + plane * h * w;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox, ++o) {
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t best_idx = -1;
        for (std::int64_t ky = 0; ky < kernel; ++ky) {
          const auto iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (std::int64_t kx = 0; kx < kernel; ++kx) {
            const auto ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            const T v = src[iy * w + ix];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = iy * w + ix;
            }
          }
        }
        out[o] = best;
        argmax[o] = plane * h * w + best_idx;
      }
    }
  }
  BasicTensor<T> result(Shape{n, c, oh, ow}, std::move(out));
  if (needs_tape<T>({&x})) {
    auto xi = x.impl(), oi = result.impl();
    record<T>("max_pool2d", {&x}, result, [xi, oi, argmax = std::move(argmax)] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < argmax.size(); ++i) xi->grad[argmax[i]] += oi->grad[i];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> global_avg_pool(const BasicTensor<T>& x) {
  require_nchw("global_avg_pool", x);
  const auto n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  std::vector<T> out(static_cast<std::size_t>(n * c));
  const T* xd = x.data().data();
  for (std::int64_t i = 0; i < n * c; ++i) {
    T acc = 0;
    for (std::int64_t q = 0; q < plane; ++q) acc += xd[i * plane + q];
    out[i] = acc / static_cast<T>(plane);
  }
  BasicTensor<T> result(Shape{n, c, 1, 1}, std::move(out));
  if (needs_tape<T>({&x})) {
    auto xi = x.impl(), oi = result.impl();
    record<T>("global_avg_pool", {&x}, result, [xi, oi, n, c, plane] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::int64_t i = 0; i < n * c; ++i) {
        const T g = oi->grad[i] / static_cast<T>(plane);
        for (std::int64_t q = 0; q < plane; ++q) xi->grad[i * plane + q] += g;
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> upsample_nearest(const BasicTensor<T>& x, std::int64_t factor) {
  if (factor < 1) throw ContractError("upsample_nearest: factor must be >= 1");
  require_nchw("upsample_nearest", x);
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = h * factor, ow = w * factor;
  std::vector<T> out(static_cast<std::size_t>(n * c * oh * ow));
  const T* xd = x.data().data();
  for (std::int64_t plane = 0; plane < n * c; ++plane) {
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const T* src = xd + (plane * h + oy / factor) * w;
      T* dst = out.data() + (plane * oh + oy) * ow;
      for (std::int64_t ox = 0; ox < ow; ++ox) dst[ox] = src[ox / factor];
    }
  }
  BasicTensor<T> result(Shape{n, c, oh, ow}, std::move(out));
  if (needs_tape<T>({&x})) {
    auto xi = x.impl(), oi = result.impl();
    record<T>("upsample_nearest", {&x}, result, [=] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::int64_t plane = 0; plane < n * c; ++plane) {
        for (std::int64_t oy = 0; oy < oh; ++oy) {
          T* dst = xi->grad.data() + (plane * h + oy / factor) * w;
          const T* src = oi->grad.data() + (plane * oh + oy) * ow;
          for (std::int64_t ox = 0; ox < ow; ++ox) dst[ox / factor] += src[ox];
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (!a.defined() || !b.defined()) throw ContractError("concat_channels: empty operand");
  require_nchw("concat_channels", a);
  require_nchw("concat_channels", b);
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw ShapeError("concat_channels: mismatched " + a.shape().str() + " and " + b.shape().str());
  }
  const auto n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  std::vector<T> out(static_cast<std::size_t>(n * (ca + cb) * plane));
  const T* ad = a.data().data();
  const T* bd = b.data().data();
  for (std::int64_t i = 0; i < n; ++i) {
    T* dst = out.data() + i * (ca + cb) * plane;
    std::copy(ad + i * ca * plane, ad + (i + 1) * ca * plane, dst);
    std::copy(bd + i * cb * plane, bd + (i + 1) * cb * plane, dst + ca * plane);
  }
  BasicTensor<T> result(Shape{n, ca + cb, a.dim(2), a.dim(3)}, std::move(out));
  if (needs_tape<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = result.impl();
    record<T>("concat_channels", {&a, &b}, result, [=] {
      if (oi->grad.empty()) return;
      for (std::int64_t i = 0; i < n; ++i) {
        const T* src = oi->grad.data() + i * (ca + cb) * plane;
        if (ai->requires_grad) {
          ai->ensure_grad();
          T* dst = ai->grad.data() + i * ca * plane;
          for (std::int64_t q = 0; q < ca * plane; ++q) dst[q] += src[q];
        }
        if (bi->requires_grad) {
          bi->ensure_grad();
          T* dst = bi->grad.data() + i * cb * plane;
          for (std::int64_t q = 0; q < cb * plane; ++q) dst[q] += src[ca * plane + q];
        }
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> dense(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                     const BasicTensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(0) || bias.rank() != 1 ||
      bias.dim(0) != weight.dim(1)) {
    throw ShapeError("dense: incompatible shapes x " + x.shape().str() + ", weight " +
                     weight.shape().str() + ", bias " + bias.shape().str());
  }
  const auto n = x.dim(0), k = x.dim(1), m = weight.dim(1);
  std::vector<T> out(static_cast<std::size_t>(n * m));
  kernels::gemm<T>(false, false, n, m, k, x.data().data(), weight.data().data(), out.data(), false);
  const auto bd = bias.data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < m; ++j) out[i * m + j] += bd[j];
  }
  BasicTensor<T> result(Shape{n, m}, std::move(out));
  if (needs_tape<T>({&x, &weight, &bias})) {
    auto xi = x.impl(), wi = weight.impl(), bi = bias.impl(), oi = result.impl();
    record<T>("dense", {&x, &weight, &bias}, result, [=] {
      if (oi->grad.empty()) return;
      const T* dy = oi->grad.data();
      if (xi->requires_grad) {
        xi->ensure_grad();
        kernels::gemm<T>(false, true, n, k, m, dy, wi->data.data(), xi->grad.data(), true);
      }
      if (wi->requires_grad) {
        wi->ensure_grad();
        kernels::gemm<T>(true, false, k, m, n, xi->data.data(), dy, wi->grad.data(), true);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
          for (std::int64_t j = 0; j < m; ++j) bi->grad[j] += dy[i * m + j];
        }
      }
    });
  }
  return result;
}

#define SEGFORGE_INSTANTIATE(T)                                                                  \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>*, std::int64_t, std::int64_t);             \
  template struct BatchNormState<T>;                                                             \
  template BasicTensor<T> batch_norm(const BasicTensor<T>&, BatchNormState<T>&, Mode);           \
  template BasicTensor<T> max_pool2d(const BasicTensor<T>&, std::int64_t, std::int64_t,          \
                                     std::int64_t);                                              \
  template BasicTensor<T> global_avg_pool(const BasicTensor<T>&);                                \
  template BasicTensor<T> upsample_nearest(const BasicTensor<T>&, std::int64_t);                 \
  template BasicTensor<T> concat_channels(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template BasicTensor<T> dense(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                const BasicTensor<T>&);

SEGFORGE_INSTANTIATE(float)
SEGFORGE_INSTANTIATE(double)
#undef SEGFORGE_INSTANTIATE

}  // namespace segforge
