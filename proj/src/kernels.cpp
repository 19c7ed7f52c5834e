#include "segforge/kernels.hpp"

#include <algorithm>
#include <vector>

namespace segforge::kernels {
namespace {

constexpr std::int64_t kBlockK = 256;
constexpr std::int64_t kBlockN = 512;

template <typename T>
void transpose(std::int64_t rows, std::int64_t cols, const T* src, T* dst) {
  constexpr std::int64_t tile = 32;
  for (std::int64_t r0 = 0; r0 < rows; r0 += tile) {
    for (std::int64_t c0 = 0; c0 < cols; c0 += tile) {
      const auto r1 = std::min(rows, r0 + tile);
      const auto c1 = std::min(cols, c0 + tile);
      for (auto r = r0; r < r1; ++r) {
        for (auto col = c0; col < c1; ++col) dst[col * rows + r] = src[r * cols + col];
      }
    }
  }
}

// C += A * B with A [M,K], B [K,N], all row-major and contiguous.
template <typename T>
void gemm_nn_accumulate(std::int64_t m, std::int64_t n, std::int64_t k, const T* a, const T* b,
                        T* c) {
  for (std::int64_t k0 = 0; k0 < k; k0 += kBlockK) {
    const auto k1 = std::min(k, k0 + kBlockK);
    for (std::int64_t j0 = 0; j0 < n; j0 += kBlockN) {
      const auto j1 = std::min(n, j0 + kBlockN);
      const auto width = j1 - j0;
      std::int64_t i = 0;
      for (; i + 4 <= m; i += 4) {
        T* __restrict c0 = c + (i + 0) * n + j0;
        T* __restrict c1 = c + (i + 1) * n + j0;
        T* __restrict c2 = c + (i + 2) * n + j0;
        T* __restrict c3 = c + (i + 3) * n + j0;
        for (auto p = k0; p < k1; ++p) {
          const T a0 = a[(i + 0) * k + p];
          const T a1 = a[(i + 1) * k + p];
          const T a2 = a[(i + 2) * k + p];
          const T a3 = a[(i + 3) * k + p];
          const T* __restrict brow = b + p * n + j0;
          for (std::int64_t j = 0; j < width; ++j) {
            const T bv = brow[j];
            c0[j] += a0 * bv;
            c1[j] += a1 * bv;
            c2[j] += a2 * bv;
            c3[j] += a3 * bv;
          }
        }
      }
      for (; i < m; ++i) {
        T* __restrict crow = c + i * n + j0;
        for (auto p = k0; p < k1; ++p) {
          const T av = a[i * k + p];
          const T* __restrict brow = b + p * n + j0;
          for (std::int64_t j = 0; j < width; ++j) crow[j] += av * brow[j];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
          const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  std::vector<T> a_buf, b_buf;
  if (trans_a) {
    a_buf.resize(static_cast<std::size_t>(m * k));
    transpose(k, m, a, a_buf.data());
    a = a_buf.data();
  }
  if (trans_b) {
    b_buf.resize(static_cast<std::size_t>(k * n));
    transpose(n, k, b, b_buf.data());
    b = b_buf.data();
  }
  gemm_nn_accumulate(m, n, k, a, b, c);
}

template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* columns) {
  const auto plane = g.out_h * g.out_w;
  for (std::int64_t ch = 0; ch < g.channels; ++ch) {
    const T* src = image + ch * g.height * g.width;
    for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
        T* dst = columns + ((ch * g.kernel_h + ky) * g.kernel_w + kx) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = oy * g.stride - g.padding + ky;
          T* row = dst + oy * g.out_w;
          if (iy < 0 || iy >= g.height) {
            std::fill(row, row + g.out_w, T(0));
            continue;
          }
          const T* srow = src + iy * g.width;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = ox * g.stride - g.padding + kx;
            row[ox] = (ix >= 0 && ix < g.width) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* columns, T* image) {
  const auto plane = g.out_h * g.out_w;
  for (std::int64_t ch = 0; ch < g.channels; ++ch) {
    T* dst = image + ch * g.height * g.width;
    for (std::int64_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::int64_t kx = 0; kx < g.kernel_w; ++kx) {
        const T* src = columns + ((ch * g.kernel_h + ky) * g.kernel_w + kx) * plane;
        for (std::int64_t oy = 0; oy < g.out_h; ++oy) {
          const auto iy = oy * g.stride - g.padding + ky;
          if (iy < 0 || iy >= g.height) continue;
          T* drow = dst + iy * g.width;
          const T* row = src + oy * g.out_w;
          for (std::int64_t ox = 0; ox < g.out_w; ++ox) {
            const auto ix = ox * g.stride - g.padding + kx;
            if (ix >= 0 && ix < g.width) drow[ix] += row[ox];
          }
        }
      }
    }
  }
}

#define SEGFORGE_INSTANTIATE(T)                                                             \
  template void gemm<T>(bool, bool, std::int64_t, std::int64_t, std::int64_t, const T*,      \
                        const T*, T*, bool);                                                 \
  template void im2col<T>(const ConvGeometry&, const T*, T*);                                \
  template void col2im<T>(const ConvGeometry&, const T*, T*);

SEGFORGE_INSTANTIATE(float)
SEGFORGE_INSTANTIATE(double)
#undef SEGFORGE_INSTANTIATE

}  // namespace segforge::kernels
