#pragma once

#include <cstdint>

namespace segforge::kernels {

// C[M,N] = op(A)[M,K] * op(B)[K,N], or C += ... when `accumulate`.
// A is stored row-major as [M,K] (or [K,M] when trans_a), B as [K,N] (or [N,K]).
// Every output element is summed over k in ascending order regardless of
// blocking, so results are reproducible bit for bit.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const T* a,
          const T* b, T* c, bool accumulate);

struct ConvGeometry {
  std::int64_t channels, height, width;
  std::int64_t kernel_h, kernel_w;
  std::int64_t stride, padding;
  std::int64_t out_h, out_w;
};

// Unfolds one CHW image into a [C*kh*kw, out_h*out_w] column matrix; padded taps are 0.
template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* columns);

// Adjoint of im2col: scatters (adds) columns back into a CHW image.
template <typename T>
void col2im(const ConvGeometry& g, const T* columns, T* image);

}  // namespace segforge::kernels
