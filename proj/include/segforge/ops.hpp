#pragma once

#include "segforge/autograd.hpp"
#include "segforge/tensor.hpp"

namespace segforge {

// Binary elementwise ops accept equal shapes, or `b` of shape [1,C,1,1] or
// [N,C,1,1] broadcast over an `a` of shape [N,C,H,W].
template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);
template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

// x * factor
template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

// Sum of all elements, shape [1].
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

// Same data under a new shape with equal element count.
template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, const Shape& shape);

// [M,K] x [K,N] -> [M,N]
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace segforge
