#include "segforge/ops.hpp"

#include <cmath>

#include "segforge/kernels.hpp"

namespace segforge {
namespace {

enum class Broadcast { None, Channel };

// Layout of `b` relative to `a` for binary ops.
struct BinaryLayout {
  Broadcast kind = Broadcast::None;
  std::int64_t n = 1, c = 1, plane = 1;
  bool per_sample = false;  // b is [N,C,1,1] rather than [1,C,1,1]
};

template <typename T>
BinaryLayout binary_layout(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (!a.defined() || !b.defined()) throw ContractError(std::string(op) + ": undefined operand");
  if (a.shape() == b.shape()) return {};
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa.rank() == 4 && sb.rank() == 4 && sb[1] == sa[1] && sb[2] == 1 && sb[3] == 1 &&
      (sb[0] == 1 || sb[0] == sa[0])) {
    return {Broadcast::Channel, sa[0], sa[1], sa[2] * sa[3], sb[0] != 1 || sa[0] == 1};
  }
  throw ShapeError(std::string(op) + ": incompatible shapes " + sa.str() + " and " + sb.str());
}

// Index into b for flat element i of a.
inline std::int64_t broadcast_index(const BinaryLayout& l, std::int64_t i) {
  const auto nc = i / l.plane;
  return l.per_sample ? nc : nc % l.c;
}

template <typename T>
void accumulate(const std::shared_ptr<detail::TensorStorage<T>>& t, std::int64_t i, T v) {
  t->grad[static_cast<std::size_t>(i)] += v;
}

enum class BinaryOp { Add, Sub, Mul };

template <typename T>
BasicTensor<T> binary(BinaryOp op, const char* name, const BasicTensor<T>& a,
                      const BasicTensor<T>& b) {
  const auto layout = binary_layout(name, a, b);
  const auto n = a.numel();
  std::vector<T> out(static_cast<std::size_t>(n));
  const auto ad = a.data();
  const auto bd = b.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const auto j = layout.kind == Broadcast::None ? i : broadcast_index(layout, i);
    const T x = ad[i], y = bd[j];
    out[i] = op == BinaryOp::Add ? x + y : op == BinaryOp::Sub ? x - y : x * y;
  }
  BasicTensor<T> result(a.shape(), std::move(out));
  if (needs_tape<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = result.impl();
    record<T>(name, {&a, &b}, result, [op, layout, ai, bi, oi, n] {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
          const auto j = layout.kind == Broadcast::None ? i : broadcast_index(layout, i);
          accumulate(ai, i, op == BinaryOp::Mul ? g[i] * bi->data[j] : g[i]);
        }
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i) {
          const auto j = layout.kind == Broadcast::None ? i : broadcast_index(layout, i);
          const T d = op == BinaryOp::Add ? g[i] : op == BinaryOp::Sub ? -g[i] : g[i] * ai->data[i];
          accumulate(bi, j, d);
        }
      }
    });
  }
  return result;
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(BinaryOp::Add, "add", a, b);
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(BinaryOp::Sub, "sub", a, b);
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return binary(BinaryOp::Mul, "mul", a, b);
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x) {
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  BasicTensor<T> result(x.shape(), std::move(out));
  if (needs_tape<T>({&x})) {
    auto xi = x.impl(), oi = result.impl();
    record<T>("relu", {&x}, result, [xi, oi] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->data.size(); ++i) {
        if (xi->data[i] > T(0)) xi->grad[i] += oi->grad[i];
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    // Split by sign so exp never overflows.
    const T v = xd[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  BasicTensor<T> result(x.shape(), std::move(out));
  if (needs_tape<T>({&x})) {
    auto xi = x.impl(), oi = result.impl();
    record<T>("sigmoid", {&x}, result, [xi, oi] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < oi->data.size(); ++i) {
        const T s = oi->data[i];
        xi->grad[i] += oi->grad[i] * s * (T(1) - s);
      }
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor) {
  const auto xd = x.data();
  std::vector<T> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] * factor;
  BasicTensor<T> result(x.shape(), std::move(out));
  if (needs_tape<T>({&x})) {
    auto xi = x.impl(), oi = result.impl();
    record<T>("scale", {&x}, result, [xi, oi, factor] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i] * factor;
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x) {
  T total = 0;
  for (const T v : x.data()) total += v;
  BasicTensor<T> result(Shape{1}, std::vector<T>{total});
  if (needs_tape<T>({&x})) {
    auto xi = x.impl(), oi = result.impl();
    record<T>("sum", {&x}, result, [xi, oi] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      const T g = oi->grad[0];
      for (auto& v : xi->grad) v += g;
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, const Shape& shape) {
  if (shape.numel() != x.numel()) {
    throw ShapeError("reshape " + x.shape().str() + " -> " + shape.str() + " changes size");
  }
  BasicTensor<T> result(shape, std::vector<T>(x.data().begin(), x.data().end()));
  if (needs_tape<T>({&x})) {
    auto xi = x.impl(), oi = result.impl();
    record<T>("reshape", {&x}, result, [xi, oi] {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return result;
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + a.shape().str() + " and " + b.shape().str());
  }
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  kernels::gemm<T>(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  BasicTensor<T> result(Shape{m, n}, std::move(out));
  if (needs_tape<T>({&a, &b})) {
    auto ai = a.impl(), bi = b.impl(), oi = result.impl();
    record<T>("matmul", {&a, &b}, result, [ai, bi, oi, m, n, k] {
      if (oi->grad.empty()) return;
      if (ai->requires_grad) {
        ai->ensure_grad();  // dA = dC * B^T
        kernels::gemm<T>(false, true, m, k, n, oi->grad.data(), bi->data.data(), ai->grad.data(),
                         true);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();  // dB = A^T * dC
        kernels::gemm<T>(true, false, k, n, m, ai->data.data(), oi->grad.data(), bi->grad.data(),
                         true);
      }
    });
  }
  return result;
}

#define SEGFORGE_INSTANTIATE(T)                                                  \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);     \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);     \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);     \
  template BasicTensor<T> relu(const BasicTensor<T>&);                           \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                        \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                       \
  template BasicTensor<T> sum(const BasicTensor<T>&);                            \
  template BasicTensor<T> reshape(const BasicTensor<T>&, const Shape&);          \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);

SEGFORGE_INSTANTIATE(float)
SEGFORGE_INSTANTIATE(double)
#undef SEGFORGE_INSTANTIATE

}  // namespace segforge
