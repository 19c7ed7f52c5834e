#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "segforge/error.hpp"
#include "segforge/random.hpp"

namespace segforge {

// Dimensions of a dense tensor: rank 1 to 4, every extent >= 1.
// Activations are NCHW, convolution weights OIHW.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::int64_t> dims) : Shape(std::vector<std::int64_t>(dims)) {}
  explicit Shape(std::vector<std::int64_t> dims) : dims_(std::move(dims)) {
    if (dims_.empty() || dims_.size() > 4) {
      throw ShapeError("tensor rank must be 1-4, got " + std::to_string(dims_.size()));
    }
    for (auto d : dims_) {
      if (d < 1) throw ShapeError("non-positive dimension in shape " + str());
    }
  }

  std::size_t rank() const noexcept { return dims_.size(); }
  std::int64_t operator[](std::size_t i) const { return dims_.at(i); }
  const std::vector<std::int64_t>& dims() const noexcept { return dims_; }

  std::int64_t numel() const noexcept {
    std::int64_t n = 1;
    for (auto d : dims_) n *= d;
    return n;
  }

  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

 private:
  std::vector<std::int64_t> dims_;
};

struct UniformFill {
  double lo = -1.0;
  double hi = 1.0;
  std::uint64_t seed = 0;
};

struct NormalFill {
  double mean = 0.0;
  double stddev = 1.0;
  std::uint64_t seed = 0;
};

using Fill = std::variant<double, UniformFill, NormalFill>;

namespace detail {

inline std::uint64_t next_tensor_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until a gradient is first accumulated
  bool requires_grad = false;
  std::uint64_t id = next_tensor_id();

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

// Shared handle to a dense tensor. Copies alias the same storage; use clone()
// for an independent copy. T is float for training and inference, double for
// gradient checking.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Storage = detail::TensorStorage<T>;

  BasicTensor() = default;

  BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<Storage>()) {
    if (static_cast<std::int64_t>(data.size()) != shape.numel()) {
      throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                       shape.str());
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static BasicTensor create(const Shape& shape, const Fill& fill, bool requires_grad = false) {
    std::vector<T> data(static_cast<std::size_t>(shape.numel()));
    if (const auto* c = std::get_if<double>(&fill)) {
      std::fill(data.begin(), data.end(), static_cast<T>(*c));
    } else if (const auto* u = std::get_if<UniformFill>(&fill)) {
      Rng rng(u->seed);
      for (auto& v : data) v = static_cast<T>(rng.uniform(u->lo, u->hi));
    } else {
      const auto& g = std::get<NormalFill>(fill);
      Rng rng(g.seed);
      for (auto& v : data) v = static_cast<T>(rng.normal(g.mean, g.stddev));
    }
    return BasicTensor(shape, std::move(data), requires_grad);
  }

  static BasicTensor zeros(const Shape& shape, bool requires_grad = false) {
    return create(shape, 0.0, requires_grad);
  }
  static BasicTensor full(const Shape& shape, T value, bool requires_grad = false) {
    return create(shape, static_cast<double>(value), requires_grad);
  }

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const { return storage().shape; }
  std::int64_t dim(std::size_t i) const { return storage().shape[i]; }
  std::size_t rank() const { return storage().shape.rank(); }
  std::int64_t numel() const { return storage().shape.numel(); }
  std::uint64_t id() const { return storage().id; }

  std::span<T> data() { return storage().data; }
  std::span<const T> data() const { return storage().data; }

  bool has_grad() const { return !storage().grad.empty(); }
  // Gradient view; all zeros if nothing has been accumulated yet.
  std::span<T> grad() {
    storage().ensure_grad();
    return storage().grad;
  }
  std::span<const T> grad() const {
    storage().ensure_grad();
    return storage().grad;
  }
  void zero_grad() {
    auto& g = storage().grad;
    std::fill(g.begin(), g.end(), T(0));
  }
  void clear_grad() { storage().grad.clear(); }

  bool requires_grad() const { return storage().requires_grad; }
  void set_requires_grad(bool on) { storage().requires_grad = on; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape().str());
    return storage().data[0];
  }

  T& operator[](std::int64_t flat) { return storage().data[static_cast<std::size_t>(flat)]; }
  const T& operator[](std::int64_t flat) const {
    return storage().data[static_cast<std::size_t>(flat)];
  }

  // NCHW element access for rank-4 tensors.
  T& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    const auto& s = storage().shape;
    return storage().data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
  }
  T at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    const auto& s = storage().shape;
    return storage().data[static_cast<std::size_t>(((n * s[1] + c) * s[2] + h) * s[3] + w)];
  }

  // Independent copy of the values, detached from any tape.
  BasicTensor clone(bool requires_grad = false) const {
    return BasicTensor(shape(), storage().data, requires_grad);
  }

  template <typename U>
  BasicTensor<U> cast(bool requires_grad = false) const {
    std::vector<U> out(storage().data.begin(), storage().data.end());
    return BasicTensor<U>(shape(), std::move(out), requires_grad);
  }

  // Storage access for operation implementations.
  const std::shared_ptr<Storage>& impl() const { return impl_; }

 private:
  Storage& storage() const {
    if (!impl_) throw ContractError("use of an undefined tensor");
    return *impl_;
  }

  std::shared_ptr<Storage> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

}  // namespace segforge
