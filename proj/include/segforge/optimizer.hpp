#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "segforge/architecture.hpp"
#include "segforge/config.hpp"

namespace segforge {

template <typename T>
struct AdamState {
  std::int64_t step = 0;
  std::vector<std::vector<T>> m, v;  // first/second moments, one per parameter
};

// One Adam update with bias correction:
//   m = b1*m + (1-b1)*g,  v = b2*v + (1-b2)*g^2
//   p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
// Parameters with no accumulated gradient are treated as g = 0. Every gradient
// is scanned before anything is modified; a non-finite value raises
// NumericError naming the parameter.
template <typename T>
void adam_step(std::vector<NamedParam<T>>& params, AdamState<T>& state, const OptimizerConfig& h) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
      state.v.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw ContractError("adam_step: optimizer state covers " + std::to_string(state.m.size()) +
                        " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (static_cast<std::int64_t>(state.m[i].size()) != p.tensor.numel()) {
      throw ContractError("adam_step: state shape mismatch for " + p.name);
    }
    if (!p.tensor.has_grad()) continue;
    for (const T g : std::as_const(p.tensor).grad()) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p.name);
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = static_cast<T>(h.beta1), b2 = static_cast<T>(h.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(h.beta1, t));
  const T c2 = static_cast<T>(1.0 - std::pow(h.beta2, t));
  const T lr = static_cast<T>(h.lr), eps = static_cast<T>(h.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto data = p.tensor.data();
    const bool has = p.tensor.has_grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const T* g = has ? std::as_const(p.tensor).grad().data() : nullptr;
    for (std::size_t k = 0; k < data.size(); ++k) {
      const T gk = has ? g[k] : T(0);
      m[k] = b1 * m[k] + (T(1) - b1) * gk;
      v[k] = b2 * v[k] + (T(1) - b2) * gk * gk;
      const T mhat = m[k] / c1;
      const T vhat = v[k] / c2;
      data[k] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace segforge
