#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "segforge/autograd.hpp"
#include "segforge/ops.hpp"
#include "segforge/random.hpp"
#include "segforge/tensor.hpp"

namespace segforge::testing {

struct GradCheckResult {
  // max over checked elements with max(|a|,|n|) > 1e-6 of |a-n| / max(|a|,|n|)
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t significant = 0;  // elements that entered max_rel_error
};

// Checks d(sum(f(inputs) * probe))/d(inputs) against central differences.
// `probe` is a fixed random tensor so every output element carries weight.
// Inputs are leaves; their data is perturbed in place and restored.
inline GradCheckResult grad_check(const std::function<Tensor64(std::vector<Tensor64>&)>& f,
                                  std::vector<Tensor64>& inputs, std::uint64_t probe_seed,
                                  double h = 1e-5, std::size_t max_elements_per_input = 0) {
  Tape<double>::active().clear();
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.clear_grad();
  }
  Tensor64 probe;
  auto objective = [&](std::vector<Tensor64>& in) {
    auto out = f(in);
    if (!probe.defined()) probe = Tensor64::create(out.shape(), NormalFill{0.0, 1.0, probe_seed});
    return out.numel() == 1 && out.rank() == 1 ? mul(out, probe) : sum(mul(out, probe));
  };

  auto loss = objective(inputs);
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());

  GradCheckResult res;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].data();
    std::size_t step = 1;
    if (max_elements_per_input > 0 && data.size() > max_elements_per_input) {
      step = data.size() / max_elements_per_input;
    }
    for (std::size_t i = 0; i < data.size(); i += step) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = objective(inputs).item();
      data[i] = saved - h;
      const double down = objective(inputs).item();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      ++res.checked;
      const double scale = std::max(std::abs(numeric), std::abs(analytic[k][i]));
      if (scale <= 1e-6) continue;
      ++res.significant;
      res.max_rel_error = std::max(res.max_rel_error, std::abs(numeric - analytic[k][i]) / scale);
    }
  }
  return res;
}

inline Tensor64 random_tensor(const Shape& s, std::uint64_t seed, double sd = 1.0) {
  return Tensor64::create(s, NormalFill{0.0, sd, seed});
}

}  // namespace segforge::testing
