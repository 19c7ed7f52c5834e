#include <doctest.h>

#include "support/gradient_cases.hpp"

using namespace segforge;
using segforge::testing::grad_check;
using segforge::testing::random_tensor;

TEST_CASE("checker flags a wrong backward") {
  std::vector<Tensor64> in{random_tensor({6}, 1)};
  auto r = grad_check(
      [](auto& v) {
        auto out = Tensor64(v[0].shape(), std::vector<double>(v[0].data().begin(), v[0].data().end()));
        for (auto& x : out.data()) x = x * x;
        if (!needs_tape<double>({&v[0]})) return out;
        record<double>("bad_square", {&v[0]}, out, [a = v[0], out]() mutable {
          if (!out.has_grad()) return;
          for (std::int64_t i = 0; i < a.numel(); ++i) a.grad()[i] += out.grad()[i] * a[i];  // missing 2x
        });
        return out;
      },
      in, 2);
  CHECK(r.max_rel_error > 0.4);
}

TEST_CASE("finite-difference checks for every layer") {
  for (const auto& c : segforge::testing::gradient_cases()) {
    for (int s = 0; s < c.instances; ++s) {
      CAPTURE(c.name);
      CAPTURE(s);
      const auto r = c.run(s);
      CHECK(r.significant > 0);
      CHECK(r.max_rel_error < 1e-4);
    }
  }
}
