#include <doctest.h>

#include <cmath>

#include "segforge/autograd.hpp"
#include "segforge/error.hpp"
#include "segforge/ops.hpp"
#include "segforge/random.hpp"
#include "segforge/tensor.hpp"

using namespace segforge;

namespace {

Tensor64 rnd(const Shape& s, std::uint64_t seed) { return Tensor64::create(s, NormalFill{0.0, 1.0, seed}); }

}  // namespace

TEST_CASE("shape validation") {
  CHECK_THROWS_AS(Shape({}), ShapeError);
  CHECK_THROWS_AS(Shape({1, 2, 3, 4, 5}), ShapeError);
  CHECK_THROWS_AS(Shape({2, 0}), ShapeError);
  CHECK(Shape({2, 3, 4}).numel() == 24);
  CHECK(Shape({2, 3}).str() == "[2,3]");
}

TEST_CASE("tensor construction") {
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, {1.0f, 2.0f, 3.0f}), ShapeError);
  auto z = Tensor::zeros({2, 3});
  for (float v : z.data()) CHECK(v == 0.0f);
  auto f = Tensor::full({3}, 2.5f);
  for (float v : f.data()) CHECK(v == 2.5f);

  auto a = Tensor::create({4, 4}, UniformFill{-1.0, 1.0, 7});
  auto b = Tensor::create({4, 4}, UniformFill{-1.0, 1.0, 7});
  auto c = Tensor::create({4, 4}, UniformFill{-1.0, 1.0, 8});
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
  CHECK_FALSE(std::equal(a.data().begin(), a.data().end(), c.data().begin()));
  for (float v : a.data()) CHECK((v >= -1.0f && v < 1.0f));

  // Shared handle: a copy aliases the storage; clone does not.
  auto alias = a;
  alias.data()[0] = 42.0f;
  CHECK(a.data()[0] == 42.0f);
  auto deep = a.clone();
  deep.data()[0] = 0.0f;
  CHECK(a.data()[0] == 42.0f);
  CHECK(deep.id() != a.id());
}

TEST_CASE("rng is reproducible and roughly calibrated") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng r(5);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    sum += x;
    sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.02);
  for (int i = 0; i < 1000; ++i) CHECK(r.below(7) < 7u);
  CHECK(mix_seed(1, 0) != mix_seed(1, 1));
  CHECK(mix_seed(1, 0) != mix_seed(2, 0));
}

TEST_CASE("broadcast add and mul match loop oracle exactly") {
  for (std::int64_t bn : {1, 2}) {
    auto a = rnd({2, 3, 4, 5}, 1);
    auto b = rnd({bn, 3, 1, 1}, 2);
    auto s = add(a, b);
    auto m = mul(a, b);
    auto d = sub(a, b);
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t y = 0; y < 4; ++y)
          for (std::int64_t x = 0; x < 5; ++x) {
            const double bv = b.at(bn == 1 ? 0 : n, c, 0, 0);
            CHECK(s.at(n, c, y, x) == a.at(n, c, y, x) + bv);
            CHECK(m.at(n, c, y, x) == a.at(n, c, y, x) * bv);
            CHECK(d.at(n, c, y, x) == a.at(n, c, y, x) - bv);
          }
  }
  CHECK_THROWS_AS(add(rnd({2, 3, 4, 5}, 1), rnd({1, 4, 1, 1}, 2)), ShapeError);
  CHECK_THROWS_AS(mul(rnd({2, 3}, 1), rnd({3, 2}, 2)), ShapeError);
}

TEST_CASE("broadcast backward reduces over broadcast axes") {
  auto a = rnd({2, 3, 2, 2}, 3);
  auto b = rnd({1, 3, 1, 1}, 4);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  auto loss = sum(add(a, b));
  backward(loss);
  for (double g : b.grad()) CHECK(g == 8.0);
  for (double g : a.grad()) CHECK(g == 1.0);
}

TEST_CASE("gradient accumulation: y = x + x") {
  auto x = rnd({5}, 9);
  x.set_requires_grad(true);
  auto y = add(x, x);
  auto probe = rnd({5}, 10);
  auto loss = sum(mul(y, probe));
  backward(loss);
  for (std::int64_t i = 0; i < 5; ++i) CHECK(x.grad()[i] == 2.0 * probe[i]);
}

TEST_CASE("backward preconditions") {
  Tape<double>::active().clear();
  auto x = rnd({3}, 1);
  CHECK_THROWS_AS(backward(x), ContractError);  // nothing recorded
  x.set_requires_grad(true);
  auto y = relu(x);
  CHECK_THROWS_AS(backward(y), ContractError);  // not a scalar
  CHECK(Tape<double>::active().empty());
}

TEST_CASE("no-grad mode records nothing") {
  Tape<double>::active().clear();
  auto x = rnd({3}, 1);
  x.set_requires_grad(true);
  {
    NoGradGuard guard;
    auto y = sum(relu(x));
    CHECK(Tape<double>::active().empty());
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(GradMode::enabled());
}

TEST_CASE("two identical forward+backward runs are bit-identical") {
  auto run = [] {
    auto a = rnd({3, 4}, 11);
    auto w = rnd({4, 2}, 12);
    a.set_requires_grad(true);
    w.set_requires_grad(true);
    auto out = sum(sigmoid(matmul(a, w)));
    backward(out);
    std::vector<double> r{out.item()};
    r.insert(r.end(), a.grad().begin(), a.grad().end());
    r.insert(r.end(), w.grad().begin(), w.grad().end());
    return r;
  };
  CHECK(run() == run());
}

TEST_CASE("matmul matches naive loops") {
  auto a = rnd({5, 7}, 1), b = rnd({7, 3}, 2);
  auto c = matmul(a, b);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 7; ++k) s += a[i * 7 + k] * b[k * 3 + j];
      CHECK(c[i * 3 + j] == doctest::Approx(s).epsilon(1e-12));
    }
  CHECK_THROWS_AS(matmul(a, rnd({6, 3}, 3)), ShapeError);
}

TEST_CASE("sigmoid is stable at extremes and relu is exact") {
  auto x = Tensor64({4}, {-1000.0, -1.0, 0.0, 1000.0});
  auto s = sigmoid(x);
  CHECK(s[0] == 0.0);
  CHECK(s[1] == doctest::Approx(1.0 / (1.0 + std::exp(1.0))));
  CHECK(s[2] == 0.5);
  CHECK(s[3] == 1.0);
  auto r = relu(x);
  CHECK(r[0] == 0.0);
  CHECK(r[3] == 1000.0);
}

TEST_CASE("reshape keeps data and rejects count changes") {
  auto x = rnd({2, 6}, 1);
  auto y = reshape(x, Shape{3, 4});
  CHECK(std::equal(x.data().begin(), x.data().end(), y.data().begin()));
  CHECK_THROWS_AS(reshape(x, Shape{5}), ShapeError);
}
