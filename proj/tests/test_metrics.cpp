#include <doctest.h>

#include <cmath>

#include "segforge/autograd.hpp"
#include "segforge/error.hpp"
#include "segforge/metrics.hpp"
#include "segforge/random.hpp"
#include "support/metric_oracle.hpp"

using namespace segforge;
using segforge::testing::OracleScores;
using segforge::testing::oracle_scores;
using segforge::testing::random_mask_pair;

TEST_CASE("metrics equal the brute-force oracle on 200 random 8x8 pairs") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto [pred, truth] = random_mask_pair(s, 8, 8);
    const OracleScores o = oracle_scores(pred, truth, 4);
    CHECK(dice_coefficient(pred, truth, DiceMode::BinaryForeground) == o.binary_dice);
    CHECK(iou_score(pred, truth, DiceMode::BinaryForeground) == o.binary_iou);
    CHECK(dice_coefficient(pred, truth, DiceMode::PerClassMean) == o.mean_class_dice);
    CHECK(iou_score(pred, truth, DiceMode::PerClassMean) == o.mean_iou);
    CHECK(mean_iou(pred, truth, 4) == o.mean_iou);
    CHECK(pixel_accuracy(pred, truth) == o.accuracy);
  }
}

TEST_CASE("Dice = 2 IoU / (1 + IoU) on binary masks") {
  for (std::uint64_t s = 0; s < 200; ++s) {
    auto [pred, truth] = random_mask_pair(s + 1000, 8, 8);
    for (auto& l : pred.labels) l = l > 0;
    for (auto& l : truth.labels) l = l > 0;
    const double d = dice_coefficient(pred, truth, DiceMode::BinaryForeground, 2);
    const double j = iou_score(pred, truth, DiceMode::BinaryForeground, 2);
    CHECK(std::abs(d - 2.0 * j / (1.0 + j)) <= 1e-12);
  }
}

TEST_CASE("symmetry and range") {
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto [a, b] = random_mask_pair(s + 2000, 8, 8);
    for (auto mode : {DiceMode::BinaryForeground, DiceMode::PerClassMean}) {
      const double d = dice_coefficient(a, b, mode), j = iou_score(a, b, mode);
      CHECK(d == dice_coefficient(b, a, mode));
      CHECK(j == iou_score(b, a, mode));
      CHECK((d >= 0.0 && d <= 1.0));
      CHECK((j >= 0.0 && j <= 1.0));
    }
    const double acc = pixel_accuracy(a, b);
    CHECK((acc >= 0.0 && acc <= 1.0));
  }
}

TEST_CASE("empty and identical masks") {
  LabelMap empty(1, 4, 4), also(1, 4, 4);
  CHECK(dice_coefficient(empty, also, DiceMode::BinaryForeground) == 1.0);
  CHECK(iou_score(empty, also, DiceMode::BinaryForeground) == 1.0);
  CHECK(pixel_accuracy(empty, also) == 1.0);
  LabelMap full(1, 4, 4, 2);
  CHECK(dice_coefficient(empty, full, DiceMode::BinaryForeground) == 0.0);
  CHECK(dice_coefficient(full, full, DiceMode::PerClassMean) == 1.0);
  CHECK(mean_iou(full, full, 4) == 1.0);
}

TEST_CASE("metric preconditions") {
  LabelMap a(1, 2, 2), b(1, 2, 3);
  CHECK_THROWS_AS(pixel_accuracy(a, b), ShapeError);
  CHECK_THROWS_AS(dice_coefficient(a, b, DiceMode::BinaryForeground), ShapeError);
  LabelMap bad(1, 2, 2, 7);
  CHECK_THROWS_AS(dice_coefficient(bad, a, DiceMode::PerClassMean), DataError);
  CHECK_THROWS_AS(mean_iou(a, a, 1), ContractError);
}

TEST_CASE("confusion matrix merge equals pooled add") {
  ConfusionMatrix pooled(4), left(4), right(4);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto [p, t] = random_mask_pair(s + 3000, 8, 8);
    pooled.add(p, t);
    (s % 2 ? left : right).add(p, t);
  }
  left.merge(right);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(left.at(i, j) == pooled.at(i, j));
  CHECK(pooled.total() == 640);
}

TEST_CASE("argmax masks and one-hot targets") {
  auto logits = Tensor({1, 3, 1, 3}, {1, 5, 2, 1, 5, 9, 0, 0, 9});
  auto mask = logits_to_mask(logits);
  CHECK(mask.labels == std::vector<std::uint8_t>{0, 0, 1});  // ties go to the lower index
  LabelMap labels(2, 3, 3);
  Rng rng(4);
  for (auto& l : labels.labels) l = static_cast<std::uint8_t>(rng.below(4));
  auto oh = one_hot<double>(labels, 4);
  CHECK(oh.shape() == Shape({2, 4, 3, 3}));
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t y = 0; y < 3; ++y)
      for (std::int64_t x = 0; x < 3; ++x) {
        double s = 0.0;
        for (std::int64_t c = 0; c < 4; ++c) s += oh.at(n, c, y, x);
        CHECK(s == 1.0);
        CHECK(oh.at(n, labels.labels[static_cast<std::size_t>((n * 3 + y) * 3 + x)], y, x) == 1.0);
      }
  CHECK(logits_to_mask(oh).labels == labels.labels);
}

TEST_CASE("soft dice loss matches its formula") {
  LabelMap labels(2, 2, 3);
  Rng rng(5);
  for (auto& l : labels.labels) l = static_cast<std::uint8_t>(rng.below(4));
  auto target = one_hot<double>(labels, 4);
  auto logits = Tensor64::create({2, 4, 2, 3}, NormalFill{0.0, 1.0, 6});
  const double got = soft_dice_loss(logits, target).item();
  double mean = 0.0;
  for (std::int64_t c = 0; c < 4; ++c) {
    double inter = 0.0, ps = 0.0, ts = 0.0;
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t y = 0; y < 2; ++y)
        for (std::int64_t x = 0; x < 3; ++x) {
          double z = 0.0;
          for (std::int64_t k = 0; k < 4; ++k) z += std::exp(logits.at(n, k, y, x));
          const double p = std::exp(logits.at(n, c, y, x)) / z;
          inter += p * target.at(n, c, y, x);
          ps += p;
          ts += target.at(n, c, y, x);
        }
    mean += (2.0 * inter + 1e-6) / (ps + ts + 1e-6);
  }
  CHECK(got == doctest::Approx(1.0 - mean / 4.0).epsilon(1e-12));
}

TEST_CASE("soft dice loss falls as the true-class margin grows") {
  LabelMap labels(1, 4, 4);
  for (std::size_t i = 0; i < labels.size(); ++i) labels.labels[i] = static_cast<std::uint8_t>(i % 4);
  auto target = one_hot<double>(labels, 4);
  double previous = 2.0;
  for (double margin : {0.0, 2.0, 5.0, 10.0}) {
    auto logits = Tensor64::zeros({1, 4, 4, 4});
    for (std::int64_t c = 0; c < 4; ++c)
      for (std::int64_t y = 0; y < 4; ++y)
        for (std::int64_t x = 0; x < 4; ++x)
          if (target.at(0, c, y, x) == 1.0) logits.data()[static_cast<std::size_t>((c * 4 + y) * 4 + x)] = margin;
    const double loss = soft_dice_loss(logits, target).item();
    CHECK(loss < previous);
    previous = loss;
  }
  CHECK(previous < 1e-3);
  CHECK_THROWS_AS(soft_dice_loss(Tensor64::zeros({1, 4, 2, 2}), Tensor64::zeros({1, 3, 2, 2})), ShapeError);
}

TEST_CASE("cross entropy matches its formula") {
  LabelMap labels(1, 2, 2);
  labels.labels = {0, 3, 1, 2};
  auto target = one_hot<double>(labels, 4);
  auto logits = Tensor64::create({1, 4, 2, 2}, NormalFill{0.0, 2.0, 7});
  double want = 0.0;
  for (std::int64_t y = 0; y < 2; ++y)
    for (std::int64_t x = 0; x < 2; ++x) {
      double z = 0.0;
      for (std::int64_t k = 0; k < 4; ++k) z += std::exp(logits.at(0, k, y, x));
      want -= logits.at(0, labels.labels[static_cast<std::size_t>(y * 2 + x)], y, x) - std::log(z);
    }
  CHECK(cross_entropy(logits, target).item() == doctest::Approx(want / 4.0).epsilon(1e-12));
}

TEST_CASE("epoch accumulator pools counts and weights loss by batch size") {
  EpochAccumulator acc(4);
  ConfusionMatrix cm(4);
  const auto [p1, t1] = random_mask_pair(1, 8, 8);
  LabelMap p2(3, 8, 8), t2(3, 8, 8, 1);
  acc.add_batch(p1, t1, 0.5);
  acc.add_batch(p2, t2, 0.1);
  cm.add(p1, t1);
  cm.add(p2, t2);
  const auto r = acc.finish(7, "val");
  CHECK(r.epoch == 7);
  CHECK(r.split == "val");
  CHECK(r.loss == doctest::Approx((0.5 * 1 + 0.1 * 3) / 4.0));
  CHECK(r.dice == cm.binary_dice());
  CHECK(r.iou == cm.binary_iou());
  CHECK(r.mean_iou == cm.mean_iou());
  CHECK(r.accuracy == cm.accuracy());
}
