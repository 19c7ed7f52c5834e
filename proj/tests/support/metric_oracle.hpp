#pragma once

#include <utility>

#include "segforge/metrics.hpp"
#include "segforge/random.hpp"

namespace segforge::testing {

struct OracleScores {
  double binary_dice, binary_iou, mean_class_dice, mean_iou, accuracy;
};

// Direct pixel counting with the set definitions; both-empty scores 1.
inline OracleScores oracle_scores(const LabelMap& p, const LabelMap& t, int classes) {
  auto dice = [](long inter, long a, long b) { return a + b == 0 ? 1.0 : 2.0 * double(inter) / double(a + b); };
  auto iou = [](long inter, long a, long b) {
    const long u = a + b - inter;
    return u == 0 ? 1.0 : double(inter) / double(u);
  };
  long fi = 0, fp = 0, ft = 0, same = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    fp += p.labels[i] > 0;
    ft += t.labels[i] > 0;
    fi += p.labels[i] > 0 && t.labels[i] > 0;
    same += p.labels[i] == t.labels[i];
  }
  double dsum = 0.0, isum = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    long ci = 0, cp = 0, ct = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      cp += p.labels[i] == c;
      ct += t.labels[i] == c;
      ci += p.labels[i] == c && t.labels[i] == c;
    }
    if (cp + ct == 0) continue;
    ++present;
    dsum += dice(ci, cp, ct);
    isum += iou(ci, cp, ct);
  }
  return {dice(fi, fp, ft), iou(fi, fp, ft), present ? dsum / present : 1.0, present ? isum / present : 1.0,
          p.size() ? double(same) / double(p.size()) : 1.0};
}

// Random 4-class masks; some seeds give sparse or empty foreground.
inline std::pair<LabelMap, LabelMap> random_mask_pair(std::uint64_t seed, std::int64_t h, std::int64_t w) {
  Rng rng(seed);
  LabelMap a(1, h, w), b(1, h, w);
  const double fg = rng.uniform() < 0.1 ? 0.0 : rng.uniform();
  for (std::size_t i = 0; i < a.size(); ++i) {
    a.labels[i] = rng.uniform() < fg ? static_cast<std::uint8_t>(1 + rng.below(3)) : 0;
    b.labels[i] = rng.uniform() < fg ? static_cast<std::uint8_t>(1 + rng.below(3)) : 0;
  }
  return {a, b};
}

}  // namespace segforge::testing
