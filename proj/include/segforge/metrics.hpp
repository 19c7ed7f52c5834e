#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segforge/autograd.hpp"
#include "segforge/tensor.hpp"

namespace segforge {

// Integer class labels laid out [N,H,W].
struct LabelMap {
  std::int64_t n = 0, h = 0, w = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(std::int64_t n_, std::int64_t h_, std::int64_t w_, std::uint8_t fill = 0)
      : n(n_), h(h_), w(w_), labels(static_cast<std::size_t>(n_ * h_ * w_), fill) {}

  std::size_t size() const noexcept { return labels.size(); }
  bool same_shape(const LabelMap& o) const noexcept { return n == o.n && h == o.h && w == o.w; }
};

enum class DiceMode {
  BinaryForeground,  // label > 0 against label == 0
  PerClassMean,      // mean over classes present in either mask
};

// Pooled pixel counts: cell (p, t) counts pixels predicted p with truth t.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes);

  // Throws DataError if a label is >= num_classes, ShapeError on shape mismatch.
  void add(const LabelMap& pred, const LabelMap& truth);
  void merge(const ConfusionMatrix& other);

  int num_classes() const noexcept { return classes_; }
  std::int64_t at(int pred, int truth) const { return cells_[pred * classes_ + truth]; }
  std::int64_t total() const noexcept;

  // Binary whole-foreground counts (any label > 0).
  std::int64_t fg_intersection() const;
  std::int64_t fg_pred() const;
  std::int64_t fg_truth() const;

  double binary_dice() const;
  double binary_iou() const;
  // Hard Dice / IoU for one class; 1.0 when the class is absent from both.
  double class_dice(int c) const;
  double class_iou(int c) const;
  double mean_class_dice() const;
  double mean_iou() const;
  double accuracy() const;

 private:
  int classes_;
  std::vector<std::int64_t> cells_;
};

double dice_coefficient(const LabelMap& pred, const LabelMap& truth, DiceMode mode,
                        int num_classes = 4);
double iou_score(const LabelMap& pred, const LabelMap& truth, DiceMode mode, int num_classes = 4);
// Unweighted mean of per-class IoU over classes with nonempty union. num_classes >= 2.
double mean_iou(const LabelMap& pred, const LabelMap& truth, int num_classes);
double pixel_accuracy(const LabelMap& pred, const LabelMap& truth);

// Per-pixel argmax over channels; ties resolve to the lowest class index.
template <typename T>
LabelMap logits_to_mask(const BasicTensor<T>& logits);

// One-hot [N,C,H,W] encoding of a label map.
template <typename T>
BasicTensor<T> one_hot(const LabelMap& labels, int num_classes);

// 1 - mean_c (2*sum(p_c*t_c) + eps) / (sum(p_c) + sum(t_c) + eps), p = softmax over
// channels, sums over batch and space. Returns shape [1].
template <typename T>
BasicTensor<T> soft_dice_loss(const BasicTensor<T>& logits, const BasicTensor<T>& target,
                              T eps = T(1e-6));

// Mean over pixels of -sum_c t_c * log softmax(logits)_c. Returns shape [1].
template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, const BasicTensor<T>& target);

// Per-epoch scalar bundle for one split.
struct MetricRecord {
  int epoch = 0;
  std::string split;  // "train" or "val"
  double loss = 0.0;
  double dice = 0.0;  // binary whole-foreground
  double iou = 0.0;   // binary whole-foreground
  double mean_iou = 0.0;
  double accuracy = 0.0;
};

// Fold of batches into a MetricRecord: integer counts plus a sample-weighted loss.
class EpochAccumulator {
 public:
  explicit EpochAccumulator(int num_classes) : confusion_(num_classes) {}

  void add_batch(const LabelMap& pred, const LabelMap& truth, double batch_loss);
  MetricRecord finish(int epoch, const std::string& split) const;
  const ConfusionMatrix& confusion() const noexcept { return confusion_; }

 private:
  ConfusionMatrix confusion_;
  double loss_sum_ = 0.0;
  std::int64_t samples_ = 0;
};

}  // namespace segforge
