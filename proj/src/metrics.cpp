#include "segforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace segforge {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : classes_(num_classes), cells_(static_cast<std::size_t>(num_classes * num_classes), 0) {
  if (num_classes < 1) throw ContractError("confusion matrix needs at least one class");
}

void ConfusionMatrix::add(const LabelMap& pred, const LabelMap& truth) {
  if (!pred.same_shape(truth) || pred.size() != truth.size()) {
    throw ShapeError("label maps differ in shape");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const int p = pred.labels[i], t = truth.labels[i];
    if (p >= classes_ || t >= classes_) {
      throw DataError("label " + std::to_string(std::max(p, t)) + " out of range for " +
                      std::to_string(classes_) + " classes");
    }
    ++cells_[p * classes_ + t];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) throw ContractError("merging confusion matrices of different size");
  for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i] += other.cells_[i];
}

std::int64_t ConfusionMatrix::total() const noexcept {
  std::int64_t s = 0;
  for (auto v : cells_) s += v;
  return s;
}

std::int64_t ConfusionMatrix::fg_intersection() const {
  std::int64_t s = 0;
  for (int p = 1; p < classes_; ++p) {
    for (int t = 1; t < classes_; ++t) s += at(p, t);
  }
  return s;
}

std::int64_t ConfusionMatrix::fg_pred() const {
  std::int64_t s = 0;
  for (int p = 1; p < classes_; ++p) {
    for (int t = 0; t < classes_; ++t) s += at(p, t);
  }
  return s;
}

std::int64_t ConfusionMatrix::fg_truth() const {
  std::int64_t s = 0;
  for (int p = 0; p < classes_; ++p) {
    for (int t = 1; t < classes_; ++t) s += at(p, t);
  }
  return s;
}

namespace {

double dice_from(std::int64_t inter, std::int64_t pred, std::int64_t truth) {
  if (pred + truth == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(pred + truth);
}

double iou_from(std::int64_t inter, std::int64_t pred, std::int64_t truth) {
  const auto uni = pred + truth - inter;
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace

double ConfusionMatrix::binary_dice() const {
  return dice_from(fg_intersection(), fg_pred(), fg_truth());
}

double ConfusionMatrix::binary_iou() const {
  return iou_from(fg_intersection(), fg_pred(), fg_truth());
}

double ConfusionMatrix::class_dice(int c) const {
  std::int64_t pred = 0, truth = 0;
  for (int k = 0; k < classes_; ++k) {
    pred += at(c, k);
    truth += at(k, c);
  }
  return dice_from(at(c, c), pred, truth);
}

double ConfusionMatrix::class_iou(int c) const {
  std::int64_t pred = 0, truth = 0;
  for (int k = 0; k < classes_; ++k) {
    pred += at(c, k);
    truth += at(k, c);
  }
  return iou_from(at(c, c), pred, truth);
}

namespace {

template <typename F>
double mean_over_present(const ConfusionMatrix& cm, F per_class) {
  double acc = 0.0;
  int present = 0;
  for (int c = 0; c < cm.num_classes(); ++c) {
    std::int64_t pred = 0, truth = 0;
    for (int k = 0; k < cm.num_classes(); ++k) {
      pred += cm.at(c, k);
      truth += cm.at(k, c);
    }
    if (pred + truth == 0) continue;
    acc += per_class(c);
    ++present;
  }
  return present == 0 ? 1.0 : acc / present;
}

}  // namespace

double ConfusionMatrix::mean_class_dice() const {
  return mean_over_present(*this, [this](int c) { return class_dice(c); });
}

double ConfusionMatrix::mean_iou() const {
  return mean_over_present(*this, [this](int c) { return class_iou(c); });
}

double ConfusionMatrix::accuracy() const {
  const auto n = total();
  if (n == 0) return 1.0;
  std::int64_t correct = 0;
  for (int c = 0; c < classes_; ++c) correct += at(c, c);
  return static_cast<double>(correct) / static_cast<double>(n);
}

// ---------------------------------------------------------------------------

double dice_coefficient(const LabelMap& pred, const LabelMap& truth, DiceMode mode,
                        int num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, truth);
  return mode == DiceMode::BinaryForeground ? cm.binary_dice() : cm.mean_class_dice();
}

double iou_score(const LabelMap& pred, const LabelMap& truth, DiceMode mode, int num_classes) {
  ConfusionMatrix cm(num_classes);
  cm.add(pred, truth);
  return mode == DiceMode::BinaryForeground ? cm.binary_iou() : cm.mean_iou();
}

double mean_iou(const LabelMap& pred, const LabelMap& truth, int num_classes) {
  if (num_classes < 2) throw ContractError("mean_iou needs at least 2 classes");
  ConfusionMatrix cm(num_classes);
  cm.add(pred, truth);
  return cm.mean_iou();
}

double pixel_accuracy(const LabelMap& pred, const LabelMap& truth) {
  if (!pred.same_shape(truth)) throw ShapeError("pixel_accuracy: label maps differ in shape");
  if (pred.size() == 0) return 1.0;
  std::int64_t equal = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) equal += pred.labels[i] == truth.labels[i];
  return static_cast<double>(equal) / static_cast<double>(pred.size());
}

// ---------------------------------------------------------------------------

template <typename T>
LabelMap logits_to_mask(const BasicTensor<T>& logits) {
  if (logits.rank() != 4 || logits.dim(1) < 2) {
    throw ShapeError("logits_to_mask expects [N,C>=2,H,W], got " + logits.shape().str());
  }
  if (logits.dim(1) > 256) throw ShapeError("logits_to_mask: too many classes for 8-bit labels");
  const auto n = logits.dim(0), c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  LabelMap out(n, logits.dim(2), logits.dim(3));
  const T* d = logits.data().data();
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t q = 0; q < plane; ++q) {
      int best = 0;
      T best_v = d[(i * c) * plane + q];
      for (std::int64_t k = 1; k < c; ++k) {
        const T v = d[(i * c + k) * plane + q];
        if (v > best_v) {
          best_v = v;
          best = static_cast<int>(k);
        }
      }
      out.labels[i * plane + q] = static_cast<std::uint8_t>(best);
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> one_hot(const LabelMap& labels, int num_classes) {
  const auto plane = labels.h * labels.w;
  std::vector<T> data(static_cast<std::size_t>(labels.n * num_classes * plane), T(0));
  for (std::int64_t i = 0; i < labels.n; ++i) {
    for (std::int64_t q = 0; q < plane; ++q) {
      const int c = labels.labels[i * plane + q];
      if (c >= num_classes) {
        throw DataError("label " + std::to_string(c) + " out of range for " +
                        std::to_string(num_classes) + " classes");
      }
      data[(i * num_classes + c) * plane + q] = T(1);
    }
  }
  return BasicTensor<T>(Shape{labels.n, num_classes, labels.h, labels.w}, std::move(data));
}

namespace {

// Numerically stable softmax over the channel axis of an NCHW tensor.
template <typename T>
std::vector<T> channel_softmax(const BasicTensor<T>& logits) {
  const auto n = logits.dim(0), c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  const T* z = logits.data().data();
  std::vector<T> p(static_cast<std::size_t>(logits.numel()));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t q = 0; q < plane; ++q) {
      T mx = z[(i * c) * plane + q];
      for (std::int64_t k = 1; k < c; ++k) mx = std::max(mx, z[(i * c + k) * plane + q]);
      T total = 0;
      for (std::int64_t k = 0; k < c; ++k) {
        const auto idx = (i * c + k) * plane + q;
        p[idx] = std::exp(z[idx] - mx);
        total += p[idx];
      }
      for (std::int64_t k = 0; k < c; ++k) p[(i * c + k) * plane + q] /= total;
    }
  }
  return p;
}

template <typename T>
void check_loss_inputs(const char* op, const BasicTensor<T>& logits, const BasicTensor<T>& target) {
  if (logits.rank() != 4 || logits.shape() != target.shape()) {
    throw ShapeError(std::string(op) + ": logits " + logits.shape().str() + " vs target " +
                     target.shape().str());
  }
}

}  // namespace

template <typename T>
BasicTensor<T> soft_dice_loss(const BasicTensor<T>& logits, const BasicTensor<T>& target, T eps) {
  check_loss_inputs("soft_dice_loss", logits, target);
  if (!(eps > T(0))) throw ContractError("soft_dice_loss: eps must be positive");
  const auto n = logits.dim(0), c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  auto p = channel_softmax(logits);
  const T* t = target.data().data();
  std::vector<T> inter(c), uni(c);
  T mean_dice = 0;
  for (std::int64_t k = 0; k < c; ++k) {
    double pt = 0.0, ps = 0.0, ts = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      const auto base = (i * c + k) * plane;
      for (std::int64_t q = 0; q < plane; ++q) {
        pt += static_cast<double>(p[base + q]) * t[base + q];
        ps += p[base + q];
        ts += t[base + q];
      }
    }
    inter[k] = static_cast<T>(2.0 * pt + eps);
    uni[k] = static_cast<T>(ps + ts + eps);
    mean_dice += inter[k] / uni[k];
  }
  mean_dice /= static_cast<T>(c);
  BasicTensor<T> result(Shape{1}, std::vector<T>{T(1) - mean_dice});
  if (needs_tape<T>({&logits})) {
    auto li = logits.impl(), ti = target.impl(), oi = result.impl();
    record<T>("soft_dice_loss", {&logits}, result,
              [=, p = std::move(p), inter = std::move(inter), uni = std::move(uni)] {
                if (oi->grad.empty()) return;
                li->ensure_grad();
                const T g = oi->grad[0];
                const T* tt = ti->data.data();
                std::vector<T> dp(static_cast<std::size_t>(c));
                for (std::int64_t i = 0; i < n; ++i) {
                  for (std::int64_t q = 0; q < plane; ++q) {
                    // dL/dp_k, then through the softmax Jacobian.
                    T dot = 0;
                    for (std::int64_t k = 0; k < c; ++k) {
                      const auto idx = (i * c + k) * plane + q;
                      dp[k] = -(T(2) * tt[idx] * uni[k] - inter[k]) / (uni[k] * uni[k]) /
                              static_cast<T>(c) * g;
                      dot += dp[k] * p[idx];
                    }
                    for (std::int64_t k = 0; k < c; ++k) {
                      const auto idx = (i * c + k) * plane + q;
                      li->grad[idx] += p[idx] * (dp[k] - dot);
                    }
                  }
                }
              });
  }
  return result;
}

template <typename T>
BasicTensor<T> cross_entropy(const BasicTensor<T>& logits, const BasicTensor<T>& target) {
  check_loss_inputs("cross_entropy", logits, target);
  const auto n = logits.dim(0), c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
  auto p = channel_softmax(logits);
  const T* t = target.data().data();
  constexpr T floor = std::numeric_limits<T>::min();
  double total = 0.0;
  for (std::int64_t i = 0; i < n * c * plane; ++i) {
    if (t[i] != T(0)) total -= static_cast<double>(t[i]) * std::log(std::max(p[i], floor));
  }
  const T pixels = static_cast<T>(n * plane);
  BasicTensor<T> result(Shape{1}, std::vector<T>{static_cast<T>(total / (n * plane))});
  if (needs_tape<T>({&logits})) {
    auto li = logits.impl(), ti = target.impl(), oi = result.impl();
    record<T>("cross_entropy", {&logits}, result, [=, p = std::move(p)] {
      if (oi->grad.empty()) return;
      li->ensure_grad();
      const T g = oi->grad[0] / pixels;
      const T* tt = ti->data.data();
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t q = 0; q < plane; ++q) {
          T tsum = 0;
          for (std::int64_t k = 0; k < c; ++k) tsum += tt[(i * c + k) * plane + q];
          for (std::int64_t k = 0; k < c; ++k) {
            const auto idx = (i * c + k) * plane + q;
            li->grad[idx] += g * (p[idx] * tsum - tt[idx]);
          }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------

void EpochAccumulator::add_batch(const LabelMap& pred, const LabelMap& truth, double batch_loss) {
  confusion_.add(pred, truth);
  loss_sum_ += batch_loss * static_cast<double>(pred.n);
  samples_ += pred.n;
}

MetricRecord EpochAccumulator::finish(int epoch, const std::string& split) const {
  MetricRecord r;
  r.epoch = epoch;
  r.split = split;
  r.loss = samples_ ? loss_sum_ / static_cast<double>(samples_) : 0.0;
  r.dice = confusion_.binary_dice();
  r.iou = confusion_.binary_iou();
  r.mean_iou = confusion_.mean_iou();
  r.accuracy = confusion_.accuracy();
  return r;
}

#define SEGFORGE_INSTANTIATE(T)                                                              \
  template LabelMap logits_to_mask(const BasicTensor<T>&);                                   \
  template BasicTensor<T> one_hot<T>(const LabelMap&, int);                                  \
  template BasicTensor<T> soft_dice_loss(const BasicTensor<T>&, const BasicTensor<T>&, T);   \
  template BasicTensor<T> cross_entropy(const BasicTensor<T>&, const BasicTensor<T>&);

SEGFORGE_INSTANTIATE(float)
SEGFORGE_INSTANTIATE(double)
#undef SEGFORGE_INSTANTIATE

}  // namespace segforge
