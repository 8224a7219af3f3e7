#pragma once

// Dice loss, binary cross-entropy and Dice score with dataset aggregation.
// The differentiable losses live on the tape (tape.hpp); the kernels here
// are the plain forward evaluations plus the evaluation metric.

#include <cmath>
#include <vector>

#include "mednca/kernels.hpp"
#include "mednca/tensor.hpp"

namespace mednca {

template <typename T>
T dice_loss_value(const Tensor<T>& prob, const Tensor<T>& target, T eps = T(1e-6)) {
  require(prob.same_shape(target), "dice_loss: shape mismatch");
  T inter = 0, psum = 0, tsum = 0;
  for (i64 i = 0; i < prob.size(); ++i) {
    inter += prob[i] * target[i];
    psum += prob[i];
    tsum += target[i];
  }
  return T(1) - (T(2) * inter + eps) / (psum + tsum + eps);
}

template <typename T>
T bce_loss_value(const Tensor<T>& prob, const Tensor<T>& target) {
  require(prob.same_shape(target), "bce_loss: shape mismatch");
  const T lo = T(1e-7), hi = T(1) - T(1e-7);
  T acc = 0;
  for (i64 i = 0; i < prob.size(); ++i) {
    const T p = std::clamp(prob[i], lo, hi);
    acc += -(target[i] * std::log(p) + (T(1) - target[i]) * std::log(T(1) - p));
  }
  return acc / static_cast<T>(prob.size());
}

// 2|A∩B| / (|A|+|B|); both-empty convention: 1.0
template <typename T>
double dice_score(const Tensor<T>& pred, const Tensor<T>& target) {
  require(pred.same_shape(target), "dice_score: shape mismatch");
  i64 inter = 0, a = 0, b = 0;
  for (i64 i = 0; i < pred.size(); ++i) {
    const bool pa = pred[i] > T(0.5);
    const bool pb = target[i] > T(0.5);
    a += pa;
    b += pb;
    inter += (pa && pb);
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

struct EvalReport {
  std::vector<double> per_image_dice;
  double mean = 0.0;
  double std_dev = 0.0;  // population standard deviation

  static EvalReport from_scores(std::vector<double> scores) {
    EvalReport r;
    r.per_image_dice = std::move(scores);
    const std::size_t n = r.per_image_dice.size();
    if (n == 0) return r;
    double s = 0;
    for (double d : r.per_image_dice) s += d;
    r.mean = s / static_cast<double>(n);
    double sq = 0;
    for (double d : r.per_image_dice) sq += (d - r.mean) * (d - r.mean);
    r.std_dev = std::sqrt(sq / static_cast<double>(n));
    return r;
  }

  std::size_t n_images() const { return per_image_dice.size(); }
};

}  // namespace mednca
