#pragma once

#include <cmath>
#include <cstdio>
#include <string>

#include "mipseg/tensor.hpp"
#include "mipseg/volume.hpp"

namespace mipseg {

// Soft Dice loss 1 - (2*sum(y.yhat)+eps)/(sum(yhat)+sum(y)+eps) with
// eps = 1e-7 defining the empty-empty case; differentiable in yhat.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& target, const Tensor<T>& pred) {
  detail::check_same_shape("dice_loss", target, pred);
  const T eps = T(1e-7);
  Tensor<T> inter = reduce_sum(mul(target, pred));
  Tensor<T> denom = add(reduce_sum(pred), reduce_sum(target));
  Tensor<T> frac = divide(add_constant(scale(inter, T(2)), eps), add_constant(denom, eps));
  return add_constant(scale(frac, T(-1)), T(1));
}

// Joint two-output loss: c * loss(y, yhat_aux) + (1-c) * loss(y, yhat).
template <typename T>
Tensor<T> joint_loss(const Tensor<T>& target, const Tensor<T>& pred, const Tensor<T>& pred_aux,
                     double c) {
  if (c < 0.0 || c > 1.0)
    throw ConfigError("joint_loss balance c must lie in [0,1], got " + std::to_string(c));
  return add(scale(dice_loss(target, pred_aux), static_cast<T>(c)),
             scale(dice_loss(target, pred), static_cast<T>(1.0 - c)));
}

// Balance schedule c(n+1) = c(n) * 0.99^n with c(1) = 0.99.
struct BalanceSchedule {
  double c = 0.99;
  int epoch = 1;
};

inline BalanceSchedule advance_balance(const BalanceSchedule& s) {
  if (s.epoch < 1) throw ConfigError("balance schedule epoch must be >= 1");
  BalanceSchedule out;
  double factor = 1.0;
  for (int i = 0; i < s.epoch; ++i) factor *= 0.99;
  out.c = s.c * factor;
  out.epoch = s.epoch + 1;
  return out;
}

// Voxel is foreground iff probability >= 0.5 (boundary goes to foreground).
template <typename T>
Volume<T> threshold_mask(const Volume<T>& probs) {
  Volume<T> out(probs.a, probs.b, probs.c);
  for (size_t i = 0; i < probs.voxels.size(); ++i)
    out.voxels[i] = probs.voxels[i] >= T(0.5) ? T(1) : T(0);
  return out;
}

struct ConfusionCounts {
  long long tp = 0, tn = 0, fp = 0, fn = 0;
  long long total() const { return tp + tn + fp + fn; }
};

struct MetricsReport {
  ConfusionCounts counts;
  double ma = 0.0;  // mean accuracy
  double iu = 0.0;  // mean intersection over union
  double dc = 0.0;  // Dice coefficient
};

namespace detail {

// A ratio with zero denominator scores 1 when the class is absent and not
// predicted, 0 when the class is absent but predicted anyway.
inline double safe_ratio(double num, double den, bool predicted_clean) {
  if (den > 0.0) return num / den;
  return predicted_clean ? 1.0 : 0.0;
}

}  // namespace detail

inline MetricsReport metrics_from_counts(const ConfusionCounts& n) {
  MetricsReport r;
  r.counts = n;
  const double tp = static_cast<double>(n.tp), tn = static_cast<double>(n.tn);
  const double fp = static_cast<double>(n.fp), fnv = static_cast<double>(n.fn);
  r.ma = 0.5 * (detail::safe_ratio(tn, tn + fp, n.fn == 0) +
                detail::safe_ratio(tp, tp + fnv, n.fp == 0));
  r.iu = 0.5 * (detail::safe_ratio(tn, tn + fp + fnv, n.fn == 0) +
                detail::safe_ratio(tp, tp + fnv + fp, n.fp == 0));
  r.dc = detail::safe_ratio(2.0 * tp, 2.0 * tp + fnv + fp, true);
  return r;
}

template <typename T>
ConfusionCounts confusion_counts(const Volume<T>& truth, const Volume<T>& mask) {
  if (!truth.same_dims(mask))
    throw ShapeError("evaluate: volume dims differ, [" + std::to_string(truth.a) + "x" +
                     std::to_string(truth.b) + "x" + std::to_string(truth.c) + "] vs [" +
                     std::to_string(mask.a) + "x" + std::to_string(mask.b) + "x" +
                     std::to_string(mask.c) + "]");
  ConfusionCounts n;
  for (size_t i = 0; i < truth.voxels.size(); ++i) {
    const bool t = truth.voxels[i] != T(0);
    const bool p = mask.voxels[i] != T(0);
    if (t && p)
      ++n.tp;
    else if (!t && !p)
      ++n.tn;
    else if (!t && p)
      ++n.fp;
    else
      ++n.fn;
  }
  return n;
}

template <typename T>
MetricsReport evaluate(const Volume<T>& truth, const Volume<T>& mask) {
  return metrics_from_counts(confusion_counts(truth, mask));
}

// Flat key=value record, one metric per line, 6 decimal places.
inline std::string report_to_text(const MetricsReport& r) {
  char buf[256];
  std::string out;
  out += "tp=" + std::to_string(r.counts.tp) + "\n";
  out += "tn=" + std::to_string(r.counts.tn) + "\n";
  out += "fp=" + std::to_string(r.counts.fp) + "\n";
  out += "fn=" + std::to_string(r.counts.fn) + "\n";
  std::snprintf(buf, sizeof(buf), "ma=%.6f\niu=%.6f\ndc=%.6f\n", r.ma, r.iu, r.dc);
  out += buf;
  return out;
}

}  // namespace mipseg
