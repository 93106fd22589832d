#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "ear/mask.hpp"
#include "ear/tensor.hpp"

namespace ear {

/// Additive Laplace smoothing in the ratio losses.
struct SmoothingFactor {
  double value = 1.0;
};

struct CrossEntropyOptions {
  bool clamp = true;
  double min_probability = 1e-7;
};

/// Mean over pixels of -sum_c y_c log p_c. `pred` and `target` are [N,K,...] with classes on axis 1.
Tensor cross_entropy(const Tensor& pred, const Tensor& target, CrossEntropyOptions options = {});

/// 1 - (2|GT n Pred| + f) / (|GT| + |Pred| + f), soft: |GT n Pred| = sum gt*pred.
Tensor dice_loss(const Tensor& pred, const Tensor& gt, SmoothingFactor f = {});

/// 1 - (|GT n Pred| + f) / (|GT u Pred| + f), soft union = sum gt + sum pred - sum gt*pred.
Tensor jaccard_term(const Tensor& pred, const Tensor& gt, SmoothingFactor f = {});

/// Mean over samples (axis 0) of dice_loss * jaccard_term, each over the whole sample.
Tensor dice_iou_loss(const Tensor& preds, const Tensor& gts, SmoothingFactor f = {});

enum class LossKind { cross_entropy, dice, dice_iou };
std::string loss_name(LossKind kind);
/// Accepts "cross_entropy", "dice", "dice_iou".
LossKind parse_loss(const std::string& name);

/// Loss on network output probs [N,K,T,H,W] against a binary foreground mask [N,T,H,W].
/// Dice-type losses use the foreground channel (index 1) and average per sample.
Tensor segmentation_loss(LossKind kind, const Tensor& probs, const Tensor& foreground, SmoothingFactor f = {});

/// [N,T,H,W] 0/1 tensor -> [N,2,T,H,W] one-hot (background, foreground).
Tensor one_hot_foreground(const Tensor& foreground);

/// Per-pixel argmax over axis 1 of probs [N,K,T,H,W] (N = 1) or [K,T,H,W]; class 1 -> foreground.
/// Ties resolve to the lower class index.
BinaryMask argmax_mask(const Tensor& probs);

struct MetricReport {
  /// Undefined (nullopt) when the denominator is zero.
  std::optional<double> dice;
  std::optional<double> sensitivity;
  std::optional<double> ppv;
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

MetricReport compute_metrics(const BinaryMask& pred, const BinaryMask& gt);
/// Metrics from raw confusion counts.
MetricReport metrics_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn);

}  // namespace ear
