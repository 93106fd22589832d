#include "ear/objectives.hpp"

#include "ear/ops.hpp"

namespace ear {

namespace {

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                     " differ");
}

Tensor as_dtype(const Tensor& t, DType dtype) { return t.dtype() == dtype ? t : t.to(dtype); }

/// 1 - numerator / denominator
Tensor one_minus_ratio(const Tensor& numerator, const Tensor& denominator) {
  return add_scalar(neg(div(numerator, denominator)), 1.0);
}

}  // namespace

Tensor cross_entropy(const Tensor& pred, const Tensor& target, CrossEntropyOptions options) {
  require_same_shape("cross_entropy", pred, target);
  if (pred.dim() < 2) throw ShapeError("cross_entropy: expected [N,K,...], got " + shape_str(pred.shape()));
  Tensor p = pred;
  if (options.clamp) {
    p = clamp_min(pred, options.min_probability);
  } else {
    const auto& buf = pred.buffer();
    for (std::size_t i = 0; i < buf.size(); ++i)
      if (!(buf.get(i) > 0.0))
        throw NumericError("cross_entropy: non-positive probability at index " + std::to_string(i) +
                           " with clamping disabled");
  }
  const double pixels = static_cast<double>(pred.numel() / pred.size(1));
  return scale(sum(mul(log(p), as_dtype(target, pred.dtype()))), -1.0 / pixels);
}

Tensor dice_loss(const Tensor& pred, const Tensor& gt, SmoothingFactor f) {
  require_same_shape("dice_loss", pred, gt);
  const Tensor g = as_dtype(gt, pred.dtype());
  Tensor inter = sum(mul(pred, g));
  Tensor numerator = add_scalar(scale(inter, 2.0), f.value);
  Tensor denominator = add_scalar(add(sum(g), sum(pred)), f.value);
  return one_minus_ratio(numerator, denominator);
}

Tensor jaccard_term(const Tensor& pred, const Tensor& gt, SmoothingFactor f) {
  require_same_shape("jaccard_term", pred, gt);
  const Tensor g = as_dtype(gt, pred.dtype());
  Tensor inter = sum(mul(pred, g));
  Tensor uni = sub(add(sum(g), sum(pred)), inter);
  return one_minus_ratio(add_scalar(inter, f.value), add_scalar(uni, f.value));
}

Tensor dice_iou_loss(const Tensor& preds, const Tensor& gts, SmoothingFactor f) {
  require_same_shape("dice_iou_loss", preds, gts);
  if (preds.dim() < 1) throw ShapeError("dice_iou_loss: expected a leading sample axis");
  const auto n = preds.size(0);
  Tensor total;
  for (std::int64_t i = 0; i < n; ++i) {
    const Tensor p = slice_axis(preds, 0, i, i + 1);
    const Tensor g = slice_axis(gts, 0, i, i + 1);
    Tensor term = mul(dice_loss(p, g, f), jaccard_term(p, g, f));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(n));
}

std::string loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::cross_entropy: return "cross_entropy";
    case LossKind::dice: return "dice";
    case LossKind::dice_iou: return "dice_iou";
  }
  return "?";
}

LossKind parse_loss(const std::string& name) {
  if (name == "cross_entropy") return LossKind::cross_entropy;
  if (name == "dice") return LossKind::dice;
  if (name == "dice_iou") return LossKind::dice_iou;
  throw ConfigError("unknown loss '" + name + "' (expected cross_entropy, dice or dice_iou)");
}

Tensor one_hot_foreground(const Tensor& foreground) {
  if (foreground.dim() != 4) throw ShapeError("one_hot_foreground: expected [N,T,H,W], got " + shape_str(foreground.shape()));
  const auto n = foreground.size(0);
  const auto plane = foreground.numel() / n;
  const auto& src = foreground.buffer();
  Buffer out(foreground.dtype(), static_cast<std::size_t>(2 * foreground.numel()));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < plane; ++i) {
      const double y = src.get(static_cast<std::size_t>(b * plane + i));
      out.set(static_cast<std::size_t>((2 * b) * plane + i), 1.0 - y);
      out.set(static_cast<std::size_t>((2 * b + 1) * plane + i), y);
    }
  const auto& s = foreground.shape();
  return Tensor::from_buffer({s[0], 2, s[1], s[2], s[3]}, std::move(out));
}

Tensor segmentation_loss(LossKind kind, const Tensor& probs, const Tensor& foreground, SmoothingFactor f) {
  if (probs.dim() != 5 || probs.size(1) != 2)
    throw ShapeError("segmentation_loss: expected probabilities [N,2,T,H,W], got " + shape_str(probs.shape()));
  const auto& s = probs.shape();
  if (foreground.shape() != Shape{s[0], s[2], s[3], s[4]})
    throw ShapeError("segmentation_loss: mask " + shape_str(foreground.shape()) + " does not match " +
                     shape_str(probs.shape()));
  if (kind == LossKind::cross_entropy) return cross_entropy(probs, one_hot_foreground(foreground));
  Tensor fg = reshape(slice_axis(probs, 1, 1, 2), foreground.shape());
  if (kind == LossKind::dice_iou) return dice_iou_loss(fg, foreground, f);
  Tensor total;
  for (std::int64_t i = 0; i < s[0]; ++i) {
    Tensor term = dice_loss(slice_axis(fg, 0, i, i + 1), slice_axis(foreground, 0, i, i + 1), f);
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0 / static_cast<double>(s[0]));
}

BinaryMask argmax_mask(const Tensor& probs) {
  Shape s = probs.shape();
  if (s.size() == 5) {
    if (s[0] != 1) throw ShapeError("argmax_mask: batch size must be 1, got " + shape_str(s));
    s.erase(s.begin());
  }
  if (s.size() != 4) throw ShapeError("argmax_mask: expected [K,T,H,W], got " + shape_str(probs.shape()));
  const auto k = s[0];
  const auto plane = shape_numel(s) / k;
  BinaryMask mask({s[1], s[2], s[3]});
  const auto& buf = probs.buffer();
  for (std::int64_t i = 0; i < plane; ++i) {
    std::int64_t best = 0;
    double best_value = buf.get(static_cast<std::size_t>(i));
    for (std::int64_t c = 1; c < k; ++c) {
      const double v = buf.get(static_cast<std::size_t>(c * plane + i));
      if (v > best_value) {
        best = c;
        best_value = v;
      }
    }
    mask[i] = best == 1;
  }
  return mask;
}

MetricReport metrics_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn, std::int64_t tn) {
  MetricReport r;
  r.tp = tp;
  r.fp = fp;
  r.fn = fn;
  r.tn = tn;
  const auto ratio = [](std::int64_t num, std::int64_t den) -> std::optional<double> {
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
  };
  r.dice = ratio(2 * tp, 2 * tp + fp + fn);
  r.sensitivity = ratio(tp, tp + fn);
  r.ppv = ratio(tp, tp + fp);
  return r;
}

MetricReport compute_metrics(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.shape != gt.shape)
    throw ShapeError("compute_metrics: shapes " + shape_str(pred.shape) + " and " + shape_str(gt.shape) + " differ");
  std::int64_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool p = pred.values[i] != 0, g = gt.values[i] != 0;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
    tn += !p && !g;
  }
  return metrics_from_counts(tp, fp, fn, tn);
}

}  // namespace ear
