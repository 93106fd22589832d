#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "ear/autograd.hpp"
#include "ear/tensor.hpp"

namespace ear {

enum class ElementwiseOp { add, sub, mul, div, relu, sigmoid, tanh, scale, neg, log, exp };

// Binary ops accept equal shapes, or one operand with a single element (scalar broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
/// max(x, lo); gradient passes where x > lo.
Tensor clamp_min(const Tensor& x, double lo);

/// Dispatch form. `b` is required for binary kinds; `factor` is used by `scale`.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b = Tensor{}, double factor = 1.0);

/// [B,M,K] x [B,K,N] -> [B,M,N].
Tensor matmul_batched(const Tensor& a, const Tensor& b);

/// x[B,C] * weight[O,C]^T + bias[O] -> [B,O]. `bias` may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Numerically stable softmax along `axis` (max subtraction).
Tensor softmax(const Tensor& x, std::int64_t axis);

enum class ReduceOp { sum, mean };
/// Reduces over `axes` (all axes if empty) and drops them from the shape.
Tensor reduce(ReduceOp op, const Tensor& x, std::vector<std::int64_t> axes = {});
Tensor sum(const Tensor& x, std::vector<std::int64_t> axes = {});
Tensor mean(const Tensor& x, std::vector<std::int64_t> axes = {});

/// Shares storage with `x`; the data is reinterpreted, never copied.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::int64_t>& order);
Tensor concat(const std::vector<Tensor>& xs, std::int64_t axis);

/// Half-open [begin, end) per leading axis; axes beyond `ranges` are kept whole.
using SliceRange = std::pair<std::int64_t, std::int64_t>;
Tensor slice(const Tensor& x, const std::vector<SliceRange>& ranges);
/// Convenience: [begin, end) along a single axis.
Tensor slice_axis(const Tensor& x, std::int64_t axis, std::int64_t begin, std::int64_t end);

/// Row-wise attention per batch item: out = softmax(q k^T) v, q/k/v of shape [B,P,C].
/// Scores are recomputed tile by tile in backward, so the [P,P] matrix is never stored.
Tensor spatial_attention(const Tensor& q, const Tensor& k, const Tensor& v);

/// The attention matrices softmax(q k^T) as [B,P,P]. Not differentiable; for inspection.
Tensor attention_weights(const Tensor& q, const Tensor& k);

}  // namespace ear
