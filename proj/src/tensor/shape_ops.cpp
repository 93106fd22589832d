#include <algorithm>
#include <numeric>
#include <string>

#include "ear/ops.hpp"

namespace ear {

namespace {

std::int64_t normalize_axis(std::int64_t axis, std::int64_t rank, const char* op) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  return axis;
}

std::vector<std::int64_t> row_major_strides(const Shape& shape) {
  std::vector<std::int64_t> strides(shape.size(), 1);
  for (std::int64_t i = static_cast<std::int64_t>(shape.size()) - 2; i >= 0; --i)
    strides[i] = strides[i + 1] * shape[i + 1];
  return strides;
}

/// For each input flat index, the flat index of the reduced output element.
std::vector<std::int64_t> reduction_map(const Shape& in_shape, const std::vector<bool>& reduced) {
  const auto rank = in_shape.size();
  // Stride of each input axis in the output (0 for reduced axes).
  std::vector<std::int64_t> out_stride(rank, 0);
  std::int64_t s = 1;
  for (std::int64_t i = static_cast<std::int64_t>(rank) - 1; i >= 0; --i) {
    if (!reduced[i]) {
      out_stride[i] = s;
      s *= in_shape[i];
    }
  }
  const auto n = shape_numel(in_shape);
  std::vector<std::int64_t> map(static_cast<std::size_t>(n));
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t out = 0;
  for (std::int64_t flat = 0; flat < n; ++flat) {
    map[flat] = out;
    for (std::int64_t ax = static_cast<std::int64_t>(rank) - 1; ax >= 0; --ax) {
      if (++idx[ax] < in_shape[ax]) {
        out += out_stride[ax];
        break;
      }
      out -= out_stride[ax] * (in_shape[ax] - 1);
      idx[ax] = 0;
    }
  }
  return map;
}

}  // namespace

Tensor reduce(ReduceOp op, const Tensor& x, std::vector<std::int64_t> axes) {
  const auto rank = x.dim();
  std::vector<bool> reduced(static_cast<std::size_t>(rank), axes.empty());
  for (auto a : axes) {
    auto ax = normalize_axis(a, rank, "reduce");
    if (reduced[ax]) throw ShapeError("reduce: axis " + std::to_string(ax) + " listed twice");
    reduced[ax] = true;
  }
  Shape out_shape;
  std::int64_t group = 1;
  for (std::int64_t i = 0; i < rank; ++i) {
    if (reduced[i])
      group *= x.shape()[i];
    else
      out_shape.push_back(x.shape()[i]);
  }
  auto map = std::make_shared<std::vector<std::int64_t>>(reduction_map(x.shape(), reduced));
  const double factor = op == ReduceOp::mean ? 1.0 / static_cast<double>(group) : 1.0;
  const auto n_out = static_cast<std::size_t>(shape_numel(out_shape));

  Buffer out(x.dtype(), n_out);
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.view<T>();
    for (std::size_t i = 0; i < in.size(); ++i) o[(*map)[i]] += in[i];
    if (op == ReduceOp::mean)
      for (auto& v : o) v *= static_cast<T>(factor);
  });
  const auto n_in = static_cast<std::size_t>(x.numel());
  return record_op(op == ReduceOp::sum ? "sum" : "mean", out_shape, std::move(out), {x},
                   [map, factor, n_in](const Buffer& g) {
                     Buffer gx(g.dtype(), n_in);
                     visit_dtype(g.dtype(), [&]<class T>(T) {
                       auto gv = g.view<T>();
                       auto o = gx.view<T>();
                       for (std::size_t i = 0; i < n_in; ++i) o[i] = gv[(*map)[i]] * static_cast<T>(factor);
                     });
                     return std::vector<Buffer>{std::move(gx)};
                   });
}

Tensor sum(const Tensor& x, std::vector<std::int64_t> axes) { return reduce(ReduceOp::sum, x, std::move(axes)); }
Tensor mean(const Tensor& x, std::vector<std::int64_t> axes) { return reduce(ReduceOp::mean, x, std::move(axes)); }

Tensor reshape(const Tensor& x, Shape shape) {
  for (auto e : shape)
    if (e <= 0) throw ShapeError("reshape: extents must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  // The gradient buffer is already laid out in row-major order; only the shape changes.
  return record_op("reshape", std::move(shape), x.impl()->data, {x},
                   [](const Buffer& g) { return std::vector<Buffer>{g}; });
}

Tensor permute(const Tensor& x, const std::vector<std::int64_t>& order) {
  const auto rank = x.dim();
  if (static_cast<std::int64_t>(order.size()) != rank)
    throw ShapeError("permute: order has " + std::to_string(order.size()) + " entries for rank " +
                     std::to_string(rank));
  std::vector<bool> used(static_cast<std::size_t>(rank), false);
  Shape out_shape(static_cast<std::size_t>(rank));
  std::vector<std::int64_t> axes(static_cast<std::size_t>(rank));
  for (std::int64_t i = 0; i < rank; ++i) {
    auto ax = axes[i] = normalize_axis(order[i], rank, "permute");
    if (used[ax]) throw ShapeError("permute: repeated axis " + std::to_string(ax));
    used[ax] = true;
    out_shape[i] = x.shape()[ax];
  }
  // src_index[out_flat] = in_flat
  auto in_strides = row_major_strides(x.shape());
  const auto n = static_cast<std::size_t>(x.numel());
  auto src = std::make_shared<std::vector<std::int64_t>>(n);
  {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
    std::int64_t in_flat = 0;
    for (std::size_t flat = 0; flat < n; ++flat) {
      (*src)[flat] = in_flat;
      for (std::int64_t ax = rank - 1; ax >= 0; --ax) {
        const auto in_ax = axes[ax];
        if (++idx[ax] < out_shape[ax]) {
          in_flat += in_strides[in_ax];
          break;
        }
        in_flat -= in_strides[in_ax] * (out_shape[ax] - 1);
        idx[ax] = 0;
      }
    }
  }
  Buffer out(x.dtype(), n);
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.view<T>();
    for (std::size_t i = 0; i < n; ++i) o[i] = in[(*src)[i]];
  });
  return record_op("permute", out_shape, std::move(out), {x}, [src, n](const Buffer& g) {
    Buffer gx(g.dtype(), n);
    visit_dtype(g.dtype(), [&]<class T>(T) {
      auto gv = g.view<T>();
      auto o = gx.view<T>();
      for (std::size_t i = 0; i < n; ++i) o[(*src)[i]] = gv[i];
    });
    return std::vector<Buffer>{std::move(gx)};
  });
}

Tensor concat(const std::vector<Tensor>& xs, std::int64_t axis) {
  if (xs.empty()) throw ShapeError("concat: no inputs");
  const auto rank = xs[0].dim();
  axis = normalize_axis(axis, rank, "concat");
  const DType dtype = xs[0].dtype();
  Shape out_shape = xs[0].shape();
  out_shape[axis] = 0;
  for (const auto& t : xs) {
    if (t.dim() != rank || t.dtype() != dtype) throw ShapeError("concat: rank or dtype mismatch");
    for (std::int64_t i = 0; i < rank; ++i)
      if (i != axis && t.shape()[i] != xs[0].shape()[i])
        throw ShapeError("concat: " + shape_str(t.shape()) + " incompatible with " + shape_str(xs[0].shape()) +
                         " along axis " + std::to_string(axis));
    out_shape[axis] += t.shape()[axis];
  }
  std::int64_t outer = 1, inner = 1;
  for (std::int64_t i = 0; i < axis; ++i) outer *= out_shape[i];
  for (std::int64_t i = axis + 1; i < rank; ++i) inner *= out_shape[i];
  std::vector<std::int64_t> extents;
  for (const auto& t : xs) extents.push_back(t.shape()[axis]);
  const std::int64_t total = out_shape[axis];

  Buffer out(dtype, static_cast<std::size_t>(shape_numel(out_shape)));
  visit_dtype(dtype, [&]<class T>(T) {
    auto o = out.view<T>();
    std::int64_t offset = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      auto in = xs[k].data<T>();
      const auto block = extents[k] * inner;
      for (std::int64_t b = 0; b < outer; ++b)
        std::copy_n(in.begin() + b * block, block, o.begin() + (b * total + offset) * inner);
      offset += extents[k];
    }
  });
  auto mask = grad_mask(xs);
  return record_op("concat", out_shape, std::move(out), xs, [extents, outer, inner, total, mask](const Buffer& g) {
    std::vector<Buffer> grads(extents.size());
    visit_dtype(g.dtype(), [&]<class T>(T) {
      auto gv = g.view<T>();
      std::int64_t offset = 0;
      for (std::size_t k = 0; k < extents.size(); ++k) {
        const auto block = extents[k] * inner;
        if (mask[k]) {
          Buffer gk(g.dtype(), static_cast<std::size_t>(outer * block));
          auto o = gk.view<T>();
          for (std::int64_t b = 0; b < outer; ++b)
            std::copy_n(gv.begin() + (b * total + offset) * inner, block, o.begin() + b * block);
          grads[k] = std::move(gk);
        }
        offset += extents[k];
      }
    });
    return grads;
  });
}

Tensor slice(const Tensor& x, const std::vector<SliceRange>& ranges) {
  const auto rank = x.dim();
  if (static_cast<std::int64_t>(ranges.size()) > rank) throw ShapeError("slice: more ranges than axes");
  Shape out_shape = x.shape();
  std::vector<std::int64_t> begin(static_cast<std::size_t>(rank), 0);
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    auto [b, e] = ranges[i];
    if (b < 0 || e > x.shape()[i] || b >= e)
      throw ShapeError("slice: range [" + std::to_string(b) + "," + std::to_string(e) + ") invalid for axis " +
                       std::to_string(i) + " of " + shape_str(x.shape()));
    begin[i] = b;
    out_shape[i] = e - b;
  }
  auto in_strides = row_major_strides(x.shape());
  const auto n = static_cast<std::size_t>(shape_numel(out_shape));
  auto src = std::make_shared<std::vector<std::int64_t>>(n);
  {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(rank), 0);
    std::int64_t in_flat = 0;
    for (std::int64_t i = 0; i < rank; ++i) in_flat += begin[i] * in_strides[i];
    for (std::size_t flat = 0; flat < n; ++flat) {
      (*src)[flat] = in_flat;
      for (std::int64_t ax = rank - 1; ax >= 0; --ax) {
        if (++idx[ax] < out_shape[ax]) {
          in_flat += in_strides[ax];
          break;
        }
        in_flat -= in_strides[ax] * (out_shape[ax] - 1);
        idx[ax] = 0;
      }
    }
  }
  Buffer out(x.dtype(), n);
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.view<T>();
    for (std::size_t i = 0; i < n; ++i) o[i] = in[(*src)[i]];
  });
  const auto n_in = static_cast<std::size_t>(x.numel());
  return record_op("slice", out_shape, std::move(out), {x}, [src, n, n_in](const Buffer& g) {
    Buffer gx(g.dtype(), n_in);
    visit_dtype(g.dtype(), [&]<class T>(T) {
      auto gv = g.view<T>();
      auto o = gx.view<T>();
      for (std::size_t i = 0; i < n; ++i) o[(*src)[i]] += gv[i];
    });
    return std::vector<Buffer>{std::move(gx)};
  });
}

Tensor slice_axis(const Tensor& x, std::int64_t axis, std::int64_t begin, std::int64_t end) {
  axis = normalize_axis(axis, x.dim(), "slice_axis");
  std::vector<SliceRange> ranges;
  for (std::int64_t i = 0; i <= axis; ++i) ranges.emplace_back(0, x.shape()[i]);
  ranges[axis] = {begin, end};
  return slice(x, ranges);
}

}  // namespace ear
