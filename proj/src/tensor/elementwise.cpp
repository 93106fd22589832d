#include <cmath>
#include <string>

#include "ear/ops.hpp"

namespace ear {

namespace {

enum class BinaryKind { add, sub, mul, div };

const char* binary_name(BinaryKind k) {
  switch (k) {
    case BinaryKind::add: return "add";
    case BinaryKind::sub: return "sub";
    case BinaryKind::mul: return "mul";
    case BinaryKind::div: return "div";
  }
  return "?";
}

template <class T>
T apply_binary(BinaryKind k, T x, T y) {
  switch (k) {
    case BinaryKind::add: return x + y;
    case BinaryKind::sub: return x - y;
    case BinaryKind::mul: return x * y;
    case BinaryKind::div: return x / y;
  }
  return T(0);
}

Tensor binary(BinaryKind kind, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype())
    throw ShapeError(std::string(binary_name(kind)) + ": dtype mismatch " + std::string(dtype_name(a.dtype())) +
                     " vs " + std::string(dtype_name(b.dtype())));
  const bool same = a.shape() == b.shape();
  const bool a_scalar = !same && a.numel() == 1;
  const bool b_scalar = !same && b.numel() == 1;
  if (!same && !a_scalar && !b_scalar)
    throw ShapeError(std::string(binary_name(kind)) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " do not broadcast (only scalar broadcasting is supported)");
  Shape out_shape = a_scalar ? b.shape() : a.shape();
  const auto n = static_cast<std::size_t>(shape_numel(out_shape));

  Buffer out(a.dtype(), n);
  visit_dtype(a.dtype(), [&]<class T>(T) {
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto o = out.view<T>();
    for (std::size_t i = 0; i < n; ++i) o[i] = apply_binary(kind, x[a_scalar ? 0 : i], y[b_scalar ? 0 : i]);
  });

  auto mask = grad_mask({a, b});
  return record_op(binary_name(kind), out_shape, std::move(out), {a, b},
                   [kind, a, b, a_scalar, b_scalar, mask, n](const Buffer& g) {
                     std::vector<Buffer> grads(2);
                     visit_dtype(g.dtype(), [&]<class T>(T) {
                       auto gv = g.view<T>();
                       auto x = a.data<T>();
                       auto y = b.data<T>();
                       if (mask[0]) {
                         Buffer ga(g.dtype(), a_scalar ? 1 : n);
                         auto go = ga.view<T>();
                         for (std::size_t i = 0; i < n; ++i) {
                           T yi = y[b_scalar ? 0 : i];
                           T d = kind == BinaryKind::mul ? yi : kind == BinaryKind::div ? T(1) / yi : T(1);
                           go[a_scalar ? 0 : i] += gv[i] * d;
                         }
                         grads[0] = std::move(ga);
                       }
                       if (mask[1]) {
                         Buffer gb(g.dtype(), b_scalar ? 1 : n);
                         auto go = gb.view<T>();
                         for (std::size_t i = 0; i < n; ++i) {
                           T xi = x[a_scalar ? 0 : i], yi = y[b_scalar ? 0 : i];
                           T d;
                           switch (kind) {
                             case BinaryKind::add: d = T(1); break;
                             case BinaryKind::sub: d = T(-1); break;
                             case BinaryKind::mul: d = xi; break;
                             default: d = -xi / (yi * yi); break;
                           }
                           go[b_scalar ? 0 : i] += gv[i] * d;
                         }
                         grads[1] = std::move(gb);
                       }
                     });
                     return grads;
                   });
}

/// Unary op where the derivative is expressed through input x and output y.
template <class Fwd, class Deriv>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, Deriv deriv) {
  const auto n = static_cast<std::size_t>(x.numel());
  Buffer out(x.dtype(), n);
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out.view<T>();
    for (std::size_t i = 0; i < n; ++i) o[i] = fwd(in[i]);
  });
  auto saved_out = std::make_shared<Buffer>(std::move(out));
  return record_op(name, x.shape(), saved_out, {x}, [x, saved_out, deriv, n](const Buffer& g) {
    Buffer gx(g.dtype(), n);
    visit_dtype(g.dtype(), [&]<class T>(T) {
      auto gv = g.view<T>();
      auto in = x.data<T>();
      auto y = saved_out->view<T>();
      auto o = gx.view<T>();
      for (std::size_t i = 0; i < n; ++i) o[i] = gv[i] * deriv(in[i], y[i]);
    });
    return std::vector<Buffer>{std::move(gx)};
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(BinaryKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(BinaryKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(BinaryKind::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(BinaryKind::div, a, b); }

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](auto v) { return v > 0 ? v : decltype(v)(0); },
      [](auto v, auto) { return v > 0 ? decltype(v)(1) : decltype(v)(0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](auto v) {
        using T = decltype(v);
        // Branches keep exp() from overflowing for large |v|.
        if (v >= 0) return T(1) / (T(1) + std::exp(-v));
        T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](auto, auto y) { return y * (decltype(y)(1) - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](auto v) { return std::tanh(v); }, [](auto, auto y) { return decltype(y)(1) - y * y; });
}

Tensor neg(const Tensor& x) {
  return unary(
      "neg", x, [](auto v) { return -v; }, [](auto v, auto) { return decltype(v)(-1); });
}

Tensor log(const Tensor& x) {
  return unary(
      "log", x, [](auto v) { return std::log(v); }, [](auto v, auto) { return decltype(v)(1) / v; });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](auto v) { return std::exp(v); }, [](auto, auto y) { return y; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](auto v) { return static_cast<decltype(v)>(factor) * v; },
      [factor](auto v, auto) { return static_cast<decltype(v)>(factor); });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      "add_scalar", x, [value](auto v) { return v + static_cast<decltype(v)>(value); },
      [](auto v, auto) { return decltype(v)(1); });
}

Tensor clamp_min(const Tensor& x, double lo) {
  return unary(
      "clamp_min", x,
      [lo](auto v) {
        auto l = static_cast<decltype(v)>(lo);
        return v > l ? v : l;
      },
      [lo](auto v, auto) { return v > static_cast<decltype(v)>(lo) ? decltype(v)(1) : decltype(v)(0); });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b, double factor) {
  auto need_b = [&]() -> const Tensor& {
    if (!b.defined()) throw ShapeError("binary elementwise op requires a second operand");
    return b;
  };
  switch (op) {
    case ElementwiseOp::add: return add(a, need_b());
    case ElementwiseOp::sub: return sub(a, need_b());
    case ElementwiseOp::mul: return mul(a, need_b());
    case ElementwiseOp::div: return div(a, need_b());
    case ElementwiseOp::relu: return relu(a);
    case ElementwiseOp::sigmoid: return sigmoid(a);
    case ElementwiseOp::tanh: return tanh(a);
    case ElementwiseOp::scale: return scale(a, factor);
    case ElementwiseOp::neg: return neg(a);
    case ElementwiseOp::log: return log(a);
    case ElementwiseOp::exp: return exp(a);
  }
  throw ShapeError("unknown elementwise op");
}

}  // namespace ear
