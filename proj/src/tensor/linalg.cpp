#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ear/ops.hpp"

namespace ear {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;

void require_same_dtype(const char* op, const Tensor& a, const Tensor& b) {
  if (a.dtype() != b.dtype()) throw ShapeError(std::string(op) + ": dtype mismatch");
}

}  // namespace

Tensor matmul_batched(const Tensor& a, const Tensor& b) {
  require_same_dtype("matmul_batched", a, b);
  if (a.dim() != 3 || b.dim() != 3)
    throw ShapeError("matmul_batched expects [B,M,K] x [B,K,N], got " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  const auto B = a.size(0), M = a.size(1), K = a.size(2), N = b.size(2);
  if (b.size(0) != B || b.size(1) != K)
    throw ShapeError("matmul_batched: " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + " do not compose");
  Buffer out(a.dtype(), static_cast<std::size_t>(B * M * N));
  visit_dtype(a.dtype(), [&]<class T>(T) {
    for (std::int64_t i = 0; i < B; ++i) {
      MapC<T> A(a.data<T>().data() + i * M * K, M, K);
      MapC<T> Bm(b.data<T>().data() + i * K * N, K, N);
      Map<T> C(out.view<T>().data() + i * M * N, M, N);
      C.noalias() = A * Bm;
    }
  });
  auto mask = grad_mask({a, b});
  return record_op("matmul_batched", {B, M, N}, std::move(out), {a, b}, [a, b, mask, B, M, K, N](const Buffer& g) {
    std::vector<Buffer> grads(2);
    visit_dtype(g.dtype(), [&]<class T>(T) {
      if (mask[0]) grads[0] = Buffer(g.dtype(), static_cast<std::size_t>(B * M * K));
      if (mask[1]) grads[1] = Buffer(g.dtype(), static_cast<std::size_t>(B * K * N));
      for (std::int64_t i = 0; i < B; ++i) {
        MapC<T> G(g.view<T>().data() + i * M * N, M, N);
        if (mask[0]) {
          MapC<T> Bm(b.data<T>().data() + i * K * N, K, N);
          Map<T>(grads[0].view<T>().data() + i * M * K, M, K).noalias() = G * Bm.transpose();
        }
        if (mask[1]) {
          MapC<T> A(a.data<T>().data() + i * M * K, M, K);
          Map<T>(grads[1].view<T>().data() + i * K * N, K, N).noalias() = A.transpose() * G;
        }
      }
    });
    return grads;
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_same_dtype("linear", x, weight);
  if (x.dim() != 2 || weight.dim() != 2 || x.size(1) != weight.size(1))
    throw ShapeError("linear: x " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  const auto B = x.size(0), C = x.size(1), O = weight.size(0);
  const bool has_bias = bias.defined();
  if (has_bias) {
    require_same_dtype("linear", x, bias);
    if (bias.dim() != 1 || bias.size(0) != O) throw ShapeError("linear: bias shape " + shape_str(bias.shape()));
  }
  Buffer out(x.dtype(), static_cast<std::size_t>(B * O));
  visit_dtype(x.dtype(), [&]<class T>(T) {
    MapC<T> X(x.data<T>().data(), B, C);
    MapC<T> W(weight.data<T>().data(), O, C);
    Map<T> Y(out.view<T>().data(), B, O);
    Y.noalias() = X * W.transpose();
    if (has_bias) {
      Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(bias.data<T>().data(), O);
      Y.rowwise() += bv;
    }
  });
  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  auto mask = grad_mask(inputs);
  return record_op("linear", {B, O}, std::move(out), inputs, [x, weight, mask, B, C, O](const Buffer& g) {
    std::vector<Buffer> grads(mask.size());
    visit_dtype(g.dtype(), [&]<class T>(T) {
      MapC<T> G(g.view<T>().data(), B, O);
      if (mask[0]) {
        grads[0] = Buffer(g.dtype(), static_cast<std::size_t>(B * C));
        Map<T>(grads[0].view<T>().data(), B, C).noalias() = G * MapC<T>(weight.data<T>().data(), O, C);
      }
      if (mask[1]) {
        grads[1] = Buffer(g.dtype(), static_cast<std::size_t>(O * C));
        Map<T>(grads[1].view<T>().data(), O, C).noalias() = G.transpose() * MapC<T>(x.data<T>().data(), B, C);
      }
      if (mask.size() > 2 && mask[2]) {
        grads[2] = Buffer(g.dtype(), static_cast<std::size_t>(O));
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grads[2].view<T>().data(), O) = G.colwise().sum();
      }
    });
    return grads;
  });
}

Tensor softmax(const Tensor& x, std::int64_t axis) {
  const auto rank = x.dim();
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
  std::int64_t outer = 1, inner = 1;
  const auto len = x.size(axis);
  for (std::int64_t i = 0; i < axis; ++i) outer *= x.size(i);
  for (std::int64_t i = axis + 1; i < rank; ++i) inner *= x.size(i);

  auto out = std::make_shared<Buffer>(x.dtype(), static_cast<std::size_t>(x.numel()));
  visit_dtype(x.dtype(), [&]<class T>(T) {
    auto in = x.data<T>();
    auto o = out->view<T>();
    std::vector<T> mx(static_cast<std::size_t>(inner)), total(static_cast<std::size_t>(inner));
    for (std::int64_t b = 0; b < outer; ++b) {
      const auto base = b * len * inner;
      std::fill(mx.begin(), mx.end(), -std::numeric_limits<T>::infinity());
      std::fill(total.begin(), total.end(), T(0));
      for (std::int64_t k = 0; k < len; ++k)
        for (std::int64_t j = 0; j < inner; ++j) mx[j] = std::max(mx[j], in[base + k * inner + j]);
      for (std::int64_t k = 0; k < len; ++k)
        for (std::int64_t j = 0; j < inner; ++j) {
          T e = std::exp(in[base + k * inner + j] - mx[j]);
          o[base + k * inner + j] = e;
          total[j] += e;
        }
      for (std::int64_t k = 0; k < len; ++k)
        for (std::int64_t j = 0; j < inner; ++j) o[base + k * inner + j] /= total[j];
    }
  });
  return record_op("softmax", x.shape(), out, {x}, [out, outer, inner, len](const Buffer& g) {
    Buffer gx(g.dtype(), out->size());
    visit_dtype(g.dtype(), [&]<class T>(T) {
      auto gv = g.view<T>();
      auto y = out->view<T>();
      auto o = gx.view<T>();
      std::vector<T> dot(static_cast<std::size_t>(inner));
      for (std::int64_t b = 0; b < outer; ++b) {
        const auto base = b * len * inner;
        std::fill(dot.begin(), dot.end(), T(0));
        for (std::int64_t k = 0; k < len; ++k)
          for (std::int64_t j = 0; j < inner; ++j) dot[j] += gv[base + k * inner + j] * y[base + k * inner + j];
        for (std::int64_t k = 0; k < len; ++k)
          for (std::int64_t j = 0; j < inner; ++j) {
            const auto i = base + k * inner + j;
            o[i] = y[i] * (gv[i] - dot[j]);
          }
      }
    });
    return std::vector<Buffer>{std::move(gx)};
  });
}

namespace {

constexpr std::int64_t kAttentionTile = 64;

void check_attention_operands(const Tensor& q, const Tensor& k, const Tensor* v) {
  require_same_dtype("spatial_attention", q, k);
  if (q.dim() != 3 || q.shape() != k.shape())
    throw ShapeError("spatial_attention: q " + shape_str(q.shape()) + " and k " + shape_str(k.shape()) +
                     " must both be [B,P,C]");
  if (v) {
    require_same_dtype("spatial_attention", q, *v);
    if (v->shape() != q.shape()) throw ShapeError("spatial_attention: v must match q, got " + shape_str(v->shape()));
  }
}

/// Scores for rows [r0, r0+rows) of batch item: S = Q_blk K^T, turned into
/// row-stochastic weights in place. Returns per-row log-sum-exp.
template <class T>
void attention_tile(const MapC<T>& Q, const MapC<T>& K, std::int64_t r0, std::int64_t rows, RowMat<T>& A,
                    T* lse) {
  A.noalias() = Q.middleRows(r0, rows) * K.transpose();
  for (std::int64_t r = 0; r < rows; ++r) {
    auto row = A.row(r);
    const T m = row.maxCoeff();
    row.array() = (row.array() - m).exp();
    const T s = row.sum();
    row /= s;
    if (lse) lse[r] = m + std::log(s);
  }
}

}  // namespace

Tensor spatial_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  check_attention_operands(q, k, &v);
  const auto B = q.size(0), P = q.size(1), C = q.size(2);
  auto out = std::make_shared<Buffer>(q.dtype(), static_cast<std::size_t>(B * P * C));
  auto lse = std::make_shared<Buffer>(q.dtype(), static_cast<std::size_t>(B * P));
  visit_dtype(q.dtype(), [&]<class T>(T) {
    RowMat<T> A;
    for (std::int64_t b = 0; b < B; ++b) {
      MapC<T> Q(q.data<T>().data() + b * P * C, P, C);
      MapC<T> K(k.data<T>().data() + b * P * C, P, C);
      MapC<T> V(v.data<T>().data() + b * P * C, P, C);
      Map<T> O(out->view<T>().data() + b * P * C, P, C);
      for (std::int64_t r0 = 0; r0 < P; r0 += kAttentionTile) {
        const auto rows = std::min(kAttentionTile, P - r0);
        A.resize(rows, P);
        attention_tile<T>(Q, K, r0, rows, A, lse->view<T>().data() + b * P + r0);
        O.middleRows(r0, rows).noalias() = A * V;
      }
    }
  });
  auto mask = grad_mask({q, k, v});
  return record_op(
      "spatial_attention", {B, P, C}, out, {q, k, v}, [q, k, v, out, lse, mask, B, P, C](const Buffer& g) {
        std::vector<Buffer> grads(3);
        const auto n = static_cast<std::size_t>(B * P * C);
        for (int i = 0; i < 3; ++i)
          if (mask[i]) grads[i] = Buffer(g.dtype(), n);
        visit_dtype(g.dtype(), [&]<class T>(T) {
          RowMat<T> A, dA;
          Eigen::Matrix<T, Eigen::Dynamic, 1> D;
          for (std::int64_t b = 0; b < B; ++b) {
            const auto off = b * P * C;
            MapC<T> Q(q.data<T>().data() + off, P, C);
            MapC<T> K(k.data<T>().data() + off, P, C);
            MapC<T> V(v.data<T>().data() + off, P, C);
            MapC<T> O(out->view<T>().data() + off, P, C);
            MapC<T> G(g.view<T>().data() + off, P, C);
            const T* row_lse = lse->view<T>().data() + b * P;
            for (std::int64_t r0 = 0; r0 < P; r0 += kAttentionTile) {
              const auto rows = std::min(kAttentionTile, P - r0);
              A.noalias() = Q.middleRows(r0, rows) * K.transpose();
              for (std::int64_t r = 0; r < rows; ++r) A.row(r).array() = (A.row(r).array() - row_lse[r0 + r]).exp();
              auto Gb = G.middleRows(r0, rows);
              if (mask[2]) Map<T>(grads[2].view<T>().data() + off, P, C).noalias() += A.transpose() * Gb;
              if (!mask[0] && !mask[1]) continue;
              dA.noalias() = Gb * V.transpose();
              D = (Gb.array() * O.middleRows(r0, rows).array()).rowwise().sum();
              // dS = A ⊙ (dA - D), stored in dA.
              dA = A.array() * (dA.colwise() - D).array();
              if (mask[0]) Map<T>(grads[0].view<T>().data() + off, P, C).middleRows(r0, rows).noalias() = dA * K;
              if (mask[1])
                Map<T>(grads[1].view<T>().data() + off, P, C).noalias() += dA.transpose() * Q.middleRows(r0, rows);
            }
          }
        });
        return grads;
      });
}

Tensor attention_weights(const Tensor& q, const Tensor& k) {
  check_attention_operands(q, k, nullptr);
  const auto B = q.size(0), P = q.size(1), C = q.size(2);
  Buffer out(q.dtype(), static_cast<std::size_t>(B * P * P));
  visit_dtype(q.dtype(), [&]<class T>(T) {
    RowMat<T> A(P, P);
    for (std::int64_t b = 0; b < B; ++b) {
      MapC<T> Q(q.data<T>().data() + b * P * C, P, C);
      MapC<T> K(k.data<T>().data() + b * P * C, P, C);
      attention_tile<T>(Q, K, 0, P, A, nullptr);
      Map<T>(out.view<T>().data() + b * P * P, P, P) = A;
    }
  });
  return Tensor::from_buffer({B, P, P}, std::move(out));
}

}  // namespace ear
