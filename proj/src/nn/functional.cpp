#include "ear/nn/functional.hpp"

#include <Eigen/Core>
#include <cmath>
#include <string>

#include "ear/autograd.hpp"

namespace ear::nn {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapC = Eigen::Map<const RowMat<T>>;
template <class T>
using Map = Eigen::Map<RowMat<T>>;

struct ConvGeometry {
  std::int64_t N, Ci, T, H, W;
  std::int64_t Co, kt, kh, kw;
  Triple stride, pad;
  std::int64_t To, Ho, Wo;

  std::int64_t rows() const { return Ci * kt * kh * kw; }
  std::int64_t cols() const { return To * Ho * Wo; }
  std::int64_t in_volume() const { return T * H * W; }
  bool pointwise() const {
    return kt == 1 && kh == 1 && kw == 1 && stride == Triple{1, 1, 1} && pad == Triple{0, 0, 0};
  }
};

std::int64_t out_extent(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad, const char* axis) {
  if (stride <= 0 || pad < 0 || k <= 0) throw ShapeError("conv3d: invalid kernel/stride/padding");
  if (in + 2 * pad < k)
    throw ShapeError(std::string("conv3d: padded ") + axis + " extent " + std::to_string(in + 2 * pad) +
                     " smaller than kernel " + std::to_string(k));
  return (in + 2 * pad - k) / stride + 1;
}

/// col[r, v] for r = ((ci*kt + dt)*kh + dh)*kw + dw and v = (to*Ho + ho)*Wo + wo.
template <class T>
void im2col(const ConvGeometry& g, const T* x, T* col) {
  std::int64_t r = 0;
  for (std::int64_t ci = 0; ci < g.Ci; ++ci)
    for (std::int64_t dt = 0; dt < g.kt; ++dt)
      for (std::int64_t dh = 0; dh < g.kh; ++dh)
        for (std::int64_t dw = 0; dw < g.kw; ++dw, ++r) {
          T* out = col + r * g.cols();
          for (std::int64_t to = 0; to < g.To; ++to) {
            const auto ti = to * g.stride.t - g.pad.t + dt;
            for (std::int64_t ho = 0; ho < g.Ho; ++ho) {
              const auto hi = ho * g.stride.h - g.pad.h + dh;
              T* dst = out + (to * g.Ho + ho) * g.Wo;
              if (ti < 0 || ti >= g.T || hi < 0 || hi >= g.H) {
                std::fill(dst, dst + g.Wo, T(0));
                continue;
              }
              const T* src = x + ((ci * g.T + ti) * g.H + hi) * g.W;
              for (std::int64_t wo = 0; wo < g.Wo; ++wo) {
                const auto wi = wo * g.stride.w - g.pad.w + dw;
                dst[wo] = (wi >= 0 && wi < g.W) ? src[wi] : T(0);
              }
            }
          }
        }
}

template <class T>
void col2im_add(const ConvGeometry& g, const T* col, T* dx) {
  std::int64_t r = 0;
  for (std::int64_t ci = 0; ci < g.Ci; ++ci)
    for (std::int64_t dt = 0; dt < g.kt; ++dt)
      for (std::int64_t dh = 0; dh < g.kh; ++dh)
        for (std::int64_t dw = 0; dw < g.kw; ++dw, ++r) {
          const T* in = col + r * g.cols();
          for (std::int64_t to = 0; to < g.To; ++to) {
            const auto ti = to * g.stride.t - g.pad.t + dt;
            if (ti < 0 || ti >= g.T) continue;
            for (std::int64_t ho = 0; ho < g.Ho; ++ho) {
              const auto hi = ho * g.stride.h - g.pad.h + dh;
              if (hi < 0 || hi >= g.H) continue;
              const T* src = in + (to * g.Ho + ho) * g.Wo;
              T* dst = dx + ((ci * g.T + ti) * g.H + hi) * g.W;
              for (std::int64_t wo = 0; wo < g.Wo; ++wo) {
                const auto wi = wo * g.stride.w - g.pad.w + dw;
                if (wi >= 0 && wi < g.W) dst[wi] += src[wo];
              }
            }
          }
        }
}

void check_window(const Tensor& x, Triple window, const char* op) {
  if (x.dim() != 5) throw ShapeError(std::string(op) + " expects [N,C,T,H,W], got " + shape_str(x.shape()));
  if (window.t <= 0 || window.h <= 0 || window.w <= 0) throw ShapeError(std::string(op) + ": window must be positive");
  if (x.size(2) % window.t || x.size(3) % window.h || x.size(4) % window.w)
    throw ShapeError(std::string(op) + ": extents " + shape_str(x.shape()) + " not divisible by window (" +
                     std::to_string(window.t) + "," + std::to_string(window.h) + "," + std::to_string(window.w) + ")");
}

}  // namespace

Shape conv3d_output_shape(const Shape& input, std::int64_t out_channels, Triple kernel, Triple stride,
                          Triple padding) {
  if (input.size() != 5) throw ShapeError("conv3d expects [N,C,T,H,W], got " + shape_str(input));
  return {input[0], out_channels, out_extent(input[2], kernel.t, stride.t, padding.t, "T"),
          out_extent(input[3], kernel.h, stride.h, padding.h, "H"),
          out_extent(input[4], kernel.w, stride.w, padding.w, "W")};
}

Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias, Triple stride, Triple padding) {
  if (weight.dim() != 5) throw ShapeError("conv3d: weight must be [Co,Ci,kt,kh,kw], got " + shape_str(weight.shape()));
  if (x.dim() != 5) throw ShapeError("conv3d expects [N,C,T,H,W], got " + shape_str(x.shape()));
  if (x.dtype() != weight.dtype()) throw ShapeError("conv3d: dtype mismatch");
  if (x.size(1) != weight.size(1))
    throw ShapeError("conv3d: input has " + std::to_string(x.size(1)) + " channels, weight expects " +
                     std::to_string(weight.size(1)));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.dim() != 1 || bias.size(0) != weight.size(0) || bias.dtype() != x.dtype()))
    throw ShapeError("conv3d: bias shape " + shape_str(bias.shape()));

  ConvGeometry g{};
  g.N = x.size(0), g.Ci = x.size(1), g.T = x.size(2), g.H = x.size(3), g.W = x.size(4);
  g.Co = weight.size(0), g.kt = weight.size(2), g.kh = weight.size(3), g.kw = weight.size(4);
  g.stride = stride, g.pad = padding;
  Shape out_shape = conv3d_output_shape(x.shape(), g.Co, {g.kt, g.kh, g.kw}, stride, padding);
  g.To = out_shape[2], g.Ho = out_shape[3], g.Wo = out_shape[4];

  Buffer out(x.dtype(), static_cast<std::size_t>(shape_numel(out_shape)));
  visit_dtype(x.dtype(), [&]<class T>(T) {
    MapC<T> Wm(weight.data<T>().data(), g.Co, g.rows());
    RowMat<T> col;
    for (std::int64_t n = 0; n < g.N; ++n) {
      const T* xn = x.data<T>().data() + n * g.Ci * g.in_volume();
      Map<T> Y(out.view<T>().data() + n * g.Co * g.cols(), g.Co, g.cols());
      if (g.pointwise()) {
        Y.noalias() = Wm * MapC<T>(xn, g.rows(), g.cols());
      } else {
        col.resize(g.rows(), g.cols());
        im2col(g, xn, col.data());
        Y.noalias() = Wm * col;
      }
      if (has_bias) {
        auto b = bias.data<T>();
        for (std::int64_t o = 0; o < g.Co; ++o) Y.row(o).array() += b[o];
      }
    }
  });

  std::vector<Tensor> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  auto mask = grad_mask(inputs);
  return record_op("conv3d", out_shape, std::move(out), inputs, [x, weight, g, mask](const Buffer& grad) {
    std::vector<Buffer> grads(mask.size());
    visit_dtype(grad.dtype(), [&]<class T>(T) {
      MapC<T> Wm(weight.data<T>().data(), g.Co, g.rows());
      if (mask[0]) grads[0] = Buffer(grad.dtype(), static_cast<std::size_t>(x.numel()));
      if (mask[1]) grads[1] = Buffer(grad.dtype(), static_cast<std::size_t>(weight.numel()));
      if (mask.size() > 2 && mask[2]) grads[2] = Buffer(grad.dtype(), static_cast<std::size_t>(g.Co));
      RowMat<T> col, dcol;
      for (std::int64_t n = 0; n < g.N; ++n) {
        MapC<T> G(grad.view<T>().data() + n * g.Co * g.cols(), g.Co, g.cols());
        const T* xn = x.data<T>().data() + n * g.Ci * g.in_volume();
        if (mask[1]) {
          Map<T> dW(grads[1].view<T>().data(), g.Co, g.rows());
          if (g.pointwise()) {
            dW.noalias() += G * MapC<T>(xn, g.rows(), g.cols()).transpose();
          } else {
            col.resize(g.rows(), g.cols());
            im2col(g, xn, col.data());
            dW.noalias() += G * col.transpose();
          }
        }
        if (mask.size() > 2 && mask[2]) {
          auto db = grads[2].view<T>();
          for (std::int64_t o = 0; o < g.Co; ++o) db[o] += G.row(o).sum();
        }
        if (mask[0]) {
          T* dxn = grads[0].view<T>().data() + n * g.Ci * g.in_volume();
          if (g.pointwise()) {
            Map<T>(dxn, g.rows(), g.cols()).noalias() = Wm.transpose() * G;
          } else {
            dcol.noalias() = Wm.transpose() * G;
            col2im_add(g, dcol.data(), dxn);
          }
        }
      }
    });
    return grads;
  });
}

Tensor max_pool3d(const Tensor& x, Triple window) {
  check_window(x, window, "max_pool3d");
  const auto N = x.size(0), C = x.size(1), T = x.size(2), H = x.size(3), W = x.size(4);
  const auto To = T / window.t, Ho = H / window.h, Wo = W / window.w;
  Shape out_shape{N, C, To, Ho, Wo};
  const auto n_out = static_cast<std::size_t>(shape_numel(out_shape));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(n_out);
  Buffer out(x.dtype(), n_out);
  visit_dtype(x.dtype(), [&]<class S>(S) {
    auto in = x.data<S>();
    auto o = out.view<S>();
    std::size_t k = 0;
    for (std::int64_t nc = 0; nc < N * C; ++nc)
      for (std::int64_t to = 0; to < To; ++to)
        for (std::int64_t ho = 0; ho < Ho; ++ho)
          for (std::int64_t wo = 0; wo < Wo; ++wo, ++k) {
            std::int64_t best = -1;
            // Row-major scan with strict '>' keeps the first maximum on ties.
            for (std::int64_t dt = 0; dt < window.t; ++dt)
              for (std::int64_t dh = 0; dh < window.h; ++dh)
                for (std::int64_t dw = 0; dw < window.w; ++dw) {
                  const auto idx =
                      ((nc * T + to * window.t + dt) * H + ho * window.h + dh) * W + wo * window.w + dw;
                  if (best < 0 || in[idx] > in[best]) best = idx;
                }
            (*argmax)[k] = best;
            o[k] = in[best];
          }
  });
  const auto n_in = static_cast<std::size_t>(x.numel());
  return record_op("max_pool3d", out_shape, std::move(out), {x}, [argmax, n_in](const Buffer& g) {
    Buffer gx(g.dtype(), n_in);
    visit_dtype(g.dtype(), [&]<class S>(S) {
      auto gv = g.view<S>();
      auto o = gx.view<S>();
      for (std::size_t k = 0; k < gv.size(); ++k) o[(*argmax)[k]] += gv[k];
    });
    return std::vector<Buffer>{std::move(gx)};
  });
}

namespace {

/// Maps each fine-grid element to its coarse block for window/factor `f`.
std::shared_ptr<std::vector<std::int64_t>> block_map(const Shape& fine, Triple f) {
  const auto NC = fine[0] * fine[1], T = fine[2], H = fine[3], W = fine[4];
  const auto Tc = T / f.t, Hc = H / f.h, Wc = W / f.w;
  auto map = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(shape_numel(fine)));
  std::size_t k = 0;
  for (std::int64_t nc = 0; nc < NC; ++nc)
    for (std::int64_t t = 0; t < T; ++t)
      for (std::int64_t h = 0; h < H; ++h)
        for (std::int64_t w = 0; w < W; ++w, ++k) (*map)[k] = ((nc * Tc + t / f.t) * Hc + h / f.h) * Wc + w / f.w;
  return map;
}

}  // namespace

Tensor avg_pool3d(const Tensor& x, Triple window) {
  check_window(x, window, "avg_pool3d");
  Shape out_shape{x.size(0), x.size(1), x.size(2) / window.t, x.size(3) / window.h, x.size(4) / window.w};
  auto map = block_map(x.shape(), window);
  const double inv = 1.0 / static_cast<double>(window.t * window.h * window.w);
  Buffer out(x.dtype(), static_cast<std::size_t>(shape_numel(out_shape)));
  visit_dtype(x.dtype(), [&]<class S>(S) {
    auto in = x.data<S>();
    auto o = out.view<S>();
    for (std::size_t k = 0; k < in.size(); ++k) o[(*map)[k]] += in[k];
    for (auto& v : o) v *= static_cast<S>(inv);
  });
  const auto n_in = static_cast<std::size_t>(x.numel());
  return record_op("avg_pool3d", out_shape, std::move(out), {x}, [map, inv, n_in](const Buffer& g) {
    Buffer gx(g.dtype(), n_in);
    visit_dtype(g.dtype(), [&]<class S>(S) {
      auto gv = g.view<S>();
      auto o = gx.view<S>();
      for (std::size_t k = 0; k < n_in; ++k) o[k] = gv[(*map)[k]] * static_cast<S>(inv);
    });
    return std::vector<Buffer>{std::move(gx)};
  });
}

Tensor upsample_nearest(const Tensor& x, Triple factor) {
  if (x.dim() != 5) throw ShapeError("upsample_nearest expects [N,C,T,H,W], got " + shape_str(x.shape()));
  if (factor.t <= 0 || factor.h <= 0 || factor.w <= 0) throw ShapeError("upsample_nearest: factor must be positive");
  Shape out_shape{x.size(0), x.size(1), x.size(2) * factor.t, x.size(3) * factor.h, x.size(4) * factor.w};
  auto map = block_map(out_shape, factor);
  const auto n_out = map->size();
  Buffer out(x.dtype(), n_out);
  visit_dtype(x.dtype(), [&]<class S>(S) {
    auto in = x.data<S>();
    auto o = out.view<S>();
    for (std::size_t k = 0; k < n_out; ++k) o[k] = in[(*map)[k]];
  });
  const auto n_in = static_cast<std::size_t>(x.numel());
  return record_op("upsample_nearest", out_shape, std::move(out), {x}, [map, n_in](const Buffer& g) {
    Buffer gx(g.dtype(), n_in);
    visit_dtype(g.dtype(), [&]<class S>(S) {
      auto gv = g.view<S>();
      auto o = gx.view<S>();
      for (std::size_t k = 0; k < gv.size(); ++k) o[(*map)[k]] += gv[k];
    });
    return std::vector<Buffer>{std::move(gx)};
  });
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.dim() != 5) throw ShapeError("instance_norm expects [N,C,T,H,W], got " + shape_str(x.shape()));
  const auto N = x.size(0), C = x.size(1), T = x.size(2), P = x.size(3) * x.size(4);
  if (gamma.shape() != Shape{C} || beta.shape() != Shape{C})
    throw ShapeError("instance_norm: gamma/beta must be [" + std::to_string(C) + "]");
  if (gamma.dtype() != x.dtype() || beta.dtype() != x.dtype()) throw ShapeError("instance_norm: dtype mismatch");
  const auto groups = N * C * T;
  auto xhat = std::make_shared<Buffer>(x.dtype(), static_cast<std::size_t>(x.numel()));
  auto inv_std = std::make_shared<Buffer>(x.dtype(), static_cast<std::size_t>(groups));
  Buffer out(x.dtype(), static_cast<std::size_t>(x.numel()));
  visit_dtype(x.dtype(), [&]<class S>(S) {
    auto in = x.data<S>();
    auto xh = xhat->view<S>();
    auto is = inv_std->view<S>();
    auto o = out.view<S>();
    auto gm = gamma.data<S>();
    auto bt = beta.data<S>();
    for (std::int64_t grp = 0; grp < groups; ++grp) {
      const auto c = (grp / T) % C;
      const S* src = in.data() + grp * P;
      double m = 0.0;
      for (std::int64_t i = 0; i < P; ++i) m += src[i];
      m /= static_cast<double>(P);
      double var = 0.0;
      for (std::int64_t i = 0; i < P; ++i) var += (src[i] - m) * (src[i] - m);
      var /= static_cast<double>(P);
      const auto inv = static_cast<S>(1.0 / std::sqrt(var + eps));
      is[grp] = inv;
      for (std::int64_t i = 0; i < P; ++i) {
        const S v = (src[i] - static_cast<S>(m)) * inv;
        xh[grp * P + i] = v;
        o[grp * P + i] = gm[c] * v + bt[c];
      }
    }
  });
  auto mask = grad_mask({x, gamma, beta});
  return record_op("instance_norm", x.shape(), std::move(out), {x, gamma, beta},
                   [xhat, inv_std, gamma, mask, C, T, P, groups](const Buffer& g) {
                     std::vector<Buffer> grads(3);
                     visit_dtype(g.dtype(), [&]<class S>(S) {
                       auto gv = g.view<S>();
                       auto xh = xhat->view<S>();
                       auto is = inv_std->view<S>();
                       auto gm = gamma.data<S>();
                       if (mask[0]) grads[0] = Buffer(g.dtype(), gv.size());
                       if (mask[1]) grads[1] = Buffer(g.dtype(), static_cast<std::size_t>(C));
                       if (mask[2]) grads[2] = Buffer(g.dtype(), static_cast<std::size_t>(C));
                       for (std::int64_t grp = 0; grp < groups; ++grp) {
                         const auto c = (grp / T) % C;
                         const S* go = gv.data() + grp * P;
                         const S* xg = xh.data() + grp * P;
                         double sum_g = 0.0, sum_gx = 0.0;
                         for (std::int64_t i = 0; i < P; ++i) {
                           sum_g += go[i];
                           sum_gx += go[i] * xg[i];
                         }
                         if (mask[1]) grads[1].view<S>()[c] += static_cast<S>(sum_gx);
                         if (mask[2]) grads[2].view<S>()[c] += static_cast<S>(sum_g);
                         if (mask[0]) {
                           // dx = gamma*inv_std*(g - mean(g) - xhat*mean(g*xhat))
                           const double mg = sum_g / static_cast<double>(P);
                           const double mgx = sum_gx / static_cast<double>(P);
                           const S k = gm[c] * is[grp];
                           S* dx = grads[0].view<S>().data() + grp * P;
                           for (std::int64_t i = 0; i < P; ++i)
                             dx[i] = k * static_cast<S>(go[i] - mg - xg[i] * mgx);
                         }
                       }
                     });
                     return grads;
                   });
}

}  // namespace ear::nn
