#include "ear/reference/reference.hpp"

#include <cmath>
#include <stdexcept>

namespace ear::ref {

Array matmul(const Array& a, const Array& b) {
  const auto B = a.shape[0], M = a.shape[1], K = a.shape[2], N = b.shape[2];
  if (b.shape[0] != B || b.shape[1] != K) throw std::invalid_argument("ref::matmul: shape mismatch");
  Array out{{B, M, N}, std::vector<double>(static_cast<std::size_t>(B * M * N), 0.0)};
  for (std::int64_t s = 0; s < B; ++s)
    for (std::int64_t i = 0; i < M; ++i)
      for (std::int64_t j = 0; j < N; ++j) {
        double acc = 0.0;
        for (std::int64_t k = 0; k < K; ++k) acc += a.data[(s * M + i) * K + k] * b.data[(s * K + k) * N + j];
        out.data[(s * M + i) * N + j] = acc;
      }
  return out;
}

std::vector<double> softmax(const std::vector<double>& x) {
  double total = 0.0;
  std::vector<double> e(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) total += e[i] = std::exp(x[i]);
  for (auto& v : e) v /= total;
  return e;
}

Array conv3d(const Array& x, const Array& w, const std::vector<double>& b, const std::int64_t stride[3],
             const std::int64_t padding[3]) {
  const auto N = x.shape[0], Ci = x.shape[1], T = x.shape[2], H = x.shape[3], W = x.shape[4];
  const auto Co = w.shape[0], kt = w.shape[2], kh = w.shape[3], kw = w.shape[4];
  const auto To = (T + 2 * padding[0] - kt) / stride[0] + 1;
  const auto Ho = (H + 2 * padding[1] - kh) / stride[1] + 1;
  const auto Wo = (W + 2 * padding[2] - kw) / stride[2] + 1;
  Array out{{N, Co, To, Ho, Wo}, std::vector<double>(static_cast<std::size_t>(N * Co * To * Ho * Wo))};
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t o = 0; o < Co; ++o)
      for (std::int64_t t = 0; t < To; ++t)
        for (std::int64_t r = 0; r < Ho; ++r)
          for (std::int64_t c = 0; c < Wo; ++c) {
            double acc = b.empty() ? 0.0 : b[static_cast<std::size_t>(o)];
            for (std::int64_t i = 0; i < Ci; ++i)
              for (std::int64_t dt = 0; dt < kt; ++dt)
                for (std::int64_t dr = 0; dr < kh; ++dr)
                  for (std::int64_t dc = 0; dc < kw; ++dc) {
                    const auto ti = t * stride[0] - padding[0] + dt;
                    const auto ri = r * stride[1] - padding[1] + dr;
                    const auto ci = c * stride[2] - padding[2] + dc;
                    if (ti < 0 || ri < 0 || ci < 0 || ti >= T || ri >= H || ci >= W) continue;
                    acc += w.data[(((o * Ci + i) * kt + dt) * kh + dr) * kw + dc] *
                           x.data[(((n * Ci + i) * T + ti) * H + ri) * W + ci];
                  }
            out.data[(((n * Co + o) * To + t) * Ho + r) * Wo + c] = acc;
          }
  return out;
}

Array max_pool3d(const Array& x, std::int64_t wt, std::int64_t wh, std::int64_t ww) {
  const auto N = x.shape[0], C = x.shape[1], T = x.shape[2], H = x.shape[3], W = x.shape[4];
  const auto To = T / wt, Ho = H / wh, Wo = W / ww;
  Array out{{N, C, To, Ho, Wo}, std::vector<double>(static_cast<std::size_t>(N * C * To * Ho * Wo))};
  for (std::int64_t nc = 0; nc < N * C; ++nc)
    for (std::int64_t t = 0; t < To; ++t)
      for (std::int64_t r = 0; r < Ho; ++r)
        for (std::int64_t c = 0; c < Wo; ++c) {
          double best = -INFINITY;
          for (std::int64_t a = 0; a < wt; ++a)
            for (std::int64_t b = 0; b < wh; ++b)
              for (std::int64_t d = 0; d < ww; ++d)
                best = std::max(best, x.data[((nc * T + t * wt + a) * H + r * wh + b) * W + c * ww + d]);
          out.data[((nc * To + t) * Ho + r) * Wo + c] = best;
        }
  return out;
}

namespace {
double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }
}  // namespace

void lstm_step(const LSTMParams& p, std::int64_t batch, const std::vector<double>& x, std::vector<double>& h,
               std::vector<double>& c) {
  const auto C = p.input, H = p.hidden;
  std::vector<double> h_new(h.size()), c_new(c.size());
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t j = 0; j < H; ++j) {
      double gate[4];
      for (std::int64_t g = 0; g < 4; ++g) {
        const auto row = g * H + j;
        double acc = p.b_ih[row] + p.b_hh[row];
        for (std::int64_t k = 0; k < C; ++k) acc += p.w_ih[row * C + k] * x[b * C + k];
        for (std::int64_t k = 0; k < H; ++k) acc += p.w_hh[row * H + k] * h[b * H + k];
        gate[g] = acc;
      }
      const double i = sigm(gate[0]), f = sigm(gate[1]), g = std::tanh(gate[2]), o = sigm(gate[3]);
      const double cell = f * c[b * H + j] + i * g;
      c_new[b * H + j] = cell;
      h_new[b * H + j] = o * std::tanh(cell);
    }
  h = std::move(h_new);
  c = std::move(c_new);
}

Array lstm_sequence(const LSTMParams& p, const Array& xs) {
  const auto B = xs.shape[0], T = xs.shape[1], C = xs.shape[2], H = p.hidden;
  std::vector<double> h(static_cast<std::size_t>(B * H), 0.0), c(h.size(), 0.0);
  Array out{{B, T, H}, std::vector<double>(static_cast<std::size_t>(B * T * H))};
  for (std::int64_t t = 0; t < T; ++t) {
    std::vector<double> x(static_cast<std::size_t>(B * C));
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t k = 0; k < C; ++k) x[b * C + k] = xs.data[(b * T + t) * C + k];
    lstm_step(p, B, x, h, c);
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t j = 0; j < H; ++j) out.data[(b * T + t) * H + j] = h[b * H + j];
  }
  return out;
}

AttentionResult attention(const Array& f, const std::vector<double>& wk, const std::vector<double>& bk,
                          const std::vector<double>& wv, const std::vector<double>& bv) {
  const auto N = f.shape[0], C = f.shape[1], T = f.shape[2], H = f.shape[3], W = f.shape[4];
  const auto P = H * W;
  AttentionResult res{{f.shape, std::vector<double>(f.data.size())}, {}};
  const auto at = [&](std::int64_t n, std::int64_t ch, std::int64_t t, std::int64_t p) {
    return f.data[((n * C + ch) * T + t) * P + p];
  };
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t t = 0; t < T; ++t) {
      std::vector<double> q(static_cast<std::size_t>(P * C)), k(q.size()), v(q.size());
      for (std::int64_t p = 0; p < P; ++p)
        for (std::int64_t o = 0; o < C; ++o) {
          q[p * C + o] = at(n, o, t, p);
          double ka = bk[o], va = bv[o];
          for (std::int64_t i = 0; i < C; ++i) {
            ka += wk[o * C + i] * at(n, i, t, p);
            va += wv[o * C + i] * at(n, i, t, p);
          }
          k[p * C + o] = ka;
          v[p * C + o] = va;
        }
      std::vector<double> a(static_cast<std::size_t>(P * P));
      for (std::int64_t i = 0; i < P; ++i) {
        std::vector<double> scores(static_cast<std::size_t>(P));
        for (std::int64_t j = 0; j < P; ++j) {
          double s = 0.0;
          for (std::int64_t o = 0; o < C; ++o) s += q[i * C + o] * k[j * C + o];
          scores[j] = s;
        }
        const auto row = softmax(scores);
        for (std::int64_t j = 0; j < P; ++j) a[i * P + j] = row[j];
      }
      for (std::int64_t i = 0; i < P; ++i)
        for (std::int64_t o = 0; o < C; ++o) {
          double acc = 0.0;
          for (std::int64_t j = 0; j < P; ++j) acc += a[i * P + j] * v[j * C + o];
          res.output.data[((n * C + o) * T + t) * P + i] = acc;
        }
      res.maps.push_back(std::move(a));
    }
  return res;
}

double cross_entropy(const Array& pred, const Array& target, double clamp) {
  const auto N = pred.shape[0], K = pred.shape[1];
  const auto pixels = pred.numel() / (N * K);
  double total = 0.0;
  for (std::int64_t n = 0; n < N; ++n)
    for (std::int64_t i = 0; i < pixels; ++i)
      for (std::int64_t c = 0; c < K; ++c) {
        const auto idx = (n * K + c) * pixels + i;
        total -= target.data[idx] * std::log(std::max(pred.data[idx], clamp));
      }
  return total / static_cast<double>(N * pixels);
}

double dice_loss(const std::vector<double>& pred, const std::vector<double>& gt, double smooth) {
  double inter = 0, sp = 0, sg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * gt[i];
    sp += pred[i];
    sg += gt[i];
  }
  return 1.0 - (2.0 * inter + smooth) / (sg + sp + smooth);
}

double jaccard_term(const std::vector<double>& pred, const std::vector<double>& gt, double smooth) {
  double inter = 0, sp = 0, sg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    inter += pred[i] * gt[i];
    sp += pred[i];
    sg += gt[i];
  }
  return 1.0 - (inter + smooth) / (sg + sp - inter + smooth);
}

double dice_iou_loss(const Array& pred, const Array& gt, double smooth) {
  const auto n = pred.shape[0];
  const auto per = pred.numel() / n;
  double total = 0.0;
  for (std::int64_t s = 0; s < n; ++s) {
    std::vector<double> p(pred.data.begin() + s * per, pred.data.begin() + (s + 1) * per);
    std::vector<double> g(gt.data.begin() + s * per, gt.data.begin() + (s + 1) * per);
    total += dice_loss(p, g, smooth) * jaccard_term(p, g, smooth);
  }
  return total / static_cast<double>(n);
}

}  // namespace ear::ref
