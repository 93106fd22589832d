#pragma once

// Naive scalar-loop implementations used as oracles. Deliberately independent of the
// tensor engine: plain row-major std::vector<double> with explicit shapes.

#include <cstdint>
#include <vector>

namespace ear::ref {

struct Array {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (auto s : shape) n *= s;
    return n;
  }
};

/// a [B,M,K] x b [B,K,N]
Array matmul(const Array& a, const Array& b);

/// Softmax of a 1-d vector as exp(x_i) / sum_j exp(x_j), no max shift.
std::vector<double> softmax(const std::vector<double>& x);

/// Direct cross-correlation, x [N,Ci,T,H,W], w [Co,Ci,kt,kh,kw], b [Co] (may be empty).
Array conv3d(const Array& x, const Array& w, const std::vector<double>& b, const std::int64_t stride[3],
             const std::int64_t padding[3]);

/// Max over each window of size (wt, wh, ww), non-overlapping.
Array max_pool3d(const Array& x, std::int64_t wt, std::int64_t wh, std::int64_t ww);

struct LSTMParams {
  std::int64_t input = 0, hidden = 0;
  std::vector<double> w_ih, w_hh, b_ih, b_hh;  // [4H,C], [4H,H], [4H], [4H]
};

/// One step for a batch: x [B*C], h, c [B*H]; updates h and c in place.
void lstm_step(const LSTMParams& p, std::int64_t batch, const std::vector<double>& x, std::vector<double>& h,
               std::vector<double>& c);

/// xs [B,T,C] from zero state -> hidden states [B,T,H].
Array lstm_sequence(const LSTMParams& p, const Array& xs);

/// Per-frame attention on F [N,C,T,H,W]: with Q = F_i as [P,C], K = Wk F_i + bk, V = Wv F_i + bv,
/// builds A = softmax_rows(Q K^T) explicitly and returns (A V) reshaped back. Also returns every A.
struct AttentionResult {
  Array output;
  std::vector<std::vector<double>> maps;  // one [P*P] matrix per (n, t)
};
AttentionResult attention(const Array& f, const std::vector<double>& wk, const std::vector<double>& bk,
                          const std::vector<double>& wv, const std::vector<double>& bv);

/// Mean over pixels of -sum_c y log(max(p, clamp)); pred/target [N,K,rest...].
double cross_entropy(const Array& pred, const Array& target, double clamp = 1e-7);
double dice_loss(const std::vector<double>& pred, const std::vector<double>& gt, double smooth);
double jaccard_term(const std::vector<double>& pred, const std::vector<double>& gt, double smooth);
/// Samples split evenly along the leading axis.
double dice_iou_loss(const Array& pred, const Array& gt, double smooth);

}  // namespace ear::ref
