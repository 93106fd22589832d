#include "ear/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numbers>
#include <set>

#include "ear/data.hpp"
#include "ear/grad_check.hpp"
#include "ear/network.hpp"
#include "ear/objectives.hpp"
#include "ear/ops.hpp"
#include "ear/reference/reference.hpp"
#include "ear/velocity.hpp"

namespace ear {

namespace fs = std::filesystem;
using json = nlohmann::json;
using nn::Triple;

namespace {

constexpr double kOpTol = 1e-6;
constexpr double kConvTol = 1e-5;
constexpr double kNetworkTol = 1e-4;
constexpr double kOracleTol = 1e-10;

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(shape, v, DType::f64);
}

ref::Array to_array(const Tensor& t) { return {t.shape(), t.to_vector()}; }

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  return visit_dtype(a.dtype(), [&]<class T>(T) {
    const auto x = a.buffer().view<T>(), y = b.buffer().view<T>();
    return std::memcmp(x.data(), y.data(), x.size() * sizeof(T)) == 0;
  });
}

CheckResult result(const std::string& suite, const std::string& name, double tol, double measured,
                   std::string detail = {}) {
  return {suite, name, tol, measured, measured < tol, std::move(detail)};
}

/// Runs grad_check over `seeds` seeds and keeps the worst report.
CheckResult gradient(const std::string& name, const OpUnderTest& op, const std::vector<Shape>& shapes, double tol,
                     int seeds, GradCheckOptions opts = {}) {
  double worst = 0.0;
  std::string where;
  for (int s = 0; s < seeds; ++s) {
    opts.seed = static_cast<std::uint64_t>(s) + 1;
    const auto report = grad_check(name, op, shapes, tol, opts);
    if (!(report.max_rel_error <= worst)) {
      worst = report.max_rel_error;
      where = "seed " + std::to_string(opts.seed) + ", " + report.worst;
    }
  }
  return result("gradient", name, tol, worst, where);
}

nn::LSTMCell cell_from(const std::vector<Tensor>& in, std::size_t first) {
  nn::LSTMCell cell;
  cell.w_ih = in[first];
  cell.w_hh = in[first + 1];
  cell.b_ih = in[first + 2];
  cell.b_hh = in[first + 3];
  return cell;
}

ref::LSTMParams ref_params(const nn::LSTMCell& cell) {
  return {cell.input_size(), cell.hidden_size(), cell.w_ih.to_vector(), cell.w_hh.to_vector(), cell.b_ih.to_vector(),
          cell.b_hh.to_vector()};
}

nn::LSTMCell random_cell(std::int64_t c, std::int64_t h, Rng& rng) {
  nn::LSTMCell cell(c, h, DType::f64);
  for (Tensor* t : {&cell.w_ih, &cell.w_hh, &cell.b_ih, &cell.b_hh}) *t = random_tensor(t->shape(), rng);
  return cell;
}

AttentionBlock random_attention(std::int64_t c, Rng& rng) {
  AttentionBlock block(c, 1 << 20, DType::f64);
  block.key.weight = random_tensor(block.key.weight.shape(), rng);
  block.key.bias = random_tensor(block.key.bias.shape(), rng);
  block.value.weight = random_tensor(block.value.weight.shape(), rng);
  block.value.bias = random_tensor(block.value.bias.shape(), rng);
  return block;
}

/// Planar ring (one hole) on an H x W grid.
BinaryMask ring_frame(std::int64_t h, std::int64_t w, double cr, double cc, double r_in, double r_out) {
  BinaryMask m({1, h, w});
  for (std::int64_t r = 0; r < h; ++r)
    for (std::int64_t c = 0; c < w; ++c) {
      const double d = std::hypot(static_cast<double>(r) - cr, static_cast<double>(c) - cc);
      m.at(0, r, c) = d >= r_in && d < r_out;
    }
  return m;
}

}  // namespace

Tensor corrupted_conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  Tensor y = nn::conv3d(x, weight, bias, {1, 1, 1}, {1, 1, 1});
  return record_op("conv3d", y.shape(), y.buffer(), {y}, [](const Buffer& g) {
    Buffer out = g;
    for (std::size_t i = 0; i < out.size(); ++i) out.set(i, 1.1 * out.get(i));
    return std::vector<Buffer>{out};
  });
}

std::vector<CheckResult> gradient_suite(const VerifyOptions& o) {
  std::vector<CheckResult> out;
  const int n = o.seeds;
  const auto unary = [](Tensor (*f)(const Tensor&)) {
    return [f](const std::vector<Tensor>& in) { return f(in[0]); };
  };
  const Shape m{3, 4};
  GradCheckOptions away_from_zero;
  away_from_zero.min_abs_input = 0.05;
  GradCheckOptions positive;
  positive.input_low = 0.5;
  positive.input_high = 2.0;

  out.push_back(gradient("add", [](auto& in) { return add(in[0], in[1]); }, {m, m}, kOpTol, n));
  out.push_back(gradient("add_broadcast", [](auto& in) { return add(in[0], in[1]); }, {m, {1}}, kOpTol, n));
  out.push_back(gradient("sub", [](auto& in) { return sub(in[0], in[1]); }, {m, m}, kOpTol, n));
  out.push_back(gradient("mul", [](auto& in) { return mul(in[0], in[1]); }, {m, m}, kOpTol, n));
  out.push_back(gradient("mul_broadcast", [](auto& in) { return mul(in[1], in[0]); }, {m, {1}}, kOpTol, n));
  out.push_back(gradient("div", [](auto& in) { return div(in[0], in[1]); }, {m, m}, kOpTol, n, positive));
  out.push_back(gradient("relu", unary(relu), {m}, kOpTol, n, away_from_zero));
  out.push_back(gradient("sigmoid", unary(sigmoid), {m}, kOpTol, n));
  out.push_back(gradient("tanh", unary(tanh), {m}, kOpTol, n));
  out.push_back(gradient("neg", unary(neg), {m}, kOpTol, n));
  out.push_back(gradient("log", unary(log), {m}, kOpTol, n, positive));
  out.push_back(gradient("exp", unary(exp), {m}, kOpTol, n));
  out.push_back(gradient("scale", [](auto& in) { return scale(in[0], -2.5); }, {m}, kOpTol, n));
  out.push_back(gradient("add_scalar", [](auto& in) { return add_scalar(in[0], 0.75); }, {m}, kOpTol, n));
  out.push_back(gradient("clamp_min", [](auto& in) { return clamp_min(in[0], 0.0); }, {m}, kOpTol, n, away_from_zero));
  out.push_back(gradient("matmul_batched", [](auto& in) { return matmul_batched(in[0], in[1]); },
                         {{2, 3, 4}, {2, 4, 5}}, kOpTol, n));
  out.push_back(gradient("linear", [](auto& in) { return linear(in[0], in[1], in[2]); }, {{3, 4}, {5, 4}, {5}}, kOpTol, n));
  out.push_back(gradient("softmax", [](auto& in) { return softmax(in[0], 0); }, {{5}}, kOpTol, n));
  out.push_back(gradient("softmax_axis1", [](auto& in) { return softmax(in[0], 1); }, {{2, 3, 4}}, kOpTol, n));
  out.push_back(gradient("sum", [](auto& in) { return sum(in[0], {1}); }, {{3, 4, 2}}, kOpTol, n));
  out.push_back(gradient("mean", [](auto& in) { return mean(in[0], {0, 2}); }, {{3, 4, 2}}, kOpTol, n));
  out.push_back(gradient("reshape", [](auto& in) { return reshape(in[0], {4, 6}); }, {{2, 3, 4}}, kOpTol, n));
  out.push_back(gradient("permute", [](auto& in) { return permute(in[0], {2, 0, 1}); }, {{2, 3, 4}}, kOpTol, n));
  out.push_back(gradient("concat", [](auto& in) { return concat({in[0], in[1]}, 1); }, {{2, 3}, {2, 2}}, kOpTol, n));
  out.push_back(gradient("slice", [](auto& in) { return slice(in[0], {{1, 3}, {0, 2}}); }, {{3, 4}}, kOpTol, n));
  out.push_back(gradient("spatial_attention", [](auto& in) { return spatial_attention(in[0], in[1], in[2]); },
                         {{2, 6, 3}, {2, 6, 3}, {2, 6, 3}}, kOpTol, n));

  const auto conv = o.corrupt_conv_backward
                        ? OpUnderTest([](auto& in) { return corrupted_conv3d(in[0], in[1], in[2]); })
                        : OpUnderTest([](auto& in) { return nn::conv3d(in[0], in[1], in[2], {1, 1, 1}, {1, 1, 1}); });
  out.push_back(gradient("conv3d", conv, {{1, 2, 3, 4, 4}, {3, 2, 3, 3, 3}, {3}}, kConvTol, n));
  out.push_back(gradient(
      "conv3d_strided", [](auto& in) { return nn::conv3d(in[0], in[1], in[2], {1, 2, 2}, {0, 1, 1}); },
      {{1, 2, 2, 5, 5}, {2, 2, 1, 3, 3}, {2}}, kConvTol, n));
  out.push_back(gradient("max_pool3d", [](auto& in) { return nn::max_pool3d(in[0]); }, {{1, 2, 2, 4, 4}}, kConvTol, n));
  out.push_back(gradient("avg_pool3d", [](auto& in) { return nn::avg_pool3d(in[0], {1, 2, 2}); }, {{1, 2, 2, 4, 4}},
                         kConvTol, n));
  out.push_back(gradient("upsample_nearest", [](auto& in) { return nn::upsample_nearest(in[0]); }, {{1, 2, 2, 2, 3}},
                         kConvTol, n));
  out.push_back(gradient("instance_norm", [](auto& in) { return nn::instance_norm(in[0], in[1], in[2]); },
                         {{2, 2, 2, 3, 3}, {2}, {2}}, kOpTol, n));
  out.push_back(gradient(
      "lstm_step",
      [](auto& in) {
        const auto st = nn::lstm_step(cell_from(in, 3), in[0], {in[1], in[2]});
        return concat({st.h, st.c}, 1);
      },
      {{2, 3}, {2, 2}, {2, 2}, {8, 3}, {8, 2}, {8}, {8}}, kOpTol, n));
  out.push_back(gradient(
      "lstm_sequence", [](auto& in) { return nn::lstm_sequence(cell_from(in, 1), in[0]); },
      {{1, 3, 2}, {8, 2}, {8, 2}, {8}, {8}}, kOpTol, n));
  out.push_back(gradient(
      "attention_block",
      [](auto& in) {
        AttentionBlock block;
        block.max_positions = 1 << 20;
        block.key = nn::Conv3d(2, 2, {1, 1, 1}, {0, 0, 0}, DType::f64);
        block.value = block.key;
        block.key.weight = in[1];
        block.key.bias = in[2];
        block.value.weight = in[3];
        block.value.bias = in[4];
        return block.forward(in[0]);
      },
      {{1, 2, 2, 3, 3}, {2, 2, 1, 1, 1}, {2}, {2, 2, 1, 1, 1}, {2}}, kOpTol, n));
  out.push_back(gradient(
      "temporal_block",
      [](auto& in) {
        TemporalLSTMBlock block;
        block.cell = cell_from(in, 1);
        return block.forward(in[0]);
      },
      {{1, 2, 3, 2, 2}, {8, 2}, {8, 2}, {8}, {8}}, kOpTol, n));

  {
    Rng rng(11);
    const Tensor target = one_hot_foreground(Tensor::from_values(
        {1, 2, 3, 3}, [&] {
          std::vector<double> v(18);
          for (auto& x : v) x = rng.below(2);
          return v;
        }(),
        DType::f64));
    GradCheckOptions probs;
    probs.input_low = 0.05;
    probs.input_high = 1.0;
    out.push_back(gradient("cross_entropy", [target](auto& in) { return cross_entropy(in[0], target); },
                           {{1, 2, 2, 3, 3}}, kOpTol, n, probs));
    const Tensor gt = Tensor::from_values({2, 3, 3}, [&] {
      std::vector<double> v(18);
      for (auto& x : v) x = rng.below(2);
      return v;
    }(), DType::f64);
    probs.input_low = 0.0;
    out.push_back(gradient("dice_loss", [gt](auto& in) { return dice_loss(in[0], gt); }, {{2, 3, 3}}, kOpTol, n, probs));
    out.push_back(
        gradient("jaccard_term", [gt](auto& in) { return jaccard_term(in[0], gt); }, {{2, 3, 3}}, kOpTol, n, probs));
    out.push_back(
        gradient("dice_iou_loss", [gt](auto& in) { return dice_iou_loss(in[0], gt); }, {{2, 3, 3}}, kOpTol, n, probs));
  }

  {
    // Depth-2 network with attention and LSTM, every parameter tensor probed.
    double worst = 0.0;
    std::string where;
    for (int s = 0; s < n; ++s) {
      EarConfig cfg;
      cfg.depth = 2;
      cfg.base_channels = 2;
      cfg.frames = 2;
      Network net = build_network(cfg, static_cast<std::uint64_t>(s) + 1, DType::f64);
      Rng rng(static_cast<std::uint64_t>(s) + 100);
      Tensor x = random_tensor({1, 4, 2, 4, 4}, rng);
      x.set_requires_grad(true);
      std::vector<double> m(32);
      for (auto& v : m) v = rng.below(2);
      const Tensor target = Tensor::from_values({1, 2, 4, 4}, m, DType::f64);
      std::vector<Tensor> leaves{x};
      for (auto& p : net.parameters()) leaves.push_back(p.tensor);
      GradCheckOptions opts;
      opts.seed = static_cast<std::uint64_t>(s) + 1;
      opts.max_probes_per_input = 6;
      const auto report = grad_check_scalar(
          "network", [&] { return segmentation_loss(LossKind::dice_iou, net.forward(x), target); }, leaves,
          kNetworkTol, opts);
      if (!(report.max_rel_error <= worst)) {
        worst = report.max_rel_error;
        where = "seed " + std::to_string(s + 1) + ", " + report.worst;
      }
    }
    out.push_back(result("gradient", "network_depth2_attention_lstm", kNetworkTol, worst, where));
  }
  return out;
}

std::vector<CheckResult> oracle_suite(const VerifyOptions& o) {
  std::vector<CheckResult> out;
  const int n = o.oracle_instances;
  Rng rng(2024);
  const auto dim = [&](std::int64_t lo, std::int64_t hi) {
    return lo + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  };

  double worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto k = Triple{dim(1, 3), dim(1, 3), dim(1, 3)};
    const auto stride = Triple{dim(1, 2), dim(1, 2), dim(1, 2)};
    const auto pad = Triple{dim(0, 1), dim(0, 1), dim(0, 1)};
    const Shape xs{dim(1, 2), dim(1, 3), dim(k.t, 4), dim(k.h, 6), dim(k.w, 6)};
    const Shape ws{dim(1, 3), xs[1], k.t, k.h, k.w};
    const Tensor x = random_tensor(xs, rng), w = random_tensor(ws, rng), b = random_tensor({ws[0]}, rng);
    const std::int64_t st[3] = {stride.t, stride.h, stride.w}, pd[3] = {pad.t, pad.h, pad.w};
    const auto expect = ref::conv3d(to_array(x), to_array(w), b.to_vector(), st, pd);
    worst = std::max(worst, max_abs_diff(nn::conv3d(x, w, b, stride, pad).to_vector(), expect.data));
  }
  out.push_back(result("oracle", "conv3d", kOracleTol, worst, std::to_string(n) + " random shapes"));

  worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto B = dim(1, 3), M = dim(1, 5), K = dim(1, 5), N = dim(1, 5);
    const Tensor a = random_tensor({B, M, K}, rng), b = random_tensor({B, K, N}, rng);
    worst = std::max(worst, max_abs_diff(matmul_batched(a, b).to_vector(), ref::matmul(to_array(a), to_array(b)).data));
  }
  out.push_back(result("oracle", "matmul_batched", kOracleTol, worst));

  worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const Tensor x = random_tensor({dim(2, 10)}, rng, -5.0, 5.0);
    worst = std::max(worst, max_abs_diff(softmax(x, 0).to_vector(), ref::softmax(x.to_vector())));
  }
  out.push_back(result("oracle", "softmax", kOracleTol, worst));

  worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto B = dim(1, 3), C = dim(1, 4), H = dim(1, 4);
    const auto cell = random_cell(C, H, rng);
    const Tensor x = random_tensor({B, C}, rng), h = random_tensor({B, H}, rng), c = random_tensor({B, H}, rng);
    const auto st = nn::lstm_step(cell, x, {h, c});
    auto rh = h.to_vector(), rc = c.to_vector();
    ref::lstm_step(ref_params(cell), B, x.to_vector(), rh, rc);
    worst = std::max({worst, max_abs_diff(st.h.to_vector(), rh), max_abs_diff(st.c.to_vector(), rc)});
  }
  out.push_back(result("oracle", "lstm_step", kOracleTol, worst));

  worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto B = dim(1, 3), T = dim(1, 5), C = dim(1, 4), H = dim(1, 4);
    const auto cell = random_cell(C, H, rng);
    const Tensor xs = random_tensor({B, T, C}, rng);
    worst = std::max(worst, max_abs_diff(nn::lstm_sequence(cell, xs).to_vector(),
                                         ref::lstm_sequence(ref_params(cell), to_array(xs)).data));
  }
  out.push_back(result("oracle", "lstm_sequence", kOracleTol, worst));

  worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto C = dim(1, 3);
    const auto block = random_attention(C, rng);
    const Tensor f = random_tensor({dim(1, 2), C, dim(1, 3), dim(1, 4), dim(1, 4)}, rng);
    const auto expect = ref::attention(to_array(f), block.key.weight.to_vector(), block.key.bias.to_vector(),
                                       block.value.weight.to_vector(), block.value.bias.to_vector());
    worst = std::max(worst, max_abs_diff(block.forward(f).to_vector(), expect.output.data));
    const auto maps = block.attention_maps(f).to_vector();
    std::vector<double> flat;
    for (const auto& a : expect.maps) flat.insert(flat.end(), a.begin(), a.end());
    worst = std::max(worst, max_abs_diff(maps, flat));
  }
  out.push_back(result("oracle", "attention_block", kOracleTol, worst));

  double ce = 0.0, dice = 0.0, jac = 0.0, diou = 0.0;
  for (int i = 0; i < n; ++i) {
    const Shape s{dim(1, 3), dim(1, 3), dim(2, 5), dim(2, 5)};
    const Tensor logits = random_tensor({s[0], 2, s[1], s[2], s[3]}, rng, -3, 3);
    const Tensor probs = softmax(logits, 1);
    std::vector<double> m(static_cast<std::size_t>(shape_numel(s)));
    for (auto& v : m) v = rng.below(2);
    const Tensor gt = Tensor::from_values(s, m, DType::f64);
    const Tensor onehot = one_hot_foreground(gt);
    ce = std::max(ce, std::abs(cross_entropy(probs, onehot).item() - ref::cross_entropy(to_array(probs), to_array(onehot))));
    const Tensor p = random_tensor(s, rng, 0.0, 1.0);
    dice = std::max(dice, std::abs(dice_loss(p, gt).item() - ref::dice_loss(p.to_vector(), m, 1.0)));
    jac = std::max(jac, std::abs(jaccard_term(p, gt).item() - ref::jaccard_term(p.to_vector(), m, 1.0)));
    diou = std::max(diou, std::abs(dice_iou_loss(p, gt).item() - ref::dice_iou_loss(to_array(p), to_array(gt), 1.0)));
  }
  out.push_back(result("oracle", "cross_entropy", kOracleTol, ce));
  out.push_back(result("oracle", "dice_loss", kOracleTol, dice));
  out.push_back(result("oracle", "jaccard_term", kOracleTol, jac));
  out.push_back(result("oracle", "dice_iou_loss", kOracleTol, diou));

  worst = 0.0;
  for (int i = 0; i < n; ++i) {
    const Tensor x = random_tensor({dim(1, 2), dim(1, 3), dim(1, 3), 2 * dim(1, 3), 2 * dim(1, 3)}, rng);
    worst = std::max(worst, max_abs_diff(nn::max_pool3d(x).to_vector(), ref::max_pool3d(to_array(x), 1, 2, 2).data));
  }
  out.push_back(result("oracle", "max_pool3d", 1e-300, worst, "exact"));
  out.back().passed = worst == 0.0;
  return out;
}

std::vector<CheckResult> invariant_suite(const VerifyOptions&) {
  std::vector<CheckResult> out;
  Rng rng(77);

  {
    double sum_err = 0.0, shift_err = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Tensor x = random_tensor({4, 7}, rng, -10, 10);
      const Tensor y = softmax(x, 1);
      const Tensor ys = softmax(add_scalar(x, 123.0), 1);
      const auto s = sum(y, {1}).to_vector();
      for (double v : s) sum_err = std::max(sum_err, std::abs(v - 1.0));
      shift_err = std::max(shift_err, max_abs_diff(y.to_vector(), ys.to_vector()));
    }
    out.push_back(result("invariant", "softmax_rows_sum_to_one", 1e-6, sum_err));
    out.push_back(result("invariant", "softmax_shift_invariance", 1e-6, shift_err));
  }

  {
    const Tensor x = random_tensor({2, 3, 4, 5}, rng);
    const Tensor x5 = reshape(x, {2, 3, 4, 5, 1});
    const bool ok = bitwise_equal(reshape(reshape(x, {6, 20}), x.shape()), x) &&
                    bitwise_equal(permute(permute(x, {2, 0, 3, 1}), {1, 3, 0, 2}), x) &&
                    bitwise_equal(TemporalLSTMBlock::from_sequences(TemporalLSTMBlock::to_sequences(x5), x5.shape()), x5);
    out.push_back(result("invariant", "reshape_permute_bijection", 0.5, ok ? 0.0 : 1.0, "bitwise"));
  }

  {
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const auto C = 1 + static_cast<std::int64_t>(rng.below(3));
      const auto block = random_attention(C, rng);
      const Tensor f = random_tensor({1, C, 2, 3 + static_cast<std::int64_t>(rng.below(3)), 4}, rng, -3, 3);
      const Tensor maps = block.attention_maps(f);
      const auto rows = sum(maps, {2}).to_vector();
      for (double v : rows) worst = std::max(worst, std::abs(v - 1.0));
    }
    out.push_back(result("invariant", "attention_rows_stochastic", 1e-5, worst, "20 random inputs"));
  }

  {
    bool causal = true;
    for (int trial = 0; trial < 5 && causal; ++trial) {
      TemporalLSTMBlock block(3, DType::f64);
      block.cell = random_cell(3, 3, rng);
      const Tensor x = random_tensor({1, 3, 5, 2, 2}, rng);
      const auto t = static_cast<std::int64_t>(rng.below(4));
      auto values = x.to_vector();
      for (std::int64_t c = 0; c < 3; ++c)
        for (std::int64_t p = 0; p < 4; ++p) values[static_cast<std::size_t>((c * 5 + t + 1) * 4 + p)] += 0.5;
      const Tensor y0 = block.forward(x), y1 = block.forward(Tensor::from_values(x.shape(), values, DType::f64));
      for (std::int64_t f = 0; f <= t; ++f)
        causal = causal && bitwise_equal(slice_axis(y0, 2, f, f + 1).clone(), slice_axis(y1, 2, f, f + 1).clone());
    }
    out.push_back(result("invariant", "temporal_lstm_causality", 0.5, causal ? 0.0 : 1.0, "bitwise"));
  }

  {
    std::vector<double> gt(16, 0.0), pred(16, 0.0);
    for (int i = 0; i < 4; ++i) gt[static_cast<std::size_t>(i)] = 1.0;
    for (int i = 12; i < 16; ++i) pred[static_cast<std::size_t>(i)] = 1.0;
    const Tensor g = Tensor::from_values({1, 4, 4}, gt, DType::f64), p = Tensor::from_values({1, 4, 4}, pred, DType::f64);
    const double perfect = std::max(std::abs(dice_loss(g, g).item()), std::abs(jaccard_term(g, g).item()));
    out.push_back(result("invariant", "loss_zero_on_perfect_match", 1e-300, perfect, "exact"));
    out.back().passed = perfect == 0.0;
    const double disjoint = std::max({std::abs(dice_loss(p, g).item() - 8.0 / 9.0),
                                      std::abs(jaccard_term(p, g).item() - 8.0 / 9.0),
                                      std::abs(dice_iou_loss(p, g).item() - 64.0 / 81.0)});
    out.push_back(result("invariant", "loss_disjoint_fixed_points", 1e-12, disjoint, "8/9, 8/9, 64/81"));
  }

  {
    Tensor x = random_tensor({1, 2, 2, 4, 4}, rng);
    x.set_requires_grad(true);
    const Tensor w = random_tensor({1, 2, 2, 2, 2}, rng);
    backward(sum(mul(nn::max_pool3d(x), w)));
    double gsum = 0.0;
    for (double v : x.grad().to_vector()) gsum += v;
    double wsum = 0.0;
    for (double v : w.to_vector()) wsum += v;
    out.push_back(result("invariant", "max_pool_gradient_conservation", 1e-12, std::abs(gsum - wsum)));
  }

  {
    EarConfig cfg;
    cfg.depth = 2;
    cfg.base_channels = 4;
    cfg.frames = 3;
    const Network a = build_network(cfg, 5), b = build_network(cfg, 5);
    const Tensor x = random_tensor({1, 4, 3, 8, 8}, rng).to(DType::f32).detach();
    const bool same = bitwise_equal(a.forward(x), b.forward(x)) && bitwise_equal(a.forward(x), a.forward(x));
    out.push_back(result("invariant", "forward_determinism", 0.5, same ? 0.0 : 1.0, "bitwise"));
  }

  {
    PhantomOptions po;
    po.n_records = 1;
    po.frames = 3;
    po.height = 16;
    po.width = 16;
    const auto rec = generate_phantom(po).front();
    const auto dir = fs::temp_directory_path() / ("ear_verify_" + std::to_string(rng.next_u64()));
    bool ok = false;
    try {
      save_record(rec, dir);
      ok = load_record(dir) == rec;
    } catch (const Error&) {
      ok = false;
    }
    fs::remove_all(dir);
    out.push_back(result("invariant", "container_round_trip", 0.5, ok ? 0.0 : 1.0, "bitwise"));
  }

  {
    std::vector<std::string> ids;
    for (int i = 0; i < 18; ++i) ids.push_back("subject-" + std::to_string(i));
    const auto plan = make_split(ids, 0.2, 5, 42);
    std::set<std::string> test(plan.test_subjects.begin(), plan.test_subjects.end()), seen;
    bool ok = plan.test_subjects.size() == 4 && plan.train_subjects.size() == 14;
    for (const auto& s : plan.train_subjects) ok = ok && !test.count(s);
    std::size_t total = 0;
    for (const auto& f : plan.folds)
      for (const auto& s : f) {
        ok = ok && seen.insert(s).second && !test.count(s);
        ++total;
      }
    ok = ok && total == plan.train_subjects.size();
    out.push_back(result("invariant", "split_subject_disjoint_partition", 0.5, ok ? 0.0 : 1.0, "18 -> 4 test / 14 train"));
  }

  {
    BinaryMask m = ring_frame(24, 24, 11.5, 11.5, 4.0, 8.0);
    const BinaryMask clean = m;
    m.at(0, 1, 1) = 1;
    m.at(0, 1, 2) = 1;
    const auto once = postprocess_mask(m);
    const bool ok = once == clean && postprocess_mask(once) == once && postprocess_mask(clean) == clean;
    out.push_back(result("invariant", "postprocess_speck_and_idempotence", 0.5, ok ? 0.0 : 1.0));
  }

  {
    PhantomOptions po;
    po.n_records = 1;
    po.frames = 8;
    po.height = 64;
    po.width = 64;
    po.velocity_noise = 0.0;
    const auto rec = generate_phantom(po).front();
    const auto curves = global_velocity_curves(rec, postprocess_mask(rec.mask));
    double worst = 0.0;
    for (std::size_t t = 0; t < curves.frames(); ++t) {
      const double ph = 2.0 * std::numbers::pi * static_cast<double>(t) / 8.0;
      worst = std::max({worst, std::abs(*curves.radial[t] - po.radial_cm_s * std::cos(ph)) / po.radial_cm_s,
                        std::abs(*curves.circumferential[t] - po.circumferential_cm_s * std::sin(ph)) / po.circumferential_cm_s,
                        std::abs(*curves.longitudinal[t] - po.longitudinal_cm_s * std::cos(ph)) / po.longitudinal_cm_s});
    }
    out.push_back(result("invariant", "phantom_velocity_recovery", 0.02, worst, "relative to V_R, V_C, V_Z"));
  }
  return out;
}

std::vector<CheckResult> run_verify(const VerifyOptions& options) {
  auto out = gradient_suite(options);
  for (auto* suite : {&oracle_suite, &invariant_suite}) {
    auto more = (*suite)(options);
    out.insert(out.end(), more.begin(), more.end());
  }
  return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

std::string format_report(const std::vector<CheckResult>& results) {
  std::string text;
  int failed = 0;
  for (const auto& r : results) {
    char line[256];
    std::snprintf(line, sizeof line, "[%s] %-9s %-36s tol=%-9.1e measured=%.3e", r.passed ? "PASS" : "FAIL",
                  r.suite.c_str(), r.name.c_str(), r.tolerance, r.measured);
    text += line;
    if (!r.detail.empty()) text += "  (" + r.detail + ")";
    text += '\n';
    failed += !r.passed;
  }
  text += std::to_string(results.size() - static_cast<std::size_t>(failed)) + "/" + std::to_string(results.size()) +
          " checks passed\n";
  return text;
}

json to_json(const std::vector<CheckResult>& results) {
  json checks = json::array();
  for (const auto& r : results)
    checks.push_back({{"suite", r.suite},
                      {"name", r.name},
                      {"tolerance", r.tolerance},
                      {"measured", r.measured},
                      {"passed", r.passed},
                      {"detail", r.detail}});
  return {{"passed", all_passed(results)}, {"checks", checks}};
}

}  // namespace ear
