#include <doctest.h>

#include <cmath>

#include "ear/grad_check.hpp"
#include "ear/nn/functional.hpp"
#include "ear/nn/layers.hpp"
#include "ear/ops.hpp"
#include "test_util.hpp"

using namespace ear;
using nn::Triple;
using testutil::max_abs_diff;
using testutil::random_tensor;
using testutil::same_bits;
using testutil::to_array;

namespace {

nn::LSTMCell random_cell(std::int64_t c, std::int64_t h, Rng& rng) {
  nn::LSTMCell cell(c, h, DType::f64);
  for (Tensor* t : {&cell.w_ih, &cell.w_hh, &cell.b_ih, &cell.b_hh}) *t = random_tensor(t->shape(), rng);
  return cell;
}

ref::LSTMParams params_of(const nn::LSTMCell& cell) {
  return {cell.input_size(), cell.hidden_size(), cell.w_ih.to_vector(), cell.w_hh.to_vector(), cell.b_ih.to_vector(),
          cell.b_hh.to_vector()};
}

}  // namespace

TEST_CASE("conv3d identity kernel") {
  Rng rng(1);
  const Tensor x = random_tensor({1, 3, 2, 4, 5}, rng);
  std::vector<double> w(9, 0.0);
  for (int c = 0; c < 3; ++c) w[static_cast<std::size_t>(c * 3 + c)] = 1.0;
  const Tensor weight = Tensor::from_values({3, 3, 1, 1, 1}, w, DType::f64);
  CHECK(same_bits(nn::conv3d(x, weight, Tensor::zeros({3}, DType::f64)), x));
}

TEST_CASE("conv3d counts ones") {
  const Tensor x = Tensor::full({1, 1, 1, 3, 3}, 1.0, DType::f64);
  const Tensor w = Tensor::full({1, 1, 1, 3, 3}, 1.0, DType::f64);
  const Tensor y = nn::conv3d(x, w, Tensor{}, {1, 1, 1}, {0, 1, 1});
  CHECK(y.shape() == Shape{1, 1, 1, 3, 3});
  CHECK(y.at({0, 0, 0, 1, 1}) == 9.0);
  CHECK(y.at({0, 0, 0, 0, 0}) == 4.0);
  CHECK(y.at({0, 0, 0, 0, 1}) == 6.0);
}

TEST_CASE("conv3d matches the nested-loop oracle") {
  Rng rng(2);
  for (int i = 0; i < 12; ++i) {
    const Triple k{1 + static_cast<std::int64_t>(rng.below(3)), 1 + static_cast<std::int64_t>(rng.below(3)),
                   1 + static_cast<std::int64_t>(rng.below(3))};
    const Triple s{1 + static_cast<std::int64_t>(rng.below(2)), 1 + static_cast<std::int64_t>(rng.below(2)),
                   1 + static_cast<std::int64_t>(rng.below(2))};
    const Triple p{static_cast<std::int64_t>(rng.below(2)), static_cast<std::int64_t>(rng.below(2)),
                   static_cast<std::int64_t>(rng.below(2))};
    const Shape xs{1 + static_cast<std::int64_t>(rng.below(2)), 1 + static_cast<std::int64_t>(rng.below(3)), k.t + 2,
                   k.h + 3, k.w + 2};
    const Tensor x = random_tensor(xs, rng), w = random_tensor({2, xs[1], k.t, k.h, k.w}, rng);
    const Tensor b = random_tensor({2}, rng);
    const std::int64_t st[3] = {s.t, s.h, s.w}, pd[3] = {p.t, p.h, p.w};
    const Tensor y = nn::conv3d(x, w, b, s, p);
    CHECK(y.shape() == nn::conv3d_output_shape(xs, 2, k, s, p));
    CHECK(max_abs_diff(y.to_vector(), ref::conv3d(to_array(x), to_array(w), b.to_vector(), st, pd).data) < 1e-10);
  }
}

TEST_CASE("conv3d output extents") {
  CHECK(nn::conv3d_output_shape({1, 2, 8, 32, 30}, 5, {3, 3, 3}, {1, 2, 2}, {1, 1, 1}) == Shape{1, 5, 8, 16, 15});
  CHECK(nn::conv3d_output_shape({1, 2, 5, 7, 7}, 1, {1, 3, 3}, {1, 2, 2}, {0, 0, 0}) == Shape{1, 1, 5, 3, 3});
  CHECK_THROWS_AS(nn::conv3d(Tensor::zeros({1, 2, 2, 4, 4}), Tensor::zeros({1, 3, 1, 1, 1}), Tensor{}), ShapeError);
  CHECK_THROWS_AS(nn::conv3d(Tensor::zeros({1, 2, 1, 2, 2}), Tensor::zeros({1, 2, 1, 3, 3}), Tensor{}), ShapeError);
}

TEST_CASE("max_pool3d") {
  CHECK(nn::max_pool3d(Tensor::from_values({1, 1, 1, 2, 2}, {1, 2, 3, 4}, DType::f64)).item() == 4.0);

  Tensor c = Tensor::full({1, 1, 1, 2, 4}, 5.0, DType::f64);
  c.set_requires_grad(true);
  const Tensor y = nn::max_pool3d(c);
  CHECK(y.to_vector() == std::vector<double>{5, 5});
  backward(sum(y));
  CHECK(c.grad().to_vector() == std::vector<double>{1, 0, 1, 0, 0, 0, 0, 0});

  Rng rng(3);
  for (int i = 0; i < 10; ++i) {
    const Tensor x = random_tensor({1, 2, 2, 4, 4}, rng);
    CHECK(nn::max_pool3d(x).to_vector() == ref::max_pool3d(to_array(x), 1, 2, 2).data);
  }
  CHECK_THROWS_AS(nn::max_pool3d(Tensor::zeros({1, 1, 1, 3, 4})), ShapeError);
}

TEST_CASE("max_pool3d backward conserves the incoming gradient") {
  Rng rng(4);
  Tensor x = random_tensor({2, 3, 2, 4, 6}, rng);
  x.set_requires_grad(true);
  const Tensor g = random_tensor({2, 3, 2, 2, 3}, rng);
  backward(sum(mul(nn::max_pool3d(x), g)));
  double a = 0.0, b = 0.0;
  for (double v : x.grad().to_vector()) a += v;
  for (double v : g.to_vector()) b += v;
  CHECK(std::abs(a - b) < 1e-12);
}

TEST_CASE("pooling never touches the frame axis") {
  const Tensor x = Tensor::zeros({1, 1, 5, 4, 4});
  CHECK(nn::max_pool3d(x).shape() == Shape{1, 1, 5, 2, 2});
  CHECK(nn::upsample_nearest(x).shape() == Shape{1, 1, 5, 8, 8});
}

TEST_CASE("upsample_nearest") {
  CHECK(nn::upsample_nearest(Tensor::from_values({1, 1, 1, 1, 1}, {1})).to_vector() == std::vector<double>{1, 1, 1, 1});
  const Tensor k = Tensor::full({1, 2, 2, 3, 3}, 0.7, DType::f64);
  CHECK(same_bits(nn::max_pool3d(nn::upsample_nearest(k)), k));
  CHECK(same_bits(nn::avg_pool3d(nn::upsample_nearest(k), {1, 2, 2}), k));

  Rng rng(5);
  Tensor x = random_tensor({1, 2, 2, 3, 3}, rng);
  x.set_requires_grad(true);
  backward(sum(nn::upsample_nearest(x)));
  for (double v : x.grad().to_vector()) CHECK(v == 4.0);
}

TEST_CASE("instance_norm normalizes each plane") {
  Rng rng(6);
  const Tensor x = random_tensor({2, 3, 2, 5, 5}, rng, -4, 9);
  const Tensor y = nn::instance_norm(x, Tensor::full({3}, 1.0, DType::f64), Tensor::zeros({3}, DType::f64), 0.0);
  const auto v = y.to_vector();
  for (std::size_t plane = 0; plane < v.size() / 25; ++plane) {
    double m = 0.0, s = 0.0;
    for (int i = 0; i < 25; ++i) m += v[plane * 25 + static_cast<std::size_t>(i)];
    m /= 25;
    for (int i = 0; i < 25; ++i) s += std::pow(v[plane * 25 + static_cast<std::size_t>(i)] - m, 2);
    CHECK(std::abs(m) < 1e-12);
    CHECK(std::abs(s / 25 - 1.0) < 1e-12);
  }
}

TEST_CASE("layer initializers respect their bounds") {
  Rng rng(7);
  nn::Conv3d conv(4, 6, {3, 3, 3}, {1, 1, 1}, DType::f64);
  conv.init_he_uniform(rng);
  const double bound = std::sqrt(6.0 / (4 * 27));
  double lo = 0, hi = 0;
  for (double v : conv.weight.to_vector()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  CHECK(hi <= bound);
  CHECK(lo >= -bound);
  CHECK(hi > 0.8 * bound);
  for (double v : conv.bias.to_vector()) CHECK(v == 0.0);

  nn::LSTMCell cell(3, 4, DType::f64);
  cell.init_uniform(rng);
  for (const Tensor* t : {&cell.w_ih, &cell.w_hh, &cell.b_ih, &cell.b_hh})
    for (double v : t->to_vector()) CHECK(std::abs(v) <= 0.5);

  nn::InstanceNorm norm(5, DType::f64);
  CHECK(norm.gamma.to_vector() == std::vector<double>(5, 1.0));
  CHECK(norm.beta.to_vector() == std::vector<double>(5, 0.0));
}

TEST_CASE("parameters are visited with qualified names") {
  nn::Conv3d conv(2, 3, {1, 1, 1}, {0, 0, 0});
  std::vector<std::string> names;
  conv.visit_parameters("head.", [&](const std::string& n, Tensor& t) {
    names.push_back(n);
    CHECK(t.requires_grad());
  });
  CHECK(names == std::vector<std::string>{"head.weight", "head.bias"});
}

TEST_CASE("lstm_step special cases") {
  nn::LSTMCell zero(3, 2, DType::f64);
  const Tensor x = Tensor::full({2, 3}, 0.8, DType::f64);
  const auto st = nn::lstm_step(zero, x, {Tensor::zeros({2, 2}, DType::f64), Tensor::zeros({2, 2}, DType::f64)});
  CHECK(st.h.to_vector() == std::vector<double>(4, 0.0));
  CHECK(st.c.to_vector() == std::vector<double>(4, 0.0));
  CHECK(st.h.shape() == Shape{2, 2});

  Rng rng(8);
  nn::LSTMCell cell = random_cell(3, 2, rng);
  cell.w_ih = Tensor::zeros({8, 3}, DType::f64);
  auto b = cell.b_ih.to_vector();
  for (int j = 2; j < 4; ++j) b[static_cast<std::size_t>(j)] = 20.0;
  cell.b_ih = Tensor::from_values({8}, b, DType::f64);
  const Tensor c0 = random_tensor({2, 2}, rng), h0 = random_tensor({2, 2}, rng);
  const auto next = nn::lstm_step(cell, random_tensor({2, 3}, rng), {h0, c0});
  const auto cn = next.c.to_vector(), cv = c0.to_vector();
  const auto gates = linear(h0, cell.w_hh, add(cell.b_hh, cell.b_ih));
  for (std::size_t i = 0; i < cv.size(); ++i) {
    const double ig = 1.0 / (1.0 + std::exp(-gates.to_vector()[(i / 2) * 8 + i % 2]));
    const double gg = std::tanh(gates.to_vector()[(i / 2) * 8 + 4 + i % 2]);
    CHECK(std::abs(cn[i] - (cv[i] + ig * gg)) < 1e-6);
  }
}

TEST_CASE("lstm_step matches the scalar recurrence") {
  Rng rng(9);
  for (int i = 0; i < 10; ++i) {
    const auto cell = random_cell(3, 4, rng);
    const Tensor x = random_tensor({2, 3}, rng), h = random_tensor({2, 4}, rng), c = random_tensor({2, 4}, rng);
    auto rh = h.to_vector(), rc = c.to_vector();
    ref::lstm_step(params_of(cell), 2, x.to_vector(), rh, rc);
    const auto st = nn::lstm_step(cell, x, {h, c});
    CHECK(max_abs_diff(st.h.to_vector(), rh) < 1e-10);
    CHECK(max_abs_diff(st.c.to_vector(), rc) < 1e-10);
  }
  nn::LSTMCell cell(3, 4);
  CHECK_THROWS_AS(nn::lstm_step(cell, Tensor::zeros({2, 2}), {Tensor::zeros({2, 4}), Tensor::zeros({2, 4})}), ShapeError);
}

TEST_CASE("lstm_sequence") {
  Rng rng(10);
  const auto cell = random_cell(2, 3, rng);
  const Tensor x1 = random_tensor({2, 1, 2}, rng);
  const auto st = nn::lstm_step(cell, reshape(x1, {2, 2}), {Tensor::zeros({2, 3}, DType::f64), Tensor::zeros({2, 3}, DType::f64)});
  CHECK(same_bits(reshape(nn::lstm_sequence(cell, x1), {2, 3}), st.h));

  const Tensor xs = random_tensor({2, 5, 2}, rng);
  CHECK(nn::lstm_sequence(nn::LSTMCell(2, 3, DType::f64), xs).to_vector() == std::vector<double>(30, 0.0));
  CHECK(max_abs_diff(nn::lstm_sequence(cell, xs).to_vector(), ref::lstm_sequence(params_of(cell), to_array(xs)).data) <
        1e-10);
  CHECK_THROWS_AS(nn::lstm_sequence(cell, Tensor::zeros({2, 5, 3}, DType::f64)), ShapeError);
}

TEST_CASE("lstm_sequence gradients on a small case") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    GradCheckOptions opts;
    opts.seed = seed;
    const auto report = grad_check(
        "lstm_sequence",
        [](auto& in) {
          nn::LSTMCell cell;
          cell.w_ih = in[1];
          cell.w_hh = in[2];
          cell.b_ih = in[3];
          cell.b_hh = in[4];
          return nn::lstm_sequence(cell, in[0]);
        },
        {{1, 3, 2}, {8, 2}, {8, 2}, {8}, {8}}, 1e-5, opts);
    CHECK(report.passed);
  }
}

TEST_CASE("lstm_sequence is causal") {
  Rng rng(11);
  const auto cell = random_cell(2, 3, rng);
  const Tensor xs = random_tensor({1, 6, 2}, rng);
  for (std::int64_t t = 0; t + 1 < 6; ++t) {
    auto v = xs.to_vector();
    v[static_cast<std::size_t>((t + 1) * 2)] += 1.0;
    const Tensor a = nn::lstm_sequence(cell, xs), b = nn::lstm_sequence(cell, Tensor::from_values(xs.shape(), v, DType::f64));
    CHECK(same_bits(slice_axis(a, 1, 0, t + 1).clone(), slice_axis(b, 1, 0, t + 1).clone()));
    CHECK_FALSE(same_bits(slice_axis(a, 1, t + 1, t + 2).clone(), slice_axis(b, 1, t + 1, t + 2).clone()));
  }
}
