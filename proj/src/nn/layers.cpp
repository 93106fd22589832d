#include "ear/nn/layers.hpp"

#include <cmath>

#include "ear/ops.hpp"

namespace ear::nn {

Tensor make_parameter(Shape shape, DType dtype) {
  Tensor t = Tensor::zeros(std::move(shape), dtype);
  t.set_requires_grad(true);
  return t;
}

namespace {

void fill_uniform(Tensor& t, Rng& rng, double bound) {
  auto& buf = t.mutable_buffer();
  for (std::size_t i = 0; i < buf.size(); ++i) buf.set(i, rng.uniform(-bound, bound));
}

}  // namespace

// ---- Conv3d ----

Conv3d::Conv3d(std::int64_t in_channels, std::int64_t out_channels, Triple kernel_, Triple padding_, DType dtype,
               Triple stride_)
    : kernel(kernel_), stride(stride_), padding(padding_) {
  weight = make_parameter({out_channels, in_channels, kernel.t, kernel.h, kernel.w}, dtype);
  bias = make_parameter({out_channels}, dtype);
}

void Conv3d::init_he_uniform(Rng& rng) {
  const double fan_in = static_cast<double>(in_channels() * kernel.t * kernel.h * kernel.w);
  fill_uniform(weight, rng, std::sqrt(6.0 / fan_in));
  auto& b = bias.mutable_buffer();
  for (std::size_t i = 0; i < b.size(); ++i) b.set(i, 0.0);
}

Tensor Conv3d::forward(const Tensor& x) const { return conv3d(x, weight, bias, stride, padding); }

Shape Conv3d::output_shape(const Shape& input) const {
  if (input.size() != 5 || input[1] != in_channels())
    throw ShapeError("conv3d: input " + shape_str(input) + " does not have " + std::to_string(in_channels()) +
                     " channels");
  return conv3d_output_shape(input, out_channels(), kernel, stride, padding);
}

void Conv3d::visit_parameters(const std::string& prefix, const ParameterVisitor& visit) {
  visit(prefix + "weight", weight);
  visit(prefix + "bias", bias);
}

// ---- InstanceNorm ----

InstanceNorm::InstanceNorm(std::int64_t channels, DType dtype, double eps_) : eps(eps_) {
  gamma = make_parameter({channels}, dtype);
  beta = make_parameter({channels}, dtype);
  auto& g = gamma.mutable_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g.set(i, 1.0);
}

void InstanceNorm::visit_parameters(const std::string& prefix, const ParameterVisitor& visit) {
  visit(prefix + "gamma", gamma);
  visit(prefix + "beta", beta);
}

// ---- LSTM ----

LSTMCell::LSTMCell(std::int64_t input_size, std::int64_t hidden_size, DType dtype) {
  w_ih = make_parameter({4 * hidden_size, input_size}, dtype);
  w_hh = make_parameter({4 * hidden_size, hidden_size}, dtype);
  b_ih = make_parameter({4 * hidden_size}, dtype);
  b_hh = make_parameter({4 * hidden_size}, dtype);
}

void LSTMCell::init_uniform(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size()));
  for (Tensor* t : {&w_ih, &w_hh, &b_ih, &b_hh}) fill_uniform(*t, rng, bound);
}

void LSTMCell::visit_parameters(const std::string& prefix, const ParameterVisitor& visit) {
  visit(prefix + "w_ih", w_ih);
  visit(prefix + "w_hh", w_hh);
  visit(prefix + "b_ih", b_ih);
  visit(prefix + "b_hh", b_hh);
}

LSTMState lstm_step(const LSTMCell& cell, const Tensor& x, const LSTMState& state) {
  const auto H = cell.hidden_size();
  if (x.dim() != 2 || x.size(1) != cell.input_size())
    throw ShapeError("lstm_step: input " + shape_str(x.shape()) + " does not match input_size " +
                     std::to_string(cell.input_size()));
  const auto B = x.size(0);
  if (state.h.shape() != Shape{B, H} || state.c.shape() != Shape{B, H})
    throw ShapeError("lstm_step: state must be [" + std::to_string(B) + "," + std::to_string(H) + "]");

  Tensor gates = add(linear(x, cell.w_ih, cell.b_ih), linear(state.h, cell.w_hh, cell.b_hh));
  auto gate = [&](std::int64_t k) { return slice(gates, {{0, B}, {k * H, (k + 1) * H}}); };
  Tensor i = sigmoid(gate(0));
  Tensor f = sigmoid(gate(1));
  Tensor g = tanh(gate(2));
  Tensor o = sigmoid(gate(3));
  Tensor c = add(mul(f, state.c), mul(i, g));
  Tensor h = mul(o, tanh(c));
  return {h, c};
}

Tensor lstm_sequence(const LSTMCell& cell, const Tensor& xs, const Tensor& h0, const Tensor& c0) {
  if (xs.dim() != 3 || xs.size(2) != cell.input_size())
    throw ShapeError("lstm_sequence: expected [B,T," + std::to_string(cell.input_size()) + "], got " +
                     shape_str(xs.shape()));
  const auto B = xs.size(0), T = xs.size(1), C = xs.size(2), H = cell.hidden_size();
  LSTMState state{h0.defined() ? h0 : Tensor::zeros({B, H}, xs.dtype()),
                  c0.defined() ? c0 : Tensor::zeros({B, H}, xs.dtype())};
  std::vector<Tensor> outputs;
  outputs.reserve(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) {
    Tensor x_t = reshape(slice_axis(xs, 1, t, t + 1), {B, C});
    state = lstm_step(cell, x_t, state);
    outputs.push_back(reshape(state.h, {B, 1, H}));
  }
  return T == 1 ? outputs[0] : concat(outputs, 1);
}

}  // namespace ear::nn
