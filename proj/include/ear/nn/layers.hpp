#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "ear/nn/functional.hpp"
#include "ear/random.hpp"
#include "ear/tensor.hpp"

namespace ear::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParameterList = std::vector<NamedTensor>;

/// Visits (qualified name, parameter slot). Slots may be reassigned, e.g. for dtype conversion.
using ParameterVisitor = std::function<void(const std::string&, Tensor&)>;

/// Creates a trainable leaf.
Tensor make_parameter(Shape shape, DType dtype);

class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(std::int64_t in_channels, std::int64_t out_channels, Triple kernel, Triple padding,
         DType dtype = DType::f32, Triple stride = {1, 1, 1});

  /// Weights U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero bias.
  void init_he_uniform(Rng& rng);
  Tensor forward(const Tensor& x) const;
  Shape output_shape(const Shape& input) const;
  void visit_parameters(const std::string& prefix, const ParameterVisitor& visit);

  std::int64_t in_channels() const { return weight.size(1); }
  std::int64_t out_channels() const { return weight.size(0); }

  Tensor weight;  // [Co, Ci, kt, kh, kw]
  Tensor bias;    // [Co]
  Triple kernel, stride, padding;
};

class InstanceNorm {
 public:
  InstanceNorm() = default;
  InstanceNorm(std::int64_t channels, DType dtype = DType::f32, double eps = 1e-5);

  Tensor forward(const Tensor& x) const { return instance_norm(x, gamma, beta, eps); }
  void visit_parameters(const std::string& prefix, const ParameterVisitor& visit);

  Tensor gamma, beta;  // [C], initialized to 1 and 0
  double eps = 1e-5;
};

/// Gate rows are stacked (input, forget, cell, output), each of height `hidden_size`.
class LSTMCell {
 public:
  LSTMCell() = default;
  LSTMCell(std::int64_t input_size, std::int64_t hidden_size, DType dtype = DType::f32);

  /// All weights and biases U(-1/sqrt(hidden), +1/sqrt(hidden)).
  void init_uniform(Rng& rng);
  void visit_parameters(const std::string& prefix, const ParameterVisitor& visit);

  std::int64_t input_size() const { return w_ih.size(1); }
  std::int64_t hidden_size() const { return w_hh.size(1); }

  Tensor w_ih;  // [4H, C]
  Tensor w_hh;  // [4H, H]
  Tensor b_ih;  // [4H]
  Tensor b_hh;  // [4H]
};

struct LSTMState {
  Tensor h;  // [B, H]
  Tensor c;  // [B, H]
};

/// One recurrence step: i,f,o = sigmoid, g = tanh, c' = f*c + i*g, h' = o*tanh(c').
LSTMState lstm_step(const LSTMCell& cell, const Tensor& x, const LSTMState& state);

/// Runs the cell over xs [B,T,C] from (h0, c0) (zeros when undefined); returns all hidden states [B,T,H].
Tensor lstm_sequence(const LSTMCell& cell, const Tensor& xs, const Tensor& h0 = Tensor{}, const Tensor& c0 = Tensor{});

}  // namespace ear::nn
