#include "ear/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ear/autograd.hpp"
#include "ear/ops.hpp"
#include "ear/random.hpp"

namespace ear {

namespace {

double evaluate(const ScalarFn& fn) {
  NoGradGuard guard;
  return fn().item();
}

}  // namespace

GradCheckReport grad_check_scalar(const std::string& name, const ScalarFn& fn, std::vector<Tensor> leaves,
                                  double tolerance, const GradCheckOptions& options) {
  GradCheckReport report;
  report.op = name;
  report.tolerance = tolerance;

  for (auto& leaf : leaves) {
    if (leaf.dtype() != DType::f64) throw ShapeError("grad_check requires f64 leaves");
    leaf.zero_grad();
  }
  Tensor loss = fn();
  backward(loss);

  struct Probed {
    std::size_t leaf, index;
    double analytic, numeric;
  };
  std::vector<Probed> probed;
  Rng rng(options.seed ^ 0x5eedULL);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    const auto n = static_cast<std::size_t>(leaf.numel());
    std::vector<double> analytic(n, 0.0);
    if (leaf.has_grad()) analytic = leaf.grad().to_vector();

    std::vector<std::size_t> probe(n);
    std::iota(probe.begin(), probe.end(), 0);
    if (options.max_probes_per_input && n > options.max_probes_per_input) {
      rng.shuffle(probe);
      probe.resize(options.max_probes_per_input);
      std::sort(probe.begin(), probe.end());
    }

    auto data = leaf.mutable_data<double>();
    for (const auto i : probe) {
      const double saved = data[i];
      data[i] = saved + options.epsilon;
      const double up = evaluate(fn);
      data[i] = saved - options.epsilon;
      const double down = evaluate(fn);
      data[i] = saved;
      probed.push_back({li, i, analytic[i], (up - down) / (2.0 * options.epsilon)});
    }
    leaf.zero_grad();
  }

  double scale = 0.0;
  for (const auto& p : probed) scale = std::max(scale, std::abs(p.numeric));
  for (const auto& p : probed) {
    const double denom = std::max({std::abs(p.analytic), std::abs(p.numeric), 1e-3 * scale, 1e-300});
    const double err = std::abs(p.analytic - p.numeric) / denom;
    if (!(err < report.max_rel_error)) {
      report.max_rel_error = err;
      report.worst = "input " + std::to_string(p.leaf) + " element " + std::to_string(p.index);
    }
    ++report.probes;
  }
  report.passed = std::isfinite(report.max_rel_error) && report.max_rel_error < tolerance;
  return report;
}

GradCheckReport grad_check_inputs(const std::string& name, const OpUnderTest& op, const std::vector<Tensor>& inputs,
                                  double tolerance, const GradCheckOptions& options) {
  std::vector<Tensor> leaves;
  for (const auto& t : inputs) {
    Tensor leaf = Tensor::from_buffer(t.shape(), t.buffer().converted(DType::f64));
    leaf.set_requires_grad(true);
    leaves.push_back(std::move(leaf));
  }
  Tensor probe_out;
  {
    NoGradGuard guard;
    probe_out = op(leaves);
  }
  Rng rng(options.seed * 7919 + 17);
  std::vector<double> weights(static_cast<std::size_t>(probe_out.numel()));
  for (auto& w : weights) w = rng.uniform(-1.0, 1.0);
  Tensor weight = Tensor::from_values(probe_out.shape(), weights, DType::f64);
  auto fn = [&]() { return sum(mul(op(leaves), weight)); };
  return grad_check_scalar(name, fn, leaves, tolerance, options);
}

GradCheckReport grad_check(const std::string& name, const OpUnderTest& op, const std::vector<Shape>& input_shapes,
                           double tolerance, const GradCheckOptions& options) {
  Rng rng(options.seed);
  std::vector<Tensor> inputs;
  for (const auto& shape : input_shapes) {
    std::vector<double> values(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : values) {
      do {
        v = rng.uniform(options.input_low, options.input_high);
      } while (std::abs(v) < options.min_abs_input);
    }
    inputs.push_back(Tensor::from_values(shape, values, DType::f64));
  }
  return grad_check_inputs(name, op, inputs, tolerance, options);
}

}  // namespace ear
