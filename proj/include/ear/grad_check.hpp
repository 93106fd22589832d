#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ear/tensor.hpp"

namespace ear {

struct GradCheckOptions {
  std::uint64_t seed = 0;
  double epsilon = 1e-5;
  double input_low = -1.0;
  double input_high = 1.0;
  /// Redraw inputs closer than this to zero (keeps ReLU/abs kinks out of the stencil).
  double min_abs_input = 0.0;
  /// Per-leaf cap on finite-difference probes; 0 probes every element.
  std::size_t max_probes_per_input = 0;
};

struct GradCheckReport {
  std::string op;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  bool passed = false;
  /// Where the worst error occurred, e.g. "input 1 element 17".
  std::string worst;
};

using ScalarFn = std::function<Tensor()>;

/// Compares backward() against central differences for a scalar function of `leaves`.
/// The per-element error is |a - n| / max(|a|, |n|, 1e-3 * max_j |n_j|), so entries
/// that are tiny relative to the largest probed gradient (over all leaves) are judged absolutely.
/// Leaves must be f64 tensors with requires_grad set; they are perturbed in place and restored.
GradCheckReport grad_check_scalar(const std::string& name, const ScalarFn& fn, std::vector<Tensor> leaves,
                                  double tolerance, const GradCheckOptions& options = {});

using OpUnderTest = std::function<Tensor(const std::vector<Tensor>&)>;

/// Draws f64 inputs of the given shapes and checks d/dx sum(op(x) ⊙ R) for a fixed random R.
GradCheckReport grad_check(const std::string& name, const OpUnderTest& op, const std::vector<Shape>& input_shapes,
                           double tolerance, const GradCheckOptions& options = {});

/// As grad_check, with caller-provided inputs (converted to f64 leaves).
GradCheckReport grad_check_inputs(const std::string& name, const OpUnderTest& op, const std::vector<Tensor>& inputs,
                                  double tolerance, const GradCheckOptions& options = {});

}  // namespace ear
