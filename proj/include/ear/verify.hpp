#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ear/tensor.hpp"

namespace ear {

struct CheckResult {
  std::string suite;  // "gradient", "oracle" or "invariant"
  std::string name;   // names the op or property under test
  double tolerance = 0.0;
  double measured = 0.0;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  int seeds = 5;              // gradient checks per op
  int oracle_instances = 10;  // random instances per oracle comparison
  /// Swap conv3d for a copy whose backward scales gradients by 1.1 (harness self-test).
  bool corrupt_conv_backward = false;
};

/// Finite-difference checks of every differentiable op and of a depth-2 network (f64).
std::vector<CheckResult> gradient_suite(const VerifyOptions& options = {});
/// Kernels against the naive loops in ear::ref.
std::vector<CheckResult> oracle_suite(const VerifyOptions& options = {});
/// Structural properties: stochastic attention rows, causality, bijections, loss fixed points,
/// container round trip, split partition, mask post-processing and phantom velocity recovery.
std::vector<CheckResult> invariant_suite(const VerifyOptions& options = {});

std::vector<CheckResult> run_verify(const VerifyOptions& options = {});

/// conv3d whose gradients come back scaled by 1.1.
Tensor corrupted_conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias);

bool all_passed(const std::vector<CheckResult>& results);
std::string format_report(const std::vector<CheckResult>& results);
nlohmann::json to_json(const std::vector<CheckResult>& results);

}  // namespace ear
