#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "ear/config.hpp"
#include "ear/nn/layers.hpp"

namespace ear {

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  /// One bias-corrected update of every parameter that has a gradient; grads are then cleared.
  void step(nn::ParameterList& params);

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return steps_; }

  struct Moments {
    Buffer m, v;
  };
  const std::map<std::string, Moments>& state() const { return state_; }
  void restore(std::int64_t steps, std::map<std::string, Moments> state) {
    steps_ = steps;
    state_ = std::move(state);
  }

 private:
  AdamConfig config_;
  std::int64_t steps_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace ear
