#include "ear/optim.hpp"

#include <cmath>

namespace ear {

void Adam::step(nn::ParameterList& params) {
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    auto& st = state_[name];
    const auto n = static_cast<std::size_t>(p.numel());
    if (st.m.size() != n) {
      st.m = Buffer(DType::f64, n);
      st.v = Buffer(DType::f64, n);
    }
    const Buffer g = p.grad().buffer().converted(DType::f64);
    auto gv = g.view<double>();
    auto m = st.m.view<double>();
    auto v = st.v.view<double>();
    auto& data = p.mutable_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * gv[i];
      v[i] = b2 * v[i] + (1.0 - b2) * gv[i] * gv[i];
      const double update = config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
      data.set(i, data.get(i) - update);
    }
    p.zero_grad();
  }
}

}  // namespace ear
