#include "triseg/optim.hpp"

#include <cmath>

#include "triseg/error.hpp"

namespace triseg {

AdamState init_adam(const std::vector<const Tensor*>& params) {
  AdamState s;
  for (const Tensor* p : params) {
    s.m.emplace_back(p->shape());
    s.v.emplace_back(p->shape());
  }
  return s;
}

void adam_update(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, AdamState& state,
                 double lr) {
  require(params.size() == grads.size() && params.size() == state.m.size() && params.size() == state.v.size(),
          ErrorCode::ShapeError, "optimizer state does not match the parameter list");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const double b1 = state.beta1, b2 = state.beta2;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    require(p.same_shape(g) && p.same_shape(m), ErrorCode::ShapeError, "gradient shape mismatch in optimizer");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

double global_norm(const std::vector<const Tensor*>& grads) {
  double ss = 0.0;
  for (const Tensor* g : grads)
    for (double x : g->values()) ss += x * x;
  return std::sqrt(ss);
}

}  // namespace triseg
