#pragma once

#include <cstdint>
#include <vector>

#include "triseg/tensor.hpp"

namespace triseg {

/// Adam moments for a fixed list of parameter tensors.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

AdamState init_adam(const std::vector<const Tensor*>& params);

/// One Adam step with bias correction:
///   m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2
///   p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
void adam_update(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, AdamState& state,
                 double lr);

/// Euclidean norm over all gradient entries.
double global_norm(const std::vector<const Tensor*>& grads);

}  // namespace triseg
