#pragma once

#include <vector>

#include "triseg/tensor.hpp"

namespace triseg {

struct LossConfig {
  double epsilon = 1e-6;
  std::vector<double> alpha{1.0};  // per class; a single value is broadcast
  double gamma = 2.0;

  double alpha_for(int cls) const;
  void validate() const;
};

struct LossValue {
  double total = 0.0;
  double dice = 0.0;
  double focal = 0.0;
};

/// 1 - mean_c (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps); sums span the whole batch.
double dice_loss(const Tensor& probs, const Tensor& target, const LossConfig& cfg, Tensor* grad = nullptr);

/// -(1/N) sum_i sum_c alpha_c t (1-p)^gamma log(p + eps), N = voxel count.
double focal_loss(const Tensor& probs, const Tensor& target, const LossConfig& cfg, Tensor* grad = nullptr);

/// dice + focal; grad (if given) receives the summed gradient w.r.t. probs.
LossValue total_loss(const Tensor& probs, const Tensor& target, const LossConfig& cfg, Tensor* grad = nullptr);

/// (N, H, W) class ids packed in a (N, 1, H, W) tensor -> (N, C, H, W) one-hot.
Tensor one_hot(const Tensor& labels, int n_classes);

}  // namespace triseg
