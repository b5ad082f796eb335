#pragma once

#include <cstdint>
#include <vector>

#include "triseg/tensor.hpp"

// Differentiable primitives over (N, C, H, W) tensors. Backward functions
// accumulate (+=) into the gradient tensors they are given; a null pointer
// skips that gradient.
namespace triseg::nn {

/// Stride-1 convolution with odd square kernel and zero "same" padding.
/// weight (Co, Ci, k, k); bias (Co) or null.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias);
void conv2d_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor* dx, Tensor* dweight,
                     Tensor* dbias);

/// Kernel-2, stride-2 transposed convolution. weight (Ci, Co, 2, 2); bias (Co).
Tensor conv_transpose2x2(const Tensor& x, const Tensor& weight, const Tensor& bias);
void conv_transpose2x2_backward(const Tensor& x, const Tensor& weight, const Tensor& dy, Tensor* dx,
                                Tensor* dweight, Tensor* dbias);

inline constexpr double kInstanceNormEps = 1e-5;

struct InstanceNormCache {
  Tensor normalized;
  std::vector<double> inv_std;  // one per (n, c)
};

Tensor instance_norm(const Tensor& x, InstanceNormCache* cache = nullptr, double eps = kInstanceNormEps);
Tensor instance_norm_backward(const Tensor& dy, const InstanceNormCache& cache);

Tensor relu(const Tensor& x);
/// Gradient through ReLU given its input (or output: the mask x > 0 is the same).
Tensor relu_backward(const Tensor& dy, const Tensor& x);

Tensor sigmoid(const Tensor& x);

/// 2x2 max pooling, floor semantics for odd sizes.
Tensor maxpool2(const Tensor& x, std::vector<std::uint32_t>* argmax = nullptr);
Tensor maxpool2_backward(const Tensor& dy, const std::vector<std::uint32_t>& argmax, const Shape& input_shape);

/// Bilinear resampling with half-pixel centres (align_corners = false).
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor resize_bilinear_backward(const Tensor& dy, int in_h, int in_w);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Splits the channel axis at `first_channels`.
std::pair<Tensor, Tensor> split_channels(const Tensor& x, int first_channels);

/// Softmax over the channel axis at every pixel.
Tensor softmax_channels(const Tensor& logits);
Tensor softmax_channels_backward(const Tensor& dprobs, const Tensor& probs);

}  // namespace triseg::nn
