#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "triseg/layers.hpp"
#include "triseg/tensor.hpp"

namespace triseg {

struct NetworkConfig {
  int in_channels = 3;  // T1ce, T2, FLAIR
  int n_classes = 4;
  std::vector<int> level_filters{64, 128, 256, 512};
  int t_steps = 2;
  int kernel = 3;

  int levels() const { return static_cast<int>(level_filters.size()); }
  int bottleneck_channels() const { return level_filters.back(); }
  /// Smallest admissible slice edge: every level must keep at least one pixel
  /// after pooling, with one level of slack.
  int min_input_size() const { return 1 << levels(); }
  void validate() const;
};

/// Recurrent convolutional layer:
///   Z(t) = w_f * u + w_k * x(t-1) + b_k,  x(t) = relu(instance_norm(Z(t))),  x(-1) = 0.
struct RclParams {
  Tensor w_f;  // (C, Cin, k, k)
  Tensor w_k;  // (C, C, k, k)
  Tensor b_k;  // (C)
  int t_steps = 2;
};

/// Two stacked RCLs F with residual shortcut F(x~) + x~, where x~ is a 1x1
/// projection of x when the channel count changes.
struct RrcnnParams {
  Tensor proj_w;  // (C, Cin, 1, 1), empty when Cin == C
  Tensor proj_b;
  RclParams rcl1;
  RclParams rcl2;

  bool has_projection() const { return !proj_w.empty(); }
};

struct AttentionGateParams {
  Tensor w_x;    // (I, Cskip, 1, 1)
  Tensor w_g;    // (I, Cgate, 1, 1)
  Tensor b_g;    // (I)
  Tensor psi_w;  // (1, I, 1, 1)
  Tensor psi_b;  // (1)
};

struct UpsampleParams {
  Tensor weight;  // (Cin, Cout, 2, 2)
  Tensor bias;    // (Cout)
};

struct NetworkParams {
  NetworkConfig config;
  std::vector<RrcnnParams> encoder;         // one per level; the last is the bottleneck
  std::vector<UpsampleParams> up;           // up[l]: level l+1 -> l
  std::vector<AttentionGateParams> gates;   // gates[l]: skip from encoder level l
  std::vector<RrcnnParams> decoder;         // decoder[l]: 2*f_l -> f_l
  Tensor head_w;                            // (n_classes, f_0, 1, 1)
  Tensor head_b;

  std::size_t parameter_count() const;
  NetworkParams zeros_like() const;
};

/// Calls fn(name, tensor) for every learnable tensor in a fixed order.
template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn);

NetworkParams init_network(const NetworkConfig& config, std::uint64_t seed);
RclParams init_rcl(int in_channels, int channels, int kernel, int t_steps, std::uint64_t seed);
RrcnnParams init_rrcnn(int in_channels, int channels, int kernel, int t_steps, std::uint64_t seed);
AttentionGateParams init_attention_gate(int skip_channels, int gate_channels, std::uint64_t seed);

// --- building blocks -------------------------------------------------------

struct RclTrace {
  Tensor input;
  std::vector<Tensor> states;                  // x(0) .. x(T-1), inputs of the recurrent conv
  std::vector<nn::InstanceNormCache> norms;    // one per step
  Tensor preactivation;                        // Z(T)
};

Tensor rcl_forward(const Tensor& u, const RclParams& params, RclTrace* trace = nullptr);
Tensor rcl_backward(const Tensor& dout, const RclParams& params, const RclTrace& trace, RclParams& grads);

struct RrcnnTrace {
  Tensor input;
  Tensor projected;
  RclTrace rcl1;
  RclTrace rcl2;
};

Tensor rrcnn_block_forward(const Tensor& x, const RrcnnParams& params, RrcnnTrace* trace = nullptr);
Tensor rrcnn_block_backward(const Tensor& dout, const RrcnnParams& params, const RrcnnTrace& trace,
                            RrcnnParams& grads);

struct AttentionTrace {
  Tensor skip;
  Tensor gate;
  Tensor skip_coarse;  // skip resampled to the gate's grid
  Tensor hidden_pre;   // w_x*skip' + w_g*gate + b_g
  Tensor alpha_coarse;
  Tensor alpha;        // resampled to skip's grid, (N, 1, Hs, Ws)
};

/// alpha = sigmoid(psi(relu(w_x*skip' + w_g*gate + b_g))) on the gate grid,
/// bilinearly resampled to skip's dims; returns alpha * skip.
Tensor attention_gate_forward(const Tensor& skip, const Tensor& gate, const AttentionGateParams& params,
                              AttentionTrace* trace = nullptr);
void attention_gate_backward(const Tensor& dout, const AttentionGateParams& params, const AttentionTrace& trace,
                             AttentionGateParams& grads, Tensor& dskip, Tensor& dgate);

Tensor instance_normalize(const Tensor& x);

// --- full network ------------------------------------------------------------

struct NetworkTrace {
  std::vector<Tensor> level_inputs;  // pooled inputs of encoder levels (level 0: the image batch)
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  std::vector<RrcnnTrace> encoder;
  std::vector<Tensor> encoder_out;
  std::vector<Tensor> up_raw;        // transposed-conv outputs before resampling
  std::vector<AttentionTrace> gates;
  std::vector<RrcnnTrace> decoder;
  std::vector<Tensor> decoder_out;
  Tensor logits;
  Tensor probs;

  const Tensor& bottleneck() const { return encoder_out.back(); }
};

/// (N, in_channels, H, W) -> per-pixel softmax probabilities (N, n_classes, H, W).
Tensor network_forward(const Tensor& batch, const NetworkParams& params, NetworkTrace* trace = nullptr);
/// Same network without the final softmax.
Tensor network_logits(const Tensor& batch, const NetworkParams& params, NetworkTrace* trace = nullptr);
/// Deepest encoder activation (N, f_last, H/2^(L-1), W/2^(L-1)).
Tensor extract_bottleneck(const Tensor& batch, const NetworkParams& params);
/// Backpropagates dL/dprobs through a trace recorded by network_forward.
void network_backward(const Tensor& dprobs, const NetworkParams& params, const NetworkTrace& trace,
                      NetworkParams& grads);

// ---------------------------------------------------------------------------

template <class Rcl, class Fn>
void visit_rcl(Rcl& r, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".w_f", r.w_f);
  fn(prefix + ".w_k", r.w_k);
  fn(prefix + ".b_k", r.b_k);
}

template <class Block, class Fn>
void visit_rrcnn(Block& b, const std::string& prefix, Fn&& fn) {
  if (b.has_projection()) {
    fn(prefix + ".proj.weight", b.proj_w);
    fn(prefix + ".proj.bias", b.proj_b);
  }
  visit_rcl(b.rcl1, prefix + ".rcl1", fn);
  visit_rcl(b.rcl2, prefix + ".rcl2", fn);
}

template <class Gate, class Fn>
void visit_gate(Gate& g, const std::string& prefix, Fn&& fn) {
  fn(prefix + ".w_x", g.w_x);
  fn(prefix + ".w_g", g.w_g);
  fn(prefix + ".b_g", g.b_g);
  fn(prefix + ".psi.weight", g.psi_w);
  fn(prefix + ".psi.bias", g.psi_b);
}

template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn) {
  for (std::size_t l = 0; l < p.encoder.size(); ++l) visit_rrcnn(p.encoder[l], "encoder." + std::to_string(l), fn);
  for (std::size_t l = 0; l < p.up.size(); ++l) {
    fn("up." + std::to_string(l) + ".weight", p.up[l].weight);
    fn("up." + std::to_string(l) + ".bias", p.up[l].bias);
  }
  for (std::size_t l = 0; l < p.gates.size(); ++l) visit_gate(p.gates[l], "gate." + std::to_string(l), fn);
  for (std::size_t l = 0; l < p.decoder.size(); ++l) visit_rrcnn(p.decoder[l], "decoder." + std::to_string(l), fn);
  fn(std::string("head.weight"), p.head_w);
  fn(std::string("head.bias"), p.head_b);
}

}  // namespace triseg
