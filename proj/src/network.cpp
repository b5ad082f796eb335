#include "triseg/network.hpp"

#include <cmath>

#include "triseg/error.hpp"
#include "triseg/rng.hpp"

namespace triseg {
namespace {

constexpr double kHeadInitScale = 0.01;

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.values()) v = normal(rng, 0.0, stddev);
  return t;
}

void check_input(const Tensor& x, int channels, const char* what) {
  require(x.rank() == 4, ErrorCode::ShapeError, std::string(what) + " expects a rank-4 tensor");
  require(x.c() == channels, ErrorCode::ShapeError,
          std::string(what) + " expects " + std::to_string(channels) + " channels, got " + std::to_string(x.c()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  out += b;
  return out;
}

}  // namespace

void NetworkConfig::validate() const {
  require(in_channels >= 1, ErrorCode::ConfigError, "in_channels must be >= 1");
  require(n_classes >= 2, ErrorCode::ConfigError, "n_classes must be >= 2");
  require(!level_filters.empty(), ErrorCode::ConfigError, "level_filters must not be empty");
  for (std::size_t i = 0; i < level_filters.size(); ++i) {
    require(level_filters[i] >= 1, ErrorCode::ConfigError, "level_filters must be positive");
    if (i) require(level_filters[i] > level_filters[i - 1], ErrorCode::ConfigError,
                   "level_filters must be strictly increasing");
  }
  require(t_steps >= 0, ErrorCode::ConfigError, "t_steps must be >= 0");
  require(kernel >= 1 && kernel % 2 == 1, ErrorCode::ConfigError, "kernel must be odd");
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t total = 0;
  visit_params(*this, [&](const std::string&, const Tensor& t) { total += t.size(); });
  return total;
}

NetworkParams NetworkParams::zeros_like() const {
  NetworkParams z = *this;
  visit_params(z, [](const std::string&, Tensor& t) { t.set_zero(); });
  return z;
}

RclParams init_rcl(int in_channels, int channels, int kernel, int t_steps, std::uint64_t seed) {
  Rng rng = fork_rng(seed, 0);
  RclParams p;
  p.w_f = he_normal({channels, in_channels, kernel, kernel}, in_channels * kernel * kernel, rng);
  p.w_k = he_normal({channels, channels, kernel, kernel}, channels * kernel * kernel, rng);
  p.b_k = Tensor(Shape{channels});
  p.t_steps = t_steps;
  return p;
}

RrcnnParams init_rrcnn(int in_channels, int channels, int kernel, int t_steps, std::uint64_t seed) {
  RrcnnParams p;
  if (in_channels != channels) {
    Rng rng = fork_rng(seed, 0);
    p.proj_w = he_normal({channels, in_channels, 1, 1}, in_channels, rng);
    p.proj_b = Tensor(Shape{channels});
  }
  p.rcl1 = init_rcl(channels, channels, kernel, t_steps, seed * 31 + 1);
  p.rcl2 = init_rcl(channels, channels, kernel, t_steps, seed * 31 + 2);
  return p;
}

AttentionGateParams init_attention_gate(int skip_channels, int gate_channels, std::uint64_t seed) {
  Rng rng = fork_rng(seed, 0);
  const int inter = std::max(1, skip_channels / 2);
  AttentionGateParams g;
  g.w_x = he_normal({inter, skip_channels, 1, 1}, skip_channels, rng);
  g.w_g = he_normal({inter, gate_channels, 1, 1}, gate_channels, rng);
  g.b_g = Tensor(Shape{inter});
  g.psi_w = he_normal({1, inter, 1, 1}, inter, rng);
  g.psi_b = Tensor(Shape{1});
  return g;
}

NetworkParams init_network(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  NetworkParams p;
  p.config = config;
  const auto& f = config.level_filters;
  const int levels = config.levels();
  std::uint64_t stream = seed * 1000003ULL;
  for (int l = 0; l < levels; ++l) {
    const int in = l == 0 ? config.in_channels : f[static_cast<std::size_t>(l - 1)];
    p.encoder.push_back(init_rrcnn(in, f[static_cast<std::size_t>(l)], config.kernel, config.t_steps, ++stream));
  }
  for (int l = 0; l + 1 < levels; ++l) {
    const int fl = f[static_cast<std::size_t>(l)], deeper = f[static_cast<std::size_t>(l + 1)];
    Rng rng = fork_rng(++stream, 0);
    p.up.push_back({he_normal({deeper, fl, 2, 2}, deeper, rng), Tensor(Shape{fl})});
    p.gates.push_back(init_attention_gate(fl, deeper, ++stream));
    p.decoder.push_back(init_rrcnn(2 * fl, fl, config.kernel, config.t_steps, ++stream));
  }
  Rng rng = fork_rng(++stream, 0);
  // Residual blocks sum non-negative activations, so decoder features are
  // large at init; a small classifier keeps the first softmax unsaturated.
  p.head_w = he_normal({config.n_classes, f[0], 1, 1}, f[0], rng);
  for (double& v : p.head_w.values()) v *= kHeadInitScale;
  p.head_b = Tensor(Shape{config.n_classes});
  return p;
}

Tensor instance_normalize(const Tensor& x) { return nn::instance_norm(x); }

Tensor rcl_forward(const Tensor& u, const RclParams& params, RclTrace* trace) {
  check_input(u, params.w_f.dim(1), "rcl_forward");
  const Tensor feed = nn::conv2d(u, params.w_f, &params.b_k);
  if (trace) {
    trace->input = u;
    trace->states.clear();
    trace->norms.assign(static_cast<std::size_t>(params.t_steps + 1), {});
  }
  Tensor state;
  Tensor z;
  for (int t = 0; t <= params.t_steps; ++t) {
    if (t == 0) {
      z = feed;
    } else {
      z = add(feed, nn::conv2d(state, params.w_k, nullptr));
      if (trace) trace->states.push_back(std::move(state));
    }
    nn::InstanceNormCache* cache = trace ? &trace->norms[static_cast<std::size_t>(t)] : nullptr;
    state = nn::relu(nn::instance_norm(z, cache));
  }
  if (trace) trace->preactivation = std::move(z);
  return state;
}

Tensor rcl_backward(const Tensor& dout, const RclParams& params, const RclTrace& trace, RclParams& grads) {
  Tensor dfeed(dout.shape());
  Tensor dstate = dout;
  for (int t = params.t_steps; t >= 0; --t) {
    const auto& norm = trace.norms[static_cast<std::size_t>(t)];
    const Tensor dz = nn::instance_norm_backward(nn::relu_backward(dstate, norm.normalized), norm);
    dfeed += dz;
    if (t > 0) {
      Tensor dprev(dz.shape());
      nn::conv2d_backward(trace.states[static_cast<std::size_t>(t - 1)], params.w_k, dz, &dprev, &grads.w_k, nullptr);
      dstate = std::move(dprev);
    }
  }
  Tensor du(trace.input.shape());
  nn::conv2d_backward(trace.input, params.w_f, dfeed, &du, &grads.w_f, &grads.b_k);
  return du;
}

Tensor rrcnn_block_forward(const Tensor& x, const RrcnnParams& params, RrcnnTrace* trace) {
  const int in_channels = params.has_projection() ? params.proj_w.dim(1) : params.rcl1.w_f.dim(1);
  check_input(x, in_channels, "rrcnn_block_forward");
  Tensor projected = params.has_projection() ? nn::conv2d(x, params.proj_w, &params.proj_b) : x;
  Tensor mid = rcl_forward(projected, params.rcl1, trace ? &trace->rcl1 : nullptr);
  Tensor out = rcl_forward(mid, params.rcl2, trace ? &trace->rcl2 : nullptr);
  out += projected;
  if (trace) {
    trace->input = x;
    trace->projected = std::move(projected);
  }
  return out;
}

Tensor rrcnn_block_backward(const Tensor& dout, const RrcnnParams& params, const RrcnnTrace& trace,
                            RrcnnParams& grads) {
  const Tensor dmid = rcl_backward(dout, params.rcl2, trace.rcl2, grads.rcl2);
  Tensor dproj = rcl_backward(dmid, params.rcl1, trace.rcl1, grads.rcl1);
  dproj += dout;
  if (!params.has_projection()) return dproj;
  Tensor dx(trace.input.shape());
  nn::conv2d_backward(trace.input, params.proj_w, dproj, &dx, &grads.proj_w, &grads.proj_b);
  return dx;
}

Tensor attention_gate_forward(const Tensor& skip, const Tensor& gate, const AttentionGateParams& params,
                              AttentionTrace* trace) {
  check_input(skip, params.w_x.dim(1), "attention gate skip");
  check_input(gate, params.w_g.dim(1), "attention gate signal");
  require(skip.n() == gate.n(), ErrorCode::ShapeError, "attention gate batch sizes differ");
  Tensor skip_coarse = nn::resize_bilinear(skip, gate.h(), gate.w());
  Tensor hidden = nn::conv2d(skip_coarse, params.w_x, nullptr);
  hidden += nn::conv2d(gate, params.w_g, &params.b_g);
  Tensor alpha_coarse = nn::sigmoid(nn::conv2d(nn::relu(hidden), params.psi_w, &params.psi_b));
  Tensor alpha = nn::resize_bilinear(alpha_coarse, skip.h(), skip.w());

  Tensor out(skip.shape());
  const std::size_t hw = skip.plane();
  for (int s = 0; s < skip.n(); ++s) {
    const double* a = alpha.channel(s, 0);
    for (int c = 0; c < skip.c(); ++c) {
      const double* src = skip.channel(s, c);
      double* dst = out.channel(s, c);
      for (std::size_t i = 0; i < hw; ++i) dst[i] = a[i] * src[i];
    }
  }
  if (trace) {
    trace->skip = skip;
    trace->gate = gate;
    trace->skip_coarse = std::move(skip_coarse);
    trace->hidden_pre = std::move(hidden);
    trace->alpha_coarse = std::move(alpha_coarse);
    trace->alpha = std::move(alpha);
  }
  return out;
}

void attention_gate_backward(const Tensor& dout, const AttentionGateParams& params, const AttentionTrace& trace,
                             AttentionGateParams& grads, Tensor& dskip, Tensor& dgate) {
  const Tensor& skip = trace.skip;
  const std::size_t hw = skip.plane();
  Tensor dalpha(trace.alpha.shape());
  for (int s = 0; s < skip.n(); ++s) {
    const double* a = trace.alpha.channel(s, 0);
    double* da = dalpha.channel(s, 0);
    for (int c = 0; c < skip.c(); ++c) {
      const double* src = skip.channel(s, c);
      const double* g = dout.channel(s, c);
      double* ds = dskip.channel(s, c);
      for (std::size_t i = 0; i < hw; ++i) {
        ds[i] += g[i] * a[i];
        da[i] += g[i] * src[i];
      }
    }
  }
  Tensor dlogit = nn::resize_bilinear_backward(dalpha, trace.alpha_coarse.h(), trace.alpha_coarse.w());
  for (std::size_t i = 0; i < dlogit.size(); ++i) {
    const double a = trace.alpha_coarse[i];
    dlogit[i] *= a * (1.0 - a);
  }
  const Tensor hidden = nn::relu(trace.hidden_pre);
  Tensor dhidden(hidden.shape());
  nn::conv2d_backward(hidden, params.psi_w, dlogit, &dhidden, &grads.psi_w, &grads.psi_b);
  dhidden = nn::relu_backward(dhidden, trace.hidden_pre);
  nn::conv2d_backward(trace.gate, params.w_g, dhidden, &dgate, &grads.w_g, &grads.b_g);
  Tensor dcoarse(trace.skip_coarse.shape());
  nn::conv2d_backward(trace.skip_coarse, params.w_x, dhidden, &dcoarse, &grads.w_x, nullptr);
  dskip += nn::resize_bilinear_backward(dcoarse, skip.h(), skip.w());
}

Tensor network_logits(const Tensor& batch, const NetworkParams& params, NetworkTrace* trace) {
  const NetworkConfig& cfg = params.config;
  check_input(batch, cfg.in_channels, "network_forward");
  const int min_size = cfg.min_input_size();
  require(batch.h() >= min_size && batch.w() >= min_size, ErrorCode::ShapeError,
          "input slices must be at least " + std::to_string(min_size) + "x" + std::to_string(min_size) + ", got " +
              shape_string(batch.shape()));
  const int levels = cfg.levels();
  const auto L = static_cast<std::size_t>(levels);

  NetworkTrace local;
  NetworkTrace& tr = trace ? *trace : local;
  const bool keep = trace != nullptr;
  tr = NetworkTrace{};
  tr.encoder.resize(L);
  tr.encoder_out.resize(L);
  tr.pool_argmax.resize(L);
  tr.level_inputs.resize(L);
  tr.up_raw.resize(L - 1);
  tr.gates.resize(L - 1);
  tr.decoder.resize(L - 1);
  tr.decoder_out.resize(L - 1);

  Tensor level_in = batch;
  for (std::size_t l = 0; l < L; ++l) {
    if (l > 0) level_in = nn::maxpool2(tr.encoder_out[l - 1], keep ? &tr.pool_argmax[l] : nullptr);
    tr.encoder_out[l] = rrcnn_block_forward(level_in, params.encoder[l], keep ? &tr.encoder[l] : nullptr);
    if (keep) tr.level_inputs[l] = std::move(level_in);
  }

  for (int l = levels - 2; l >= 0; --l) {
    const auto u = static_cast<std::size_t>(l);
    const Tensor& deeper = (l == levels - 2) ? tr.encoder_out[L - 1] : tr.decoder_out[u + 1];
    const Tensor& skip = tr.encoder_out[u];
    Tensor up = nn::conv_transpose2x2(deeper, params.up[u].weight, params.up[u].bias);
    Tensor up_matched = nn::resize_bilinear(up, skip.h(), skip.w());
    Tensor attended = attention_gate_forward(skip, deeper, params.gates[u], keep ? &tr.gates[u] : nullptr);
    tr.decoder_out[u] = rrcnn_block_forward(nn::concat_channels(attended, up_matched), params.decoder[u],
                                            keep ? &tr.decoder[u] : nullptr);
    if (keep) tr.up_raw[u] = std::move(up);
    if (!keep && u + 1 < L - 1) tr.decoder_out[u + 1] = Tensor();
  }

  Tensor logits = nn::conv2d(tr.decoder_out[0], params.head_w, &params.head_b);
  if (keep) tr.logits = logits;
  return logits;
}

Tensor network_forward(const Tensor& batch, const NetworkParams& params, NetworkTrace* trace) {
  Tensor probs = nn::softmax_channels(network_logits(batch, params, trace));
  if (trace) trace->probs = probs;
  return probs;
}

Tensor extract_bottleneck(const Tensor& batch, const NetworkParams& params) {
  const NetworkConfig& cfg = params.config;
  check_input(batch, cfg.in_channels, "extract_bottleneck");
  const int min_size = cfg.min_input_size();
  require(batch.h() >= min_size && batch.w() >= min_size, ErrorCode::ShapeError,
          "input slices must be at least " + std::to_string(min_size) + " pixels");
  Tensor x = rrcnn_block_forward(batch, params.encoder[0]);
  for (std::size_t l = 1; l < params.encoder.size(); ++l) x = rrcnn_block_forward(nn::maxpool2(x), params.encoder[l]);
  return x;
}

void network_backward(const Tensor& dprobs, const NetworkParams& params, const NetworkTrace& tr,
                      NetworkParams& grads) {
  const auto L = params.encoder.size();
  const Tensor dlogits = nn::softmax_channels_backward(dprobs, tr.probs);

  std::vector<Tensor> ddec(L - 1);
  std::vector<Tensor> denc(L);
  for (std::size_t l = 0; l < L; ++l) denc[l] = Tensor(tr.encoder_out[l].shape());
  for (std::size_t l = 0; l + 1 < L; ++l) ddec[l] = Tensor(tr.decoder_out[l].shape());

  nn::conv2d_backward(tr.decoder_out[0], params.head_w, dlogits, &ddec[0], &grads.head_w, &grads.head_b);

  for (std::size_t l = 0; l + 1 < L; ++l) {
    const bool deepest = (l + 1 == L - 1);
    Tensor& ddeeper = deepest ? denc[L - 1] : ddec[l + 1];
    const Tensor& deeper = deepest ? tr.encoder_out[L - 1] : tr.decoder_out[l + 1];
    const Tensor dcat = rrcnn_block_backward(ddec[l], params.decoder[l], tr.decoder[l], grads.decoder[l]);
    auto [dattended, dup] = nn::split_channels(dcat, tr.encoder_out[l].c());
    const Tensor dup_raw = nn::resize_bilinear_backward(dup, tr.up_raw[l].h(), tr.up_raw[l].w());
    nn::conv_transpose2x2_backward(deeper, params.up[l].weight, dup_raw, &ddeeper, &grads.up[l].weight,
                                   &grads.up[l].bias);
    attention_gate_backward(dattended, params.gates[l], tr.gates[l], grads.gates[l], denc[l], ddeeper);
  }

  for (std::size_t l = L; l-- > 0;) {
    const Tensor din = rrcnn_block_backward(denc[l], params.encoder[l], tr.encoder[l], grads.encoder[l]);
    if (l > 0) denc[l - 1] += nn::maxpool2_backward(din, tr.pool_argmax[l], tr.encoder_out[l - 1].shape());
  }
}

}  // namespace triseg
