#include "triseg/losses.hpp"

#include <cmath>

#include "triseg/error.hpp"

namespace triseg {
namespace {

void check_pair(const Tensor& probs, const Tensor& target) {
  require(probs.rank() == 4, ErrorCode::ShapeError, "loss expects (N, C, H, W) probabilities");
  require(probs.shape() == target.shape(), ErrorCode::ShapeError,
          "probabilities " + shape_string(probs.shape()) + " vs target " + shape_string(target.shape()));
}

}  // namespace

double LossConfig::alpha_for(int cls) const {
  if (alpha.size() == 1) return alpha[0];
  return alpha.at(static_cast<std::size_t>(cls));
}

void LossConfig::validate() const {
  require(epsilon > 0.0, ErrorCode::ConfigError, "loss epsilon must be positive");
  require(gamma >= 0.0, ErrorCode::ConfigError, "focal gamma must be >= 0");
  require(!alpha.empty(), ErrorCode::ConfigError, "focal alpha must not be empty");
  for (double a : alpha) require(a > 0.0, ErrorCode::ConfigError, "focal alpha must be positive");
}

double dice_loss(const Tensor& probs, const Tensor& target, const LossConfig& cfg, Tensor* grad) {
  check_pair(probs, target);
  const int n = probs.n(), classes = probs.c();
  const std::size_t hw = probs.plane();
  std::vector<double> inter(static_cast<std::size_t>(classes), 0.0), denom(static_cast<std::size_t>(classes), 0.0);
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < classes; ++c) {
      const double* p = probs.channel(s, c);
      const double* t = target.channel(s, c);
      double i_sum = 0.0, d_sum = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        i_sum += p[i] * t[i];
        d_sum += p[i] + t[i];
      }
      inter[static_cast<std::size_t>(c)] += i_sum;
      denom[static_cast<std::size_t>(c)] += d_sum;
    }
  double mean_score = 0.0;
  for (int c = 0; c < classes; ++c) {
    const auto u = static_cast<std::size_t>(c);
    mean_score += (2.0 * inter[u] + cfg.epsilon) / (denom[u] + cfg.epsilon);
  }
  mean_score /= classes;

  if (grad) {
    for (int c = 0; c < classes; ++c) {
      const auto u = static_cast<std::size_t>(c);
      const double num = 2.0 * inter[u] + cfg.epsilon;
      const double den = denom[u] + cfg.epsilon;
      const double scale = -1.0 / (classes * den * den);
      for (int s = 0; s < n; ++s) {
        const double* t = target.channel(s, c);
        double* g = grad->channel(s, c);
        for (std::size_t i = 0; i < hw; ++i) g[i] += scale * (2.0 * t[i] * den - num);
      }
    }
  }
  return 1.0 - mean_score;
}

double focal_loss(const Tensor& probs, const Tensor& target, const LossConfig& cfg, Tensor* grad) {
  check_pair(probs, target);
  const int n = probs.n(), classes = probs.c();
  const std::size_t hw = probs.plane();
  const double voxels = static_cast<double>(n) * static_cast<double>(hw);
  const double gamma = cfg.gamma;
  double sum = 0.0;
  for (int s = 0; s < n; ++s)
    for (int c = 0; c < classes; ++c) {
      const double alpha = cfg.alpha_for(c);
      const double* p = probs.channel(s, c);
      const double* t = target.channel(s, c);
      double* g = grad ? grad->channel(s, c) : nullptr;
      for (std::size_t i = 0; i < hw; ++i) {
        if (t[i] == 0.0) continue;
        const double q = std::max(1.0 - p[i], 0.0);
        const double logp = std::log(p[i] + cfg.epsilon);
        const double mod = gamma == 0.0 ? 1.0 : std::pow(q, gamma);
        sum += alpha * t[i] * mod * logp;
        if (g) {
          // d/dp [ (1-p)^g log(p+eps) ] = -g (1-p)^(g-1) log(p+eps) + (1-p)^g / (p+eps)
          double dmod = 0.0;
          if (gamma != 0.0 && q > 0.0) dmod = -gamma * std::pow(q, gamma - 1.0);
          g[i] += -(alpha * t[i] / voxels) * (dmod * logp + mod / (p[i] + cfg.epsilon));
        }
      }
    }
  return -sum / voxels;
}

LossValue total_loss(const Tensor& probs, const Tensor& target, const LossConfig& cfg, Tensor* grad) {
  LossValue v;
  v.dice = dice_loss(probs, target, cfg, grad);
  v.focal = focal_loss(probs, target, cfg, grad);
  v.total = v.dice + v.focal;
  return v;
}

Tensor one_hot(const Tensor& labels, int n_classes) {
  require(labels.rank() == 4 && labels.c() == 1, ErrorCode::ShapeError, "labels must be (N, 1, H, W)");
  Tensor out({labels.n(), n_classes, labels.h(), labels.w()});
  const std::size_t hw = labels.plane();
  for (int s = 0; s < labels.n(); ++s) {
    const double* l = labels.channel(s, 0);
    for (std::size_t i = 0; i < hw; ++i) {
      const int cls = static_cast<int>(l[i]);
      require(cls >= 0 && cls < n_classes && l[i] == cls, ErrorCode::InvalidLabel,
              "label " + std::to_string(l[i]) + " outside [0, " + std::to_string(n_classes) + ")");
      out.channel(s, cls)[i] = 1.0;
    }
  }
  return out;
}

}  // namespace triseg
