#include "triseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "triseg/error.hpp"

namespace triseg {

namespace {

void check_probability(double p, const char* name) {
  require(p >= 0.0 && p <= 1.0, ErrorCode::ConfigError, std::string(name) + " must lie in [0, 1]");
}

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable blur of one (h, w) plane with clamp-to-edge borders.
void blur_plane(double* plane, int h, int w, const std::vector<double>& k) {
  const int radius = static_cast<int>(k.size() / 2);
  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int xx = std::clamp(x + i, 0, w - 1);
        acc += k[static_cast<std::size_t>(i + radius)] * plane[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        const int yy = std::clamp(y + i, 0, h - 1);
        acc += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      plane[static_cast<std::size_t>(y) * w + x] = acc;
    }
  }
}

double sample_bilinear(const double* plane, int h, int w, double sy, double sx) {
  const double fy0 = std::floor(sy), fx0 = std::floor(sx);
  const int y0 = static_cast<int>(fy0), x0 = static_cast<int>(fx0);
  const double ty = sy - fy0, tx = sx - fx0;
  double acc = 0.0;
  for (int dy = 0; dy < 2; ++dy) {
    const int yy = y0 + dy;
    const double wy = dy ? ty : 1.0 - ty;
    if (yy < 0 || yy >= h || wy == 0.0) continue;
    for (int dx = 0; dx < 2; ++dx) {
      const int xx = x0 + dx;
      const double wx = dx ? tx : 1.0 - tx;
      if (xx < 0 || xx >= w || wx == 0.0) continue;
      acc += wy * wx * plane[static_cast<std::size_t>(yy) * w + xx];
    }
  }
  return acc;
}

}  // namespace

AugmentConfig AugmentConfig::disabled() {
  AugmentConfig cfg;
  cfg.p_hflip = cfg.p_elastic = cfg.p_rotate = cfg.p_shift_scale_rotate = 0.0;
  cfg.p_gauss_noise = cfg.p_gauss_blur = 0.0;
  return cfg;
}

void AugmentConfig::validate() const {
  check_probability(p_hflip, "p_hflip");
  check_probability(p_elastic, "p_elastic");
  check_probability(p_rotate, "p_rotate");
  check_probability(p_shift_scale_rotate, "p_shift_scale_rotate");
  check_probability(p_gauss_noise, "p_gauss_noise");
  check_probability(p_gauss_blur, "p_gauss_blur");
  require(rotate_limit_deg >= 0 && ssr_rotate_limit_deg >= 0, ErrorCode::ConfigError, "rotation limits must be >= 0");
  require(shift_limit >= 0 && scale_limit >= 0 && scale_limit < 1, ErrorCode::ConfigError,
          "shift/scale limits out of range");
  require(elastic_sigma > 0 && elastic_max_displacement >= 0, ErrorCode::ConfigError, "bad elastic parameters");
  require(noise_std_max >= 0, ErrorCode::ConfigError, "noise_std_max must be >= 0");
  require(blur_sigma_min > 0 && blur_sigma_max >= blur_sigma_min, ErrorCode::ConfigError, "bad blur sigma range");
}

void hflip(Tensor& image, LabelSlice& label) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  for (int ch = 0; ch < c; ++ch) {
    for (int y = 0; y < h; ++y) {
      double* row = image.data() + (static_cast<std::size_t>(ch) * h + y) * w;
      std::reverse(row, row + w);
    }
  }
  for (int y = 0; y < label.h; ++y) {
    auto row = label.ids.begin() + static_cast<std::ptrdiff_t>(y) * label.w;
    std::reverse(row, row + label.w);
  }
}

SampleGrid affine_grid(int h, int w, double angle_deg, double scale, double shift_y, double shift_x) {
  SampleGrid g{h, w, std::vector<double>(static_cast<std::size_t>(h) * w), std::vector<double>(static_cast<std::size_t>(h) * w)};
  const double cy = 0.5 * (h - 1), cx = 0.5 * (w - 1);
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(a), sn = std::sin(a);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      // Inverse map: undo the shift, then the rotation, then the scale.
      const double qy = y - cy - shift_y, qx = x - cx - shift_x;
      const double ry = cs * qy - sn * qx;
      const double rx = sn * qy + cs * qx;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      g.sy[i] = ry / scale + cy;
      g.sx[i] = rx / scale + cx;
    }
  }
  return g;
}

SampleGrid elastic_grid(int h, int w, double sigma, double max_displacement, Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(h) * w;
  std::vector<double> dy(n), dx(n);
  for (std::size_t i = 0; i < n; ++i) dy[i] = uniform(rng, -1.0, 1.0);
  for (std::size_t i = 0; i < n; ++i) dx[i] = uniform(rng, -1.0, 1.0);
  const auto k = gaussian_kernel(sigma);
  blur_plane(dy.data(), h, w, k);
  blur_plane(dx.data(), h, w, k);
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) peak = std::max(peak, std::hypot(dy[i], dx[i]));
  const double limit = max_displacement * std::min(h, w);
  const double s = peak > 0.0 ? limit / peak : 0.0;
  SampleGrid g{h, w, std::vector<double>(n), std::vector<double>(n)};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      g.sy[i] = y + s * dy[i];
      g.sx[i] = x + s * dx[i];
    }
  }
  return g;
}

void warp(Tensor& image, LabelSlice& label, const SampleGrid& grid) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  require(grid.h == h && grid.w == w, ErrorCode::GeometryMismatch, "sample grid does not match the slice");
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  Tensor out({c, h, w});
  for (int ch = 0; ch < c; ++ch) {
    const double* src = image.data() + ch * hw;
    double* dst = out.data() + ch * hw;
    for (std::size_t i = 0; i < hw; ++i) dst[i] = sample_bilinear(src, h, w, grid.sy[i], grid.sx[i]);
  }
  image = std::move(out);
  std::vector<std::uint8_t> ids(hw, 0);
  for (std::size_t i = 0; i < hw; ++i) {
    const long yy = std::lround(grid.sy[i]), xx = std::lround(grid.sx[i]);
    if (yy >= 0 && yy < h && xx >= 0 && xx < w) ids[i] = label.ids[static_cast<std::size_t>(yy) * w + xx];
  }
  label.ids = std::move(ids);
}

void gaussian_blur(Tensor& image, double sigma) {
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const auto k = gaussian_kernel(sigma);
  for (int ch = 0; ch < c; ++ch) blur_plane(image.data() + static_cast<std::size_t>(ch) * h * w, h, w, k);
}

AugmentedPair augment_pair(const Tensor& image, const LabelSlice& label, const AugmentConfig& cfg, Rng& rng) {
  require(image.rank() == 3, ErrorCode::ShapeError, "augment image must be (C, H, W)");
  require(image.dim(1) == label.h && image.dim(2) == label.w &&
              label.ids.size() == static_cast<std::size_t>(label.h) * label.w,
          ErrorCode::GeometryMismatch, "image and label slices differ in shape");
  const int h = label.h, w = label.w;
  AugmentedPair out{image, label, {}};

  if ((out.fired.hflip = bernoulli(rng, cfg.p_hflip))) hflip(out.image, out.label);
  if ((out.fired.elastic = bernoulli(rng, cfg.p_elastic))) {
    warp(out.image, out.label, elastic_grid(h, w, cfg.elastic_sigma, cfg.elastic_max_displacement, rng));
  }
  if ((out.fired.rotate = bernoulli(rng, cfg.p_rotate))) {
    const double angle = uniform(rng, -cfg.rotate_limit_deg, cfg.rotate_limit_deg);
    warp(out.image, out.label, affine_grid(h, w, angle, 1.0, 0.0, 0.0));
  }
  if ((out.fired.shift_scale_rotate = bernoulli(rng, cfg.p_shift_scale_rotate))) {
    const double ty = uniform(rng, -cfg.shift_limit, cfg.shift_limit) * h;
    const double tx = uniform(rng, -cfg.shift_limit, cfg.shift_limit) * w;
    const double scale = 1.0 + uniform(rng, -cfg.scale_limit, cfg.scale_limit);
    const double angle = uniform(rng, -cfg.ssr_rotate_limit_deg, cfg.ssr_rotate_limit_deg);
    warp(out.image, out.label, affine_grid(h, w, angle, scale, ty, tx));
  }
  if ((out.fired.noise = bernoulli(rng, cfg.p_gauss_noise))) {
    const double sd = uniform(rng, 0.0, cfg.noise_std_max);
    if (sd > 0.0) {
      std::normal_distribution<double> dist(0.0, sd);
      for (double& v : out.image.values()) v += dist(rng);
    }
  }
  if ((out.fired.blur = bernoulli(rng, cfg.p_gauss_blur))) {
    gaussian_blur(out.image, uniform(rng, cfg.blur_sigma_min, cfg.blur_sigma_max));
  }
  return out;
}

}  // namespace triseg
