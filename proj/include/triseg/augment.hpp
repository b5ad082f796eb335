#pragma once

#include <cstdint>
#include <vector>

#include "triseg/rng.hpp"
#include "triseg/tensor.hpp"

namespace triseg {

struct AugmentConfig {
  double p_hflip = 0.4;
  double p_elastic = 0.3;
  double p_rotate = 0.4;
  double p_shift_scale_rotate = 0.3;
  double p_gauss_noise = 0.2;
  double p_gauss_blur = 0.2;

  double rotate_limit_deg = 15.0;
  double ssr_rotate_limit_deg = 15.0;
  double shift_limit = 0.06;  // fraction of the slice extent
  double scale_limit = 0.10;
  double elastic_sigma = 4.0;          // smoothing of the displacement field, pixels
  double elastic_max_displacement = 0.05;  // fraction of the shorter slice edge
  double noise_std_max = 0.05;
  double blur_sigma_min = 0.5;
  double blur_sigma_max = 1.5;
  std::uint64_t seed = 0;

  static AugmentConfig disabled();
  void validate() const;
};

/// 2D class-id map, row-major (H, W).
struct LabelSlice {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> ids;

  std::uint8_t at(int y, int x) const { return ids[static_cast<std::size_t>(y) * w + x]; }
  bool operator==(const LabelSlice&) const = default;
};

/// Which transforms fired for one call.
struct AugmentRecord {
  bool hflip = false;
  bool elastic = false;
  bool rotate = false;
  bool shift_scale_rotate = false;
  bool noise = false;
  bool blur = false;
};

struct AugmentedPair {
  Tensor image;  // (C, H, W)
  LabelSlice label;
  AugmentRecord fired;
};

/// Applies hflip, elastic, rotate, shift-scale-rotate, noise and blur in that
/// order, each with its own probability. Image channels are resampled
/// bilinearly, labels by nearest neighbour; outside samples are 0.
AugmentedPair augment_pair(const Tensor& image, const LabelSlice& label, const AugmentConfig& cfg, Rng& rng);

// Individual transforms, exposed for tests.
void hflip(Tensor& image, LabelSlice& label);
/// Source coordinate (sy, sx) for every output pixel, row-major.
struct SampleGrid {
  int h = 0;
  int w = 0;
  std::vector<double> sy;
  std::vector<double> sx;
};
SampleGrid affine_grid(int h, int w, double angle_deg, double scale, double shift_y, double shift_x);
SampleGrid elastic_grid(int h, int w, double sigma, double max_displacement, Rng& rng);
void warp(Tensor& image, LabelSlice& label, const SampleGrid& grid);
void gaussian_blur(Tensor& image, double sigma);

}  // namespace triseg
