#include "triseg/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "triseg/error.hpp"

namespace triseg {
namespace {

// Visits the voxel indices of slice `k` along `axis`.
template <class Fn>
void for_each_in_slice(const Dims3& d, int axis, int k, Fn&& fn) {
  const auto idx = [&](int x, int y, int z) {
    return static_cast<std::size_t>(x) + static_cast<std::size_t>(d.x) * (static_cast<std::size_t>(y) +
                                                                           static_cast<std::size_t>(d.y) * z);
  };
  if (axis == 0) {
    for (int z = 0; z < d.z; ++z)
      for (int y = 0; y < d.y; ++y) fn(idx(k, y, z));
  } else if (axis == 1) {
    for (int z = 0; z < d.z; ++z)
      for (int x = 0; x < d.x; ++x) fn(idx(x, k, z));
  } else {
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) fn(idx(x, y, k));
  }
}

}  // namespace

void PreprocessConfig::validate() const {
  require(clip_lo_pct >= 0.0 && clip_lo_pct < clip_hi_pct && clip_hi_pct <= 1.0, ErrorCode::ConfigError,
          "clip percentiles must satisfy 0 <= lo < hi <= 1");
  require(crop_shape.x >= 1 && crop_shape.y >= 1 && crop_shape.z >= 1, ErrorCode::ConfigError,
          "crop shape must be positive");
  require(std_floor > 0.0, ErrorCode::ConfigError, "std_floor must be positive");
  require(zscore_axis >= 0 && zscore_axis <= 2, ErrorCode::ConfigError, "zscore_axis must be 0, 1 or 2");
}

CropManifest plan_crop(const Dims3& source, const Dims3& crop) {
  CropManifest m{source, crop, {}};
  for (int a = 0; a < 3; ++a) {
    if (crop[a] > source[a]) {
      fail(ErrorCode::CropTooLarge, "crop " + crop.str() + " exceeds source " + source.str());
    }
    m.offset[a] = (source[a] - crop[a]) / 2;
  }
  return m;
}

double percentile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorCode::InvalidInput, "percentile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Volume<float> clip_percentiles(const Volume<float>& vol, const PreprocessConfig& cfg) {
  std::vector<double> brain;
  for (float v : vol.storage()) {
    if (v != 0.0f) brain.push_back(v);
  }
  if (brain.empty()) fail(ErrorCode::EmptyBrain, "volume has no nonzero voxels");
  const double lo = percentile(brain, cfg.clip_lo_pct);
  const double hi = percentile(std::move(brain), cfg.clip_hi_pct);
  Volume<float> out = vol;
  for (float& v : out.storage()) {
    if (v != 0.0f) v = static_cast<float>(std::clamp<double>(v, lo, hi));
  }
  return out;
}

Volume<float> zscore_slices(const Volume<float>& vol, int axis, const PreprocessConfig& cfg) {
  Volume<float> out(vol.dims());
  const Dims3& d = vol.dims();
  for (int k = 0; k < d[axis]; ++k) {
    double sum = 0.0;
    std::size_t n = 0;
    for_each_in_slice(d, axis, k, [&](std::size_t i) {
      sum += vol[i];
      ++n;
    });
    const double mean = sum / static_cast<double>(n);
    double sq = 0.0;
    for_each_in_slice(d, axis, k, [&](std::size_t i) {
      const double c = vol[i] - mean;
      sq += c * c;
    });
    const double stddev = std::sqrt(sq / static_cast<double>(n));
    if (stddev < cfg.std_floor) {
      for_each_in_slice(d, axis, k, [&](std::size_t i) { out[i] = 0.0f; });
    } else {
      for_each_in_slice(d, axis, k, [&](std::size_t i) { out[i] = static_cast<float>((vol[i] - mean) / stddev); });
    }
  }
  return out;
}

Volume<float> minmax_scale(const Volume<float>& vol) {
  Volume<float> out(vol.dims());
  if (vol.size() == 0) return out;
  const auto [lo_it, hi_it] = std::minmax_element(vol.storage().begin(), vol.storage().end());
  const double lo = *lo_it;
  const double range = static_cast<double>(*hi_it) - lo;
  if (range <= 0.0) return out;
  for (std::size_t i = 0; i < vol.size(); ++i) {
    out[i] = static_cast<float>(std::clamp((vol[i] - lo) / range, 0.0, 1.0));
  }
  return out;
}

template <class T>
Volume<T> crop_volume(const Volume<T>& vol, const CropManifest& crop) {
  if (!(vol.dims() == crop.source_shape)) {
    fail(ErrorCode::GeometryMismatch, "volume " + vol.dims().str() + " does not match crop source " +
                                          crop.source_shape.str());
  }
  Volume<T> out(crop.crop_shape);
  const Dims3& c = crop.crop_shape;
  for (int z = 0; z < c.z; ++z)
    for (int y = 0; y < c.y; ++y)
      for (int x = 0; x < c.x; ++x) out.at(x, y, z) = vol.at(x + crop.offset.x, y + crop.offset.y, z + crop.offset.z);
  return out;
}

template <class T>
Volume<T> uncrop_volume(const Volume<T>& vol, const CropManifest& crop, T background) {
  if (!(vol.dims() == crop.crop_shape)) {
    fail(ErrorCode::GeometryMismatch, "volume " + vol.dims().str() + " does not match crop shape " +
                                          crop.crop_shape.str());
  }
  Volume<T> out(crop.source_shape, background);
  const Dims3& c = crop.crop_shape;
  for (int z = 0; z < c.z; ++z)
    for (int y = 0; y < c.y; ++y)
      for (int x = 0; x < c.x; ++x) out.at(x + crop.offset.x, y + crop.offset.y, z + crop.offset.z) = vol.at(x, y, z);
  return out;
}

template Volume<float> crop_volume(const Volume<float>&, const CropManifest&);
template Volume<std::uint8_t> crop_volume(const Volume<std::uint8_t>&, const CropManifest&);
template Volume<float> uncrop_volume(const Volume<float>&, const CropManifest&, float);
template Volume<std::uint8_t> uncrop_volume(const Volume<std::uint8_t>&, const CropManifest&, std::uint8_t);

Volume<float> crop_volume(const Volume<float>& vol, const PreprocessConfig& cfg) {
  return crop_volume(vol, plan_crop(vol.dims(), cfg.crop_shape));
}

LabelVolume crop_labels(const LabelVolume& labels, const PreprocessConfig& cfg) {
  return LabelVolume{labels.convention, crop_volume(labels.voxels, plan_crop(labels.shape(), cfg.crop_shape))};
}

PreprocessedCase preprocess_case(const CaseBundle& bundle, const PreprocessConfig& cfg) {
  cfg.validate();
  validate_bundle(bundle);
  // Bias correction is not performed here: inputs are assumed already corrected upstream.
  const CropManifest crop = plan_crop(bundle.geometry.dims, cfg.crop_shape);

  PreprocessedCase result;
  result.crop = crop;
  result.source_geometry = bundle.geometry;
  CaseBundle& out = result.bundle;
  out.case_id = bundle.case_id;
  out.clinical = bundle.clinical;
  out.geometry = bundle.geometry;
  out.geometry.dims = crop.crop_shape;
  for (Modality m : kInputModalities) {
    const Volume<float>& raw = bundle.volume(m);
    Volume<float> v = clip_percentiles(raw, cfg);
    v = zscore_slices(v, cfg.zscore_axis, cfg);
    v = minmax_scale(v);
    out.volumes[m] = ModalityVolume{m, crop_volume(v, crop)};
  }
  if (bundle.labels) {
    out.labels = LabelVolume{bundle.labels->convention, crop_volume(bundle.labels->voxels, crop)};
  }
  return result;
}

}  // namespace triseg
