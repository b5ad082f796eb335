#pragma once

#include <array>
#include <cstdint>

#include "triseg/data.hpp"

namespace triseg {

enum class BiasHook { None, ExternalPrecorrected };

struct PreprocessConfig {
  double clip_lo_pct = 0.01;
  double clip_hi_pct = 0.99;
  Dims3 crop_shape{190, 190, 140};
  BiasHook bias_hook = BiasHook::ExternalPrecorrected;
  double std_floor = 1e-6;
  int zscore_axis = 2;  // axial

  void validate() const;
};

/// Offsets of a center crop, recorded so predictions can be padded back.
struct CropManifest {
  Dims3 source_shape;
  Dims3 crop_shape;
  Dims3 offset;
};

CropManifest plan_crop(const Dims3& source, const Dims3& crop);

/// Linear-interpolation percentile (q in [0,1]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

Volume<float> clip_percentiles(const Volume<float>& vol, const PreprocessConfig& cfg);
Volume<float> zscore_slices(const Volume<float>& vol, int axis, const PreprocessConfig& cfg);
Volume<float> minmax_scale(const Volume<float>& vol);

template <class T>
Volume<T> crop_volume(const Volume<T>& vol, const CropManifest& crop);
template <class T>
Volume<T> uncrop_volume(const Volume<T>& vol, const CropManifest& crop, T background = T{});

Volume<float> crop_volume(const Volume<float>& vol, const PreprocessConfig& cfg);
LabelVolume crop_labels(const LabelVolume& labels, const PreprocessConfig& cfg);

struct PreprocessedCase {
  CaseBundle bundle;  // cropped volumes in [0,1]
  CropManifest crop;
  VolumeGeometry source_geometry;
};

/// clip → per-slice z-score → min-max → crop, for T1ce, T2 and FLAIR.
PreprocessedCase preprocess_case(const CaseBundle& bundle, const PreprocessConfig& cfg);

}  // namespace triseg
