#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "triseg/data.hpp"
#include "triseg/tensor.hpp"

namespace triseg {

using Mask = Volume<std::uint8_t>;  // nonzero = foreground

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t tn = 0;
  std::uint64_t fn = 0;

  std::uint64_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(const Mask& pred, const Mask& gt);

/// 2TP / (FP + 2TP + FN); 1 when both masks are empty.
double dsc(const ConfusionCounts& c);
/// TP / (TP + FN); 1 when the denominator is empty.
double sensitivity(const ConfusionCounts& c);
/// TN / (TN + FP); 1 when the denominator is empty.
double specificity(const ConfusionCounts& c);

/// Foreground voxels with at least one background 6-neighbour. Voxels on the
/// volume faces count as boundary (outside is background).
Mask boundary(const Mask& mask);
std::vector<std::array<int, 3>> boundary_voxels(const Mask& mask);

/// Exact Euclidean distance from every voxel to the nearest nonzero voxel of
/// `set`, in spacing units. Voxels are +inf when the set is empty.
Volume<double> distance_transform(const Mask& set, const std::array<double, 3>& spacing = {1.0, 1.0, 1.0});

struct SurfaceDistanceSet {
  std::vector<double> d_g_to_p;
  std::vector<double> d_p_to_g;
};

/// Boundary-to-boundary nearest distances in both directions.
SurfaceDistanceSet surface_distances(const Mask& pred, const Mask& gt,
                                     const std::array<double, 3>& spacing = {1.0, 1.0, 1.0});

double hausdorff(const SurfaceDistanceSet& s);
/// max of the per-direction 95th percentiles (linear interpolation).
double hausdorff95(const SurfaceDistanceSet& s);

struct MetricConventions {
  double both_empty_dsc = 1.0;
  double both_empty_hd = 0.0;
  double one_empty_dsc = 0.0;
  double one_empty_hd = 373.13;
};

struct RegionMetrics {
  double dsc = 0.0;
  double hd95 = 0.0;
  double hausdorff = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
};

RegionMetrics evaluate_region(const Mask& pred, const Mask& gt, const MetricConventions& conventions = {},
                              const std::array<double, 3>& spacing = {1.0, 1.0, 1.0});

struct CaseMetrics {
  RegionMetrics wt;
  RegionMetrics tc;
  RegionMetrics et;
};

/// WT/TC/ET metrics for two canonical label volumes.
CaseMetrics evaluate_case(const LabelVolume& pred, const LabelVolume& gt, const MetricConventions& conventions = {},
                          const std::array<double, 3>& spacing = {1.0, 1.0, 1.0});

}  // namespace triseg
