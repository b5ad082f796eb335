#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "triseg/data.hpp"
#include "triseg/network.hpp"
#include "triseg/preprocess.hpp"
#include "triseg/tensor.hpp"

namespace triseg {

enum class Plane { Sagittal, Coronal, Axial };

inline constexpr std::array<Plane, 3> kPlanes{Plane::Sagittal, Plane::Coronal, Plane::Axial};

std::string_view plane_name(Plane plane);
Plane parse_plane(std::string_view name);

/// Slicing axis of a plane: sagittal x, coronal y, axial z.
int plane_axis(Plane plane);
/// Slice extent (H, W) for a plane: sagittal (Y, Z), coronal (X, Z), axial (X, Y).
std::pair<int, int> slice_dims(const Dims3& dims, Plane plane);

/// Per-voxel class probabilities, stored channel-major: index c * X*Y*Z + voxel.
struct ProbabilityVolume {
  Dims3 dims;
  int channels = 0;
  std::vector<double> probs;

  ProbabilityVolume() = default;
  ProbabilityVolume(Dims3 d, int c) : dims(d), channels(c), probs(d.count() * static_cast<std::size_t>(c), 0.0) {}

  std::size_t voxels() const { return dims.count(); }
  double& at(int c, std::size_t voxel) { return probs[static_cast<std::size_t>(c) * voxels() + voxel]; }
  double at(int c, std::size_t voxel) const { return probs[static_cast<std::size_t>(c) * voxels() + voxel]; }
  bool operator==(const ProbabilityVolume&) const = default;
};

/// Network input slices [start, start + count) of a plane as (count, 3, H, W),
/// channels T1ce, T2, FLAIR.
Tensor slice_range(const CaseBundle& c, Plane plane, int start, int count);
/// All slices of a plane. When expected_shape is given the case must match it.
Tensor slice_plane(const CaseBundle& c, Plane plane, const std::optional<Dims3>& expected_shape = std::nullopt);
/// Label slices as class ids in a (count, 1, H, W) tensor.
Tensor slice_labels(const LabelVolume& labels, Plane plane, int start, int count);

/// Slices a probability volume into (S, C, H, W).
Tensor slice_probabilities(const ProbabilityVolume& v, Plane plane);
/// Inverse of slice_probabilities.
ProbabilityVolume restack(const Tensor& slices, Plane plane, const Dims3& dims);

/// Runs every slice of the plane through the network, `batch` slices at a time.
ProbabilityVolume infer_plane(const CaseBundle& c, Plane plane, const NetworkParams& params, int batch = 8);

enum class FusionMode { MeanProbability, MeanLogit };

/// Voxelwise mean of the given probability volumes, independent of their
/// order and exact when all inputs agree. MeanLogit averages log
/// probabilities and re-applies softmax.
ProbabilityVolume fuse(const std::vector<ProbabilityVolume>& volumes, FusionMode mode = FusionMode::MeanProbability);

/// Argmax (ties toward the lower id) in the cropped frame.
LabelVolume argmax_labels(const ProbabilityVolume& fused);
/// Argmax, then pad back to the source geometry with background.
LabelVolume finalize(const ProbabilityVolume& fused, const CropManifest& crop);

}  // namespace triseg
