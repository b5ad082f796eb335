#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "triseg/tensor.hpp"

namespace triseg {

/// Raw 348-byte NIfTI-1 header, kept so that outputs inherit the source
/// orientation and spacing fields untouched.
using NiftiHeaderBytes = std::array<std::uint8_t, 348>;

struct VolumeGeometry {
  Dims3 dims;
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::optional<NiftiHeaderBytes> header;
};

struct NiftiImage {
  VolumeGeometry geometry;
  std::vector<double> voxels;  // scaled by scl_slope/scl_inter when present
};

/// Reads .nii or .nii.gz (little-endian, single 3D volume).
NiftiImage read_nifti(const std::filesystem::path& path);

void write_nifti(const std::filesystem::path& path, const Volume<float>& volume, const VolumeGeometry& geometry);
void write_nifti(const std::filesystem::path& path, const Volume<std::uint8_t>& volume,
                 const VolumeGeometry& geometry);

}  // namespace triseg
