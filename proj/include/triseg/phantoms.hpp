#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "triseg/data.hpp"

namespace triseg {

/// Mean intensity of each tissue class for one modality.
struct TissueIntensity {
  double background = 0.0;
  double brain = 0.0;
  double edema = 0.0;
  double core = 0.0;       // necrotic / non-enhancing, label 1
  double enhancing = 0.0;  // label 3
};

/// Nested ellipsoids: et inside tc inside wt inside a "brain" ellipsoid.
/// Each region's semi-axes are its scalar radius times axis_scale.
struct PhantomSpec {
  std::string case_id = "phantom";
  Dims3 shape{64, 64, 64};
  std::optional<std::array<double, 3>> center;  // voxel coordinates; volume centre when unset
  double radius_et = 4.0;
  double radius_tc = 8.0;
  double radius_wt = 12.0;
  double radius_brain = 28.0;
  std::array<double, 3> axis_scale{1.0, 0.8, 0.65};
  std::map<Modality, TissueIntensity> intensity = default_intensities();
  double noise_std = 0.05;
  std::uint64_t seed = 0;
  std::optional<double> age;
  std::optional<double> survival_days;

  static std::map<Modality, TissueIntensity> default_intensities();
  std::array<double, 3> resolved_center() const;
  void validate() const;
};

/// Labels are exact nested ellipsoids (3 inside 1 inside 2); intensities are
/// region means plus Gaussian noise inside the brain, 0 outside it.
CaseBundle make_phantom(const PhantomSpec& spec);

/// `count` phantoms with varied centres, radii, ages and survival days.
std::vector<PhantomSpec> phantom_series(int count, std::uint64_t seed, Dims3 shape = {64, 64, 64});

/// Writes `<root>/<id>/<id>_<mod>.nii.gz`, `<id>_seg.nii.gz` (BraTS ids) and
/// `<root>/survival_info.csv`.
void write_phantom_dataset(const std::filesystem::path& root, const std::vector<PhantomSpec>& specs);

}  // namespace triseg
