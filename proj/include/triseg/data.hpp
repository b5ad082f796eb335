#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "triseg/nifti.hpp"
#include "triseg/tensor.hpp"

namespace triseg {

enum class Modality { T1, T1ce, T2, FLAIR };

std::string_view modality_suffix(Modality m);  // "t1", "t1ce", "t2", "flair"

/// Channel order fed to the network.
inline constexpr std::array<Modality, 3> kInputModalities{Modality::T1ce, Modality::T2, Modality::FLAIR};

struct ModalityVolume {
  Modality modality = Modality::T1;
  Volume<float> voxels;

  const Dims3& shape() const { return voxels.dims(); }
};

enum class LabelConvention { Raw, Canonical };  // {0,1,2,4} vs {0,1,2,3}

struct LabelVolume {
  LabelConvention convention = LabelConvention::Canonical;
  Volume<std::uint8_t> voxels;

  const Dims3& shape() const { return voxels.dims(); }
};

struct RegionMasks {
  Volume<std::uint8_t> wt;
  Volume<std::uint8_t> tc;
  Volume<std::uint8_t> et;
};

struct ClinicalRecord {
  std::optional<double> age;
  std::optional<double> survival_days;
  std::optional<std::string> resection_status;
};

struct CaseBundle {
  std::string case_id;
  std::map<Modality, ModalityVolume> volumes;
  std::optional<LabelVolume> labels;  // canonical after load_case
  VolumeGeometry geometry;
  ClinicalRecord clinical;

  const Volume<float>& volume(Modality m) const;
  Dims3 shape() const { return geometry.dims; }
};

/// Checks the bundle invariants: required modalities present, one shared shape.
void validate_bundle(const CaseBundle& bundle);

/// Clinical CSV: header row, then (case_id, age, survival_days, resection_status).
/// Non-numeric survival entries (e.g. "ALIVE") are kept with survival_days absent.
std::map<std::string, ClinicalRecord> read_clinical_csv(const std::filesystem::path& path);

struct LoadOptions {
  /// Defaults to <root>/survival_info.csv when unset; a missing file is not an error.
  std::optional<std::filesystem::path> clinical_csv;
  bool load_t1 = false;
};

/// Loads `<root>/<case_id>/<case_id>_<suffix>.nii[.gz]`. Labels are remapped to
/// the canonical {0,1,2,3} convention.
CaseBundle load_case(const std::filesystem::path& root, const std::string& case_id, const LoadOptions& options = {});

/// Case ids are the sub-directory names of root that contain a FLAIR file.
std::vector<std::string> list_cases(const std::filesystem::path& root);

/// Looks for `<case>.nii.gz`, `<case>_seg.nii.gz` or `<case>/<case>_seg.nii.gz` under dir.
std::optional<std::filesystem::path> find_label_file(const std::filesystem::path& dir, const std::string& case_id);
std::vector<std::string> list_label_cases(const std::filesystem::path& dir);

/// Reads a label file in BraTS convention and returns canonical labels.
LabelVolume load_labels(const std::filesystem::path& path, VolumeGeometry* geometry = nullptr);

LabelVolume remap_labels(const LabelVolume& raw);
/// Canonical → BraTS ids (3 → 4).
LabelVolume to_raw_labels(const LabelVolume& canonical);
RegionMasks derive_region_masks(const LabelVolume& canonical);

/// Writes `<out_dir>/<case_id>.nii.gz` in BraTS convention; returns the path.
std::filesystem::path save_segmentation(const std::string& case_id, const LabelVolume& canonical,
                                        const std::filesystem::path& out_dir, const VolumeGeometry& geometry);

void save_volume(const std::filesystem::path& path, const Volume<float>& volume, const VolumeGeometry& geometry);

}  // namespace triseg
