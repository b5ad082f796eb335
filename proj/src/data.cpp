#include "triseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "triseg/error.hpp"

namespace fs = std::filesystem;

namespace triseg {
namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(field);
      field.clear();
    } else if (ch != '\r') {
      field += ch;
    }
  }
  fields.push_back(field);
  return fields;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::optional<double> parse_number(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) return std::nullopt;
  std::size_t used = 0;
  try {
    const double v = std::stod(t, &used);
    if (used != t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

std::optional<fs::path> find_volume_file(const fs::path& dir, const std::string& stem) {
  for (const char* ext : {".nii.gz", ".nii"}) {
    fs::path p = dir / (stem + ext);
    if (fs::exists(p)) return p;
  }
  return std::nullopt;
}

Volume<float> to_float_volume(const NiftiImage& image, const fs::path& path) {
  Volume<float> vol(image.geometry.dims);
  for (std::size_t i = 0; i < image.voxels.size(); ++i) {
    const double v = image.voxels[i];
    if (!std::isfinite(v)) fail(ErrorCode::CorruptVolume, "non-finite voxel in " + path.string());
    vol[i] = static_cast<float>(v);
  }
  return vol;
}

}  // namespace

std::string_view modality_suffix(Modality m) {
  switch (m) {
    case Modality::T1: return "t1";
    case Modality::T1ce: return "t1ce";
    case Modality::T2: return "t2";
    case Modality::FLAIR: return "flair";
  }
  return "";
}

const Volume<float>& CaseBundle::volume(Modality m) const {
  auto it = volumes.find(m);
  if (it == volumes.end()) {
    fail(ErrorCode::MissingModality, case_id + " has no " + std::string(modality_suffix(m)) + " volume");
  }
  return it->second.voxels;
}

void validate_bundle(const CaseBundle& bundle) {
  for (Modality m : kInputModalities) {
    if (!bundle.volumes.contains(m)) {
      fail(ErrorCode::MissingModality, bundle.case_id + " is missing " + std::string(modality_suffix(m)));
    }
  }
  for (const auto& [m, vol] : bundle.volumes) {
    if (!(vol.shape() == bundle.geometry.dims)) {
      fail(ErrorCode::GeometryMismatch, bundle.case_id + " " + std::string(modality_suffix(m)) + " has shape " +
                                            vol.shape().str() + ", expected " + bundle.geometry.dims.str());
    }
  }
  if (bundle.labels && !(bundle.labels->shape() == bundle.geometry.dims)) {
    fail(ErrorCode::GeometryMismatch, bundle.case_id + " label shape " + bundle.labels->shape().str() +
                                          " differs from image shape " + bundle.geometry.dims.str());
  }
}

std::map<std::string, ClinicalRecord> read_clinical_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  std::map<std::string, ClinicalRecord> records;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    const std::string id = trim(fields[0]);
    if (id.empty()) continue;
    ClinicalRecord rec;
    if (fields.size() > 1) rec.age = parse_number(fields[1]);
    if (fields.size() > 2) rec.survival_days = parse_number(fields[2]);
    if (fields.size() > 3 && !trim(fields[3]).empty()) rec.resection_status = trim(fields[3]);
    records[id] = rec;
  }
  return records;
}

LabelVolume load_labels(const fs::path& path, VolumeGeometry* geometry) {
  const NiftiImage image = read_nifti(path);
  LabelVolume raw{LabelConvention::Raw, Volume<std::uint8_t>(image.geometry.dims)};
  for (std::size_t i = 0; i < image.voxels.size(); ++i) {
    const double v = image.voxels[i];
    if (!std::isfinite(v)) fail(ErrorCode::CorruptVolume, "non-finite label in " + path.string());
    if (v != std::round(v) || v < 0 || v > 255) {
      fail(ErrorCode::InvalidLabel, "label value " + std::to_string(v) + " in " + path.string());
    }
    raw.voxels[i] = static_cast<std::uint8_t>(v);
  }
  if (geometry) *geometry = image.geometry;
  return remap_labels(raw);
}

CaseBundle load_case(const fs::path& root, const std::string& case_id, const LoadOptions& options) {
  const fs::path dir = root / case_id;
  CaseBundle bundle;
  bundle.case_id = case_id;

  std::vector<Modality> wanted(kInputModalities.begin(), kInputModalities.end());
  if (options.load_t1) wanted.push_back(Modality::T1);
  bool first = true;
  for (Modality m : wanted) {
    const auto file = find_volume_file(dir, case_id + "_" + std::string(modality_suffix(m)));
    if (!file) {
      if (m == Modality::T1) continue;
      fail(ErrorCode::MissingModality, case_id + " has no " + std::string(modality_suffix(m)) + " file in " +
                                           dir.string());
    }
    NiftiImage image = read_nifti(*file);
    if (first) {
      bundle.geometry = image.geometry;
      first = false;
    } else if (!(image.geometry.dims == bundle.geometry.dims)) {
      fail(ErrorCode::GeometryMismatch, file->string() + " has shape " + image.geometry.dims.str() + ", expected " +
                                            bundle.geometry.dims.str());
    }
    bundle.volumes[m] = ModalityVolume{m, to_float_volume(image, *file)};
  }

  if (const auto seg = find_volume_file(dir, case_id + "_seg")) {
    VolumeGeometry g;
    bundle.labels = load_labels(*seg, &g);
    if (!(g.dims == bundle.geometry.dims)) {
      fail(ErrorCode::GeometryMismatch, seg->string() + " has shape " + g.dims.str() + ", expected " +
                                            bundle.geometry.dims.str());
    }
  }

  const fs::path csv = options.clinical_csv.value_or(root / "survival_info.csv");
  if (fs::exists(csv)) {
    const auto records = read_clinical_csv(csv);
    if (auto it = records.find(case_id); it != records.end()) bundle.clinical = it->second;
  }
  validate_bundle(bundle);
  return bundle;
}

std::vector<std::string> list_cases(const fs::path& root) {
  std::vector<std::string> ids;
  if (!fs::is_directory(root)) fail(ErrorCode::IoError, "not a directory: " + root.string());
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_directory()) continue;
    const std::string id = entry.path().filename().string();
    if (find_volume_file(entry.path(), id + "_flair")) ids.push_back(id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::optional<fs::path> find_label_file(const fs::path& dir, const std::string& case_id) {
  if (auto p = find_volume_file(dir, case_id)) return p;
  if (auto p = find_volume_file(dir, case_id + "_seg")) return p;
  if (auto p = find_volume_file(dir / case_id, case_id + "_seg")) return p;
  return std::nullopt;
}

std::vector<std::string> list_label_cases(const fs::path& dir) {
  std::vector<std::string> ids;
  if (!fs::is_directory(dir)) fail(ErrorCode::IoError, "not a directory: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (entry.is_directory()) {
      if (find_volume_file(entry.path(), name + "_seg")) ids.push_back(name);
      continue;
    }
    for (const std::string ext : {".nii.gz", ".nii"}) {
      if (name.size() > ext.size() && name.ends_with(ext)) {
        std::string stem = name.substr(0, name.size() - ext.size());
        if (stem.ends_with("_seg")) stem.resize(stem.size() - 4);
        // Modality files sitting next to labels are not label files.
        bool modality = false;
        for (Modality m : {Modality::T1, Modality::T1ce, Modality::T2, Modality::FLAIR}) {
          modality = modality || stem.ends_with("_" + std::string(modality_suffix(m)));
        }
        if (!modality) ids.push_back(stem);
        break;
      }
    }
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

LabelVolume remap_labels(const LabelVolume& raw) {
  LabelVolume out{LabelConvention::Canonical, raw.voxels};
  for (auto& v : out.voxels.storage()) {
    switch (v) {
      case 0: case 1: case 2: break;
      case 3:
        // Already canonical input is accepted unchanged (idempotence).
        if (raw.convention == LabelConvention::Raw) {
          fail(ErrorCode::InvalidLabel, "label id 3 is not a BraTS id");
        }
        break;
      case 4: v = 3; break;
      default: fail(ErrorCode::InvalidLabel, "unexpected label id " + std::to_string(v));
    }
  }
  return out;
}

LabelVolume to_raw_labels(const LabelVolume& canonical) {
  LabelVolume out{LabelConvention::Raw, canonical.voxels};
  for (auto& v : out.voxels.storage()) {
    if (v > 3) fail(ErrorCode::InvalidLabel, "unexpected canonical label id " + std::to_string(v));
    if (v == 3) v = 4;
  }
  return out;
}

RegionMasks derive_region_masks(const LabelVolume& canonical) {
  const Dims3 d = canonical.shape();
  RegionMasks masks{Volume<std::uint8_t>(d), Volume<std::uint8_t>(d), Volume<std::uint8_t>(d)};
  const auto& src = canonical.voxels.storage();
  for (std::size_t i = 0; i < src.size(); ++i) {
    const std::uint8_t v = src[i];
    if (v > 3) fail(ErrorCode::InvalidLabel, "unexpected canonical label id " + std::to_string(v));
    masks.wt[i] = v != 0;
    masks.tc[i] = v == 1 || v == 3;
    masks.et[i] = v == 3;
  }
  return masks;
}

fs::path save_segmentation(const std::string& case_id, const LabelVolume& canonical, const fs::path& out_dir,
                           const VolumeGeometry& geometry) {
  const LabelVolume raw = to_raw_labels(canonical);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) fail(ErrorCode::IoError, "cannot create output directory " + out_dir.string());
  const fs::path path = out_dir / (case_id + ".nii.gz");
  VolumeGeometry g = geometry;
  g.dims = canonical.shape();
  write_nifti(path, raw.voxels, g);
  return path;
}

void save_volume(const fs::path& path, const Volume<float>& volume, const VolumeGeometry& geometry) {
  VolumeGeometry g = geometry;
  g.dims = volume.dims();
  write_nifti(path, volume, g);
}

}  // namespace triseg
