#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "expect.hpp"
#include "triseg/data.hpp"
#include "triseg/error.hpp"
#include "triseg/rng.hpp"

using namespace triseg;
using triseg::testing::error_code_of;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("triseg_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_case(const fs::path& root, const std::string& id, Dims3 d, bool flair = true, bool seg = true) {
  const fs::path dir = root / id;
  fs::create_directories(dir);
  VolumeGeometry g{d, {1.0f, 1.0f, 1.0f}, std::nullopt};
  for (Modality m : {Modality::T1, Modality::T1ce, Modality::T2, Modality::FLAIR}) {
    if (m == Modality::FLAIR && !flair) continue;
    Volume<float> v(d, 0.0f);
    v[0] = 1.0f + static_cast<float>(m);
    write_nifti(dir / (id + "_" + std::string(modality_suffix(m)) + ".nii.gz"), v, g);
  }
  if (seg) {
    Volume<std::uint8_t> l(d, 0);
    l[0] = 4;
    l[1] = 1;
    l[2] = 2;
    write_nifti(dir / (id + "_seg.nii.gz"), l, g);
  }
}

LabelVolume raw_volume(std::vector<std::uint8_t> ids) {
  LabelVolume l{LabelConvention::Raw, Volume<std::uint8_t>({static_cast<int>(ids.size()), 1, 1})};
  l.voxels.storage() = std::move(ids);
  return l;
}

}  // namespace

TEST_CASE("load_case: BraTS-shaped case with labels and clinical row") {
  const fs::path root = scratch("full");
  write_case(root, "BraTS_001", {240, 240, 155});
  {
    std::ofstream csv(root / "survival_info.csv");
    csv << "Brats20ID,Age,Survival_days,Extent_of_Resection\nBraTS_001,61.5,289,GTR\n";
  }
  const CaseBundle b = load_case(root, "BraTS_001");
  CHECK(b.shape() == Dims3{240, 240, 155});
  CHECK(b.labels.has_value());
  CHECK(b.labels->convention == LabelConvention::Canonical);
  CHECK(b.labels->voxels[0] == 3);
  CHECK(b.volume(Modality::FLAIR)[0] == 4.0f);
  CHECK(b.clinical.age == 61.5);
  CHECK(b.clinical.survival_days == 289.0);
  CHECK(b.clinical.resection_status == "GTR");
  CHECK(!b.volumes.contains(Modality::T1));
  fs::remove_all(root);
}

TEST_CASE("load_case: error paths and absent clinical fields") {
  const fs::path root = scratch("errors");
  write_case(root, "no_flair", {4, 4, 4}, false);
  CHECK(error_code_of([&] { load_case(root, "no_flair"); }) == ErrorCode::MissingModality);

  write_case(root, "mismatch", {4, 4, 4});
  write_nifti(root / "mismatch" / "mismatch_t2.nii.gz", Volume<float>({4, 4, 5}), {{4, 4, 5}, {1, 1, 1}, {}});
  CHECK(error_code_of([&] { load_case(root, "mismatch"); }) == ErrorCode::GeometryMismatch);

  write_case(root, "nan", {4, 4, 4});
  Volume<float> bad({4, 4, 4});
  bad[5] = std::numeric_limits<float>::quiet_NaN();
  write_nifti(root / "nan" / "nan_t1ce.nii.gz", bad, {{4, 4, 4}, {1, 1, 1}, {}});
  CHECK(error_code_of([&] { load_case(root, "nan"); }) == ErrorCode::CorruptVolume);

  write_case(root, "plain", {4, 4, 4}, true, false);
  const CaseBundle b = load_case(root, "plain");
  CHECK(!b.labels.has_value());
  CHECK(!b.clinical.age.has_value());
  CHECK(!b.clinical.survival_days.has_value());
  fs::remove_all(root);
}

TEST_CASE("read_clinical_csv: quoted fields and non-numeric survival") {
  const fs::path root = scratch("csv");
  {
    std::ofstream csv(root / "s.csv");
    csv << "id,age,days,res\n\"A\",50,ALIVE,\"STR\"\nB,,100,\n";
  }
  const auto r = read_clinical_csv(root / "s.csv");
  CHECK(r.at("A").age == 50.0);
  CHECK(!r.at("A").survival_days.has_value());
  CHECK(r.at("A").resection_status == "STR");
  CHECK(!r.at("B").age.has_value());
  CHECK(r.at("B").survival_days == 100.0);
  fs::remove_all(root);
}

TEST_CASE("remap_labels: BraTS ids to canonical ids") {
  const LabelVolume raw = raw_volume({0, 1, 2, 4, 4, 0, 2});
  const LabelVolume c = remap_labels(raw);
  CHECK(c.voxels.storage() == std::vector<std::uint8_t>{0, 1, 2, 3, 3, 0, 2});
  CHECK(remap_labels(raw_volume({0, 0, 0})).voxels.storage() == std::vector<std::uint8_t>{0, 0, 0});
  CHECK(error_code_of([&] { remap_labels(raw_volume({0, 5})); }) == ErrorCode::InvalidLabel);
  CHECK(error_code_of([&] { remap_labels(raw_volume({3})); }) == ErrorCode::InvalidLabel);
  // Idempotent on canonical volumes, inverse of to_raw_labels.
  CHECK(remap_labels(c).voxels == c.voxels);
  CHECK(to_raw_labels(c).voxels == raw.voxels);
}

TEST_CASE("derive_region_masks: label algebra and nesting") {
  LabelVolume l{LabelConvention::Canonical, Volume<std::uint8_t>({4, 1, 1})};
  l.voxels.storage() = {0, 1, 2, 3};
  auto count = [](const Volume<std::uint8_t>& m) {
    std::size_t n = 0;
    for (auto v : m.storage()) n += v;
    return n;
  };
  const RegionMasks m = derive_region_masks(l);
  CHECK(count(m.wt) == 3);
  CHECK(count(m.tc) == 2);
  CHECK(count(m.et) == 1);
  LabelVolume edema{LabelConvention::Canonical, Volume<std::uint8_t>({3, 3, 3}, 2)};
  const RegionMasks e = derive_region_masks(edema);
  CHECK(count(e.wt) == 27);
  CHECK(count(e.tc) == 0);
  CHECK(count(e.et) == 0);
  Rng rng = fork_rng(3, 3);
  LabelVolume r{LabelConvention::Canonical, Volume<std::uint8_t>({9, 8, 7})};
  for (auto& v : r.voxels.storage()) v = static_cast<std::uint8_t>(uniform_int(rng, 0, 3));
  const RegionMasks rm = derive_region_masks(r);
  for (std::size_t i = 0; i < rm.wt.size(); ++i) {
    CHECK(rm.et[i] <= rm.tc[i]);
    CHECK(rm.tc[i] <= rm.wt[i]);
  }
}

TEST_CASE("save_segmentation: BraTS ids on disk, round trip and unwritable path") {
  const fs::path root = scratch("save");
  LabelVolume l{LabelConvention::Canonical, Volume<std::uint8_t>({5, 4, 3}, 0)};
  l.voxels.at(1, 2, 0) = 3;
  l.voxels.at(4, 3, 2) = 1;
  l.voxels.at(0, 0, 1) = 2;
  const VolumeGeometry g{{5, 4, 3}, {1.0f, 1.0f, 1.0f}, std::nullopt};
  const fs::path p = save_segmentation("case", l, root / "out", g);
  CHECK(p == root / "out" / "case.nii.gz");
  const NiftiImage raw = read_nifti(p);
  CHECK(raw.voxels[l.voxels.index(1, 2, 0)] == 4.0);
  CHECK(load_labels(p).voxels == l.voxels);
  CHECK(find_label_file(root / "out", "case") == p);
  CHECK(list_label_cases(root / "out") == std::vector<std::string>{"case"});
  {
    std::ofstream blocker(root / "file");
    blocker << "x";
  }
  CHECK(error_code_of([&] { save_segmentation("case", l, root / "file" / "sub", g); }) == ErrorCode::IoError);
  fs::remove_all(root);
}

TEST_CASE("nifti: float and byte round trips keep geometry and header fields") {
  const fs::path root = scratch("nifti");
  Volume<float> v({3, 4, 5});
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i) * 0.25f - 3.0f;
  const VolumeGeometry g{{3, 4, 5}, {0.9f, 1.1f, 2.5f}, std::nullopt};
  for (const char* name : {"a.nii", "a.nii.gz"}) {
    write_nifti(root / name, v, g);
    const NiftiImage img = read_nifti(root / name);
    CHECK(img.geometry.dims == g.dims);
    CHECK(img.geometry.spacing == g.spacing);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(img.voxels[i] == v[i]);
  }
  // A file written with the first file's header inherits it.
  const NiftiImage first = read_nifti(root / "a.nii.gz");
  write_nifti(root / "b.nii.gz", v, first.geometry);
  CHECK(read_nifti(root / "b.nii.gz").geometry.header == first.geometry.header);
  CHECK(error_code_of([&] { read_nifti(root / "missing.nii.gz"); }) == ErrorCode::IoError);
  {
    std::ofstream junk(root / "junk.nii");
    junk << "not a nifti file";
  }
  CHECK_THROWS_AS(read_nifti(root / "junk.nii"), Error);
  fs::remove_all(root);
}

TEST_CASE("list_cases: sorted directories with a FLAIR file") {
  const fs::path root = scratch("list");
  write_case(root, "b", {2, 2, 2});
  write_case(root, "a", {2, 2, 2});
  write_case(root, "c", {2, 2, 2}, false);
  CHECK(list_cases(root) == std::vector<std::string>{"a", "b"});
  fs::remove_all(root);
}
