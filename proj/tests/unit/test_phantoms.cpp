#include <filesystem>

#include "doctest.h"
#include "triseg/error.hpp"
#include "triseg/phantoms.hpp"

using namespace triseg;

namespace {

std::size_t count_inside(const PhantomSpec& s, double r) {
  const auto c = s.resolved_center();
  std::size_t n = 0;
  for (int z = 0; z < s.shape.z; ++z)
    for (int y = 0; y < s.shape.y; ++y)
      for (int x = 0; x < s.shape.x; ++x) {
        const double dx = (x - c[0]) / (r * s.axis_scale[0]);
        const double dy = (y - c[1]) / (r * s.axis_scale[1]);
        const double dz = (z - c[2]) / (r * s.axis_scale[2]);
        n += dx * dx + dy * dy + dz * dz <= 1.0;
      }
  return n;
}

std::size_t count(const Volume<std::uint8_t>& v) {
  std::size_t n = 0;
  for (auto x : v.storage()) n += x != 0;
  return n;
}

}  // namespace

TEST_CASE("make_phantom: region voxel counts match a loop oracle") {
  PhantomSpec s;
  s.radius_et = 4;
  s.radius_tc = 8;
  s.radius_wt = 12;
  const CaseBundle b = make_phantom(s);
  const RegionMasks m = derive_region_masks(*b.labels);
  CHECK(count(m.et) == count_inside(s, 4));
  CHECK(count(m.tc) == count_inside(s, 8));
  CHECK(count(m.wt) == count_inside(s, 12));
  CHECK(count(m.et) < count(m.tc));
  CHECK(count(m.tc) < count(m.wt));
  for (std::size_t i = 0; i < m.wt.size(); ++i) {
    CHECK((!m.et[i] || m.tc[i]));
    CHECK((!m.tc[i] || m.wt[i]));
  }
}

TEST_CASE("make_phantom: zero noise gives piecewise-constant volumes") {
  PhantomSpec s;
  s.noise_std = 0.0;
  const CaseBundle b = make_phantom(s);
  const auto& flair = b.volume(Modality::FLAIR);
  const auto& tissue = s.intensity.at(Modality::FLAIR);
  for (std::size_t i = 0; i < flair.size(); ++i) {
    const auto id = b.labels->voxels[i];
    if (id == 3) CHECK(flair[i] == static_cast<float>(tissue.enhancing));
    if (id == 1) CHECK(flair[i] == static_cast<float>(tissue.core));
    if (id == 2) CHECK(flair[i] == static_cast<float>(tissue.edema));
  }
  CHECK(b.volume(Modality::T2).at(0, 0, 0) == 0.0f);
}

TEST_CASE("make_phantom: deterministic under seed") {
  PhantomSpec s;
  s.seed = 9;
  const CaseBundle a = make_phantom(s), b = make_phantom(s);
  CHECK(a.volume(Modality::T1ce) == b.volume(Modality::T1ce));
  s.seed = 10;
  CHECK(!(make_phantom(s).volume(Modality::T1ce) == a.volume(Modality::T1ce)));
}

TEST_CASE("make_phantom: invalid nesting is a ConfigError") {
  PhantomSpec s;
  s.radius_tc = 3;
  try {
    make_phantom(s);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigError);
  }
  PhantomSpec big;
  big.radius_wt = 40;
  big.radius_brain = 50;
  CHECK_THROWS_AS(make_phantom(big), Error);
}

TEST_CASE("phantom dataset round-trips through the on-disk layout") {
  const auto root = std::filesystem::temp_directory_path() / "triseg_phantom_layout";
  std::filesystem::remove_all(root);
  const auto specs = phantom_series(2, 5, {24, 24, 24});
  write_phantom_dataset(root, specs);
  CHECK(list_cases(root) == std::vector<std::string>{"Phantom_000", "Phantom_001"});
  const CaseBundle loaded = load_case(root, "Phantom_001");
  const CaseBundle made = make_phantom(specs[1]);
  CHECK(loaded.labels->voxels == made.labels->voxels);
  CHECK(loaded.volume(Modality::FLAIR) == made.volume(Modality::FLAIR));
  CHECK(loaded.clinical.age == specs[1].age);
  CHECK(loaded.clinical.survival_days == specs[1].survival_days);
  std::filesystem::remove_all(root);
}
