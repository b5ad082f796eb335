#include "triseg/phantoms.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "triseg/error.hpp"
#include "triseg/rng.hpp"

namespace triseg {

namespace {

double ellipsoid_radius2(const std::array<double, 3>& p, const std::array<double, 3>& c, double r,
                         const std::array<double, 3>& scale) {
  double acc = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double d = (p[static_cast<std::size_t>(a)] - c[static_cast<std::size_t>(a)]) / (r * scale[static_cast<std::size_t>(a)]);
    acc += d * d;
  }
  return acc;
}

}  // namespace

std::map<Modality, TissueIntensity> PhantomSpec::default_intensities() {
  return {
      {Modality::T1, {0.0, 0.45, 0.35, 0.25, 0.50}},
      {Modality::T1ce, {0.0, 0.40, 0.35, 0.15, 0.95}},
      {Modality::T2, {0.0, 0.35, 0.80, 0.90, 0.60}},
      {Modality::FLAIR, {0.0, 0.30, 0.90, 0.50, 0.65}},
  };
}

std::array<double, 3> PhantomSpec::resolved_center() const {
  if (center) return *center;
  return {0.5 * (shape.x - 1), 0.5 * (shape.y - 1), 0.5 * (shape.z - 1)};
}

void PhantomSpec::validate() const {
  require(shape.x >= 1 && shape.y >= 1 && shape.z >= 1, ErrorCode::ConfigError, "phantom shape must be positive");
  require(radius_et > 0 && radius_et < radius_tc && radius_tc < radius_wt && radius_wt < radius_brain,
          ErrorCode::ConfigError, "phantom radii must be strictly nested: et < tc < wt < brain");
  for (double s : axis_scale) require(s > 0, ErrorCode::ConfigError, "axis_scale must be positive");
  require(noise_std >= 0, ErrorCode::ConfigError, "noise_std must be >= 0");
  const auto c = resolved_center();
  for (int a = 0; a < 3; ++a) {
    const double r = radius_wt * axis_scale[static_cast<std::size_t>(a)];
    require(c[static_cast<std::size_t>(a)] - r >= 0 && c[static_cast<std::size_t>(a)] + r <= shape[a] - 1,
            ErrorCode::ConfigError, "whole-tumour ellipsoid does not fit inside the volume");
  }
  for (Modality m : kInputModalities)
    require(intensity.count(m) == 1, ErrorCode::ConfigError, "missing phantom intensity for a modality");
}

CaseBundle make_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Dims3 d = spec.shape;
  const auto c = spec.resolved_center();
  Volume<std::uint8_t> labels(d, 0);
  Volume<std::uint8_t> brain(d, 0);
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        const std::array<double, 3> p{static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
        std::uint8_t id = 0;
        if (ellipsoid_radius2(p, c, spec.radius_et, spec.axis_scale) <= 1.0) id = 3;
        else if (ellipsoid_radius2(p, c, spec.radius_tc, spec.axis_scale) <= 1.0) id = 1;
        else if (ellipsoid_radius2(p, c, spec.radius_wt, spec.axis_scale) <= 1.0) id = 2;
        labels.at(x, y, z) = id;
        brain.at(x, y, z) = ellipsoid_radius2(p, c, spec.radius_brain, spec.axis_scale) <= 1.0 || id != 0;
      }

  CaseBundle b;
  b.case_id = spec.case_id;
  b.geometry.dims = d;
  b.geometry.spacing = {1.0f, 1.0f, 1.0f};
  b.clinical.age = spec.age;
  b.clinical.survival_days = spec.survival_days;
  std::uint64_t stream = 0;
  for (const auto& [m, tissue] : spec.intensity) {
    Rng rng = fork_rng(spec.seed, stream++);
    std::normal_distribution<double> noise(0.0, spec.noise_std > 0 ? spec.noise_std : 1.0);
    Volume<float> v(d, 0.0f);
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!brain[i]) {
        v[i] = static_cast<float>(tissue.background);
        continue;
      }
      double base = tissue.brain;
      switch (labels[i]) {
        case 1: base = tissue.core; break;
        case 2: base = tissue.edema; break;
        case 3: base = tissue.enhancing; break;
        default: break;
      }
      if (spec.noise_std > 0) base += noise(rng);
      v[i] = static_cast<float>(base);
    }
    b.volumes[m] = ModalityVolume{m, std::move(v)};
  }
  b.labels = LabelVolume{LabelConvention::Canonical, std::move(labels)};
  return b;
}

std::vector<PhantomSpec> phantom_series(int count, std::uint64_t seed, Dims3 shape) {
  require(count >= 1, ErrorCode::ConfigError, "phantom count must be >= 1");
  std::vector<PhantomSpec> out;
  const double base = std::min({shape.x, shape.y, shape.z});
  for (int i = 0; i < count; ++i) {
    Rng rng = fork_rng(seed, 1000 + static_cast<std::uint64_t>(i));
    PhantomSpec s;
    char id[32];
    std::snprintf(id, sizeof id, "Phantom_%03d", i);
    s.case_id = id;
    s.shape = shape;
    s.radius_wt = base * uniform(rng, 0.16, 0.21);
    s.radius_tc = s.radius_wt * uniform(rng, 0.55, 0.7);
    s.radius_et = s.radius_tc * uniform(rng, 0.45, 0.6);
    s.radius_brain = base * 0.44;
    std::array<double, 3> c{};
    for (int a = 0; a < 3; ++a) {
      const double mid = 0.5 * (shape[a] - 1);
      c[static_cast<std::size_t>(a)] = mid + uniform(rng, -0.06, 0.06) * shape[a];
    }
    s.center = c;
    s.seed = seed * 7919 + static_cast<std::uint64_t>(i);
    s.age = std::round(uniform(rng, 35.0, 80.0));
    s.survival_days = std::round(uniform(rng, 100.0, 900.0));
    out.push_back(std::move(s));
  }
  return out;
}

void write_phantom_dataset(const std::filesystem::path& root, const std::vector<PhantomSpec>& specs) {
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  require(!ec, ErrorCode::IoError, "cannot create " + root.string() + ": " + ec.message());
  std::ofstream csv(root / "survival_info.csv");
  require(static_cast<bool>(csv), ErrorCode::IoError, "cannot write " + (root / "survival_info.csv").string());
  csv << "Brats20ID,Age,Survival_days,Extent_of_Resection\n";
  for (const auto& spec : specs) {
    const CaseBundle b = make_phantom(spec);
    const auto dir = root / b.case_id;
    std::filesystem::create_directories(dir, ec);
    require(!ec, ErrorCode::IoError, "cannot create " + dir.string() + ": " + ec.message());
    for (const auto& [m, v] : b.volumes) {
      save_volume(dir / (b.case_id + "_" + std::string(modality_suffix(m)) + ".nii.gz"), v.voxels, b.geometry);
    }
    const auto seg = save_segmentation(b.case_id, *b.labels, dir, b.geometry);
    std::filesystem::rename(seg, dir / (b.case_id + "_seg.nii.gz"), ec);
    require(!ec, ErrorCode::IoError, "cannot rename " + seg.string() + ": " + ec.message());
    csv << b.case_id << ',';
    if (spec.age) csv << *spec.age;
    csv << ',';
    if (spec.survival_days) csv << *spec.survival_days;
    csv << ",GTR\n";
  }
}

}  // namespace triseg
