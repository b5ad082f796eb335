#include <cmath>

#include "doctest.h"
#include "triseg/error.hpp"
#include "triseg/phantoms.hpp"
#include "triseg/rng.hpp"
#include "triseg/triplanar.hpp"

using namespace triseg;

namespace {

ProbabilityVolume random_probability_volume(Dims3 d, std::uint64_t seed) {
  Rng rng = fork_rng(seed, 0);
  ProbabilityVolume v(d, 4);
  for (std::size_t i = 0; i < v.voxels(); ++i) {
    double sum = 0.0;
    for (int c = 0; c < 4; ++c) sum += (v.at(c, i) = uniform(rng, 0.01, 1.0));
    for (int c = 0; c < 4; ++c) v.at(c, i) /= sum;
  }
  return v;
}

CaseBundle ramp_case(Dims3 d) {
  CaseBundle b;
  b.case_id = "ramp";
  b.geometry.dims = d;
  float k = 0.0f;
  for (Modality m : kInputModalities) {
    Volume<float> v(d);
    for (auto& x : v.storage()) x = (k += 1.0f);
    b.volumes[m] = ModalityVolume{m, std::move(v)};
  }
  return b;
}

}  // namespace

TEST_CASE("plane slicing geometry") {
  const Dims3 d{190, 190, 140};
  CHECK(slice_dims(d, Plane::Axial) == std::pair{190, 190});
  CHECK(slice_dims(d, Plane::Coronal) == std::pair{190, 140});
  CHECK(slice_dims(d, Plane::Sagittal) == std::pair{190, 140});
  CHECK(plane_axis(Plane::Sagittal) == 0);
  CHECK(plane_axis(Plane::Coronal) == 1);
  CHECK(plane_axis(Plane::Axial) == 2);
  CHECK(parse_plane("coronal") == Plane::Coronal);
  CHECK_THROWS_AS(parse_plane("oblique"), Error);
}

TEST_CASE("slice_plane: counts, shapes and channel order") {
  const Dims3 d{6, 5, 4};
  const CaseBundle b = ramp_case(d);
  const Tensor ax = slice_plane(b, Plane::Axial);
  CHECK(ax.shape() == Shape{4, 3, 6, 5});
  const Tensor co = slice_plane(b, Plane::Coronal);
  CHECK(co.shape() == Shape{5, 3, 6, 4});
  const Tensor sa = slice_plane(b, Plane::Sagittal);
  CHECK(sa.shape() == Shape{6, 3, 5, 4});
  const auto& t2 = b.volume(Modality::T2);
  for (int k = 0; k < 4; ++k)
    for (int x = 0; x < 6; ++x)
      for (int y = 0; y < 5; ++y) CHECK(ax.at(k, 1, x, y) == t2.at(x, y, k));
  for (int k = 0; k < 5; ++k)
    for (int x = 0; x < 6; ++x)
      for (int z = 0; z < 4; ++z) CHECK(co.at(k, 2, x, z) == b.volume(Modality::FLAIR).at(x, k, z));
  for (int k = 0; k < 6; ++k)
    for (int y = 0; y < 5; ++y)
      for (int z = 0; z < 4; ++z) CHECK(sa.at(k, 0, y, z) == b.volume(Modality::T1ce).at(k, y, z));
}

TEST_CASE("slice_plane: unpreprocessed shape is a GeometryMismatch") {
  const CaseBundle b = ramp_case({6, 5, 4});
  try {
    slice_plane(b, Plane::Axial, Dims3{190, 190, 140});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::GeometryMismatch);
  }
}

TEST_CASE("slice_probabilities and restack are inverse for every plane") {
  const ProbabilityVolume v = random_probability_volume({7, 5, 6}, 1);
  for (Plane p : kPlanes) {
    const Tensor s = slice_probabilities(v, p);
    CHECK(restack(s, p, v.dims) == v);
    CHECK(slice_probabilities(restack(s, p, v.dims), p).storage() == s.storage());
  }
}

TEST_CASE("fuse: mean of equals, arithmetic, permutation invariance, simplex") {
  const ProbabilityVolume a = random_probability_volume({4, 3, 5}, 2);
  const ProbabilityVolume b = random_probability_volume({4, 3, 5}, 3);
  const ProbabilityVolume c = random_probability_volume({4, 3, 5}, 4);
  CHECK(fuse({a, a, a}) == a);
  CHECK(fuse({a}) == a);
  const auto abc = fuse({a, b, c});
  CHECK(fuse({b, c, a}) == abc);
  CHECK(fuse({c, a, b}) == abc);
  CHECK(fuse({c, b, a}) == abc);
  for (std::size_t i = 0; i < abc.voxels(); ++i) {
    double sum = 0.0;
    for (int ch = 0; ch < 4; ++ch) sum += abc.at(ch, i);
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  ProbabilityVolume o1({1, 1, 1}, 4), o2({1, 1, 1}, 4), o3({1, 1, 1}, 4);
  o1.at(0, 0) = 1;
  o2.at(1, 0) = 1;
  o3.at(2, 0) = 1;
  const auto f = fuse({o1, o2, o3});
  CHECK(f.at(0, 0) == doctest::Approx(1.0 / 3));
  CHECK(f.at(1, 0) == doctest::Approx(1.0 / 3));
  CHECK(f.at(2, 0) == doctest::Approx(1.0 / 3));
  CHECK(f.at(3, 0) == 0.0);
  CHECK_THROWS_AS(fuse({a, random_probability_volume({4, 3, 4}, 5)}), Error);
}

TEST_CASE("fuse: logit-average mode stays on the simplex and agrees on equal inputs") {
  const ProbabilityVolume a = random_probability_volume({3, 3, 3}, 6);
  const auto same = fuse({a, a, a}, FusionMode::MeanLogit);
  for (std::size_t i = 0; i < a.probs.size(); ++i) CHECK(same.probs[i] == doctest::Approx(a.probs[i]).epsilon(1e-12));
  const auto mixed = fuse({a, random_probability_volume({3, 3, 3}, 7)}, FusionMode::MeanLogit);
  for (std::size_t i = 0; i < mixed.voxels(); ++i) {
    double sum = 0.0;
    for (int ch = 0; ch < 4; ++ch) sum += mixed.at(ch, i);
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("finalize: argmax, tie-break and uncrop offsets") {
  ProbabilityVolume v({2, 1, 1}, 4);
  const double p0[4] = {0.1, 0.2, 0.3, 0.4};
  for (int c = 0; c < 4; ++c) {
    v.at(c, 0) = p0[c];
    v.at(c, 1) = 0.25;
  }
  const LabelVolume l = argmax_labels(v);
  CHECK(l.voxels[0] == 3);
  CHECK(l.voxels[1] == 0);

  const CropManifest crop = plan_crop({240, 240, 155}, {190, 190, 140});
  ProbabilityVolume big({190, 190, 140}, 4);
  for (std::size_t i = 0; i < big.voxels(); ++i) big.at(0, i) = 1.0;
  big.at(2, 0) = 2.0;  // voxel (0,0,0) -> class 2
  const LabelVolume out = finalize(big, crop);
  CHECK(out.shape() == Dims3{240, 240, 155});
  CHECK(out.voxels.at(25, 25, 7) == 2);
  std::size_t nonzero = 0;
  for (auto x : out.voxels.storage()) nonzero += x != 0;
  CHECK(nonzero == 1);
  CHECK_THROWS_AS(finalize(v, crop), Error);
}

TEST_CASE("infer_plane: restacked simplex volume for every plane") {
  PhantomSpec spec;
  spec.shape = {16, 18, 20};
  spec.radius_et = 1.5;
  spec.radius_tc = 2.5;
  spec.radius_wt = 4;
  spec.radius_brain = 7;
  const CaseBundle b = make_phantom(spec);
  NetworkConfig cfg;
  cfg.level_filters = {2, 4};
  const NetworkParams params = init_network(cfg, 3);
  for (Plane p : kPlanes) {
    const ProbabilityVolume v = infer_plane(b, p, params, 5);
    CHECK(v.dims == b.shape());
    CHECK(v.channels == 4);
    for (std::size_t i = 0; i < v.voxels(); i += 7) {
      double sum = 0.0;
      for (int c = 0; c < 4; ++c) sum += v.at(c, i);
      CHECK(std::abs(sum - 1.0) <= 1e-6);
    }
    // Batched inference equals slice-at-a-time inference.
    CHECK(infer_plane(b, p, params, 1) == v);
  }
}
