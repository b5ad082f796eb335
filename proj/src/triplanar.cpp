#include "triseg/triplanar.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "triseg/error.hpp"

namespace triseg {

namespace {

struct Coord {
  int x, y, z;
};

Coord voxel_of(Plane plane, int s, int h, int w) {
  switch (plane) {
    case Plane::Sagittal: return {s, h, w};
    case Plane::Coronal: return {h, s, w};
    case Plane::Axial: return {h, w, s};
  }
  return {0, 0, 0};
}

int slice_count(const Dims3& d, Plane plane) { return d[plane_axis(plane)]; }

// Calls fn(slice_index_in_range, h, w, voxel_index) over a slice range.
template <class Fn>
void for_each_voxel(const Dims3& d, Plane plane, int start, int count, Fn&& fn) {
  const auto [hh, ww] = slice_dims(d, plane);
  for (int s = 0; s < count; ++s)
    for (int h = 0; h < hh; ++h)
      for (int w = 0; w < ww; ++w) {
        const Coord c = voxel_of(plane, start + s, h, w);
        fn(s, h, w,
           static_cast<std::size_t>(c.x) +
               static_cast<std::size_t>(d.x) * (static_cast<std::size_t>(c.y) + static_cast<std::size_t>(d.y) * c.z));
      }
}

// Mean that is exactly invariant to argument order and exact for equal inputs:
// sort, then average the offsets from the smallest value.
double ordered_mean(double* v, std::size_t n) {
  std::sort(v, v + n);
  double acc = 0.0;
  for (std::size_t k = 1; k < n; ++k) acc += v[k] - v[0];
  return v[0] + acc / static_cast<double>(n);
}

void check_range(const Dims3& d, Plane plane, int start, int count) {
  const int n = slice_count(d, plane);
  require(count >= 1 && start >= 0 && start + count <= n, ErrorCode::GeometryMismatch,
          "slice range [" + std::to_string(start) + ", " + std::to_string(start + count) + ") outside " +
              std::string(plane_name(plane)) + " axis of length " + std::to_string(n));
}

}  // namespace

std::string_view plane_name(Plane plane) {
  switch (plane) {
    case Plane::Sagittal: return "sagittal";
    case Plane::Coronal: return "coronal";
    case Plane::Axial: return "axial";
  }
  return "?";
}

Plane parse_plane(std::string_view name) {
  for (Plane p : kPlanes)
    if (plane_name(p) == name) return p;
  fail(ErrorCode::ConfigError, "unknown plane '" + std::string(name) + "'");
}

int plane_axis(Plane plane) { return static_cast<int>(plane); }

std::pair<int, int> slice_dims(const Dims3& dims, Plane plane) {
  switch (plane) {
    case Plane::Sagittal: return {dims.y, dims.z};
    case Plane::Coronal: return {dims.x, dims.z};
    case Plane::Axial: return {dims.x, dims.y};
  }
  return {0, 0};
}

Tensor slice_range(const CaseBundle& c, Plane plane, int start, int count) {
  const Dims3 d = c.shape();
  check_range(d, plane, start, count);
  const auto [hh, ww] = slice_dims(d, plane);
  Tensor out({count, static_cast<int>(kInputModalities.size()), hh, ww});
  for (std::size_t ch = 0; ch < kInputModalities.size(); ++ch) {
    const Volume<float>& v = c.volume(kInputModalities[ch]);
    require(v.dims() == d, ErrorCode::GeometryMismatch, "modality shape differs from the case geometry");
    for_each_voxel(d, plane, start, count, [&](int s, int h, int w, std::size_t i) {
      out.at(s, static_cast<int>(ch), h, w) = v[i];
    });
  }
  return out;
}

Tensor slice_plane(const CaseBundle& c, Plane plane, const std::optional<Dims3>& expected_shape) {
  if (expected_shape) {
    require(c.shape() == *expected_shape, ErrorCode::GeometryMismatch,
            "case " + c.case_id + " has shape " + c.shape().str() + ", expected preprocessed shape " +
                expected_shape->str());
  }
  return slice_range(c, plane, 0, slice_count(c.shape(), plane));
}

Tensor slice_labels(const LabelVolume& labels, Plane plane, int start, int count) {
  const Dims3 d = labels.shape();
  check_range(d, plane, start, count);
  const auto [hh, ww] = slice_dims(d, plane);
  Tensor out({count, 1, hh, ww});
  for_each_voxel(d, plane, start, count, [&](int s, int h, int w, std::size_t i) {
    out.at(s, 0, h, w) = labels.voxels[i];
  });
  return out;
}

Tensor slice_probabilities(const ProbabilityVolume& v, Plane plane) {
  const int n = slice_count(v.dims, plane);
  const auto [hh, ww] = slice_dims(v.dims, plane);
  Tensor out({n, v.channels, hh, ww});
  for (int c = 0; c < v.channels; ++c) {
    for_each_voxel(v.dims, plane, 0, n, [&](int s, int h, int w, std::size_t i) { out.at(s, c, h, w) = v.at(c, i); });
  }
  return out;
}

ProbabilityVolume restack(const Tensor& slices, Plane plane, const Dims3& dims) {
  const auto [hh, ww] = slice_dims(dims, plane);
  const int n = slice_count(dims, plane);
  require(slices.rank() == 4 && slices.n() == n && slices.h() == hh && slices.w() == ww, ErrorCode::ShapeError,
          "slices " + shape_string(slices.shape()) + " do not restack into " + dims.str() + " along " +
              std::string(plane_name(plane)));
  ProbabilityVolume v(dims, slices.c());
  for (int c = 0; c < v.channels; ++c) {
    for_each_voxel(dims, plane, 0, n, [&](int s, int h, int w, std::size_t i) { v.at(c, i) = slices.at(s, c, h, w); });
  }
  return v;
}

ProbabilityVolume infer_plane(const CaseBundle& c, Plane plane, const NetworkParams& params, int batch) {
  require(batch >= 1, ErrorCode::ConfigError, "inference batch must be >= 1");
  const Dims3 d = c.shape();
  const int n = slice_count(d, plane);
  ProbabilityVolume out(d, params.config.n_classes);
  for (int start = 0; start < n; start += batch) {
    const int count = std::min(batch, n - start);
    const Tensor probs = network_forward(slice_range(c, plane, start, count), params);
    for (int ch = 0; ch < out.channels; ++ch) {
      for_each_voxel(d, plane, start, count, [&](int s, int h, int w, std::size_t i) {
        out.at(ch, i) = probs.at(s, ch, h, w);
      });
    }
  }
  return out;
}

ProbabilityVolume fuse(const std::vector<ProbabilityVolume>& volumes, FusionMode mode) {
  require(!volumes.empty(), ErrorCode::ShapeError, "fuse needs at least one volume");
  const ProbabilityVolume& first = volumes.front();
  for (const auto& v : volumes) {
    require(v.dims == first.dims && v.channels == first.channels, ErrorCode::ShapeError,
            "fused volumes differ in shape");
  }
  ProbabilityVolume out(first.dims, first.channels);
  std::vector<double> vals(volumes.size());
  if (mode == FusionMode::MeanProbability) {
    for (std::size_t i = 0; i < out.probs.size(); ++i) {
      for (std::size_t k = 0; k < volumes.size(); ++k) vals[k] = volumes[k].probs[i];
      out.probs[i] = ordered_mean(vals.data(), vals.size());
    }
    return out;
  }
  // log p differs from the logits by a per-voxel constant, which softmax ignores.
  const std::size_t nv = out.voxels();
  std::vector<double> z(static_cast<std::size_t>(out.channels));
  for (std::size_t i = 0; i < nv; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < out.channels; ++c) {
      for (std::size_t k = 0; k < volumes.size(); ++k) vals[k] = std::log(std::max(volumes[k].at(c, i), 1e-300));
      z[static_cast<std::size_t>(c)] = ordered_mean(vals.data(), vals.size());
      mx = std::max(mx, z[static_cast<std::size_t>(c)]);
    }
    double sum = 0.0;
    for (double& x : z) sum += (x = std::exp(x - mx));
    for (int c = 0; c < out.channels; ++c) out.at(c, i) = z[static_cast<std::size_t>(c)] / sum;
  }
  return out;
}

LabelVolume argmax_labels(const ProbabilityVolume& fused) {
  LabelVolume out{LabelConvention::Canonical, Volume<std::uint8_t>(fused.dims, 0)};
  for (std::size_t i = 0; i < fused.voxels(); ++i) {
    int best = 0;
    for (int c = 1; c < fused.channels; ++c)
      if (fused.at(c, i) > fused.at(best, i)) best = c;
    out.voxels[i] = static_cast<std::uint8_t>(best);
  }
  return out;
}

LabelVolume finalize(const ProbabilityVolume& fused, const CropManifest& crop) {
  require(fused.dims == crop.crop_shape, ErrorCode::GeometryMismatch,
          "fused volume " + fused.dims.str() + " does not match crop " + crop.crop_shape.str());
  LabelVolume cropped = argmax_labels(fused);
  return {LabelConvention::Canonical, uncrop_volume(cropped.voxels, crop, std::uint8_t{0})};
}

}  // namespace triseg
