#include "triseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "triseg/error.hpp"
#include "triseg/preprocess.hpp"

namespace triseg {

namespace {

void require_same_dims(const Mask& a, const Mask& b) {
  require(a.dims() == b.dims(), ErrorCode::ShapeError,
          "mask shapes differ: " + a.dims().str() + " vs " + b.dims().str());
}

bool any_foreground(const Mask& m) {
  return std::any_of(m.storage().begin(), m.storage().end(), [](std::uint8_t v) { return v != 0; });
}

constexpr double kFar = 1e20;

// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) on one line of
// squared distances f with stride, sample spacing s.
void edt_line(double* f, int n, std::size_t stride, double s, std::vector<double>& d, std::vector<int>& v,
              std::vector<double>& z) {
  const double s2 = s * s;
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  auto fv = [&](int q) { return f[static_cast<std::size_t>(q) * stride]; };
  auto cross = [&](int q, int p) {
    return ((fv(q) + s2 * q * q) - (fv(p) + s2 * p * p)) / (2.0 * s2 * (q - p));
  };
  for (int q = 1; q < n; ++q) {
    double sq = cross(q, v[static_cast<std::size_t>(k)]);
    while (sq <= z[static_cast<std::size_t>(k)]) {
      --k;
      sq = cross(q, v[static_cast<std::size_t>(k)]);
    }
    ++k;
    v[static_cast<std::size_t>(k)] = q;
    z[static_cast<std::size_t>(k)] = sq;
    z[static_cast<std::size_t>(k) + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[static_cast<std::size_t>(k) + 1] < q) ++k;
    const int p = v[static_cast<std::size_t>(k)];
    const double dq = static_cast<double>(q - p);
    d[static_cast<std::size_t>(q)] = s2 * dq * dq + fv(p);
  }
  for (int q = 0; q < n; ++q) f[static_cast<std::size_t>(q) * stride] = d[static_cast<std::size_t>(q)];
}

}  // namespace

ConfusionCounts confusion(const Mask& pred, const Mask& gt) {
  require_same_dims(pred, gt);
  ConfusionCounts c;
  const auto& p = pred.storage();
  const auto& g = gt.storage();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool pi = p[i] != 0, gi = g[i] != 0;
    if (pi && gi) ++c.tp;
    else if (pi) ++c.fp;
    else if (gi) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double dsc(const ConfusionCounts& c) {
  const double denom = static_cast<double>(c.fp) + 2.0 * static_cast<double>(c.tp) + static_cast<double>(c.fn);
  return denom == 0.0 ? 1.0 : 2.0 * static_cast<double>(c.tp) / denom;
}

double sensitivity(const ConfusionCounts& c) {
  const std::uint64_t denom = c.tp + c.fn;
  return denom == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double specificity(const ConfusionCounts& c) {
  const std::uint64_t denom = c.tn + c.fp;
  return denom == 0 ? 1.0 : static_cast<double>(c.tn) / static_cast<double>(denom);
}

Mask boundary(const Mask& mask) {
  const Dims3 d = mask.dims();
  Mask out(d, 0);
  auto fg = [&](int x, int y, int z) {
    if (x < 0 || y < 0 || z < 0 || x >= d.x || y >= d.y || z >= d.z) return false;
    return mask.at(x, y, z) != 0;
  };
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x) {
        if (!fg(x, y, z)) continue;
        if (!fg(x - 1, y, z) || !fg(x + 1, y, z) || !fg(x, y - 1, z) || !fg(x, y + 1, z) || !fg(x, y, z - 1) ||
            !fg(x, y, z + 1))
          out.at(x, y, z) = 1;
      }
  return out;
}

std::vector<std::array<int, 3>> boundary_voxels(const Mask& mask) {
  const Mask b = boundary(mask);
  const Dims3 d = b.dims();
  std::vector<std::array<int, 3>> out;
  for (int z = 0; z < d.z; ++z)
    for (int y = 0; y < d.y; ++y)
      for (int x = 0; x < d.x; ++x)
        if (b.at(x, y, z)) out.push_back({x, y, z});
  return out;
}

Volume<double> distance_transform(const Mask& set, const std::array<double, 3>& spacing) {
  const Dims3 d = set.dims();
  Volume<double> f(d, kFar);
  bool any = false;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (set[i]) {
      f[i] = 0.0;
      any = true;
    }
  }
  if (!any) {
    std::fill(f.storage().begin(), f.storage().end(), std::numeric_limits<double>::infinity());
    return f;
  }
  const int longest = std::max({d.x, d.y, d.z});
  std::vector<double> buf(static_cast<std::size_t>(longest));
  std::vector<int> v(static_cast<std::size_t>(longest));
  std::vector<double> z(static_cast<std::size_t>(longest) + 1);
  const std::size_t sx = 1, sy = static_cast<std::size_t>(d.x), sz = static_cast<std::size_t>(d.x) * d.y;
  for (int zz = 0; zz < d.z; ++zz)
    for (int yy = 0; yy < d.y; ++yy) edt_line(&f.at(0, yy, zz), d.x, sx, spacing[0], buf, v, z);
  for (int zz = 0; zz < d.z; ++zz)
    for (int xx = 0; xx < d.x; ++xx) edt_line(&f.at(xx, 0, zz), d.y, sy, spacing[1], buf, v, z);
  for (int yy = 0; yy < d.y; ++yy)
    for (int xx = 0; xx < d.x; ++xx) edt_line(&f.at(xx, yy, 0), d.z, sz, spacing[2], buf, v, z);
  for (double& x : f.storage()) x = std::sqrt(x);
  return f;
}

SurfaceDistanceSet surface_distances(const Mask& pred, const Mask& gt, const std::array<double, 3>& spacing) {
  require_same_dims(pred, gt);
  const Mask bp = boundary(pred);
  const Mask bg = boundary(gt);
  const Volume<double> to_p = distance_transform(bp, spacing);
  const Volume<double> to_g = distance_transform(bg, spacing);
  SurfaceDistanceSet s;
  for (std::size_t i = 0; i < bg.size(); ++i) {
    if (bg[i]) s.d_g_to_p.push_back(to_p[i]);
    if (bp[i]) s.d_p_to_g.push_back(to_g[i]);
  }
  return s;
}

double hausdorff(const SurfaceDistanceSet& s) {
  require(!s.d_g_to_p.empty() && !s.d_p_to_g.empty(), ErrorCode::InvalidInput, "hausdorff needs two nonempty boundaries");
  return std::max(*std::max_element(s.d_g_to_p.begin(), s.d_g_to_p.end()),
                  *std::max_element(s.d_p_to_g.begin(), s.d_p_to_g.end()));
}

double hausdorff95(const SurfaceDistanceSet& s) {
  require(!s.d_g_to_p.empty() && !s.d_p_to_g.empty(), ErrorCode::InvalidInput,
          "hausdorff95 needs two nonempty boundaries");
  return std::max(percentile(s.d_g_to_p, 0.95), percentile(s.d_p_to_g, 0.95));
}

RegionMetrics evaluate_region(const Mask& pred, const Mask& gt, const MetricConventions& conventions,
                              const std::array<double, 3>& spacing) {
  const ConfusionCounts c = confusion(pred, gt);
  RegionMetrics m;
  m.sensitivity = sensitivity(c);
  m.specificity = specificity(c);
  const bool p_any = any_foreground(pred), g_any = any_foreground(gt);
  if (!p_any && !g_any) {
    m.dsc = conventions.both_empty_dsc;
    m.hd95 = m.hausdorff = conventions.both_empty_hd;
    return m;
  }
  if (!p_any || !g_any) {
    m.dsc = conventions.one_empty_dsc;
    m.hd95 = m.hausdorff = conventions.one_empty_hd;
    return m;
  }
  m.dsc = dsc(c);
  const SurfaceDistanceSet s = surface_distances(pred, gt, spacing);
  m.hd95 = hausdorff95(s);
  m.hausdorff = hausdorff(s);
  return m;
}

CaseMetrics evaluate_case(const LabelVolume& pred, const LabelVolume& gt, const MetricConventions& conventions,
                          const std::array<double, 3>& spacing) {
  require(pred.shape() == gt.shape(), ErrorCode::ShapeError,
          "label shapes differ: " + pred.shape().str() + " vs " + gt.shape().str());
  const RegionMasks p = derive_region_masks(pred);
  const RegionMasks g = derive_region_masks(gt);
  return {evaluate_region(p.wt, g.wt, conventions, spacing), evaluate_region(p.tc, g.tc, conventions, spacing),
          evaluate_region(p.et, g.et, conventions, spacing)};
}

}  // namespace triseg
