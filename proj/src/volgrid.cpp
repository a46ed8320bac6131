#include "rprloc/volgrid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rprloc/errors.hpp"

namespace rprloc {

std::string to_string(const Shape3& s) {
  std::ostringstream os;
  os << s.d << "x" << s.h << "x" << s.w;
  return os.str();
}

std::string to_string(const Vec3& v) {
  std::ostringstream os;
  os << "(" << v.z << ", " << v.y << ", " << v.x << ")";
  return os.str();
}

const char* to_string(IntensityUnit unit) {
  return unit == IntensityUnit::kRaw ? "raw" : "normalized";
}

IntensityUnit intensity_unit_from_string(const std::string& s) {
  if (s == "raw") return IntensityUnit::kRaw;
  if (s == "normalized") return IntensityUnit::kNormalized;
  fail(ErrorKind::kInvalidArgument, "unknown intensity unit '" + s + "'");
}

double default_air_threshold(IntensityUnit unit) {
  return unit == IntensityUnit::kRaw ? kRawAirThreshold : kNormalizedAirThreshold;
}

void require_positive_spacing(const Vec3& spacing, const char* what) {
  for (int a = 0; a < 3; ++a) {
    if (!(std::isfinite(spacing[a]) && spacing[a] > 0.0)) {
      fail(ErrorKind::kInvalidGeometry,
           std::string(what) + " must be positive and finite, got " + to_string(spacing));
    }
  }
}

Volume::Volume(Shape3 shape, Vec3 spacing, IntensityUnit unit, std::vector<float> data)
    : shape_(shape), spacing_(spacing), unit_(unit), data_(std::move(data)) {
  if (shape_.d < 1 || shape_.h < 1 || shape_.w < 1) {
    fail(ErrorKind::kInvalidGeometry, "volume shape must be >= 1 per axis, got " + to_string(shape_));
  }
  require_positive_spacing(spacing_, "volume spacing");
  if (data_.size() != shape_.voxels()) {
    fail(ErrorKind::kInvalidArgument, "volume data size " + std::to_string(data_.size()) +
                                          " does not match shape " + to_string(shape_));
  }
  const auto [lo, hi] = std::minmax_element(data_.begin(), data_.end());
  min_ = *lo;
  max_ = *hi;
  if (unit_ == IntensityUnit::kNormalized && (min_ < -1e-6f || max_ > 1.0f + 1e-6f)) {
    fail(ErrorKind::kInvalidArgument, "normalized volume has intensities outside [0, 1]");
  }
}

Vec3 Volume::extent_mm() const {
  return {(shape_.d - 1) * spacing_.z, (shape_.h - 1) * spacing_.y, (shape_.w - 1) * spacing_.x};
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t v) { return v != 0; }));
}

BBox3D BBox3D::from_corners(const Vec3& lo, const Vec3& hi) {
  for (int a = 0; a < 3; ++a) {
    if (!(lo[a] <= hi[a])) {
      fail(ErrorKind::kInvalidPoints, "inverted box extent on axis " + std::to_string(a) + ": " +
                                          to_string(lo) + " vs " + to_string(hi));
    }
  }
  return {lo, hi};
}

double BBox3D::volume() const {
  const Vec3 e = max_corner - min_corner;
  return std::max(0.0, e.z) * std::max(0.0, e.y) * std::max(0.0, e.x);
}

Vec3 voxel_to_world(const VoxelPoint& p, const Vec3& spacing) {
  require_positive_spacing(spacing);
  return hadamard(p.index, spacing);
}

VoxelPoint world_to_voxel(const Vec3& world, const Vec3& spacing) {
  require_positive_spacing(spacing);
  return {elementwise_div(world, spacing)};
}

std::array<int, 3> nearest_voxel(const VoxelPoint& p) {
  return {static_cast<int>(std::floor(p.index.z + 0.5)), static_cast<int>(std::floor(p.index.y + 0.5)),
          static_cast<int>(std::floor(p.index.x + 0.5))};
}

Patch crop_patch(const Volume& vol, const VoxelPoint& center, Shape3 shape) {
  if (!is_finite(center.index)) {
    fail(ErrorKind::kInvalidArgument, "crop center is not finite: " + to_string(center.index));
  }
  if (shape.d < 1 || shape.h < 1 || shape.w < 1) {
    fail(ErrorKind::kInvalidArgument, "patch shape must be >= 1 per axis");
  }
  Patch patch;
  patch.shape = shape;
  patch.center = center;
  patch.source_spacing = vol.spacing();
  patch.unit = vol.unit();
  patch.data.assign(shape.voxels(), vol.min_intensity());

  const auto c = nearest_voxel(center);
  const int z0 = c[0] - shape.d / 2;
  const int y0 = c[1] - shape.h / 2;
  const int x0 = c[2] - shape.w / 2;
  const Shape3& vs = vol.shape();
  const int xa = std::max(0, -x0);
  const int xb = std::min(shape.w, vs.w - x0);
  if (xa >= xb) return patch;
  for (int pz = 0; pz < shape.d; ++pz) {
    const int z = z0 + pz;
    if (z < 0 || z >= vs.d) continue;
    for (int py = 0; py < shape.h; ++py) {
      const int y = y0 + py;
      if (y < 0 || y >= vs.h) continue;
      const float* src = vol.data().data() + vol.offset(z, y, x0 + xa);
      float* dst = patch.data.data() + (static_cast<std::size_t>(pz) * shape.h + py) * shape.w + xa;
      std::copy(src, src + (xb - xa), dst);
    }
  }
  return patch;
}

Mask foreground_mask(const Volume& vol, double air_threshold) {
  Mask mask(vol.shape());
  const auto data = vol.data();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i] > air_threshold) {
      mask.data[i] = 1;
      ++hits;
    }
  }
  if (hits == 0) {
    fail(ErrorKind::kDegenerateVolume,
         "volume has no voxel above the air threshold " + std::to_string(air_threshold));
  }
  return mask;
}

Volume resample(const Volume& vol, const Vec3& target_spacing) {
  require_positive_spacing(target_spacing, "target spacing");
  const Shape3& in = vol.shape();
  const Vec3& e = vol.spacing();
  Shape3 out;
  std::array<double, 3> step{};
  for (int a = 0; a < 3; ++a) {
    const double extent = (in[a] - 1) * e[a];
    const int n = static_cast<int>(std::floor(extent / target_spacing[a] + 1e-9)) + 1;
    (a == 0 ? out.d : (a == 1 ? out.h : out.w)) = n;
    step[static_cast<std::size_t>(a)] = target_spacing[a] / e[a];
  }

  // Per-axis sample tables: lower index and fractional weight.
  auto table = [&](int axis, int n) {
    std::vector<std::pair<int, double>> t(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      const double pos = i * step[static_cast<std::size_t>(axis)];
      int i0 = static_cast<int>(std::floor(pos));
      double f = pos - i0;
      if (i0 >= in[axis] - 1) {
        i0 = in[axis] - 1;
        f = 0.0;
      }
      t[static_cast<std::size_t>(i)] = {i0, f};
    }
    return t;
  };
  const auto tz = table(0, out.d);
  const auto ty = table(1, out.h);
  const auto tx = table(2, out.w);

  std::vector<float> data(out.voxels());
  auto sample = [&](int z, int y, int x) -> double { return vol.at(z, y, x); };
  std::size_t k = 0;
  for (int z = 0; z < out.d; ++z) {
    const auto [z0, fz] = tz[static_cast<std::size_t>(z)];
    const int z1 = std::min(z0 + 1, in.d - 1);
    for (int y = 0; y < out.h; ++y) {
      const auto [y0, fy] = ty[static_cast<std::size_t>(y)];
      const int y1 = std::min(y0 + 1, in.h - 1);
      for (int x = 0; x < out.w; ++x, ++k) {
        const auto [x0, fx] = tx[static_cast<std::size_t>(x)];
        const int x1 = std::min(x0 + 1, in.w - 1);
        const double c00 = sample(z0, y0, x0) * (1 - fx) + sample(z0, y0, x1) * fx;
        const double c01 = sample(z0, y1, x0) * (1 - fx) + sample(z0, y1, x1) * fx;
        const double c10 = sample(z1, y0, x0) * (1 - fx) + sample(z1, y0, x1) * fx;
        const double c11 = sample(z1, y1, x0) * (1 - fx) + sample(z1, y1, x1) * fx;
        const double c0 = c00 * (1 - fy) + c01 * fy;
        const double c1 = c10 * (1 - fy) + c11 * fy;
        data[k] = static_cast<float>(c0 * (1 - fz) + c1 * fz);
      }
    }
  }
  // Convex combinations never leave [min, max]; clamp away float rounding.
  for (float& v : data) v = std::clamp(v, vol.min_intensity(), vol.max_intensity());
  return Volume(out, target_spacing, vol.unit(), std::move(data));
}

namespace {

void check_window(const IntensityWindow& window) {
  if (!(std::isfinite(window.lo) && std::isfinite(window.hi) && window.hi > window.lo)) {
    fail(ErrorKind::kInvalidArgument, "intensity window must satisfy lo < hi");
  }
}

void normalize_in_place(std::vector<float>& data, const IntensityWindow& window) {
  const double scale = 1.0 / (window.hi - window.lo);
  for (float& v : data) {
    const double c = std::clamp(static_cast<double>(v), window.lo, window.hi);
    v = static_cast<float>((c - window.lo) * scale);
  }
}

}  // namespace

Volume normalize_intensity(const Volume& vol, const IntensityWindow& window) {
  if (vol.unit() == IntensityUnit::kNormalized) return vol;
  check_window(window);
  std::vector<float> data(vol.data().begin(), vol.data().end());
  normalize_in_place(data, window);
  return Volume(vol.shape(), vol.spacing(), IntensityUnit::kNormalized, std::move(data));
}

Patch normalize_patch(const Patch& patch, const IntensityWindow& window) {
  if (patch.unit == IntensityUnit::kNormalized) return patch;
  check_window(window);
  Patch out = patch;
  normalize_in_place(out.data, window);
  out.unit = IntensityUnit::kNormalized;
  return out;
}

}  // namespace rprloc
