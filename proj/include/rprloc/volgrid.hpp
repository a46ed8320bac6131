#pragma once

// Volumetric data model shared by every module. Axis order is (z, y, x)
// everywhere: shapes, spacings, voxel indices and offsets.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rprloc {

struct Vec3 {
  double z = 0.0;
  double y = 0.0;
  double x = 0.0;

  double& operator[](int axis) { return axis == 0 ? z : (axis == 1 ? y : x); }
  double operator[](int axis) const { return axis == 0 ? z : (axis == 1 ? y : x); }

  friend Vec3 operator+(const Vec3& a, const Vec3& b) { return {a.z + b.z, a.y + b.y, a.x + b.x}; }
  friend Vec3 operator-(const Vec3& a, const Vec3& b) { return {a.z - b.z, a.y - b.y, a.x - b.x}; }
  friend Vec3 operator-(const Vec3& a) { return {-a.z, -a.y, -a.x}; }
  friend Vec3 operator*(const Vec3& a, double s) { return {a.z * s, a.y * s, a.x * s}; }
  friend Vec3 operator*(double s, const Vec3& a) { return a * s; }
  friend Vec3 operator/(const Vec3& a, double s) { return {a.z / s, a.y / s, a.x / s}; }
  friend bool operator==(const Vec3&, const Vec3&) = default;

  Vec3& operator+=(const Vec3& o) {
    z += o.z;
    y += o.y;
    x += o.x;
    return *this;
  }
};

// Element-wise product and quotient.
inline Vec3 hadamard(const Vec3& a, const Vec3& b) { return {a.z * b.z, a.y * b.y, a.x * b.x}; }
inline Vec3 elementwise_div(const Vec3& a, const Vec3& b) { return {a.z / b.z, a.y / b.y, a.x / b.x}; }
inline double norm(const Vec3& a) { return std::sqrt(a.z * a.z + a.y * a.y + a.x * a.x); }
inline bool is_finite(const Vec3& a) {
  return std::isfinite(a.z) && std::isfinite(a.y) && std::isfinite(a.x);
}

struct Shape3 {
  int d = 0;
  int h = 0;
  int w = 0;

  int operator[](int axis) const { return axis == 0 ? d : (axis == 1 ? h : w); }
  std::size_t voxels() const {
    return static_cast<std::size_t>(d) * static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& s);
std::string to_string(const Vec3& v);

// Real-valued voxel coordinates, so agents can sit between voxel centers.
struct VoxelPoint {
  Vec3 index;
  friend bool operator==(const VoxelPoint&, const VoxelPoint&) = default;
};

// Physical displacement in mm.
struct WorldOffset {
  Vec3 delta;
  friend bool operator==(const WorldOffset&, const WorldOffset&) = default;
};

enum class IntensityUnit { kRaw, kNormalized };

const char* to_string(IntensityUnit unit);
IntensityUnit intensity_unit_from_string(const std::string& s);

// Clip window mapped linearly onto [0, 1].
struct IntensityWindow {
  double lo = -250.0;
  double hi = 750.0;
  friend bool operator==(const IntensityWindow&, const IntensityWindow&) = default;
};

inline constexpr double kRawAirThreshold = -500.0;
inline constexpr double kNormalizedAirThreshold = 0.05;

double default_air_threshold(IntensityUnit unit);

// Throws invalid-geometry unless every component is finite and > 0.
void require_positive_spacing(const Vec3& spacing, const char* what = "spacing");

class Volume {
 public:
  Volume() = default;
  Volume(Shape3 shape, Vec3 spacing, IntensityUnit unit, std::vector<float> data);

  const Shape3& shape() const { return shape_; }
  const Vec3& spacing() const { return spacing_; }
  IntensityUnit unit() const { return unit_; }
  std::span<const float> data() const { return data_; }
  float min_intensity() const { return min_; }
  float max_intensity() const { return max_; }

  std::size_t offset(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * shape_.h + static_cast<std::size_t>(y)) * shape_.w +
           static_cast<std::size_t>(x);
  }
  float at(int z, int y, int x) const { return data_[offset(z, y, x)]; }
  bool contains(int z, int y, int x) const {
    return z >= 0 && y >= 0 && x >= 0 && z < shape_.d && y < shape_.h && x < shape_.w;
  }
  // Physical size spanned by voxel centers, (n - 1) * e per axis.
  Vec3 extent_mm() const;
  double diagonal_mm() const { return norm(extent_mm()); }

 private:
  Shape3 shape_;
  Vec3 spacing_{1.0, 1.0, 1.0};
  IntensityUnit unit_ = IntensityUnit::kRaw;
  std::vector<float> data_;
  float min_ = 0.0f;
  float max_ = 0.0f;
};

struct Mask {
  Shape3 shape;
  std::vector<std::uint8_t> data;

  Mask() = default;
  explicit Mask(Shape3 s) : shape(s), data(s.voxels(), 0) {}

  std::size_t offset(int z, int y, int x) const {
    return (static_cast<std::size_t>(z) * shape.h + static_cast<std::size_t>(y)) * shape.w +
           static_cast<std::size_t>(x);
  }
  bool at(int z, int y, int x) const { return data[offset(z, y, x)] != 0; }
  void set(int z, int y, int x, bool v = true) { data[offset(z, y, x)] = v ? 1 : 0; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
};

struct Patch {
  Shape3 shape;
  std::vector<float> data;
  VoxelPoint center;
  Vec3 source_spacing;
  IntensityUnit unit = IntensityUnit::kRaw;
};

struct BBox3D {
  Vec3 min_corner;
  Vec3 max_corner;

  // Throws invalid-points when min > max on any axis.
  static BBox3D from_corners(const Vec3& lo, const Vec3& hi);
  double volume() const;
  friend bool operator==(const BBox3D&, const BBox3D&) = default;
};

Vec3 voxel_to_world(const VoxelPoint& p, const Vec3& spacing);
VoxelPoint world_to_voxel(const Vec3& world, const Vec3& spacing);

// Index of the voxel whose center is nearest, rounding halves upward.
std::array<int, 3> nearest_voxel(const VoxelPoint& p);

Patch crop_patch(const Volume& vol, const VoxelPoint& center, Shape3 shape);

Mask foreground_mask(const Volume& vol, double air_threshold);

Volume resample(const Volume& vol, const Vec3& target_spacing);

Volume normalize_intensity(const Volume& vol, const IntensityWindow& window);
// No-op for patches already in normalized units.
Patch normalize_patch(const Patch& patch, const IntensityWindow& window);

}  // namespace rprloc
