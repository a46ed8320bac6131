#pragma once

// One-shot inference. An agent starts at a random non-air voxel of the test
// volume and moves by the offset predicted between its current patch and the
// support patch: coarse steps first, then fine refinement. Runs are averaged
// over K random initializations, and organ boxes are assembled from six
// extreme points (or two diagonal corners) located independently.

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rprloc/pairsampler.hpp"
#include "rprloc/pnet.hpp"
#include "rprloc/rng.hpp"
#include "rprloc/volgrid.hpp"

namespace rprloc {

struct SupportAnnotation {
  const Volume* volume = nullptr;
  std::map<std::string, VoxelPoint> landmarks;

  // Throws invalid-argument when a landmark lies outside the volume.
  void validate() const;
};

enum class BoxStrategy { kExtreme, kDiagonal };

const char* to_string(BoxStrategy s);
BoxStrategy box_strategy_from_string(const std::string& s);

// Order of the six extreme points everywhere in this module.
inline constexpr std::array<const char*, 6> kExtremeNames{"Z_min", "Z_max", "X_min", "X_max", "Y_min", "Y_max"};
inline constexpr std::array<const char*, 2> kDiagonalNames{"D_min", "D_max"};

struct ExtremePointSet {
  std::array<Vec3, 6> points;  // world mm, in kExtremeNames order

  const Vec3& z_min() const { return points[0]; }
  const Vec3& z_max() const { return points[1]; }
  const Vec3& x_min() const { return points[2]; }
  const Vec3& x_max() const { return points[3]; }
  const Vec3& y_min() const { return points[4]; }
  const Vec3& y_max() const { return points[5]; }
};

struct DiagonalPair {
  Vec3 d_min;
  Vec3 d_max;
};

// Voxel indices of the six extreme points. Among voxels sharing the extremal
// coordinate, the one nearest (in mm) to the mask centroid projected on that
// face wins; remaining ties go to the lowest (z, y, x).
std::array<VoxelPoint, 6> extreme_voxels(const Mask& mask, const Vec3& spacing);
ExtremePointSet extract_extreme_points(const Mask& mask, const Vec3& spacing);

std::array<VoxelPoint, 2> diagonal_voxels(const Mask& mask);
DiagonalPair extract_diagonal_points(const Mask& mask, const Vec3& spacing);

// Only the defining coordinate of each extreme point is used.
BBox3D assemble_bbox(const ExtremePointSet& points);
BBox3D assemble_bbox(const DiagonalPair& corners);

struct LocateOptions {
  int steps_coarse = 1;
  int steps_fine = 1;  // applied only when a fine model is given
  std::optional<double> air_threshold;  // default depends on the volume unit
};

struct RunTrace {
  VoxelPoint init;
  std::vector<Vec3> trajectory;  // world mm, initial position first
  Vec3 final_world;
};

struct LocalizationResult {
  std::string landmark;
  Vec3 final_world;  // mean of the per-run finals
  std::vector<RunTrace> runs;
  std::string coarse_fingerprint;
  std::string fine_fingerprint;  // empty without a fine model
  double wall_time_s = 0.0;

  const std::vector<Vec3>& trajectory() const { return runs.front().trajectory; }
};

// Crops the query at `current`, predicts the offset to the support, and moves
// by offset / spacing; the result is clamped to the volume.
VoxelPoint locate_step(const OffsetRegressor& model, const Volume& test_vol, const VoxelPoint& current,
                       const Patch& support_patch);
VoxelPoint locate_step_latent(const OffsetRegressor& model, const Volume& test_vol, const VoxelPoint& current,
                              const Vec3& support_latent);

// Support latents cached per landmark so the ensemble never re-projects them.
struct LandmarkQuery {
  std::string name;
  Vec3 coarse_latent;
  std::optional<Vec3> fine_latent;
};

LandmarkQuery prepare_landmark(const OffsetRegressor& mc, const OffsetRegressor* mf, const SupportAnnotation& support,
                               const std::string& name);

// Agent run from a given start. Exposed so tests can force initializations.
RunTrace run_agent(const OffsetRegressor& mc, const OffsetRegressor* mf, const Volume& test_vol,
                   const LandmarkQuery& query, const VoxelPoint& init, const LocateOptions& opt);

LocalizationResult locate_landmark(const OffsetRegressor& mc, const OffsetRegressor* mf, const Volume& test_vol,
                                   const SupportAnnotation& support, const std::string& name,
                                   const LocateOptions& opt, Rng& rng);

// K runs; run k draws its start from make_stream(seed, {fnv1a64(name), k}).
LocalizationResult locate_ensemble(const OffsetRegressor& mc, const OffsetRegressor* mf, const Volume& test_vol,
                                   const SupportAnnotation& support, const std::string& name,
                                   const LocateOptions& opt, int k, std::uint64_t seed);

struct OrganDetection {
  std::string organ;
  BoxStrategy strategy = BoxStrategy::kExtreme;
  int ensemble = 1;
  BBox3D box;
  std::vector<LocalizationResult> points;
  int reordered_axes = 0;  // axes whose located min/max came out swapped
  double wall_time_s = 0.0;
};

// Landmark names "<organ>/<point>" for the chosen strategy.
std::vector<std::string> organ_landmark_names(const std::string& organ, BoxStrategy strategy);
// Adds the organ's extreme or diagonal points to the annotation.
void annotate_organ(SupportAnnotation& support, const std::string& organ, const Mask& mask, BoxStrategy strategy);

OrganDetection detect_organ(const OffsetRegressor& mc, const OffsetRegressor* mf, const Volume& test_vol,
                            const Volume& support_vol, const std::map<std::string, Mask>& support_masks,
                            const std::string& organ, BoxStrategy strategy, int k, const LocateOptions& opt,
                            std::uint64_t seed);

nlohmann::json to_json(const LocalizationResult& r);
nlohmann::json to_json(const OrganDetection& d);
nlohmann::json to_json(const BBox3D& b);
BBox3D bbox_from_json(const nlohmann::json& j);

}  // namespace rprloc
