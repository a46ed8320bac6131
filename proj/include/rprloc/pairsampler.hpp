#pragma once

// Training pairs with exact physical offsets, and random non-air agent
// starting positions for inference.

#include <string>
#include <vector>

#include "rprloc/rng.hpp"
#include "rprloc/volgrid.hpp"

namespace rprloc {

enum class Stage { kCoarse, kFine };

const char* to_string(Stage stage);
Stage stage_from_string(const std::string& s);

// What to do with coarse pairs whose offset exceeds the stage radius.
enum class OverflowPolicy { kReject, kSaturate };

struct StageConfig {
  Stage stage = Stage::kCoarse;
  double radius_mm = 300.0;
  Shape3 patch_shape{16, 32, 32};
  OverflowPolicy overflow = OverflowPolicy::kReject;
};

struct OffsetSample {
  Patch query;
  Patch support;
  WorldOffset gt_offset;  // mm, from query center to support center
  Stage stage = Stage::kCoarse;
};

// (c_s - c_q) scaled element-wise by the voxel spacing.
WorldOffset ground_truth_offset(const VoxelPoint& c_q, const VoxelPoint& c_s, const Vec3& spacing);

// Human-readable warnings for a stage radius that cannot cover the volume.
std::vector<std::string> stage_config_warnings(const Volume& vol, const StageConfig& cfg);

// Both centers uniform over the voxel grid (a center inside the volume keeps
// padding to at most half of each patch extent).
OffsetSample sample_coarse_pair(const Volume& vol, const StageConfig& cfg, Rng& rng);

// Per-axis offset uniform on the voxel lattice within +-r_f, then the query
// uniform over positions that keep both centers inside the volume.
OffsetSample sample_fine_pair(const Volume& vol, const StageConfig& cfg, Rng& rng);

OffsetSample sample_pair(const Volume& vol, const StageConfig& cfg, Rng& rng);

// Uniform draws over the voxels above the air threshold. Built once per
// volume so repeated agent initializations do not rescan the grid.
class ForegroundSampler {
 public:
  ForegroundSampler(const Volume& vol, double air_threshold);
  explicit ForegroundSampler(const Volume& vol);

  VoxelPoint sample(Rng& rng) const;
  std::size_t size() const { return offsets_.size(); }

 private:
  Shape3 shape_;
  std::vector<std::size_t> offsets_;
};

VoxelPoint sample_init_position(const Volume& vol, Rng& rng);

}  // namespace rprloc
