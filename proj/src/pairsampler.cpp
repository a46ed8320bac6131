#include "rprloc/pairsampler.hpp"

#include <cmath>
#include <random>

#include "rprloc/errors.hpp"

namespace rprloc {

namespace {

constexpr int kMaxRejections = 100000;

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

VoxelPoint uniform_voxel(const Shape3& s, Rng& rng) {
  const int z = uniform_int(rng, 0, s.d - 1);
  const int y = uniform_int(rng, 0, s.h - 1);
  const int x = uniform_int(rng, 0, s.w - 1);
  return {{static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)}};
}

bool within_radius(const WorldOffset& d, double r) {
  return std::fabs(d.delta.z) <= r && std::fabs(d.delta.y) <= r && std::fabs(d.delta.x) <= r;
}

void require_radius(const StageConfig& cfg) {
  if (!(std::isfinite(cfg.radius_mm) && cfg.radius_mm >= 0.0)) {
    fail(ErrorKind::kInvalidArgument, "stage radius must be finite and >= 0");
  }
}

}  // namespace

const char* to_string(Stage stage) { return stage == Stage::kCoarse ? "coarse" : "fine"; }

Stage stage_from_string(const std::string& s) {
  if (s == "coarse") return Stage::kCoarse;
  if (s == "fine") return Stage::kFine;
  fail(ErrorKind::kInvalidArgument, "unknown stage '" + s + "' (expected coarse or fine)");
}

WorldOffset ground_truth_offset(const VoxelPoint& c_q, const VoxelPoint& c_s, const Vec3& spacing) {
  require_positive_spacing(spacing);
  if (!is_finite(c_q.index) || !is_finite(c_s.index)) fail(ErrorKind::kInvalidArgument, "patch centers must be finite");
  return {hadamard(c_s.index - c_q.index, spacing)};
}

std::vector<std::string> stage_config_warnings(const Volume& vol, const StageConfig& cfg) {
  std::vector<std::string> out;
  if (cfg.stage == Stage::kCoarse && cfg.radius_mm < vol.diagonal_mm()) {
    out.push_back("coarse radius " + std::to_string(cfg.radius_mm) + " mm is below the volume diagonal " +
                  std::to_string(vol.diagonal_mm()) + " mm; large offsets will be " +
                  (cfg.overflow == OverflowPolicy::kReject ? "rejected" : "saturated"));
  }
  return out;
}

OffsetSample sample_coarse_pair(const Volume& vol, const StageConfig& cfg, Rng& rng) {
  if (cfg.stage != Stage::kCoarse) fail(ErrorKind::kInvalidArgument, "sample_coarse_pair needs a coarse stage config");
  require_radius(cfg);
  for (int attempt = 0; attempt < kMaxRejections; ++attempt) {
    const VoxelPoint q = uniform_voxel(vol.shape(), rng);
    const VoxelPoint s = uniform_voxel(vol.shape(), rng);
    const WorldOffset d = ground_truth_offset(q, s, vol.spacing());
    if (cfg.overflow == OverflowPolicy::kReject && !within_radius(d, cfg.radius_mm)) continue;
    return {crop_patch(vol, q, cfg.patch_shape), crop_patch(vol, s, cfg.patch_shape), d, Stage::kCoarse};
  }
  fail(ErrorKind::kInvalidArgument, "coarse radius too small: no pair accepted after rejection sampling");
}

OffsetSample sample_fine_pair(const Volume& vol, const StageConfig& cfg, Rng& rng) {
  if (cfg.stage != Stage::kFine) fail(ErrorKind::kInvalidArgument, "sample_fine_pair needs a fine stage config");
  require_radius(cfg);
  const Shape3& s = vol.shape();
  const Vec3& e = vol.spacing();
  Vec3 q;
  Vec3 p;
  for (int a = 0; a < 3; ++a) {
    const int n = s[a];
    const int reach = std::min(n - 1, static_cast<int>(std::floor(cfg.radius_mm / e[a] + 1e-9)));
    const int delta = uniform_int(rng, -reach, reach);
    const int lo = std::max(0, -delta);
    const int hi = std::min(n - 1, n - 1 - delta);
    const int cq = uniform_int(rng, lo, hi);
    q[a] = cq;
    p[a] = cq + delta;
  }
  const VoxelPoint cq{q};
  const VoxelPoint cs{p};
  return {crop_patch(vol, cq, cfg.patch_shape), crop_patch(vol, cs, cfg.patch_shape),
          ground_truth_offset(cq, cs, e), Stage::kFine};
}

OffsetSample sample_pair(const Volume& vol, const StageConfig& cfg, Rng& rng) {
  return cfg.stage == Stage::kCoarse ? sample_coarse_pair(vol, cfg, rng) : sample_fine_pair(vol, cfg, rng);
}

ForegroundSampler::ForegroundSampler(const Volume& vol, double air_threshold) : shape_(vol.shape()) {
  const auto data = vol.data();
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data[i] > air_threshold) offsets_.push_back(i);
  if (offsets_.empty()) {
    fail(ErrorKind::kDegenerateVolume,
         "volume has no voxel above the air threshold " + std::to_string(air_threshold));
  }
}

ForegroundSampler::ForegroundSampler(const Volume& vol)
    : ForegroundSampler(vol, default_air_threshold(vol.unit())) {}

VoxelPoint ForegroundSampler::sample(Rng& rng) const {
  const std::size_t k = std::uniform_int_distribution<std::size_t>(0, offsets_.size() - 1)(rng);
  const std::size_t off = offsets_[k];
  const std::size_t plane = static_cast<std::size_t>(shape_.h) * shape_.w;
  const auto z = static_cast<double>(off / plane);
  const auto y = static_cast<double>((off % plane) / shape_.w);
  const auto x = static_cast<double>(off % shape_.w);
  return {{z, y, x}};
}

VoxelPoint sample_init_position(const Volume& vol, Rng& rng) { return ForegroundSampler(vol).sample(rng); }

}  // namespace rprloc
