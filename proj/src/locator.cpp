#include "rprloc/locator.hpp"

#include <algorithm>
#include <chrono>
#include <functional>
#include <limits>

#include "rprloc/errors.hpp"

namespace rprloc {

using nlohmann::json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

VoxelPoint clamp_to_volume(const VoxelPoint& p, const Shape3& s) {
  return {{std::clamp(p.index.z, 0.0, static_cast<double>(s.d - 1)),
           std::clamp(p.index.y, 0.0, static_cast<double>(s.h - 1)),
           std::clamp(p.index.x, 0.0, static_cast<double>(s.w - 1))}};
}

void require_mask(const Mask& mask) {
  if (mask.data.size() != mask.shape.voxels() || mask.empty()) fail(ErrorKind::kDegenerateMask, "mask is empty");
}

VoxelPoint voxel(int z, int y, int x) {
  return {{static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)}};
}

const VoxelPoint& landmark_at(const SupportAnnotation& support, const std::string& name) {
  const auto it = support.landmarks.find(name);
  if (it == support.landmarks.end()) fail(ErrorKind::kLookup, "support has no landmark '" + name + "'");
  return it->second;
}

}  // namespace

void SupportAnnotation::validate() const {
  if (!volume) fail(ErrorKind::kInvalidArgument, "support annotation has no volume");
  const Shape3& s = volume->shape();
  for (const auto& [name, p] : landmarks) {
    const Vec3& i = p.index;
    if (!is_finite(i) || i.z < 0 || i.y < 0 || i.x < 0 || i.z > s.d - 1 || i.y > s.h - 1 || i.x > s.w - 1) {
      fail(ErrorKind::kInvalidArgument, "support landmark '" + name + "' at " + to_string(i) + " is outside the volume");
    }
  }
}

const char* to_string(BoxStrategy s) { return s == BoxStrategy::kExtreme ? "extreme" : "diagonal"; }

BoxStrategy box_strategy_from_string(const std::string& s) {
  if (s == "extreme") return BoxStrategy::kExtreme;
  if (s == "diagonal") return BoxStrategy::kDiagonal;
  fail(ErrorKind::kInvalidArgument, "unknown strategy '" + s + "' (expected extreme or diagonal)");
}

// ---------------------------------------------------------------- point extraction

std::array<VoxelPoint, 6> extreme_voxels(const Mask& mask, const Vec3& spacing) {
  require_mask(mask);
  require_positive_spacing(spacing);
  const Shape3& s = mask.shape;
  std::array<int, 3> lo{s.d, s.h, s.w};
  std::array<int, 3> hi{-1, -1, -1};
  Vec3 sum;
  std::size_t n = 0;
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        if (!mask.at(z, y, x)) continue;
        const std::array<int, 3> c{z, y, x};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], c[a]);
          hi[a] = std::max(hi[a], c[a]);
        }
        sum += Vec3{static_cast<double>(z), static_cast<double>(y), static_cast<double>(x)};
        ++n;
      }
  const Vec3 centroid = sum / static_cast<double>(n);

  // Face order follows kExtremeNames: z, x, y.
  constexpr std::array<int, 3> kAxisOrder{0, 2, 1};
  std::array<VoxelPoint, 6> out;
  for (int f = 0; f < 6; ++f) {
    const int axis = kAxisOrder[f / 2];
    const int level = f % 2 == 0 ? lo[axis] : hi[axis];
    double best = std::numeric_limits<double>::infinity();
    // Lexicographic scan keeps the lowest (z, y, x) among equal distances.
    for (int z = 0; z < s.d; ++z)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x) {
          const std::array<int, 3> c{z, y, x};
          if (c[axis] != level || !mask.at(z, y, x)) continue;
          double d2 = 0.0;
          for (int a = 0; a < 3; ++a) {
            if (a == axis) continue;
            const double diff = (c[a] - centroid[a]) * spacing[a];
            d2 += diff * diff;
          }
          if (d2 < best) {
            best = d2;
            out[f] = voxel(z, y, x);
          }
        }
  }
  return out;
}

ExtremePointSet extract_extreme_points(const Mask& mask, const Vec3& spacing) {
  const auto vox = extreme_voxels(mask, spacing);
  ExtremePointSet set;
  for (int i = 0; i < 6; ++i) set.points[i] = voxel_to_world(vox[i], spacing);
  return set;
}

std::array<VoxelPoint, 2> diagonal_voxels(const Mask& mask) {
  require_mask(mask);
  const Shape3& s = mask.shape;
  std::array<int, 3> lo{s.d, s.h, s.w};
  std::array<int, 3> hi{-1, -1, -1};
  for (int z = 0; z < s.d; ++z)
    for (int y = 0; y < s.h; ++y)
      for (int x = 0; x < s.w; ++x) {
        if (!mask.at(z, y, x)) continue;
        const std::array<int, 3> c{z, y, x};
        for (int a = 0; a < 3; ++a) {
          lo[a] = std::min(lo[a], c[a]);
          hi[a] = std::max(hi[a], c[a]);
        }
      }
  return {voxel(lo[0], lo[1], lo[2]), voxel(hi[0], hi[1], hi[2])};
}

DiagonalPair extract_diagonal_points(const Mask& mask, const Vec3& spacing) {
  require_positive_spacing(spacing);
  const auto vox = diagonal_voxels(mask);
  return {voxel_to_world(vox[0], spacing), voxel_to_world(vox[1], spacing)};
}

BBox3D assemble_bbox(const ExtremePointSet& p) {
  return BBox3D::from_corners({p.z_min().z, p.y_min().y, p.x_min().x}, {p.z_max().z, p.y_max().y, p.x_max().x});
}

BBox3D assemble_bbox(const DiagonalPair& corners) { return BBox3D::from_corners(corners.d_min, corners.d_max); }

// ---------------------------------------------------------------- agent

VoxelPoint locate_step_latent(const OffsetRegressor& model, const Volume& test_vol, const VoxelPoint& current,
                              const Vec3& support_latent) {
  const Patch query = crop_patch(test_vol, current, model.patch_shape());
  const WorldOffset d = model.offset(model.project_query(query), support_latent);
  const VoxelPoint moved{current.index + elementwise_div(d.delta, test_vol.spacing())};
  return clamp_to_volume(moved, test_vol.shape());
}

VoxelPoint locate_step(const OffsetRegressor& model, const Volume& test_vol, const VoxelPoint& current,
                       const Patch& support_patch) {
  if (!(support_patch.shape == model.patch_shape())) {
    fail(ErrorKind::kInvalidArgument, "support patch shape " + to_string(support_patch.shape) +
                                          " does not match model shape " + to_string(model.patch_shape()));
  }
  return locate_step_latent(model, test_vol, current, model.project_support(support_patch));
}

LandmarkQuery prepare_landmark(const OffsetRegressor& mc, const OffsetRegressor* mf, const SupportAnnotation& support,
                               const std::string& name) {
  if (!support.volume) fail(ErrorKind::kInvalidArgument, "support annotation has no volume");
  const VoxelPoint& c = landmark_at(support, name);
  LandmarkQuery q;
  q.name = name;
  q.coarse_latent = mc.project_support(crop_patch(*support.volume, c, mc.patch_shape()));
  if (mf) q.fine_latent = mf->project_support(crop_patch(*support.volume, c, mf->patch_shape()));
  return q;
}

RunTrace run_agent(const OffsetRegressor& mc, const OffsetRegressor* mf, const Volume& test_vol,
                   const LandmarkQuery& query, const VoxelPoint& init, const LocateOptions& opt) {
  if (opt.steps_coarse < 0 || opt.steps_fine < 0) fail(ErrorKind::kInvalidArgument, "step counts must be >= 0");
  if (mf && !query.fine_latent) fail(ErrorKind::kInvalidArgument, "landmark query was prepared without a fine model");
  RunTrace trace;
  trace.init = init;
  VoxelPoint p = init;
  trace.trajectory.push_back(voxel_to_world(p, test_vol.spacing()));
  for (int i = 0; i < opt.steps_coarse; ++i) {
    p = locate_step_latent(mc, test_vol, p, query.coarse_latent);
    trace.trajectory.push_back(voxel_to_world(p, test_vol.spacing()));
  }
  if (mf) {
    for (int i = 0; i < opt.steps_fine; ++i) {
      p = locate_step_latent(*mf, test_vol, p, *query.fine_latent);
      trace.trajectory.push_back(voxel_to_world(p, test_vol.spacing()));
    }
  }
  trace.final_world = trace.trajectory.back();
  return trace;
}

namespace {

void check_stages(const OffsetRegressor& mc, const OffsetRegressor* mf) {
  if (mc.stage() != Stage::kCoarse) fail(ErrorKind::kStageMismatch, "coarse slot holds a fine-stage model");
  if (mf && mf->stage() != Stage::kFine) fail(ErrorKind::kStageMismatch, "fine slot holds a coarse-stage model");
}

LocalizationResult run_many(const OffsetRegressor& mc, const OffsetRegressor* mf, const Volume& test_vol,
                            const SupportAnnotation& support, const std::string& name, const LocateOptions& opt,
                            int k, const std::function<Rng(int)>& stream) {
  const auto t0 = std::chrono::steady_clock::now();
  check_stages(mc, mf);
  if (k < 1) fail(ErrorKind::kInvalidArgument, "ensemble size K must be >= 1");
  const LandmarkQuery query = prepare_landmark(mc, mf, support, name);
  const ForegroundSampler init_sampler(test_vol, opt.air_threshold.value_or(default_air_threshold(test_vol.unit())));
  LocalizationResult res;
  res.landmark = name;
  res.coarse_fingerprint = mc.fingerprint();
  if (mf) res.fine_fingerprint = mf->fingerprint();
  Vec3 sum;
  for (int run = 0; run < k; ++run) {
    Rng rng = stream(run);
    res.runs.push_back(run_agent(mc, mf, test_vol, query, init_sampler.sample(rng), opt));
    sum += res.runs.back().final_world;
  }
  res.final_world = sum / static_cast<double>(k);
  res.wall_time_s = seconds_since(t0);
  return res;
}

}  // namespace

LocalizationResult locate_landmark(const OffsetRegressor& mc, const OffsetRegressor* mf, const Volume& test_vol,
                                   const SupportAnnotation& support, const std::string& name,
                                   const LocateOptions& opt, Rng& rng) {
  return run_many(mc, mf, test_vol, support, name, opt, 1, [&rng](int) { return Rng(rng()); });
}

LocalizationResult locate_ensemble(const OffsetRegressor& mc, const OffsetRegressor* mf, const Volume& test_vol,
                                   const SupportAnnotation& support, const std::string& name,
                                   const LocateOptions& opt, int k, std::uint64_t seed) {
  const std::uint64_t key = fnv1a64(name);
  return run_many(mc, mf, test_vol, support, name, opt, k, [seed, key](int run) {
    return make_stream(seed, {key, static_cast<std::uint64_t>(run)});
  });
}

// ---------------------------------------------------------------- organs

std::vector<std::string> organ_landmark_names(const std::string& organ, BoxStrategy strategy) {
  std::vector<std::string> out;
  if (strategy == BoxStrategy::kExtreme) {
    for (const char* n : kExtremeNames) out.push_back(organ + "/" + n);
  } else {
    for (const char* n : kDiagonalNames) out.push_back(organ + "/" + n);
  }
  return out;
}

void annotate_organ(SupportAnnotation& support, const std::string& organ, const Mask& mask, BoxStrategy strategy) {
  if (!support.volume) fail(ErrorKind::kInvalidArgument, "support annotation has no volume");
  if (!(mask.shape == support.volume->shape())) {
    fail(ErrorKind::kInvalidArgument, "mask shape does not match the support volume for organ '" + organ + "'");
  }
  const auto names = organ_landmark_names(organ, strategy);
  if (strategy == BoxStrategy::kExtreme) {
    const auto pts = extreme_voxels(mask, support.volume->spacing());
    for (std::size_t i = 0; i < pts.size(); ++i) support.landmarks[names[i]] = pts[i];
  } else {
    const auto pts = diagonal_voxels(mask);
    for (std::size_t i = 0; i < pts.size(); ++i) support.landmarks[names[i]] = pts[i];
  }
}

OrganDetection detect_organ(const OffsetRegressor& mc, const OffsetRegressor* mf, const Volume& test_vol,
                            const Volume& support_vol, const std::map<std::string, Mask>& support_masks,
                            const std::string& organ, BoxStrategy strategy, int k, const LocateOptions& opt,
                            std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto it = support_masks.find(organ);
  if (it == support_masks.end()) fail(ErrorKind::kLookup, "support has no mask for organ '" + organ + "'");
  SupportAnnotation support{&support_vol, {}};
  annotate_organ(support, organ, it->second, strategy);

  OrganDetection det;
  det.organ = organ;
  det.strategy = strategy;
  det.ensemble = k;
  for (const std::string& name : organ_landmark_names(organ, strategy)) {
    det.points.push_back(locate_ensemble(mc, mf, test_vol, support, name, opt, k, seed));
  }

  // Predicted points carry no ordering guarantee; a swapped pair is reordered
  // and counted rather than rejected.
  Vec3 lo;
  Vec3 hi;
  if (strategy == BoxStrategy::kExtreme) {
    lo = {det.points[0].final_world.z, det.points[4].final_world.y, det.points[2].final_world.x};
    hi = {det.points[1].final_world.z, det.points[5].final_world.y, det.points[3].final_world.x};
  } else {
    lo = det.points[0].final_world;
    hi = det.points[1].final_world;
  }
  for (int a = 0; a < 3; ++a) {
    if (lo[a] > hi[a]) {
      std::swap(lo[a], hi[a]);
      ++det.reordered_axes;
    }
  }
  det.box = BBox3D::from_corners(lo, hi);
  det.wall_time_s = seconds_since(t0);
  return det;
}

// ---------------------------------------------------------------- reports

namespace {

json vec_json(const Vec3& v) { return json::array({v.z, v.y, v.x}); }

}  // namespace

json to_json(const BBox3D& b) { return json{{"min", vec_json(b.min_corner)}, {"max", vec_json(b.max_corner)}}; }

BBox3D bbox_from_json(const json& j) {
  const auto lo = j.at("min").get<std::array<double, 3>>();
  const auto hi = j.at("max").get<std::array<double, 3>>();
  return BBox3D::from_corners({lo[0], lo[1], lo[2]}, {hi[0], hi[1], hi[2]});
}

json to_json(const LocalizationResult& r) {
  json runs = json::array();
  for (const auto& run : r.runs) {
    json traj = json::array();
    for (const auto& p : run.trajectory) traj.push_back(vec_json(p));
    runs.push_back({{"init_voxel", vec_json(run.init.index)}, {"trajectory_mm", traj}, {"final_mm", vec_json(run.final_world)}});
  }
  return json{{"landmark", r.landmark},
              {"final_mm", vec_json(r.final_world)},
              {"runs", runs},
              {"coarse_model", r.coarse_fingerprint},
              {"fine_model", r.fine_fingerprint},
              {"wall_time_s", r.wall_time_s}};
}

json to_json(const OrganDetection& d) {
  json points = json::array();
  for (const auto& p : d.points) points.push_back(to_json(p));
  return json{{"organ", d.organ},
              {"strategy", to_string(d.strategy)},
              {"K", d.ensemble},
              {"box", to_json(d.box)},
              {"reordered_axes", d.reordered_axes},
              {"points", points},
              {"wall_time_s", d.wall_time_s}};
}

}  // namespace rprloc
