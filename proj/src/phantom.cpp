#include "rprloc/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "rprloc/errors.hpp"
#include "rprloc/rng.hpp"
#include "rprloc/volume_io.hpp"

namespace rprloc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kMaxDampedRetries = 6;

json vec_json(const Vec3& v) { return json::array({v.z, v.y, v.x}); }
Vec3 vec_from(const json& j) {
  const auto a = j.get<std::array<double, 3>>();
  return {a[0], a[1], a[2]};
}

struct OrganInstance {
  Vec3 center;  // voxel coordinates
  Vec3 radii;   // voxels
  std::array<double, 4> perturb{};
};

// Smooth low-order modulation of the ellipsoid radius along unit direction u.
double radial_scale(const OrganInstance& o, const Vec3& u) {
  return 1.0 + o.perturb[0] * u.z * u.y + o.perturb[1] * u.y * u.x + o.perturb[2] * u.x * u.z +
         o.perturb[3] * (u.x * u.x - u.y * u.y);
}

bool organ_contains(const OrganInstance& o, double z, double y, double x) {
  const Vec3 q{(z - o.center.z) / o.radii.z, (y - o.center.y) / o.radii.y, (x - o.center.x) / o.radii.x};
  const double rho = norm(q);
  if (rho == 0.0) return true;
  return rho <= radial_scale(o, q / rho);
}

Mask render_organ(const OrganInstance& o, const Shape3& shape) {
  Mask m(shape);
  double reach = 1.0;
  for (double a : o.perturb) reach += 2.0 * std::fabs(a);
  int lo[3];
  int hi[3];
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max(0, static_cast<int>(std::floor(o.center[a] - reach * o.radii[a])));
    hi[a] = std::min(shape[a] - 1, static_cast<int>(std::ceil(o.center[a] + reach * o.radii[a])));
  }
  for (int z = lo[0]; z <= hi[0]; ++z)
    for (int y = lo[1]; y <= hi[1]; ++y)
      for (int x = lo[2]; x <= hi[2]; ++x)
        if (organ_contains(o, z, y, x)) m.set(z, y, x);
  return m;
}

Vec3 grid_center(const Shape3& s) { return {(s.d - 1) / 2.0, (s.h - 1) / 2.0, (s.w - 1) / 2.0}; }

Vec3 fraction_to_voxel(const Vec3& f, const Shape3& s) {
  return {f.z * (s.d - 1), f.y * (s.h - 1), f.x * (s.w - 1)};
}

void box_blur_axis(std::vector<double>& v, const Shape3& s, int axis) {
  const int n = s[axis];
  const std::size_t stride = axis == 0 ? static_cast<std::size_t>(s.h) * s.w : (axis == 1 ? s.w : 1);
  std::vector<double> line(static_cast<std::size_t>(n));
  const int outer_a = axis == 0 ? s.h : s.d;
  const int outer_b = axis == 2 ? s.h : s.w;
  for (int i = 0; i < outer_a; ++i) {
    for (int j = 0; j < outer_b; ++j) {
      std::size_t base;
      if (axis == 0) base = static_cast<std::size_t>(i) * s.w + j;
      else if (axis == 1) base = static_cast<std::size_t>(i) * s.h * s.w + j;
      else base = (static_cast<std::size_t>(i) * s.h + j) * s.w;
      for (int k = 0; k < n; ++k) line[static_cast<std::size_t>(k)] = v[base + k * stride];
      for (int k = 0; k < n; ++k) {
        double acc = 0.0;
        int cnt = 0;
        for (int t = std::max(0, k - 1); t <= std::min(n - 1, k + 1); ++t, ++cnt) acc += line[static_cast<std::size_t>(t)];
        v[base + k * stride] = acc / cnt;
      }
    }
  }
}

std::vector<double> smoothed_noise(const Shape3& s, int passes, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  std::vector<double> v(s.voxels());
  for (double& x : v) x = n01(rng);
  for (int p = 0; p < passes; ++p)
    for (int a = 0; a < 3; ++a) box_blur_axis(v, s, a);
  double ss = 0.0;
  for (double x : v) ss += x * x;
  const double sd = std::sqrt(ss / static_cast<double>(v.size()));
  if (sd > 0.0)
    for (double& x : v) x /= sd;
  return v;
}

}  // namespace

PhantomSpec PhantomSpec::default_spec() {
  PhantomSpec s;
  s.organs = {
      {"brain_stem", {0.28, 0.66, 0.55}, {16.0, 10.0, 10.0}, 110.0},
      {"mandible", {0.70, 0.24, 0.38}, {10.0, 12.0, 24.0}, 700.0},
      {"parotid_l", {0.42, 0.40, 0.16}, {12.0, 12.0, 8.0}, -40.0},
      {"parotid_r", {0.56, 0.52, 0.84}, {12.0, 12.0, 8.0}, 200.0},
  };
  return s;
}

std::vector<std::string> PhantomSpec::organ_names() const {
  std::vector<std::string> names;
  for (const auto& o : organs) names.push_back(o.name);
  return names;
}

void PhantomSpec::validate() const {
  if (grid_shape.d < 2 || grid_shape.h < 2 || grid_shape.w < 2) {
    fail(ErrorKind::kInvalidArgument, "phantom grid must be >= 2 per axis");
  }
  require_positive_spacing(spacing, "phantom spacing");
  if (organs.empty()) fail(ErrorKind::kInvalidArgument, "phantom spec declares no organs");
  std::set<std::string> seen;
  for (const auto& o : organs) {
    if (o.name.empty() || !seen.insert(o.name).second) {
      fail(ErrorKind::kInvalidArgument, "organ names must be unique and non-empty");
    }
    for (int a = 0; a < 3; ++a) {
      if (!(o.base_center[a] > 0.0 && o.base_center[a] < 1.0)) {
        fail(ErrorKind::kInvalidArgument, "organ '" + o.name + "' center must be fractional in (0, 1)");
      }
      if (!(o.base_radii[a] > 0.0)) fail(ErrorKind::kInvalidArgument, "organ '" + o.name + "' radii must be > 0");
    }
    if (!(o.intensity > body.air_intensity)) {
      fail(ErrorKind::kInvalidArgument, "organ '" + o.name + "' intensity must exceed the air intensity");
    }
  }
  if (jitter.center_sd < 0 || jitter.radii_sd < 0 || jitter.global_warp < 0 || jitter.radial_amp < 0) {
    fail(ErrorKind::kInvalidArgument, "jitter parameters must be >= 0");
  }
  // Base shapes at zero jitter must be pairwise disjoint.
  std::vector<Mask> base;
  for (const auto& o : organs) {
    OrganInstance inst{fraction_to_voxel(o.base_center, grid_shape), elementwise_div(o.base_radii, spacing), {}};
    base.push_back(render_organ(inst, grid_shape));
  }
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (base[i].empty()) fail(ErrorKind::kInvalidArgument, "organ '" + organs[i].name + "' renders empty");
    for (std::size_t j = i + 1; j < base.size(); ++j)
      for (std::size_t k = 0; k < base[i].data.size(); ++k)
        if (base[i].data[k] && base[j].data[k]) {
          fail(ErrorKind::kInvalidArgument,
               "organs '" + organs[i].name + "' and '" + organs[j].name + "' overlap at zero jitter");
        }
  }
}

std::uint64_t PhantomSpec::hash() const { return fnv1a64(json(*this).dump()); }

void to_json(json& j, const PhantomSpec& s) {
  json organs = json::array();
  for (const auto& o : s.organs) {
    organs.push_back({{"name", o.name},
                      {"base_center", vec_json(o.base_center)},
                      {"base_radii", vec_json(o.base_radii)},
                      {"intensity", o.intensity}});
  }
  j = json{{"grid_shape", {s.grid_shape.d, s.grid_shape.h, s.grid_shape.w}},
           {"spacing", vec_json(s.spacing)},
           {"organs", organs},
           {"jitter",
            {{"center_sd", s.jitter.center_sd},
             {"radii_sd", s.jitter.radii_sd},
             {"global_warp", s.jitter.global_warp},
             {"radial_amp", s.jitter.radial_amp}}},
           {"body",
            {{"semi_axes", vec_json(s.body.semi_axes)},
             {"air_intensity", s.body.air_intensity},
             {"tissue_intensity", s.body.tissue_intensity},
             {"noise_amplitude", s.body.noise_amplitude},
             {"noise_smoothing", s.body.noise_smoothing},
             {"spine_y", s.body.spine_y},
             {"spine_x", s.body.spine_x},
             {"spine_radius", s.body.spine_radius},
             {"spine_intensity", s.body.spine_intensity}}},
           {"seed", s.seed}};
}

void from_json(const json& j, PhantomSpec& s) {
  s = PhantomSpec::default_spec();
  if (j.contains("grid_shape")) {
    const auto g = j.at("grid_shape").get<std::array<int, 3>>();
    s.grid_shape = {g[0], g[1], g[2]};
  }
  if (j.contains("spacing")) s.spacing = vec_from(j.at("spacing"));
  if (j.contains("organs")) {
    s.organs.clear();
    for (const auto& o : j.at("organs")) {
      s.organs.push_back({o.at("name").get<std::string>(), vec_from(o.at("base_center")),
                          vec_from(o.at("base_radii")), o.at("intensity").get<double>()});
    }
  }
  if (j.contains("jitter")) {
    const auto& t = j.at("jitter");
    s.jitter.center_sd = t.value("center_sd", s.jitter.center_sd);
    s.jitter.radii_sd = t.value("radii_sd", s.jitter.radii_sd);
    s.jitter.global_warp = t.value("global_warp", s.jitter.global_warp);
    s.jitter.radial_amp = t.value("radial_amp", s.jitter.radial_amp);
  }
  if (j.contains("body")) {
    const auto& b = j.at("body");
    if (b.contains("semi_axes")) s.body.semi_axes = vec_from(b.at("semi_axes"));
    s.body.air_intensity = b.value("air_intensity", s.body.air_intensity);
    s.body.tissue_intensity = b.value("tissue_intensity", s.body.tissue_intensity);
    s.body.noise_amplitude = b.value("noise_amplitude", s.body.noise_amplitude);
    s.body.noise_smoothing = b.value("noise_smoothing", s.body.noise_smoothing);
    s.body.spine_y = b.value("spine_y", s.body.spine_y);
    s.body.spine_x = b.value("spine_x", s.body.spine_x);
    s.body.spine_radius = b.value("spine_radius", s.body.spine_radius);
    s.body.spine_intensity = b.value("spine_intensity", s.body.spine_intensity);
  }
  s.seed = j.value("seed", s.seed);
}

PhantomCase generate_case(const PhantomSpec& spec, std::uint64_t case_seed) {
  spec.validate();
  const Shape3 shape = spec.grid_shape;
  const Vec3 e = spec.spacing;
  const Vec3 gc = grid_center(shape);

  PhantomCase out;
  out.provenance.case_seed = case_seed;
  out.provenance.spec_hash = spec.hash();

  for (int attempt = 0;; ++attempt) {
    if (attempt > kMaxDampedRetries) {
      fail(ErrorKind::kInvalidArgument, "phantom organs keep leaving the grid even with damped jitter");
    }
    const double damp = std::pow(0.5, attempt);
    Rng rng = make_stream(spec.seed, {case_seed, static_cast<std::uint64_t>(attempt)});
    std::normal_distribution<double> n01(0.0, 1.0);

    Vec3 warp;
    for (int a = 0; a < 3; ++a) warp[a] = std::clamp(1.0 + damp * spec.jitter.global_warp * n01(rng), 0.8, 1.2);

    std::vector<OrganInstance> organs;
    for (const auto& o : spec.organs) {
      OrganInstance inst;
      const Vec3 base = fraction_to_voxel(o.base_center, shape);
      for (int a = 0; a < 3; ++a) {
        inst.center[a] = gc[a] + (base[a] - gc[a]) * warp[a] + damp * spec.jitter.center_sd * n01(rng) / e[a];
        const double r_mm = std::max(1.0, o.base_radii[a] * warp[a] + damp * spec.jitter.radii_sd * n01(rng));
        inst.radii[a] = r_mm / e[a];
      }
      for (double& p : inst.perturb) p = damp * spec.jitter.radial_amp * n01(rng);
      organs.push_back(inst);
    }

    // Label map: later organs win on overlap so masks match rendered voxels.
    std::vector<int> label(shape.voxels(), -1);
    for (std::size_t k = 0; k < organs.size(); ++k) {
      const Mask m = render_organ(organs[k], shape);
      for (std::size_t i = 0; i < label.size(); ++i)
        if (m.data[i]) label[i] = static_cast<int>(k);
    }
    std::vector<Mask> masks(organs.size(), Mask(shape));
    for (std::size_t i = 0; i < label.size(); ++i)
      if (label[i] >= 0) masks[static_cast<std::size_t>(label[i])].data[i] = 1;
    const bool any_empty = std::any_of(masks.begin(), masks.end(), [](const Mask& m) { return m.empty(); });
    if (any_empty) continue;

    const Vec3 body_axes{spec.body.semi_axes.z * (shape.d - 1) * warp.z, spec.body.semi_axes.y * (shape.h - 1) * warp.y,
                         spec.body.semi_axes.x * (shape.w - 1) * warp.x};
    const double spine_y = gc.y + (spec.body.spine_y * (shape.h - 1) - gc.y) * warp.y;
    const double spine_x = gc.x + (spec.body.spine_x * (shape.w - 1) - gc.x) * warp.x;
    const std::vector<double> noise = smoothed_noise(shape, spec.body.noise_smoothing, rng);

    std::vector<float> data(shape.voxels());
    std::size_t i = 0;
    for (int z = 0; z < shape.d; ++z) {
      for (int y = 0; y < shape.h; ++y) {
        for (int x = 0; x < shape.w; ++x, ++i) {
          double v;
          if (label[i] >= 0) {
            v = spec.organs[static_cast<std::size_t>(label[i])].intensity;
          } else {
            const double bz = (z - gc.z) / body_axes.z;
            const double by = (y - gc.y) / body_axes.y;
            const double bx = (x - gc.x) / body_axes.x;
            if (bz * bz + by * by + bx * bx > 1.0) {
              data[i] = static_cast<float>(spec.body.air_intensity);
              continue;
            }
            const double sy = (y - spine_y) * e.y;
            const double sx = (x - spine_x) * e.x;
            v = sy * sy + sx * sx <= spec.body.spine_radius * spec.body.spine_radius ? spec.body.spine_intensity
                                                                                     : spec.body.tissue_intensity;
          }
          v += spec.body.noise_amplitude * noise[i];
          data[i] = static_cast<float>(std::max(v, spec.body.air_intensity + 1.0));
        }
      }
    }
    out.volume = Volume(shape, e, IntensityUnit::kRaw, std::move(data));
    for (std::size_t k = 0; k < organs.size(); ++k) out.masks.emplace(spec.organs[k].name, std::move(masks[k]));
    out.provenance.damped_retries = attempt;
    return out;
  }
}

std::vector<const DatasetCase*> DatasetManifest::split(const std::string& name) const {
  std::vector<const DatasetCase*> v;
  for (const auto& c : cases)
    if (c.split == name) v.push_back(&c);
  return v;
}

const DatasetCase& DatasetManifest::find(const std::string& id) const {
  for (const auto& c : cases)
    if (c.id == id) return c;
  fail(ErrorKind::kLookup, "no case '" + id + "' in dataset " + root.string());
}

Volume DatasetManifest::load_volume(const DatasetCase& c) const { return rprloc::load_volume(root / c.volume); }

std::map<std::string, Mask> DatasetManifest::load_masks(const DatasetCase& c) const {
  std::map<std::string, Mask> masks;
  for (const auto& [organ, rel] : c.masks) masks.emplace(organ, load_mask(root / rel));
  return masks;
}

namespace {

json manifest_json(const DatasetManifest& m) {
  json cases = json::array();
  json splits = {{"train", json::array()}, {"val", json::array()}, {"test", json::array()}};
  for (const auto& c : m.cases) {
    json masks = json::object();
    for (const auto& [organ, rel] : c.masks) masks[organ] = rel.generic_string();
    cases.push_back({{"id", c.id},
                     {"split", c.split},
                     {"seed", c.seed},
                     {"volume", c.volume.generic_string()},
                     {"masks", masks},
                     {"damped_retries", c.damped_retries}});
    splits[c.split].push_back(c.id);
  }
  return json{{"format", "rprloc-dataset"},
              {"version", 1},
              {"spec", m.spec},
              {"spec_hash", hex64(m.spec.hash())},
              {"seed", m.seed},
              {"organs", m.spec.organ_names()},
              {"splits", splits},
              {"cases", cases}};
}

}  // namespace

DatasetManifest generate_dataset(const PhantomSpec& spec, int n_train, int n_val, int n_test, std::uint64_t seed,
                                 const fs::path& out_dir, bool overwrite) {
  if (n_train < 1 || n_val < 1 || n_test < 1) {
    fail(ErrorKind::kInvalidArgument, "dataset split counts must all be >= 1");
  }
  spec.validate();
  if (fs::exists(out_dir) && !fs::is_empty(out_dir)) {
    if (!overwrite) {
      fail(ErrorKind::kConfig, "output directory " + out_dir.string() + " exists; pass --overwrite to replace it");
    }
    fs::remove_all(out_dir);
  }
  fs::create_directories(out_dir / "cases");

  DatasetManifest m;
  m.root = out_dir;
  m.spec = spec;
  m.seed = seed;
  const std::pair<const char*, int> splits[] = {{"train", n_train}, {"val", n_val}, {"test", n_test}};
  int index = 0;
  for (const auto& [name, count] : splits) {
    for (int k = 0; k < count; ++k, ++index) {
      DatasetCase c;
      char id[32];
      std::snprintf(id, sizeof(id), "case_%04d", index);
      c.id = id;
      c.split = name;
      // Case seeds are distinct integers, so splits are disjoint by construction.
      c.seed = seed * 1000003ULL + static_cast<std::uint64_t>(index);
      const PhantomCase pc = generate_case(spec, c.seed);
      c.volume = fs::path("cases") / (c.id + ".raw");
      save_volume(pc.volume, out_dir / c.volume);
      for (const auto& [organ, mask] : pc.masks) {
        const fs::path rel = fs::path("cases") / (c.id + "_" + organ + ".mask.raw");
        save_mask(mask, spec.spacing, out_dir / rel);
        c.masks.emplace(organ, rel);
      }
      c.damped_retries = pc.provenance.damped_retries;
      m.cases.push_back(std::move(c));
    }
  }
  std::ofstream out(out_dir / kManifestFile, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write manifest in " + out_dir.string());
  out << manifest_json(m).dump(2) << "\n";
  return m;
}

DatasetManifest load_dataset(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / kManifestFile : path;
  std::ifstream in(file);
  if (!in) fail(ErrorKind::kIo, "no dataset manifest at " + file.string());
  DatasetManifest m;
  m.root = file.parent_path();
  try {
    const json j = json::parse(in);
    if (j.value("format", "") != "rprloc-dataset") fail(ErrorKind::kIo, file.string() + " is not a dataset manifest");
    m.spec = j.at("spec").get<PhantomSpec>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& jc : j.at("cases")) {
      DatasetCase c;
      c.id = jc.at("id").get<std::string>();
      c.split = jc.at("split").get<std::string>();
      c.seed = jc.at("seed").get<std::uint64_t>();
      c.volume = jc.at("volume").get<std::string>();
      for (const auto& [organ, rel] : jc.at("masks").items()) c.masks.emplace(organ, rel.get<std::string>());
      c.damped_retries = jc.value("damped_retries", 0);
      m.cases.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, "malformed dataset manifest " + file.string() + ": " + e.what());
  }
  return m;
}

std::vector<Volume> load_split_volumes(const DatasetManifest& manifest, const std::string& split) {
  std::vector<Volume> out;
  for (const DatasetCase* c : manifest.split(split)) out.push_back(manifest.load_volume(*c));
  if (out.empty()) fail(ErrorKind::kIo, "dataset split '" + split + "' is empty");
  return out;
}

}  // namespace rprloc
