#pragma once

// Procedural phantom volumes: jittered ellipsoid pseudo-organs inside a noisy
// body surrounded by air. Organ placement is consistent across cases so the
// relative-position prior holds, and the masks are exact.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "rprloc/volgrid.hpp"

namespace rprloc {

struct OrganSpec {
  std::string name;
  Vec3 base_center;  // fractional grid coordinates in (0, 1)
  Vec3 base_radii;   // mm
  double intensity = 0.0;
};

struct JitterSpec {
  double center_sd = 3.0;     // mm
  double radii_sd = 1.5;      // mm
  double global_warp = 0.04;  // relative sd of the per-axis body scale
  double radial_amp = 0.08;   // sd of the smooth radial surface perturbation
};

struct BodySpec {
  Vec3 semi_axes{0.44, 0.42, 0.40};  // fraction of the grid extent
  double air_intensity = -1000.0;
  double tissue_intensity = 40.0;
  double noise_amplitude = 15.0;
  int noise_smoothing = 2;  // box-blur passes
  // Cylinder along z, a posterior landmark without a mask.
  double spine_y = 0.80;
  double spine_x = 0.50;
  double spine_radius = 7.0;  // mm
  double spine_intensity = 400.0;
};

struct PhantomSpec {
  Shape3 grid_shape{64, 96, 96};
  Vec3 spacing{2.0, 2.0, 2.0};
  std::vector<OrganSpec> organs;
  JitterSpec jitter;
  BodySpec body;
  std::uint64_t seed = 0;

  // Four pseudo-organs laid out with distinct coordinates on every axis.
  static PhantomSpec default_spec();

  // Throws invalid-argument on bad geometry or overlapping base organs.
  void validate() const;
  std::uint64_t hash() const;
  std::vector<std::string> organ_names() const;
};

void to_json(nlohmann::json& j, const PhantomSpec& spec);
void from_json(const nlohmann::json& j, PhantomSpec& spec);

struct PhantomProvenance {
  std::uint64_t case_seed = 0;
  std::uint64_t spec_hash = 0;
  int damped_retries = 0;  // > 0 when jitter had to be damped
};

struct PhantomCase {
  Volume volume;
  std::map<std::string, Mask> masks;
  PhantomProvenance provenance;
};

PhantomCase generate_case(const PhantomSpec& spec, std::uint64_t case_seed);

struct DatasetCase {
  std::string id;
  std::string split;
  std::uint64_t seed = 0;
  std::filesystem::path volume;               // relative to the dataset root
  std::map<std::string, std::filesystem::path> masks;
  int damped_retries = 0;
};

struct DatasetManifest {
  std::filesystem::path root;
  PhantomSpec spec;
  std::uint64_t seed = 0;
  std::vector<DatasetCase> cases;

  std::vector<const DatasetCase*> split(const std::string& name) const;
  const DatasetCase& find(const std::string& id) const;
  Volume load_volume(const DatasetCase& c) const;
  std::map<std::string, Mask> load_masks(const DatasetCase& c) const;
};

inline constexpr const char* kManifestFile = "dataset.json";

// Writes cases under out_dir/cases and out_dir/dataset.json. Refuses to touch
// an existing non-empty out_dir unless overwrite is set.
DatasetManifest generate_dataset(const PhantomSpec& spec, int n_train, int n_val, int n_test,
                                 std::uint64_t seed, const std::filesystem::path& out_dir,
                                 bool overwrite = false);

// Accepts the dataset directory or the manifest file itself.
DatasetManifest load_dataset(const std::filesystem::path& path);

std::vector<Volume> load_split_volumes(const DatasetManifest& manifest, const std::string& split);

}  // namespace rprloc
