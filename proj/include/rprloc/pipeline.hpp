#pragma once

// Run configuration and the commands behind the command-line tool. Every
// command reads one JSON run config, writes only under its output directory,
// snapshots the resolved config, and holds a lockfile while it runs.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rprloc/baselines.hpp"
#include "rprloc/evalkit.hpp"
#include "rprloc/locator.hpp"
#include "rprloc/phantom.hpp"
#include "rprloc/pnet.hpp"

namespace rprloc {

inline constexpr int kRunConfigSchemaVersion = 1;
inline constexpr const char* kOutputRootEnv = "RPRLOC_OUTPUT_ROOT";

struct InferenceConfig {
  int ensemble = 15;
  int coarse_steps = 1;
  int fine_steps = 1;
  BoxStrategy strategy = BoxStrategy::kExtreme;
  std::string support_case;  // empty: drawn from the validation split with the run seed
  std::optional<double> air_threshold;
};

struct BaselineConfig {
  std::vector<SimilarityKind> methods{SimilarityKind::kGsMse, SimilarityKind::kGsCosine, SimilarityKind::kGsNcc,
                                      SimilarityKind::kFmMse, SimilarityKind::kFmCosine};
  int stride = 2;
  // Feature baselines score windows on this coarser grid for accuracy; their
  // reported time is the stride-2 full cost extrapolated from timed windows.
  int feature_stride = 8;
  int timing_windows = 16;
  int max_cases = 0;  // 0: every test case
};

struct EvaluationConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int max_coarse_steps = 3;
};

struct RunConfig {
  int schema_version = kRunConfigSchemaVersion;
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/desk";
  bool deterministic = true;
  PhantomSpec phantom = PhantomSpec::default_spec();
  int n_train = 20;
  int n_val = 4;
  int n_test = 8;
  TrainConfig coarse = desk_preset(Stage::kCoarse);
  TrainConfig fine = desk_preset(Stage::kFine);
  AutoEncoderConfig autoencoder;
  InferenceConfig inference;
  BaselineConfig baselines;
  EvaluationConfig evaluation;

  // Pushes the global seed into every section and resolves output_dir.
  void resolve();
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Unknown keys and wrong schema versions are config errors.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Output layout under the run directory.
struct Workspace {
  std::filesystem::path root;

  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path models() const { return root / "models"; }
  std::filesystem::path checkpoint(const std::string& name) const { return models() / (name + ".ckpt"); }
  std::filesystem::path loss_csv(const std::string& name) const { return models() / (name + "_loss.csv"); }
  std::filesystem::path reports() const { return root / "reports"; }
  std::filesystem::path tables() const { return root / "tables"; }
};

// Exclusive lock on the run directory, released on destruction.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

using Logger = std::function<void(const std::string&)>;

struct CommandContext {
  RunConfig config;
  bool overwrite = false;
  Logger log = [](const std::string&) {};
  Workspace workspace() const { return {config.output_dir}; }
};

void cmd_generate(const CommandContext& ctx);
// stage: coarse, fine or autoencoder.
void cmd_train(const CommandContext& ctx, const std::string& stage);
void cmd_locate(const CommandContext& ctx);
void cmd_benchmark(const CommandContext& ctx);
void cmd_evaluate(const CommandContext& ctx);
void cmd_repro_tables(const CommandContext& ctx);

// Test cases plus support selection, loaded once per command.
struct EvalData {
  DatasetManifest manifest;
  std::string support_id;
  Volume support_volume;
  std::map<std::string, Mask> support_masks;
  std::vector<std::string> test_ids;
  std::vector<Volume> test_volumes;
  GroundTruthBoxes truth;
};

EvalData load_eval_data(const RunConfig& cfg, int max_cases = 0);

// Box from located point positions, reordering swapped pairs.
BBox3D box_from_points(BoxStrategy strategy, const std::vector<Vec3>& finals, int* reordered = nullptr);

// Box from run `run` alone (its final, or its trajectory entry `step`).
BBox3D box_from_run(const OrganDetection& det, int run, std::optional<int> step = std::nullopt);
// Box from the ensemble mean of trajectory entry `step` over all runs.
BBox3D box_from_step(const OrganDetection& det, int step);

// Ignores columns whose header contains "time". Returns an empty string when
// equal, otherwise a description of the first difference.
std::string compare_csv_ignoring_time(const std::filesystem::path& a, const std::filesystem::path& b);

}  // namespace rprloc
