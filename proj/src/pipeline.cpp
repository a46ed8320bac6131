#include "rprloc/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "rprloc/errors.hpp"

namespace rprloc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) fail(ErrorKind::kConfig, where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) fail(ErrorKind::kConfig, "unknown key '" + key + "' in " + where);
  }
}

std::string fmt(double v, int precision = 6) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << text;
}

void snapshot(const CommandContext& ctx, const std::string& command) {
  fs::create_directories(ctx.config.output_dir);
  json j = to_json(ctx.config);
  j["command"] = command;
  write_json(ctx.config.output_dir / ("config." + command + ".resolved.json"), j);
}

void require_dataset(const Workspace& ws) {
  if (!fs::exists(ws.dataset() / kManifestFile)) {
    fail(ErrorKind::kIo, "no dataset at " + ws.dataset().string() +
                             "; run `rprloc generate --config <run config>` first");
  }
}

void require_fresh(const fs::path& path, bool overwrite) {
  if (fs::exists(path) && !overwrite) {
    fail(ErrorKind::kConfig, path.string() + " already exists; pass --overwrite to replace it");
  }
}

struct Models {
  ProjectionModel coarse;
  ProjectionModel fine;
};

Models load_models(const Workspace& ws) {
  for (const char* name : {"coarse", "fine"}) {
    if (!fs::exists(ws.checkpoint(name))) {
      fail(ErrorKind::kIo, "missing checkpoint " + ws.checkpoint(name).string() +
                               "; run `rprloc train --stage " + name + "` first");
    }
  }
  Models m{ProjectionModel::load(ws.checkpoint("coarse")), ProjectionModel::load(ws.checkpoint("fine"))};
  if (m.coarse.stage() != Stage::kCoarse) {
    fail(ErrorKind::kStageMismatch, ws.checkpoint("coarse").string() + " holds a fine-stage model");
  }
  if (m.fine.stage() != Stage::kFine) {
    fail(ErrorKind::kStageMismatch, ws.checkpoint("fine").string() + " holds a coarse-stage model");
  }
  return m;
}

LocateOptions locate_options(const InferenceConfig& inf) {
  LocateOptions opt;
  opt.steps_coarse = inf.coarse_steps;
  opt.steps_fine = inf.fine_steps;
  opt.air_threshold = inf.air_threshold;
  return opt;
}

// detections[case][organ]
using CaseDetections = std::vector<std::vector<OrganDetection>>;

CaseDetections detect_all(const OffsetRegressor& mc, const OffsetRegressor* mf, const EvalData& data,
                          const std::vector<std::string>& organs, BoxStrategy strategy, int k,
                          const LocateOptions& opt, std::uint64_t seed) {
  CaseDetections out;
  for (std::size_t c = 0; c < data.test_volumes.size(); ++c) {
    std::vector<OrganDetection> row;
    for (const auto& organ : organs) {
      row.push_back(detect_organ(mc, mf, data.test_volumes[c], data.support_volume, data.support_masks, organ, strategy,
                                 k, opt, seed));
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<Prediction> predictions_from(const CaseDetections& dets, const EvalData& data, const std::string& method,
                                         const std::function<BBox3D(const OrganDetection&)>& box_of) {
  std::vector<Prediction> out;
  for (std::size_t c = 0; c < dets.size(); ++c)
    for (const auto& d : dets[c]) out.push_back({method, d.organ, data.test_ids[c], box_of(d), d.wall_time_s, ""});
  return out;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample standard deviation; 0 for fewer than two values.
double stdev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

// ---------------------------------------------------------------- config

void RunConfig::resolve() {
  phantom.seed = seed;
  coarse.seed = seed;
  fine.seed = seed;
  autoencoder.seed = seed;
  coarse.stage = Stage::kCoarse;
  fine.stage = Stage::kFine;
  if (output_dir.is_relative()) {
    const char* root = std::getenv(kOutputRootEnv);
    output_dir = (root && *root) ? fs::path(root) / output_dir : fs::absolute(output_dir);
  }
  output_dir = output_dir.lexically_normal();
  coarse.dataset = (output_dir / "dataset").string();
  fine.dataset = coarse.dataset;
}

void RunConfig::validate() const {
  if (schema_version != kRunConfigSchemaVersion) {
    fail(ErrorKind::kConfig, "unsupported schema_version " + std::to_string(schema_version) + " (expected " +
                                 std::to_string(kRunConfigSchemaVersion) + ")");
  }
  try {
    phantom.validate();
  } catch (const Error& e) {
    fail(ErrorKind::kConfig, std::string("phantom: ") + e.what());
  }
  if (n_train < 1 || n_val < 1 || n_test < 1) fail(ErrorKind::kConfig, "dataset split sizes must be >= 1");
  if (inference.ensemble < 1) fail(ErrorKind::kConfig, "inference.ensemble must be >= 1");
  if (inference.coarse_steps < 1 || inference.fine_steps < 0) {
    fail(ErrorKind::kConfig, "inference.coarse_steps must be >= 1 and fine_steps >= 0");
  }
  if (baselines.stride < 1 || baselines.feature_stride < 1 || baselines.timing_windows < 1 || baselines.max_cases < 0) {
    fail(ErrorKind::kConfig, "baseline strides and timing_windows must be >= 1, max_cases >= 0");
  }
  if (evaluation.seeds.empty()) fail(ErrorKind::kConfig, "evaluation.seeds must not be empty");
  if (evaluation.max_coarse_steps < 1) fail(ErrorKind::kConfig, "evaluation.max_coarse_steps must be >= 1");
  if (!(coarse.patch_shape == autoencoder.patch_shape)) {
    fail(ErrorKind::kConfig, "autoencoder.patch_shape must equal the coarse patch shape (shared support patches)");
  }
}

json to_json(const RunConfig& c) {
  json methods = json::array();
  for (auto m : c.baselines.methods) methods.push_back(to_string(m));
  json inference{{"ensemble", c.inference.ensemble},
                 {"coarse_steps", c.inference.coarse_steps},
                 {"fine_steps", c.inference.fine_steps},
                 {"strategy", to_string(c.inference.strategy)},
                 {"support_case", c.inference.support_case}};
  inference["air_threshold"] = c.inference.air_threshold ? json(*c.inference.air_threshold) : json(nullptr);
  json coarse = c.coarse;
  json fine = c.fine;
  return json{{"schema_version", c.schema_version},
              {"seed", c.seed},
              {"output_dir", c.output_dir.string()},
              {"deterministic", c.deterministic},
              {"phantom", c.phantom},
              {"dataset", {{"n_train", c.n_train}, {"n_val", c.n_val}, {"n_test", c.n_test}}},
              {"train", {{"coarse", coarse}, {"fine", fine}}},
              {"autoencoder", c.autoencoder},
              {"inference", inference},
              {"baselines",
               {{"methods", methods},
                {"stride", c.baselines.stride},
                {"feature_stride", c.baselines.feature_stride},
                {"timing_windows", c.baselines.timing_windows},
                {"max_cases", c.baselines.max_cases}}},
              {"evaluation", {{"seeds", c.evaluation.seeds}, {"max_coarse_steps", c.evaluation.max_coarse_steps}}}};
}

RunConfig run_config_from_json(const json& j) {
  require_keys(j,
               {"schema_version", "seed", "output_dir", "deterministic", "phantom", "dataset", "train", "autoencoder",
                "inference", "baselines", "evaluation", "command"},
               "run config");
  RunConfig c;
  try {
    if (!j.contains("schema_version")) fail(ErrorKind::kConfig, "run config needs a schema_version");
    c.schema_version = j.at("schema_version").get<int>();
    if (c.schema_version != kRunConfigSchemaVersion) {
      fail(ErrorKind::kConfig, "unsupported schema_version " + std::to_string(c.schema_version));
    }
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir.string());
    c.deterministic = j.value("deterministic", c.deterministic);
    if (j.contains("phantom")) c.phantom = j.at("phantom").get<PhantomSpec>();
    if (j.contains("dataset")) {
      const auto& d = j.at("dataset");
      require_keys(d, {"n_train", "n_val", "n_test"}, "dataset");
      c.n_train = d.value("n_train", c.n_train);
      c.n_val = d.value("n_val", c.n_val);
      c.n_test = d.value("n_test", c.n_test);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      require_keys(t, {"coarse", "fine"}, "train");
      if (t.contains("coarse")) {
        json s = t.at("coarse");
        s["stage"] = "coarse";
        c.coarse = s.get<TrainConfig>();
      }
      if (t.contains("fine")) {
        json s = t.at("fine");
        s["stage"] = "fine";
        c.fine = s.get<TrainConfig>();
      }
    }
    if (j.contains("autoencoder")) c.autoencoder = j.at("autoencoder").get<AutoEncoderConfig>();
    if (j.contains("inference")) {
      const auto& i = j.at("inference");
      require_keys(i, {"ensemble", "coarse_steps", "fine_steps", "strategy", "support_case", "air_threshold"},
                   "inference");
      c.inference.ensemble = i.value("ensemble", c.inference.ensemble);
      c.inference.coarse_steps = i.value("coarse_steps", c.inference.coarse_steps);
      c.inference.fine_steps = i.value("fine_steps", c.inference.fine_steps);
      c.inference.strategy = box_strategy_from_string(i.value("strategy", std::string("extreme")));
      c.inference.support_case = i.value("support_case", std::string());
      if (i.contains("air_threshold") && !i.at("air_threshold").is_null()) {
        c.inference.air_threshold = i.at("air_threshold").get<double>();
      }
    }
    if (j.contains("baselines")) {
      const auto& b = j.at("baselines");
      require_keys(b, {"methods", "stride", "feature_stride", "timing_windows", "max_cases"}, "baselines");
      if (b.contains("methods")) {
        c.baselines.methods.clear();
        for (const auto& m : b.at("methods")) c.baselines.methods.push_back(similarity_from_string(m.get<std::string>()));
      }
      c.baselines.stride = b.value("stride", c.baselines.stride);
      c.baselines.feature_stride = b.value("feature_stride", c.baselines.feature_stride);
      c.baselines.timing_windows = b.value("timing_windows", c.baselines.timing_windows);
      c.baselines.max_cases = b.value("max_cases", c.baselines.max_cases);
    }
    if (j.contains("evaluation")) {
      const auto& e = j.at("evaluation");
      require_keys(e, {"seeds", "max_coarse_steps"}, "evaluation");
      if (e.contains("seeds")) c.evaluation.seeds = e.at("seeds").get<std::vector<std::uint64_t>>();
      c.evaluation.max_coarse_steps = e.value("max_coarse_steps", c.evaluation.max_coarse_steps);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("malformed run config: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::kConfig) throw;
    fail(ErrorKind::kConfig, e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kConfig, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

// ---------------------------------------------------------------- lock

RunLock::RunLock(const fs::path& dir) : path_(dir / ".rprloc.lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    fail(ErrorKind::kConfig, "run directory " + dir.string() + " is locked by another command (" + path_.string() +
                                 "); remove the file if no command is running");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  if (::write(fd, pid.data(), pid.size()) < 0) {
    // The lock holds either way; the pid is informational.
  }
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---------------------------------------------------------------- shared helpers

BBox3D box_from_points(BoxStrategy strategy, const std::vector<Vec3>& finals, int* reordered) {
  Vec3 lo;
  Vec3 hi;
  if (strategy == BoxStrategy::kExtreme) {
    if (finals.size() != 6) fail(ErrorKind::kInvalidPoints, "extreme strategy needs 6 points");
    lo = {finals[0].z, finals[4].y, finals[2].x};
    hi = {finals[1].z, finals[5].y, finals[3].x};
  } else {
    if (finals.size() != 2) fail(ErrorKind::kInvalidPoints, "diagonal strategy needs 2 points");
    lo = finals[0];
    hi = finals[1];
  }
  int swaps = 0;
  for (int a = 0; a < 3; ++a) {
    if (lo[a] > hi[a]) {
      std::swap(lo[a], hi[a]);
      ++swaps;
    }
  }
  if (reordered) *reordered = swaps;
  return BBox3D::from_corners(lo, hi);
}

BBox3D box_from_run(const OrganDetection& det, int run, std::optional<int> step) {
  std::vector<Vec3> finals;
  for (const auto& p : det.points) {
    const RunTrace& r = p.runs.at(static_cast<std::size_t>(run));
    finals.push_back(step ? r.trajectory.at(static_cast<std::size_t>(*step)) : r.final_world);
  }
  return box_from_points(det.strategy, finals);
}

BBox3D box_from_step(const OrganDetection& det, int step) {
  std::vector<Vec3> finals;
  for (const auto& p : det.points) {
    Vec3 sum;
    for (const auto& r : p.runs) sum += r.trajectory.at(static_cast<std::size_t>(step));
    finals.push_back(sum / static_cast<double>(p.runs.size()));
  }
  return box_from_points(det.strategy, finals);
}

EvalData load_eval_data(const RunConfig& cfg, int max_cases) {
  const Workspace ws{cfg.output_dir};
  require_dataset(ws);
  EvalData d;
  d.manifest = load_dataset(ws.dataset());
  const auto val = d.manifest.split("val");
  if (val.empty()) fail(ErrorKind::kIo, "dataset has no validation cases to pick a support from");
  if (!cfg.inference.support_case.empty()) {
    d.support_id = d.manifest.find(cfg.inference.support_case).id;
  } else {
    Rng rng = make_stream(cfg.seed, {0x5u});
    d.support_id = val[std::uniform_int_distribution<std::size_t>(0, val.size() - 1)(rng)]->id;
  }
  const DatasetCase& sc = d.manifest.find(d.support_id);
  d.support_volume = d.manifest.load_volume(sc);
  d.support_masks = d.manifest.load_masks(sc);
  for (const DatasetCase* c : d.manifest.split("test")) {
    if (max_cases > 0 && static_cast<int>(d.test_ids.size()) >= max_cases) break;
    d.test_ids.push_back(c->id);
    d.test_volumes.push_back(d.manifest.load_volume(*c));
    const auto masks = d.manifest.load_masks(*c);
    for (const auto& [organ, mask] : masks) d.truth[c->id][organ] = mask_bbox(mask, d.test_volumes.back().spacing());
  }
  if (d.test_ids.empty()) fail(ErrorKind::kIo, "dataset has no test cases");
  return d;
}

std::string compare_csv_ignoring_time(const fs::path& a, const fs::path& b) {
  std::ifstream fa(a);
  std::ifstream fb(b);
  if (!fa) return "cannot read " + a.string();
  if (!fb) return "cannot read " + b.string();
  std::string la;
  std::string lb;
  std::vector<bool> skip;
  for (int line = 1;; ++line) {
    const bool ga = static_cast<bool>(std::getline(fa, la));
    const bool gb = static_cast<bool>(std::getline(fb, lb));
    if (!ga && !gb) return "";
    if (ga != gb) return "line count differs at line " + std::to_string(line);
    const auto ca = split_csv_line(la);
    const auto cb = split_csv_line(lb);
    if (line == 1) {
      if (la != lb) return "headers differ";
      for (const auto& h : ca) skip.push_back(h.find("time") != std::string::npos);
      continue;
    }
    if (ca.size() != cb.size()) return "column count differs at line " + std::to_string(line);
    for (std::size_t i = 0; i < ca.size(); ++i) {
      if (i < skip.size() && skip[i]) continue;
      if (ca[i] != cb[i]) return "line " + std::to_string(line) + " column " + std::to_string(i + 1) + ": '" + ca[i] + "' vs '" + cb[i] + "'";
    }
  }
}

// ---------------------------------------------------------------- commands

void cmd_generate(const CommandContext& ctx) {
  const RunLock lock(ctx.config.output_dir);
  snapshot(ctx, "generate");
  const Workspace ws = ctx.workspace();
  const RunConfig& c = ctx.config;
  const DatasetManifest m = generate_dataset(c.phantom, c.n_train, c.n_val, c.n_test, c.seed, ws.dataset(), ctx.overwrite);
  int damped = 0;
  for (const auto& cs : m.cases) damped += cs.damped_retries > 0;
  ctx.log("generated " + std::to_string(m.cases.size()) + " cases in " + ws.dataset().string() +
          (damped ? " (" + std::to_string(damped) + " with damped jitter)" : ""));
}

void cmd_train(const CommandContext& ctx, const std::string& stage) {
  const RunLock lock(ctx.config.output_dir);
  snapshot(ctx, "train_" + stage);
  const Workspace ws = ctx.workspace();
  require_dataset(ws);
  fs::create_directories(ws.models());
  require_fresh(ws.checkpoint(stage), ctx.overwrite);
  const DatasetManifest manifest = load_dataset(ws.dataset());
  const std::vector<Volume> volumes = load_split_volumes(manifest, "train");
  auto on_epoch = [&](const EpochLog& e) {
    ctx.log(stage + " epoch " + std::to_string(e.epoch) + " loss " + fmt(e.mean_loss, 4) + " (" + fmt(e.wall_time_s, 1) + " s)");
  };
  if (stage == "autoencoder") {
    AutoEncoderResult r = train_autoencoder(volumes, ctx.config.autoencoder, on_epoch);
    r.model.save(ws.checkpoint(stage));
    write_loss_csv(ws.loss_csv(stage), r.log);
    return;
  }
  const TrainConfig& tc = stage_from_string(stage) == Stage::kCoarse ? ctx.config.coarse : ctx.config.fine;
  TrainResult r = train_stage(tc, volumes, on_epoch);
  for (const auto& w : r.warnings) ctx.log("warning: " + w);
  r.model.save(ws.checkpoint(stage));
  write_loss_csv(ws.loss_csv(stage), r.log);
  ctx.log(stage + " model " + r.model.fingerprint() + " saved to " + ws.checkpoint(stage).string());
}

void cmd_locate(const CommandContext& ctx) {
  const RunLock lock(ctx.config.output_dir);
  snapshot(ctx, "locate");
  const RunConfig& c = ctx.config;
  const Workspace ws = ctx.workspace();
  const Models models = load_models(ws);
  const EvalData data = load_eval_data(c);
  const auto organs = c.phantom.organ_names();
  fs::create_directories(ws.reports());
  const CaseDetections dets = detect_all(models.coarse, &models.fine, data, organs, c.inference.strategy,
                                         c.inference.ensemble, locate_options(c.inference), c.seed);
  double total_time = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    json organs_json = json::array();
    for (const auto& d : dets[i]) {
      organs_json.push_back(to_json(d));
      total_time += d.wall_time_s;
      ++n;
    }
    write_json(ws.reports() / (data.test_ids[i] + ".json"),
               json{{"case", data.test_ids[i]},
                    {"support_case", data.support_id},
                    {"strategy", to_string(c.inference.strategy)},
                    {"K", c.inference.ensemble},
                    {"coarse_model", models.coarse.fingerprint()},
                    {"fine_model", models.fine.fingerprint()},
                    {"organs", organs_json}});
  }
  const auto preds = predictions_from(dets, data, "ours", [](const OrganDetection& d) { return d.box; });
  const EvalReport rep = evaluate_run(preds, data.truth, c.coarse.hash());
  write_summary_csv(ws.reports() / "locate_summary.csv", rep.summary);
  write_records_csv(ws.reports() / "locate_records.csv", rep.records);
  ctx.log("located " + std::to_string(n) + " organs; mean wall time per organ " + fmt(total_time / static_cast<double>(n), 3) + " s");
}

void cmd_benchmark(const CommandContext& ctx) {
  const RunLock lock(ctx.config.output_dir);
  snapshot(ctx, "benchmark");
  const RunConfig& c = ctx.config;
  const Workspace ws = ctx.workspace();
  const EvalData data = load_eval_data(c, c.baselines.max_cases);
  const auto organs = c.phantom.organ_names();
  fs::create_directories(ws.tables());
  const IntensityWindow window = c.coarse.window;

  std::vector<Prediction> preds;
  std::vector<std::size_t> windows_of;
  std::vector<std::string> source_of;
  auto add = [&](Prediction p, std::size_t windows, const std::string& source) {
    preds.push_back(std::move(p));
    windows_of.push_back(windows);
    source_of.push_back(source);
  };
  auto fail_all = [&](const std::string& method, const std::string& why) {
    for (const auto& id : data.test_ids)
      for (const auto& organ : organs) add({method, organ, id, std::nullopt, 0.0, why}, 0, "none");
  };

  // Ours: the full coarse-to-fine ensemble pipeline.
  try {
    const Models models = load_models(ws);
    const CaseDetections dets = detect_all(models.coarse, &models.fine, data, organs, BoxStrategy::kExtreme,
                                           c.inference.ensemble, locate_options(c.inference), c.seed);
    for (std::size_t i = 0; i < dets.size(); ++i)
      for (const auto& d : dets[i]) add({"ours", d.organ, data.test_ids[i], d.box, d.wall_time_s, ""}, 0, "measured");
  } catch (const Error& e) {
    ctx.log(std::string("ours failed: ") + e.what());
    fail_all("ours", e.what());
  }

  // Baselines share the support extreme points and the coarse patch shape.
  const Volume support_norm = normalize_intensity(data.support_volume, window);
  std::map<std::string, std::array<VoxelPoint, 6>> support_points;
  for (const auto& organ : organs) support_points[organ] = extreme_voxels(data.support_masks.at(organ), data.support_volume.spacing());
  std::vector<Volume> test_norm;
  for (const auto& v : data.test_volumes) test_norm.push_back(normalize_intensity(v, window));
  const Shape3 ps = c.coarse.patch_shape;

  std::optional<AutoEncoder> ae;
  std::string ae_error;
  const bool wants_features = std::any_of(c.baselines.methods.begin(), c.baselines.methods.end(), is_feature_kind);
  if (wants_features) {
    try {
      if (!fs::exists(ws.checkpoint("autoencoder"))) {
        fail(ErrorKind::kIo, "missing " + ws.checkpoint("autoencoder").string() + "; run `rprloc train --stage autoencoder`");
      }
      ae.emplace(AutoEncoder::load(ws.checkpoint("autoencoder")));
    } catch (const Error& e) {
      ae_error = e.what();
      ctx.log("feature baselines unavailable: " + ae_error);
    }
  }
  std::vector<FeatureGrid> grids(test_norm.size());
  std::vector<FeatureCostEstimate> costs(test_norm.size());
  std::map<std::string, std::vector<float>> support_latents;
  if (ae) {
    for (const auto& organ : organs)
      for (int p = 0; p < 6; ++p) {
        support_latents[organ + "/" + kExtremeNames[p]] = ae->encode(crop_patch(support_norm, support_points[organ][p], ps));
      }
    for (std::size_t i = 0; i < test_norm.size(); ++i) {
      grids[i] = encode_windows(*ae, test_norm[i], c.baselines.feature_stride);
      costs[i] = estimate_feature_search_cost(*ae, test_norm[i], c.baselines.stride,
                                              static_cast<std::size_t>(c.baselines.timing_windows));
    }
  }

  for (SimilarityKind kind : c.baselines.methods) {
    const std::string method = to_string(kind);
    if (is_feature_kind(kind) && !ae) {
      fail_all(method, ae_error);
      continue;
    }
    for (std::size_t i = 0; i < test_norm.size(); ++i) {
      for (const auto& organ : organs) {
        try {
          std::vector<Vec3> finals;
          double time = 0.0;
          std::size_t windows = 0;
          for (int p = 0; p < 6; ++p) {
            MatchResult m;
            if (is_feature_kind(kind)) {
              m = feature_search(grids[i], support_latents.at(organ + "/" + kExtremeNames[p]), kind);
              time += costs[i].seconds;
              windows += costs[i].windows;
            } else {
              m = sliding_window_search(test_norm[i], crop_patch(support_norm, support_points[organ][p], ps), kind,
                                        c.baselines.stride);
              time += m.wall_time_s;
              windows += m.windows;
            }
            finals.push_back(voxel_to_world(m.best_center, test_norm[i].spacing()));
          }
          add({method, organ, data.test_ids[i], box_from_points(BoxStrategy::kExtreme, finals), time, ""}, windows,
              is_feature_kind(kind) ? "extrapolated" : "measured");
        } catch (const Error& e) {
          add({method, organ, data.test_ids[i], std::nullopt, 0.0, e.what()}, 0, "none");
        }
      }
      ctx.log(method + " " + data.test_ids[i] + " done");
    }
  }

  const EvalReport rep = evaluate_run(preds, data.truth, c.coarse.hash());
  {
    std::ofstream out(ws.tables() / "benchmark.csv", std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write benchmark.csv");
    out << "method,organ,case,iou,awd_mm,wall_time_s,windows,time_source,error\n";
    for (std::size_t k = 0; k < preds.size(); ++k) {
      const Prediction& p = preds[k];
      const auto gt = data.truth.at(p.case_id).at(p.organ);
      out << p.method << ',' << p.organ << ',' << p.case_id << ',' << (p.box ? fmt(iou3d(*p.box, gt)) : "") << ','
          << (p.box ? fmt(awd(*p.box, gt)) : "") << ',' << fmt(p.time_s) << ',' << windows_of[k] << ','
          << source_of[k] << ',' << (p.error.empty() ? "" : "failed") << '\n';
    }
  }
  write_summary_csv(ws.tables() / "table3.csv", rep.summary);
  const std::string text = render_table("Table 3: methods x organs, IoU (%) / AWD (mm), per-organ time (s)", rep.summary, true);
  write_text(ws.tables() / "table3.txt", text);
  for (const auto& f : rep.flags) ctx.log("flag: " + f);
  ctx.log(text);
}

void cmd_evaluate(const CommandContext& ctx) {
  const RunLock lock(ctx.config.output_dir);
  snapshot(ctx, "evaluate");
  const RunConfig& c = ctx.config;
  const Workspace ws = ctx.workspace();
  const Models models = load_models(ws);
  const EvalData data = load_eval_data(c);
  const auto organs = c.phantom.organ_names();
  fs::create_directories(ws.tables());
  const LocateOptions opt = locate_options(c.inference);
  const int k = c.inference.ensemble;

  // Table 1: strategy x multi-run ensemble. K = 1 is run 0 of the K-run
  // ensemble, which uses the same initialization stream.
  struct Row {
    std::string label;
    std::vector<std::vector<SummaryRow>> per_seed;  // seed -> summary rows
  };
  std::vector<Row> t1{{"diagonal", {}}, {"diagonal+MRE(K=" + std::to_string(k) + ")", {}}, {"extreme", {}},
                      {"extreme+MRE(K=" + std::to_string(k) + ")", {}}};
  CaseDetections extreme_first_seed;
  for (std::size_t si = 0; si < c.evaluation.seeds.size(); ++si) {
    const std::uint64_t seed = c.evaluation.seeds[si];
    for (BoxStrategy strategy : {BoxStrategy::kDiagonal, BoxStrategy::kExtreme}) {
      const CaseDetections dets = detect_all(models.coarse, &models.fine, data, organs, strategy, k, opt, seed);
      const std::size_t base = strategy == BoxStrategy::kDiagonal ? 0 : 2;
      const auto single = predictions_from(dets, data, t1[base].label, [](const OrganDetection& d) { return box_from_run(d, 0); });
      const auto ens = predictions_from(dets, data, t1[base + 1].label, [](const OrganDetection& d) { return d.box; });
      t1[base].per_seed.push_back(evaluate_run(single, data.truth).summary);
      t1[base + 1].per_seed.push_back(evaluate_run(ens, data.truth).summary);
      if (strategy == BoxStrategy::kExtreme && si == 0) extreme_first_seed = dets;
      ctx.log("table 1: seed " + std::to_string(seed) + " " + to_string(strategy) + " done");
    }
  }
  {
    std::ofstream out(ws.tables() / "table1.csv", std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write table1.csv");
    out << "method,organ,n,missing,iou,awd_mm,iou_seed_std,awd_seed_std,seeds,time_s\n";
    std::vector<SummaryRow> merged;
    for (const Row& row : t1) {
      const std::size_t nrows = row.per_seed.front().size();
      for (std::size_t r = 0; r < nrows; ++r) {
        std::vector<double> ious;
        std::vector<double> awds;
        std::vector<double> times;
        SummaryRow m = row.per_seed.front()[r];
        for (const auto& seed_rows : row.per_seed) {
          ious.push_back(seed_rows[r].mean_iou);
          awds.push_back(seed_rows[r].mean_awd);
          times.push_back(seed_rows[r].mean_time_s);
        }
        m.mean_iou = mean_of(ious);
        m.mean_awd = mean_of(awds);
        m.mean_time_s = mean_of(times);
        merged.push_back(m);
        out << m.method << ',' << m.organ << ',' << m.n << ',' << m.missing << ',' << fmt(m.mean_iou) << ','
            << fmt(m.mean_awd) << ',' << fmt(stdev_of(ious)) << ',' << fmt(stdev_of(awds)) << ','
            << row.per_seed.size() << ',' << fmt(m.mean_time_s) << '\n';
      }
    }
    write_text(ws.tables() / "table1.txt",
               render_table("Table 1: box strategy x multi-run ensemble, IoU (%) / AWD (mm), mean over " +
                                std::to_string(c.evaluation.seeds.size()) + " evaluation seeds",
                            merged, false));
  }

  // Table 2: multi-step coarse inference vs coarse + fine, extreme strategy,
  // K-run ensemble, first evaluation seed. All rows share initializations.
  const std::uint64_t seed0 = c.evaluation.seeds.front();
  LocateOptions coarse_only = opt;
  coarse_only.steps_coarse = c.evaluation.max_coarse_steps;
  const CaseDetections multi = detect_all(models.coarse, nullptr, data, organs, BoxStrategy::kExtreme, k, coarse_only, seed0);
  std::vector<Prediction> t2;
  for (int s = 1; s <= c.evaluation.max_coarse_steps; ++s) {
    const std::string label = "Mc(" + std::to_string(s) + (s == 1 ? " step)" : " steps)");
    const auto p = predictions_from(multi, data, label, [s](const OrganDetection& d) { return box_from_step(d, s); });
    t2.insert(t2.end(), p.begin(), p.end());
  }
  const auto both = predictions_from(extreme_first_seed, data, "Mc+Mf", [](const OrganDetection& d) { return d.box; });
  t2.insert(t2.end(), both.begin(), both.end());
  const EvalReport rep2 = evaluate_run(t2, data.truth, c.coarse.hash());
  write_summary_csv(ws.tables() / "table2.csv", rep2.summary);
  write_text(ws.tables() / "table2.txt",
             render_table("Table 2: multi-step localization, IoU (%) / AWD (mm)", rep2.summary, false));
  ctx.log("tables written to " + ws.tables().string());
}

void cmd_repro_tables(const CommandContext& ctx) {
  CommandContext inner = ctx;
  inner.log = [&ctx](const std::string& m) { ctx.log(m); };
  cmd_generate(inner);
  cmd_train(inner, "coarse");
  cmd_train(inner, "fine");
  const bool wants_features =
      std::any_of(ctx.config.baselines.methods.begin(), ctx.config.baselines.methods.end(), is_feature_kind);
  if (wants_features) cmd_train(inner, "autoencoder");
  cmd_locate(inner);
  cmd_benchmark(inner);
  cmd_evaluate(inner);
  const Workspace ws = ctx.workspace();
  for (const char* t : {"table1.txt", "table2.txt", "table3.txt"}) {
    std::ifstream in(ws.tables() / t);
    std::stringstream ss;
    ss << in.rdbuf();
    ctx.log(ss.str());
  }
}

}  // namespace rprloc
