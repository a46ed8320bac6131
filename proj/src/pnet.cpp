#include "rprloc/pnet.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rprloc/errors.hpp"
#include "rprloc/phantom.hpp"
#include "checkpoint.hpp"

namespace rprloc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kCheckpointMagic[8] = {'R', 'P', 'R', 'L', 'O', 'C', 'K', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void to_json(json& j, const PnetArchitecture& a) {
  j = json{{"channels", a.channels},
           {"convs_per_block", a.convs_per_block},
           {"fc_hidden", a.fc_hidden},
           {"zero_init_head", a.zero_init_head}};
}

void from_json(const json& j, PnetArchitecture& a) {
  a = PnetArchitecture{};
  if (j.contains("channels")) a.channels = j.at("channels").get<std::vector<int>>();
  a.convs_per_block = j.value("convs_per_block", a.convs_per_block);
  a.fc_hidden = j.value("fc_hidden", a.fc_hidden);
  a.zero_init_head = j.value("zero_init_head", a.zero_init_head);
}

template <typename T>
nn::Sequential<T> build_trunk(const PnetArchitecture& arch, Rng& rng) {
  if (arch.channels.empty() || arch.convs_per_block < 1) {
    fail(ErrorKind::kInvalidArgument, "architecture needs at least one block with one convolution");
  }
  nn::Sequential<T> net;
  int in = 1;
  for (int out : arch.channels) {
    for (int k = 0; k < arch.convs_per_block; ++k) {
      auto& conv = net.add(std::make_unique<nn::Conv3d<T>>(in, out));
      conv.init_kaiming(rng);
      if (net.size() == 1) conv.set_input_grad(false);
      net.add(std::make_unique<nn::BatchNorm3d<T>>(out));
      net.add(std::make_unique<nn::ReLU<T>>());
      in = out;
    }
    net.add(std::make_unique<nn::MaxPool3d<T>>());
  }
  return net;
}

template <typename T>
nn::Sequential<T> build_pnet(const PnetArchitecture& arch, Rng& rng) {
  nn::Sequential<T> net = build_trunk<T>(arch, rng);
  net.add(std::make_unique<nn::GlobalAvgPool<T>>());
  auto& fc1 = net.add(std::make_unique<nn::Linear<T>>(arch.channels.back(), arch.fc_hidden));
  fc1.init_kaiming(rng);
  net.add(std::make_unique<nn::ReLU<T>>());
  auto& head = net.add(std::make_unique<nn::Linear<T>>(arch.fc_hidden, kLatentDim));
  head.init_kaiming(rng, T(1));
  if (arch.zero_init_head) head.zero_init();
  return net;
}

template nn::Sequential<float> build_trunk<float>(const PnetArchitecture&, Rng&);
template nn::Sequential<double> build_trunk<double>(const PnetArchitecture&, Rng&);
template nn::Sequential<float> build_pnet<float>(const PnetArchitecture&, Rng&);
template nn::Sequential<double> build_pnet<double>(const PnetArchitecture&, Rng&);

std::vector<Shape3> trunk_shapes(const PnetArchitecture& arch, Shape3 patch_shape) {
  std::vector<Shape3> shapes{patch_shape};
  Shape3 s = patch_shape;
  for (std::size_t b = 0; b < arch.channels.size(); ++b) {
    s = {nn::MaxPool3d<float>::out_extent(s.d), nn::MaxPool3d<float>::out_extent(s.h),
         nn::MaxPool3d<float>::out_extent(s.w)};
    shapes.push_back(s);
  }
  return shapes;
}

double offset_loss(const WorldOffset& predicted, const WorldOffset& target) {
  const Vec3 d = predicted.delta - target.delta;
  return d.z * d.z + d.y * d.y + d.x * d.x;
}

double batch_offset_loss(std::span<const WorldOffset> predicted, std::span<const WorldOffset> target) {
  if (predicted.size() != target.size() || predicted.empty()) {
    fail(ErrorKind::kInvalidArgument, "batch loss needs equally sized, non-empty batches");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) sum += offset_loss(predicted[i], target[i]);
  return sum / static_cast<double>(predicted.size());
}

// ---------------------------------------------------------------- ProjectionModel

ProjectionModel::ProjectionModel(Stage stage, double radius_mm, Shape3 patch_shape, IntensityWindow window,
                                 PnetArchitecture arch, std::uint64_t init_seed)
    : stage_(stage), radius_(radius_mm), patch_shape_(patch_shape), window_(window), arch_(std::move(arch)) {
  if (!(radius_ > 0.0 && std::isfinite(radius_))) fail(ErrorKind::kInvalidArgument, "model radius must be > 0");
  if (patch_shape_.d < 1 || patch_shape_.h < 1 || patch_shape_.w < 1) {
    fail(ErrorKind::kInvalidArgument, "model patch shape must be >= 1 per axis");
  }
  Rng rng = make_stream(init_seed, {0x1417ULL});
  net_ = build_pnet<float>(arch_, rng);
}

nn::Tensor<float> patch_batch(std::span<const Patch* const> patches, Shape3 shape, const IntensityWindow& window) {
  nn::Tensor<float> t(static_cast<int>(patches.size()), 1, shape.d, shape.h, shape.w);
  const double scale = 1.0 / (window.hi - window.lo);
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Patch& p = *patches[i];
    if (!(p.shape == shape) || p.data.size() != shape.voxels()) {
      fail(ErrorKind::kInvalidArgument,
           "patch shape " + to_string(p.shape) + " does not match model shape " + to_string(shape));
    }
    float* dst = t.sample(static_cast<int>(i));
    if (p.unit == IntensityUnit::kNormalized) {
      std::copy(p.data.begin(), p.data.end(), dst);
    } else {
      for (std::size_t k = 0; k < p.data.size(); ++k) {
        const double c = std::clamp(static_cast<double>(p.data[k]), window.lo, window.hi);
        dst[k] = static_cast<float>((c - window.lo) * scale);
      }
    }
  }
  return t;
}

nn::Tensor<float> ProjectionModel::to_tensor(std::span<const Patch* const> patches) const {
  return patch_batch(patches, patch_shape_, window_);
}

Vec3 ProjectionModel::project(const Patch& patch) const {
  const Patch* ptr = &patch;
  const nn::Tensor<float> out = net_.infer(to_tensor(std::span<const Patch* const>(&ptr, 1)));
  return {out.data[0], out.data[1], out.data[2]};
}

WorldOffset ProjectionModel::predict_offset(const Patch& query, const Patch& support) const {
  return bounded_offset(radius_, project(query), project(support));
}

std::string ProjectionModel::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, values] : net_.state()) {
    const std::string_view bytes(reinterpret_cast<const char*>(values->data()), values->size() * sizeof(float));
    h ^= fnv1a64(bytes) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  }
  return hex64(h);
}

void ProjectionModel::save(const fs::path& path) const {
  const json header{{"stage", to_string(stage_)},
                    {"radius_mm", radius_},
                    {"patch_shape", {patch_shape_.d, patch_shape_.h, patch_shape_.w}},
                    {"window", {window_.lo, window_.hi}},
                    {"architecture", arch_},
                    {"config_hash", provenance_.config_hash},
                    {"epochs", provenance_.epochs}};
  detail::write_checkpoint(path, kCheckpointMagic, kCheckpointVersion, header, net_.state());
}

ProjectionModel ProjectionModel::load(const fs::path& path) {
  const json header = detail::read_checkpoint_header(path, kCheckpointMagic, kCheckpointVersion);
  try {
    const auto ps = header.at("patch_shape").get<std::array<int, 3>>();
    const auto win = header.at("window").get<std::array<double, 2>>();
    ProjectionModel model(stage_from_string(header.at("stage").get<std::string>()), header.at("radius_mm").get<double>(),
                          {ps[0], ps[1], ps[2]}, {win[0], win[1]}, header.at("architecture").get<PnetArchitecture>(), 0);
    model.provenance_.config_hash = header.value("config_hash", "");
    model.provenance_.epochs = header.value("epochs", 0);
    detail::read_checkpoint_state(path, kCheckpointMagic, kCheckpointVersion, model.net_.state());
    return model;
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, path.string() + ": malformed checkpoint header: " + e.what());
  }
}

// ---------------------------------------------------------------- configs

std::string TrainConfig::hash() const { return hex64(fnv1a64(json(*this).dump())); }

void to_json(json& j, const TrainConfig& c) {
  j = json{{"stage", to_string(c.stage)},
           {"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"learning_rate", c.learning_rate},
           {"optimizer", "adam"},
           {"seed", c.seed},
           {"dataset", c.dataset},
           {"patch_shape", {c.patch_shape.d, c.patch_shape.h, c.patch_shape.w}},
           {"radius_mm", c.radius_mm},
           {"pairs_per_volume", c.pairs_per_volume},
           {"window", {c.window.lo, c.window.hi}},
           {"overflow", c.overflow == OverflowPolicy::kReject ? "reject" : "saturate"},
           {"architecture", c.arch}};
}

void from_json(const json& j, TrainConfig& c) {
  const Stage stage = stage_from_string(j.value("stage", std::string("coarse")));
  c = desk_preset(stage);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.value("optimizer", std::string("adam")) != "adam") fail(ErrorKind::kConfig, "only the adam optimizer is supported");
  c.seed = j.value("seed", c.seed);
  c.dataset = j.value("dataset", c.dataset);
  if (j.contains("patch_shape")) {
    const auto p = j.at("patch_shape").get<std::array<int, 3>>();
    c.patch_shape = {p[0], p[1], p[2]};
  }
  c.radius_mm = j.value("radius_mm", c.radius_mm);
  c.pairs_per_volume = j.value("pairs_per_volume", c.pairs_per_volume);
  if (j.contains("window")) {
    const auto w = j.at("window").get<std::array<double, 2>>();
    c.window = {w[0], w[1]};
  }
  const std::string overflow = j.value("overflow", std::string("reject"));
  if (overflow != "reject" && overflow != "saturate") fail(ErrorKind::kConfig, "overflow must be reject or saturate");
  c.overflow = overflow == "reject" ? OverflowPolicy::kReject : OverflowPolicy::kSaturate;
  if (j.contains("architecture")) c.arch = j.at("architecture").get<PnetArchitecture>();
  if (c.epochs < 1 || c.batch_size < 1 || c.pairs_per_volume < 1 || !(c.learning_rate > 0.0)) {
    fail(ErrorKind::kConfig, "epochs, batch_size, pairs_per_volume and learning_rate must be positive");
  }
}

TrainConfig desk_preset(Stage stage) {
  TrainConfig c;
  c.stage = stage;
  c.radius_mm = stage == Stage::kCoarse ? 0.0 : 20.0;
  return c;
}

TrainConfig full_scale_preset(Stage stage, const std::string& dataset_kind) {
  TrainConfig c;
  c.stage = stage;
  c.epochs = 250;
  if (dataset_kind == "han") {
    c.patch_shape = {16, 64, 64};
    c.radius_mm = stage == Stage::kCoarse ? 300.0 : 30.0;
  } else if (dataset_kind == "pancreas") {
    c.patch_shape = {48, 48, 48};
    c.radius_mm = stage == Stage::kCoarse ? 700.0 : 50.0;
  } else {
    fail(ErrorKind::kConfig, "unknown preset '" + dataset_kind + "' (expected han or pancreas)");
  }
  return c;
}

// ---------------------------------------------------------------- training

PnetTrainer::PnetTrainer(ProjectionModel& model, double learning_rate)
    : model_(model), adam_(model.network().params(), learning_rate) {}

double PnetTrainer::step(std::span<const OffsetSample> batch) {
  if (batch.empty()) fail(ErrorKind::kInvalidArgument, "empty training batch");
  const int b = static_cast<int>(batch.size());
  std::vector<const Patch*> patches;
  patches.reserve(2 * batch.size());
  for (const auto& s : batch) patches.push_back(&s.query);
  for (const auto& s : batch) patches.push_back(&s.support);

  auto& net = model_.network();
  const nn::Tensor<float> out = net.forward(model_.to_tensor(patches));
  nn::Tensor<float> grad(out.n, out.c, out.d, out.h, out.w);
  double loss = 0.0;
  const float scale = 1.0f / static_cast<float>(b);
  for (int i = 0; i < b; ++i) {
    float gq[kLatentDim];
    float gs[kLatentDim];
    loss += pair_loss_and_grad<float>(out.sample(i), out.sample(b + i), batch[i].gt_offset.delta, model_.radius(), gq,
                                      gs);
    for (int a = 0; a < kLatentDim; ++a) {
      grad.sample(i)[a] = gq[a] * scale;
      grad.sample(b + i)[a] = gs[a] * scale;
    }
  }
  loss /= b;
  if (!std::isfinite(loss)) fail(ErrorKind::kDivergence, "training loss became non-finite");
  net.zero_grad();
  net.backward(grad);
  adam_.step();
  return loss;
}

TrainResult train_stage(const TrainConfig& cfg, const std::vector<Volume>& volumes, const EpochCallback& on_epoch) {
  if (volumes.empty()) fail(ErrorKind::kIo, "no training volumes");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.pairs_per_volume < 1 || !(cfg.learning_rate > 0.0)) {
    fail(ErrorKind::kConfig, "epochs, batch_size, pairs_per_volume and learning_rate must be positive");
  }
  std::vector<Volume> normalized;
  normalized.reserve(volumes.size());
  double max_diag = 0.0;
  for (const Volume& v : volumes) {
    normalized.push_back(v.unit() == IntensityUnit::kNormalized ? v : normalize_intensity(v, cfg.window));
    max_diag = std::max(max_diag, v.diagonal_mm());
  }
  double radius = cfg.radius_mm;
  if (radius <= 0.0) radius = cfg.stage == Stage::kCoarse ? max_diag : 20.0;
  const StageConfig sc{cfg.stage, radius, cfg.patch_shape, cfg.overflow};

  TrainResult result{ProjectionModel(cfg.stage, radius, cfg.patch_shape, cfg.window, cfg.arch, cfg.seed), {}, {}};
  for (const Volume& v : normalized)
    for (auto& w : stage_config_warnings(v, sc))
      if (std::find(result.warnings.begin(), result.warnings.end(), w) == result.warnings.end())
        result.warnings.push_back(w);
  result.model.provenance() = {cfg.hash(), cfg.epochs};
  PnetTrainer trainer(result.model, cfg.learning_rate);

  const std::uint64_t stage_key = cfg.stage == Stage::kCoarse ? 0 : 1;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order;
    for (std::size_t v = 0; v < normalized.size(); ++v)
      for (int k = 0; k < cfg.pairs_per_volume; ++k) order.push_back(v);
    Rng shuffle_rng = make_stream(cfg.seed, {stage_key, static_cast<std::uint64_t>(epoch), 1});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::vector<OffsetSample> batch;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) {
        Rng rng = make_stream(cfg.seed, {stage_key, static_cast<std::uint64_t>(epoch), i, 2});
        batch.push_back(sample_pair(normalized[order[i]], sc, rng));
      }
      loss_sum += trainer.step(batch) * static_cast<double>(batch.size());
      seen += batch.size();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back({epoch + 1, loss_sum / static_cast<double>(seen), secs});
    if (on_epoch) on_epoch(result.log.back());
  }
  return result;
}

TrainResult train_stage(const TrainConfig& cfg, const EpochCallback& on_epoch) {
  if (cfg.dataset.empty()) fail(ErrorKind::kConfig, "training config has no dataset path");
  const DatasetManifest manifest = load_dataset(cfg.dataset);
  return train_stage(cfg, load_split_volumes(manifest, "train"), on_epoch);
}

void write_loss_csv(const fs::path& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  out << "epoch,mean_loss,wall_time_s\n";
  out.precision(17);
  for (const auto& e : log) out << e.epoch << ',' << e.mean_loss << ',' << e.wall_time_s << '\n';
}

std::vector<EpochLog> read_loss_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EpochLog> log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    EpochLog e;
    char c1 = 0;
    char c2 = 0;
    if (!(row >> e.epoch >> c1 >> e.mean_loss >> c2 >> e.wall_time_s) || c1 != ',' || c2 != ',') {
      fail(ErrorKind::kIo, path.string() + ": malformed loss row '" + line + "'");
    }
    log.push_back(e);
  }
  return log;
}

}  // namespace rprloc
