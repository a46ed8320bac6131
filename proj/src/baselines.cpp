#include "rprloc/baselines.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "checkpoint.hpp"
#include "rprloc/errors.hpp"
#include "rprloc/pairsampler.hpp"

namespace rprloc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kAutoEncoderMagic[8] = {'R', 'P', 'R', 'L', 'O', 'C', 'A', '1'};
constexpr std::uint32_t kAutoEncoderVersion = 1;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void require_same_size(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) fail(ErrorKind::kInvalidArgument, "similarity needs equally sized, non-empty inputs");
}

// Running sums of one window against the fixed support.
struct WindowSums {
  double sum_w = 0.0;
  double sum_ww = 0.0;
  double sum_ws = 0.0;
  double sum_dd = 0.0;
};

struct SupportStats {
  std::size_t n = 0;
  double sum = 0.0;
  double sum_sq = 0.0;
};

// Returns false when the similarity is undefined for this window.
bool score_window(SimilarityKind kind, const WindowSums& w, const SupportStats& s, double& score) {
  const auto n = static_cast<double>(s.n);
  switch (kind) {
    case SimilarityKind::kGsMse:
      score = w.sum_dd / n;
      return true;
    case SimilarityKind::kGsCosine: {
      if (w.sum_ww <= 0.0 || s.sum_sq <= 0.0) return false;
      score = w.sum_ws / (std::sqrt(w.sum_ww) * std::sqrt(s.sum_sq));
      return true;
    }
    case SimilarityKind::kGsNcc: {
      const double var_w = w.sum_ww / n - (w.sum_w / n) * (w.sum_w / n);
      const double var_s = s.sum_sq / n - (s.sum / n) * (s.sum / n);
      const double tol = 1e-12;
      if (var_w <= tol || var_s <= tol) return false;
      const double cov = w.sum_ws / n - (w.sum_w / n) * (s.sum / n);
      score = cov / std::sqrt(var_w * var_s);
      return true;
    }
    default:
      fail(ErrorKind::kInvalidArgument, "not a gray-scale similarity");
  }
}

bool better(double candidate, double incumbent, bool lower) { return lower ? candidate < incumbent : candidate > incumbent; }

std::vector<int> window_starts(int n, int p, int stride) {
  std::vector<int> out;
  for (int s = 0; s + p <= n; s += stride) out.push_back(s);
  return out;
}

}  // namespace

const char* to_string(SimilarityKind k) {
  switch (k) {
    case SimilarityKind::kGsMse: return "gs_mse";
    case SimilarityKind::kGsCosine: return "gs_cosine";
    case SimilarityKind::kGsNcc: return "gs_ncc";
    case SimilarityKind::kFmMse: return "fm_mse";
    case SimilarityKind::kFmCosine: return "fm_cosine";
  }
  return "unknown";
}

SimilarityKind similarity_from_string(const std::string& s) {
  for (auto k : {SimilarityKind::kGsMse, SimilarityKind::kGsCosine, SimilarityKind::kGsNcc, SimilarityKind::kFmMse,
                 SimilarityKind::kFmCosine}) {
    if (s == to_string(k)) return k;
  }
  fail(ErrorKind::kInvalidArgument, "unknown similarity '" + s + "'");
}

bool lower_is_better(SimilarityKind k) { return k == SimilarityKind::kGsMse || k == SimilarityKind::kFmMse; }

bool is_feature_kind(SimilarityKind k) { return k == SimilarityKind::kFmMse || k == SimilarityKind::kFmCosine; }

double mse(std::span<const float> a, std::span<const float> b) {
  require_same_size(a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

double cosine(std::span<const float> a, std::span<const float> b) {
  require_same_size(a, b);
  double ab = 0.0;
  double aa = 0.0;
  double bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += static_cast<double>(a[i]) * b[i];
    aa += static_cast<double>(a[i]) * a[i];
    bb += static_cast<double>(b[i]) * b[i];
  }
  if (aa <= 0.0 || bb <= 0.0) fail(ErrorKind::kUndefinedSimilarity, "cosine similarity of a zero-norm vector");
  return ab / (std::sqrt(aa) * std::sqrt(bb));
}

double ncc(std::span<const float> a, std::span<const float> b) {
  require_same_size(a, b);
  const auto n = static_cast<double>(a.size());
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double va = 0.0;
  double vb = 0.0;
  double cov = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  if (va / n <= 1e-12 || vb / n <= 1e-12) fail(ErrorKind::kUndefinedSimilarity, "ncc of a zero-variance patch");
  return cov / std::sqrt(va * vb);
}

double similarity(const Patch& a, const Patch& b, SimilarityKind kind) {
  if (!(a.shape == b.shape)) fail(ErrorKind::kInvalidArgument, "similarity needs patches of equal shape");
  switch (kind) {
    case SimilarityKind::kGsMse: return mse(a.data, b.data);
    case SimilarityKind::kGsCosine: return cosine(a.data, b.data);
    case SimilarityKind::kGsNcc: return ncc(a.data, b.data);
    default: fail(ErrorKind::kInvalidArgument, "feature similarities need an encoder");
  }
}

std::size_t window_count(const Shape3& volume, const Shape3& patch, int stride) {
  if (stride < 1) fail(ErrorKind::kInvalidArgument, "stride must be >= 1");
  std::size_t n = 1;
  for (int a = 0; a < 3; ++a) {
    if (patch[a] > volume[a]) return 0;
    n *= static_cast<std::size_t>((volume[a] - patch[a]) / stride + 1);
  }
  return n;
}

MatchResult sliding_window_search(const Volume& vol, const Patch& support, SimilarityKind kind, int stride) {
  const auto t0 = std::chrono::steady_clock::now();
  if (is_feature_kind(kind)) fail(ErrorKind::kInvalidArgument, "feature similarities need an encoder");
  if (stride < 1) fail(ErrorKind::kInvalidArgument, "stride must be >= 1");
  const Shape3& vs = vol.shape();
  const Shape3& ps = support.shape;
  if (ps.d > vs.d || ps.h > vs.h || ps.w > vs.w) {
    fail(ErrorKind::kInvalidArgument, "support patch " + to_string(ps) + " is larger than the volume " + to_string(vs));
  }
  if (support.data.size() != ps.voxels()) fail(ErrorKind::kInvalidArgument, "support patch data does not match its shape");

  SupportStats st;
  st.n = support.data.size();
  for (float v : support.data) {
    st.sum += v;
    st.sum_sq += static_cast<double>(v) * v;
  }

  MatchResult res;
  res.lower_better = lower_is_better(kind);
  res.best_score = res.lower_better ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
  const auto data = vol.data();
  const float* s = support.data.data();
  for (int z0 : window_starts(vs.d, ps.d, stride))
    for (int y0 : window_starts(vs.h, ps.h, stride))
      for (int x0 : window_starts(vs.w, ps.w, stride)) {
        WindowSums w;
        for (int z = 0; z < ps.d; ++z)
          for (int y = 0; y < ps.h; ++y) {
            const float* row = data.data() + vol.offset(z0 + z, y0 + y, x0);
            const float* srow = s + (static_cast<std::size_t>(z) * ps.h + y) * ps.w;
            float a = 0.0f;
            float aa = 0.0f;
            float as = 0.0f;
            float dd = 0.0f;
            for (int x = 0; x < ps.w; ++x) {
              const float v = row[x];
              const float d = v - srow[x];
              a += v;
              aa += v * v;
              as += v * srow[x];
              dd += d * d;
            }
            w.sum_w += a;
            w.sum_ww += aa;
            w.sum_ws += as;
            w.sum_dd += dd;
          }
        ++res.windows;
        double score = 0.0;
        if (!score_window(kind, w, st, score)) continue;
        ++res.valid_windows;
        if (res.valid_windows == 1 || better(score, res.best_score, res.lower_better)) {
          res.best_score = score;
          res.best_center = {{static_cast<double>(z0 + ps.d / 2), static_cast<double>(y0 + ps.h / 2),
                              static_cast<double>(x0 + ps.w / 2)}};
        }
      }
  if (res.valid_windows == 0) {
    fail(ErrorKind::kNoValidWindow, std::string(to_string(kind)) + " is undefined for every window of the search");
  }
  res.wall_time_s = seconds_since(t0);
  return res;
}

// ---------------------------------------------------------------- autoencoder

void to_json(json& j, const AutoEncoderConfig& c) {
  j = json{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"patches_per_volume", c.patches_per_volume},
           {"learning_rate", c.learning_rate},
           {"seed", c.seed},
           {"patch_shape", {c.patch_shape.d, c.patch_shape.h, c.patch_shape.w}},
           {"window", {c.window.lo, c.window.hi}},
           {"architecture", c.arch}};
}

void from_json(const json& j, AutoEncoderConfig& c) {
  c = AutoEncoderConfig{};
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.patches_per_volume = j.value("patches_per_volume", c.patches_per_volume);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  if (j.contains("patch_shape")) {
    const auto p = j.at("patch_shape").get<std::array<int, 3>>();
    c.patch_shape = {p[0], p[1], p[2]};
  }
  if (j.contains("window")) {
    const auto w = j.at("window").get<std::array<double, 2>>();
    c.window = {w[0], w[1]};
  }
  if (j.contains("architecture")) c.arch = j.at("architecture").get<PnetArchitecture>();
  if (c.epochs < 1 || c.batch_size < 1 || c.patches_per_volume < 1 || !(c.learning_rate > 0.0)) {
    fail(ErrorKind::kConfig, "autoencoder epochs, batch_size, patches_per_volume and learning_rate must be positive");
  }
}

AutoEncoder::AutoEncoder(Shape3 patch_shape, IntensityWindow window, PnetArchitecture arch, std::uint64_t init_seed)
    : patch_shape_(patch_shape), window_(window), arch_(std::move(arch)) {
  Rng rng = make_stream(init_seed, {0xAEULL});
  encoder_ = build_trunk<float>(arch_, rng);
  encoder_.add(std::make_unique<nn::GlobalAvgPool<float>>());

  // Mirror of the trunk: project the latent back onto the coarsest grid, then
  // upsample and convolve block by block to the input shape.
  const std::vector<Shape3> shapes = trunk_shapes(arch_, patch_shape_);
  const auto& ch = arch_.channels;
  const Shape3 s0 = shapes.back();
  const int c0 = ch.back();
  auto& fc = decoder_.add(std::make_unique<nn::Linear<float>>(c0, c0 * static_cast<int>(s0.voxels())));
  fc.init_kaiming(rng);
  decoder_.add(std::make_unique<nn::ReLU<float>>());
  decoder_.add(std::make_unique<nn::Reshape<float>>(c0, s0.d, s0.h, s0.w));
  int in = c0;
  for (std::size_t b = ch.size(); b-- > 0;) {
    const Shape3& s = shapes[b];
    const int out = b == 0 ? ch[0] : ch[b - 1];
    decoder_.add(std::make_unique<nn::Upsample<float>>(s.d, s.h, s.w));
    auto& conv = decoder_.add(std::make_unique<nn::Conv3d<float>>(in, out));
    conv.init_kaiming(rng);
    decoder_.add(std::make_unique<nn::ReLU<float>>());
    in = out;
  }
  auto& head = decoder_.add(std::make_unique<nn::Conv3d<float>>(in, 1));
  head.init_kaiming(rng);
}

nn::Tensor<float> AutoEncoder::to_tensor(std::span<const Patch* const> patches) const {
  return patch_batch(patches, patch_shape_, window_);
}

std::vector<std::vector<float>> AutoEncoder::encode_batch(std::span<const Patch* const> patches) const {
  const nn::Tensor<float> z = encoder_.infer(to_tensor(patches));
  std::vector<std::vector<float>> out;
  for (int i = 0; i < z.n; ++i) out.emplace_back(z.sample(i), z.sample(i) + z.sample_size());
  return out;
}

std::vector<float> AutoEncoder::encode(const Patch& patch) const {
  const Patch* p = &patch;
  return encode_batch(std::span<const Patch* const>(&p, 1)).front();
}

nn::Tensor<float> AutoEncoder::reconstruct(const Patch& patch) const {
  const Patch* p = &patch;
  return decoder_.infer(encoder_.infer(to_tensor(std::span<const Patch* const>(&p, 1))));
}

double AutoEncoder::train_step(std::span<const Patch* const> batch, nn::Adam<float>* encoder_opt,
                               nn::Adam<float>* decoder_opt) {
  if (batch.empty()) fail(ErrorKind::kInvalidArgument, "empty autoencoder batch");
  const nn::Tensor<float> x = to_tensor(batch);
  const nn::Tensor<float> y = decoder_.forward(encoder_.forward(x));
  nn::Tensor<float> grad(y.n, y.c, y.d, y.h, y.w);
  const auto n = static_cast<double>(x.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(y.data[i]) - x.data[i];
    loss += d * d;
    grad.data[i] = static_cast<float>(2.0 * d / n);
  }
  loss /= n;
  if (!std::isfinite(loss)) fail(ErrorKind::kDivergence, "autoencoder reconstruction loss became non-finite");
  if (encoder_opt || decoder_opt) {
    encoder_.zero_grad();
    decoder_.zero_grad();
    encoder_.backward(decoder_.backward(grad));
    if (encoder_opt) encoder_opt->step();
    if (decoder_opt) decoder_opt->step();
  }
  return loss;
}

void AutoEncoder::save(const fs::path& path) const {
  const json header{{"kind", "autoencoder"},
                    {"patch_shape", {patch_shape_.d, patch_shape_.h, patch_shape_.w}},
                    {"window", {window_.lo, window_.hi}},
                    {"architecture", arch_}};
  auto state = encoder_.state();
  for (auto& entry : decoder_.state()) state.emplace_back("decoder." + entry.first, entry.second);
  detail::write_checkpoint(path, kAutoEncoderMagic, kAutoEncoderVersion, header, state);
}

AutoEncoder AutoEncoder::load(const fs::path& path) {
  const json header = detail::read_checkpoint_header(path, kAutoEncoderMagic, kAutoEncoderVersion);
  try {
    const auto ps = header.at("patch_shape").get<std::array<int, 3>>();
    const auto win = header.at("window").get<std::array<double, 2>>();
    AutoEncoder ae({ps[0], ps[1], ps[2]}, {win[0], win[1]}, header.at("architecture").get<PnetArchitecture>(), 0);
    auto state = ae.encoder_.state();
    for (auto& entry : ae.decoder_.state()) state.emplace_back("decoder." + entry.first, entry.second);
    detail::read_checkpoint_state(path, kAutoEncoderMagic, kAutoEncoderVersion, state);
    return ae;
  } catch (const json::exception& e) {
    fail(ErrorKind::kIo, path.string() + ": malformed autoencoder header: " + e.what());
  }
}

AutoEncoderResult train_autoencoder(const std::vector<Volume>& volumes, const AutoEncoderConfig& cfg,
                                    const EpochCallback& on_epoch) {
  if (volumes.empty()) fail(ErrorKind::kIo, "no training volumes for the autoencoder");
  if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.patches_per_volume < 1 || !(cfg.learning_rate > 0.0)) {
    fail(ErrorKind::kConfig, "autoencoder epochs, batch_size, patches_per_volume and learning_rate must be positive");
  }
  std::vector<Volume> normalized;
  for (const Volume& v : volumes) {
    normalized.push_back(v.unit() == IntensityUnit::kNormalized ? v : normalize_intensity(v, cfg.window));
  }
  AutoEncoderResult result{AutoEncoder(cfg.patch_shape, cfg.window, cfg.arch, cfg.seed), {}};
  AutoEncoder& ae = result.model;
  nn::Adam<float> enc_opt(ae.encoder().params(), cfg.learning_rate);
  nn::Adam<float> dec_opt(ae.decoder().params(), cfg.learning_rate);

  // Patches are drawn like coarse pairs: centers uniform over the grid.
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order;
    for (std::size_t v = 0; v < normalized.size(); ++v)
      for (int k = 0; k < cfg.patches_per_volume; ++k) order.push_back(v);
    Rng shuffle_rng = make_stream(cfg.seed, {0xAEULL, static_cast<std::uint64_t>(epoch), 1});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    std::vector<Patch> patches;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      patches.clear();
      for (std::size_t i = start; i < end; ++i) {
        Rng rng = make_stream(cfg.seed, {0xAEULL, static_cast<std::uint64_t>(epoch), i, 2});
        const Shape3& s = normalized[order[i]].shape();
        const VoxelPoint c{{static_cast<double>(std::uniform_int_distribution<int>(0, s.d - 1)(rng)),
                            static_cast<double>(std::uniform_int_distribution<int>(0, s.h - 1)(rng)),
                            static_cast<double>(std::uniform_int_distribution<int>(0, s.w - 1)(rng))}};
        patches.push_back(crop_patch(normalized[order[i]], c, cfg.patch_shape));
      }
      std::vector<const Patch*> ptrs;
      for (const Patch& p : patches) ptrs.push_back(&p);
      loss_sum += ae.train_step(ptrs, &enc_opt, &dec_opt) * static_cast<double>(ptrs.size());
      seen += ptrs.size();
    }
    result.log.push_back({epoch + 1, loss_sum / static_cast<double>(seen), seconds_since(t0)});
    if (on_epoch) on_epoch(result.log.back());
  }
  return result;
}

double feature_similarity(const AutoEncoder& enc, const Patch& a, const Patch& b, SimilarityKind kind) {
  if (!is_feature_kind(kind)) fail(ErrorKind::kInvalidArgument, "not a feature similarity");
  const Patch* ptrs[2] = {&a, &b};
  const auto z = enc.encode_batch(ptrs);
  return kind == SimilarityKind::kFmMse ? mse(z[0], z[1]) : cosine(z[0], z[1]);
}

FeatureGrid encode_windows(const AutoEncoder& enc, const Volume& vol, int stride, std::size_t batch) {
  const auto t0 = std::chrono::steady_clock::now();
  const Shape3& vs = vol.shape();
  const Shape3 ps = enc.patch_shape();
  if (ps.d > vs.d || ps.h > vs.h || ps.w > vs.w) {
    fail(ErrorKind::kInvalidArgument, "encoder patch " + to_string(ps) + " is larger than the volume " + to_string(vs));
  }
  if (batch < 1) batch = 1;
  FeatureGrid grid;
  grid.patch_shape = ps;
  grid.stride = stride;
  for (int z0 : window_starts(vs.d, ps.d, stride))
    for (int y0 : window_starts(vs.h, ps.h, stride))
      for (int x0 : window_starts(vs.w, ps.w, stride)) {
        grid.centers.push_back({{static_cast<double>(z0 + ps.d / 2), static_cast<double>(y0 + ps.h / 2),
                                 static_cast<double>(x0 + ps.w / 2)}});
      }
  std::vector<Patch> patches;
  for (std::size_t start = 0; start < grid.centers.size(); start += batch) {
    const std::size_t end = std::min(grid.centers.size(), start + batch);
    patches.clear();
    for (std::size_t i = start; i < end; ++i) patches.push_back(crop_patch(vol, grid.centers[i], ps));
    std::vector<const Patch*> ptrs;
    for (const Patch& p : patches) ptrs.push_back(&p);
    for (auto& z : enc.encode_batch(ptrs)) grid.latents.push_back(std::move(z));
  }
  grid.wall_time_s = seconds_since(t0);
  return grid;
}

MatchResult feature_search(const FeatureGrid& grid, std::span<const float> support_latent, SimilarityKind kind) {
  const auto t0 = std::chrono::steady_clock::now();
  if (!is_feature_kind(kind)) fail(ErrorKind::kInvalidArgument, "not a feature similarity");
  MatchResult res;
  res.lower_better = lower_is_better(kind);
  for (std::size_t i = 0; i < grid.latents.size(); ++i) {
    ++res.windows;
    double score = 0.0;
    try {
      score = kind == SimilarityKind::kFmMse ? mse(grid.latents[i], support_latent) : cosine(grid.latents[i], support_latent);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kUndefinedSimilarity) throw;
      continue;
    }
    ++res.valid_windows;
    if (res.valid_windows == 1 || better(score, res.best_score, res.lower_better)) {
      res.best_score = score;
      res.best_center = grid.centers[i];
    }
  }
  if (res.valid_windows == 0) {
    fail(ErrorKind::kNoValidWindow, std::string(to_string(kind)) + " is undefined for every window of the search");
  }
  res.wall_time_s = grid.wall_time_s + seconds_since(t0);
  return res;
}

FeatureCostEstimate estimate_feature_search_cost(const AutoEncoder& enc, const Volume& vol, int stride,
                                                 std::size_t sample_windows) {
  FeatureCostEstimate est;
  est.windows = window_count(vol.shape(), enc.patch_shape(), stride);
  if (est.windows == 0) fail(ErrorKind::kInvalidArgument, "encoder patch is larger than the volume");
  const std::size_t n = std::max<std::size_t>(1, std::min(sample_windows, est.windows));
  const Shape3& vs = vol.shape();
  const Shape3 ps = enc.patch_shape();
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < n; ++i) {
    // Spread the timed windows over the grid; cost does not depend on content.
    const VoxelPoint c{{static_cast<double>(ps.d / 2 + static_cast<int>(i) % (vs.d - ps.d + 1)),
                        static_cast<double>(ps.h / 2 + static_cast<int>(i * 7) % (vs.h - ps.h + 1)),
                        static_cast<double>(ps.w / 2 + static_cast<int>(i * 13) % (vs.w - ps.w + 1))}};
    const Patch p = crop_patch(vol, c, ps);
    const auto z = enc.encode(p);
    if (z.empty()) fail(ErrorKind::kInvalidArgument, "encoder returned an empty latent");
  }
  est.seconds_per_window = seconds_since(t0) / static_cast<double>(n);
  est.seconds = est.seconds_per_window * static_cast<double>(est.windows);
  return est;
}

}  // namespace rprloc
