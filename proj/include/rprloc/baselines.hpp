#pragma once

// Template-matching comparators: exhaustive stride-2 sliding windows scored
// by gray-scale similarity (MSE, cosine, NCC) or by the similarity of
// autoencoder latents (FM MSE, FM cosine).

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rprloc/nn/sequential.hpp"
#include "rprloc/pnet.hpp"
#include "rprloc/volgrid.hpp"

namespace rprloc {

enum class SimilarityKind { kGsMse, kGsCosine, kGsNcc, kFmMse, kFmCosine };

const char* to_string(SimilarityKind k);
SimilarityKind similarity_from_string(const std::string& s);
bool lower_is_better(SimilarityKind k);
bool is_feature_kind(SimilarityKind k);

// Plain vector similarities. cosine throws undefined-similarity on a zero
// norm, ncc on zero variance.
double mse(std::span<const float> a, std::span<const float> b);
double cosine(std::span<const float> a, std::span<const float> b);
double ncc(std::span<const float> a, std::span<const float> b);

// Gray-scale kinds only.
double similarity(const Patch& a, const Patch& b, SimilarityKind kind);

struct MatchResult {
  VoxelPoint best_center;
  double best_score = 0.0;
  bool lower_better = true;
  double wall_time_s = 0.0;
  std::size_t windows = 0;       // windows scored (valid or not)
  std::size_t valid_windows = 0;
};

// Number of windows fully inside the volume: prod floor((n - p) / stride) + 1.
std::size_t window_count(const Shape3& volume, const Shape3& patch, int stride);

// Every stride-aligned window fully inside the volume, scanned in (z, y, x)
// order; only strictly better scores replace the incumbent, so ties keep the
// lowest center. A window's center is its start + patch / 2, the inverse of
// crop_patch.
MatchResult sliding_window_search(const Volume& test_vol, const Patch& support, SimilarityKind kind, int stride = 2);

// ---------------------------------------------------------------- autoencoder

struct AutoEncoderConfig {
  int epochs = 10;
  int batch_size = 6;
  int patches_per_volume = 6;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  Shape3 patch_shape{16, 32, 32};
  IntensityWindow window;
  PnetArchitecture arch;  // the encoder reuses the projection trunk
};

void to_json(nlohmann::json& j, const AutoEncoderConfig& c);
void from_json(const nlohmann::json& j, AutoEncoderConfig& c);

class AutoEncoder {
 public:
  AutoEncoder(Shape3 patch_shape, IntensityWindow window, PnetArchitecture arch, std::uint64_t init_seed);
  AutoEncoder(AutoEncoder&&) noexcept = default;
  AutoEncoder& operator=(AutoEncoder&&) noexcept = default;

  int latent_dim() const { return arch_.channels.back(); }
  Shape3 patch_shape() const { return patch_shape_; }
  const IntensityWindow& window() const { return window_; }
  const PnetArchitecture& architecture() const { return arch_; }

  // Global-average-pooled trunk features, evaluation mode.
  std::vector<float> encode(const Patch& patch) const;
  std::vector<std::vector<float>> encode_batch(std::span<const Patch* const> patches) const;
  nn::Tensor<float> reconstruct(const Patch& patch) const;

  nn::Tensor<float> to_tensor(std::span<const Patch* const> patches) const;
  nn::Sequential<float>& encoder() { return encoder_; }
  nn::Sequential<float>& decoder() { return decoder_; }
  const nn::Sequential<float>& decoder() const { return decoder_; }

  // Mean squared reconstruction error of one batch; one Adam step when an
  // optimizer is supplied.
  double train_step(std::span<const Patch* const> batch, nn::Adam<float>* encoder_opt, nn::Adam<float>* decoder_opt);

  void save(const std::filesystem::path& path) const;
  static AutoEncoder load(const std::filesystem::path& path);

 private:
  Shape3 patch_shape_;
  IntensityWindow window_;
  PnetArchitecture arch_;
  nn::Sequential<float> encoder_;
  nn::Sequential<float> decoder_;
};

struct AutoEncoderResult {
  AutoEncoder model;
  std::vector<EpochLog> log;
};

AutoEncoderResult train_autoencoder(const std::vector<Volume>& volumes, const AutoEncoderConfig& cfg,
                                    const EpochCallback& on_epoch = {});

// fm_mse / fm_cosine on the encoder latents of a and b.
double feature_similarity(const AutoEncoder& enc, const Patch& a, const Patch& b, SimilarityKind kind);

// Encoder latents of every stride-aligned window of a volume, in scan order.
struct FeatureGrid {
  Shape3 patch_shape;
  int stride = 2;
  std::vector<VoxelPoint> centers;
  std::vector<std::vector<float>> latents;
  double wall_time_s = 0.0;
};

FeatureGrid encode_windows(const AutoEncoder& enc, const Volume& test_vol, int stride, std::size_t batch = 8);

// Scores precomputed window latents against one support latent.
MatchResult feature_search(const FeatureGrid& grid, std::span<const float> support_latent, SimilarityKind kind);

// Full per-window cost of a feature search at `stride`: the encoder is timed on
// `sample_windows` windows and scaled to the exact window count.
struct FeatureCostEstimate {
  std::size_t windows = 0;
  double seconds_per_window = 0.0;
  double seconds = 0.0;
};

FeatureCostEstimate estimate_feature_search_cost(const AutoEncoder& enc, const Volume& test_vol, int stride,
                                                 std::size_t sample_windows = 16);

}  // namespace rprloc
