#pragma once

// Projection network: maps a patch to a 3D latent vector p. The offset from
// a query patch to a support patch is r * tanh(p_s - p_q), trained against
// the exact physical offset with a squared-error loss.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "rprloc/nn/sequential.hpp"
#include "rprloc/pairsampler.hpp"
#include "rprloc/rng.hpp"
#include "rprloc/volgrid.hpp"

namespace rprloc {

struct PnetArchitecture {
  std::vector<int> channels{16, 32, 64, 128, 128};  // one entry per conv block
  int convs_per_block = 2;
  int fc_hidden = 64;
  bool zero_init_head = false;  // zero the final layer weights (bias-only output)

  friend bool operator==(const PnetArchitecture&, const PnetArchitecture&) = default;
};

void to_json(nlohmann::json& j, const PnetArchitecture& a);
void from_json(const nlohmann::json& j, PnetArchitecture& a);

inline constexpr int kLatentDim = 3;

// Convolution blocks only: [conv, norm, relu] x convs_per_block, then 2x pool.
template <typename T>
nn::Sequential<T> build_trunk(const PnetArchitecture& arch, Rng& rng);

// Trunk + global average pooling + two fully connected layers -> 3.
template <typename T>
nn::Sequential<T> build_pnet(const PnetArchitecture& arch, Rng& rng);

// Shape check plus window normalization into a 1-channel batch tensor.
nn::Tensor<float> patch_batch(std::span<const Patch* const> patches, Shape3 shape, const IntensityWindow& window);

// Spatial shape after every block of the trunk, input first.
std::vector<Shape3> trunk_shapes(const PnetArchitecture& arch, Shape3 patch_shape);

// r * tanh(p_s - p_q), component-wise.
inline WorldOffset bounded_offset(double radius, const Vec3& p_query, const Vec3& p_support) {
  const Vec3 diff = p_support - p_query;
  return {{radius * std::tanh(diff.z), radius * std::tanh(diff.y), radius * std::tanh(diff.x)}};
}

// Squared Euclidean distance between predicted and target offsets (mm^2).
double offset_loss(const WorldOffset& predicted, const WorldOffset& target);
// Mean of offset_loss over a batch.
double batch_offset_loss(std::span<const WorldOffset> predicted, std::span<const WorldOffset> target);

// Loss of one pair and its gradient with respect to both latent vectors.
template <typename T>
T pair_loss_and_grad(const T* p_query, const T* p_support, const Vec3& target, double radius, T* grad_query,
                     T* grad_support) {
  T loss = T(0);
  for (int a = 0; a < kLatentDim; ++a) {
    const T t = std::tanh(p_support[a] - p_query[a]);
    const T err = static_cast<T>(radius) * t - static_cast<T>(target[a]);
    loss += err * err;
    const T g = T(2) * err * static_cast<T>(radius) * (T(1) - t * t);
    grad_support[a] = g;
    grad_query[a] = -g;
  }
  return loss;
}

// Interface the locator drives: a per-patch projection plus an offset head.
// The network model and the perfect-projection test stub both implement it.
class OffsetRegressor {
 public:
  virtual ~OffsetRegressor() = default;

  virtual Stage stage() const = 0;
  virtual double radius() const = 0;
  virtual Shape3 patch_shape() const = 0;
  virtual Vec3 project_query(const Patch& patch) const = 0;
  virtual Vec3 project_support(const Patch& patch) const = 0;
  virtual WorldOffset offset(const Vec3& p_query, const Vec3& p_support) const = 0;
  virtual std::string fingerprint() const = 0;
};

struct TrainingProvenance {
  std::string config_hash;
  int epochs = 0;
};

class ProjectionModel final : public OffsetRegressor {
 public:
  ProjectionModel(Stage stage, double radius_mm, Shape3 patch_shape, IntensityWindow window,
                  PnetArchitecture arch, std::uint64_t init_seed);

  ProjectionModel(ProjectionModel&&) noexcept = default;
  ProjectionModel& operator=(ProjectionModel&&) noexcept = default;

  // Evaluation-mode latent vector. Raw patches are normalized with the
  // model's intensity window first.
  Vec3 project(const Patch& patch) const;
  WorldOffset predict_offset(const Patch& query, const Patch& support) const;

  Stage stage() const override { return stage_; }
  double radius() const override { return radius_; }
  Shape3 patch_shape() const override { return patch_shape_; }
  Vec3 project_query(const Patch& patch) const override { return project(patch); }
  Vec3 project_support(const Patch& patch) const override { return project(patch); }
  WorldOffset offset(const Vec3& p_query, const Vec3& p_support) const override {
    return bounded_offset(radius_, p_query, p_support);
  }
  std::string fingerprint() const override;

  const IntensityWindow& window() const { return window_; }
  const PnetArchitecture& architecture() const { return arch_; }
  TrainingProvenance& provenance() { return provenance_; }
  const TrainingProvenance& provenance() const { return provenance_; }
  nn::Sequential<float>& network() { return net_; }
  const nn::Sequential<float>& network() const { return net_; }

  // Shape check plus normalization into a 1-channel batch tensor.
  nn::Tensor<float> to_tensor(std::span<const Patch* const> patches) const;

  void save(const std::filesystem::path& path) const;
  static ProjectionModel load(const std::filesystem::path& path);

 private:
  Stage stage_;
  double radius_;
  Shape3 patch_shape_;
  IntensityWindow window_;
  PnetArchitecture arch_;
  TrainingProvenance provenance_;
  nn::Sequential<float> net_;
};

struct TrainConfig {
  Stage stage = Stage::kCoarse;
  int epochs = 30;
  int batch_size = 6;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::string dataset;  // manifest path or dataset directory
  Shape3 patch_shape{16, 32, 32};
  double radius_mm = 0.0;  // <= 0: coarse uses the volume diagonal, fine 20 mm
  int pairs_per_volume = 24;  // pairs drawn per training volume per epoch
  IntensityWindow window;
  OverflowPolicy overflow = OverflowPolicy::kReject;
  PnetArchitecture arch;

  std::string hash() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Stage defaults at desk scale and at full clinical scale.
TrainConfig desk_preset(Stage stage);
TrainConfig full_scale_preset(Stage stage, const std::string& dataset_kind);  // "han" or "pancreas"

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double wall_time_s = 0.0;
};

struct TrainResult {
  ProjectionModel model;
  std::vector<EpochLog> log;
  std::vector<std::string> warnings;
};

// One optimizer step per batch of pairs; returns the batch mean loss measured
// before the update. Throws divergence on a non-finite loss.
class PnetTrainer {
 public:
  PnetTrainer(ProjectionModel& model, double learning_rate);
  double step(std::span<const OffsetSample> batch);

 private:
  ProjectionModel& model_;
  nn::Adam<float> adam_;
};

using EpochCallback = std::function<void(const EpochLog&)>;

TrainResult train_stage(const TrainConfig& cfg, const std::vector<Volume>& volumes,
                        const EpochCallback& on_epoch = {});
// Loads the training split of cfg.dataset.
TrainResult train_stage(const TrainConfig& cfg, const EpochCallback& on_epoch = {});

void write_loss_csv(const std::filesystem::path& path, const std::vector<EpochLog>& log);
std::vector<EpochLog> read_loss_csv(const std::filesystem::path& path);

}  // namespace rprloc
