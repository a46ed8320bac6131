#pragma once

// Minimal 3D CNN layers with hand-written backward passes.
//
// forward() runs in training mode and caches what backward() needs.
// infer() is const, caches nothing and is safe to call concurrently.

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rprloc/nn/tensor.hpp"

namespace rprloc::nn {

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual Tensor<T> infer(const Tensor<T>& x) const = 0;

  virtual std::vector<Param<T>*> params() { return {}; }
  // Non-learned state that must be checkpointed (normalization statistics).
  virtual std::vector<std::pair<std::string, Buffer<T>*>> buffers() { return {}; }
  virtual std::string kind() const = 0;

  // Layers at the network input can skip computing the input gradient.
  void set_input_grad(bool enabled) { input_grad_ = enabled; }

 protected:
  bool input_grad_ = true;
};

// k x k x k convolution, stride 1, zero "same" padding.
template <typename T>
class Conv3d final : public Layer<T> {
 public:
  Conv3d(int in_channels, int out_channels, int kernel = 3);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Tensor<T> infer(const Tensor<T>& x) const override;
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  std::string kind() const override { return "conv3d"; }

  void init_kaiming(std::mt19937_64& rng);
  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }

 private:
  void im2col(const T* x, int d, int h, int w, Buffer<T>& col) const;
  void col2im(const Buffer<T>& col, int d, int h, int w, T* x) const;
  void convolve(const Tensor<T>& x, Tensor<T>& y, Buffer<T>& col) const;

  int cin_;
  int cout_;
  int k_;
  Param<T> weight_;  // cout x (cin * k^3)
  Param<T> bias_;
  Tensor<T> input_;
};

// Batch normalization with statistics pooled over batch and spatial axes.
// When a channel has fewer than min_count values in a batch, the running
// estimates are used instead of degenerate batch statistics.
template <typename T>
class BatchNorm3d final : public Layer<T> {
 public:
  explicit BatchNorm3d(int channels, T momentum = T(0.1), T eps = T(1e-5), std::size_t min_count = 2);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Tensor<T> infer(const Tensor<T>& x) const override;
  std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }
  std::vector<std::pair<std::string, Buffer<T>*>> buffers() override {
    return {{"running_mean", &running_mean_}, {"running_var", &running_var_}};
  }
  std::string kind() const override { return "batchnorm3d"; }

 private:
  int channels_;
  T momentum_;
  T eps_;
  std::size_t min_count_;
  Param<T> gamma_;
  Param<T> beta_;
  Buffer<T> running_mean_;
  Buffer<T> running_var_;
  Tensor<T> xhat_;
  Buffer<T> inv_std_;
  bool used_batch_stats_ = true;
};

template <typename T>
class ReLU final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Tensor<T> infer(const Tensor<T>& x) const override;
  std::string kind() const override { return "relu"; }

 private:
  std::vector<std::uint8_t> active_;
};

// 2x2x2 max pooling, stride 2, ceil mode (odd or unit extents keep a cell).
template <typename T>
class MaxPool3d final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Tensor<T> infer(const Tensor<T>& x) const override;
  std::string kind() const override { return "maxpool3d"; }

  static int out_extent(int in) { return (in + 1) / 2; }

 private:
  Tensor<T> pool(const Tensor<T>& x, std::vector<std::uint32_t>* argmax) const;
  std::vector<std::uint32_t> argmax_;
  Tensor<T> input_shape_;
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Tensor<T> infer(const Tensor<T>& x) const override;
  std::string kind() const override { return "global_avg_pool"; }

 private:
  int d_ = 1;
  int h_ = 1;
  int w_ = 1;
};

// Fully connected layer over the flattened sample.
template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(int in_features, int out_features);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Tensor<T> infer(const Tensor<T>& x) const override;
  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }
  std::string kind() const override { return "linear"; }

  void init_kaiming(std::mt19937_64& rng, T gain = T(2));
  void zero_init();
  int in_features() const { return in_; }
  int out_features() const { return out_; }

 private:
  int in_;
  int out_;
  Param<T> weight_;  // out x in
  Param<T> bias_;
  Tensor<T> input_;
};

// Reinterprets each sample as (c, d, h, w) without moving data.
template <typename T>
class Reshape final : public Layer<T> {
 public:
  Reshape(int c, int d, int h, int w) : c_(c), d_(d), h_(h), w_(w) {}

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Tensor<T> infer(const Tensor<T>& x) const override;
  std::string kind() const override { return "reshape"; }

 private:
  int c_, d_, h_, w_;
  Tensor<T> input_shape_;
};

// Nearest-neighbour resize to a fixed spatial shape.
template <typename T>
class Upsample final : public Layer<T> {
 public:
  Upsample(int d, int h, int w) : d_(d), h_(h), w_(w) {}

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  Tensor<T> infer(const Tensor<T>& x) const override;
  std::string kind() const override { return "upsample"; }

 private:
  std::vector<std::size_t> source_index(int sd, int sh, int sw) const;
  int d_, h_, w_;
  Tensor<T> input_shape_;
};

// Shape-only tensor used to remember the input extents for backward().
template <typename T>
Tensor<T> shape_only(const Tensor<T>& x) {
  Tensor<T> s;
  s.n = x.n;
  s.c = x.c;
  s.d = x.d;
  s.h = x.h;
  s.w = x.w;
  return s;
}

}  // namespace rprloc::nn
