#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rprloc/errors.hpp"
#include "rprloc/nn/layers.hpp"

namespace rprloc::nn {

template <typename T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <typename L>
  L& add(std::unique_ptr<L> layer) {
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor<T> forward(const Tensor<T>& x) {
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h);
    return h;
  }

  Tensor<T> backward(const Tensor<T>& grad) {
    Tensor<T> g = grad;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  Tensor<T> infer(const Tensor<T>& x) const {
    Tensor<T> h = x;
    for (const auto& l : layers_) h = l->infer(h);
    return h;
  }

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_)
      for (Param<T>* p : l->params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (Param<T>* p : params()) std::fill(p->grad.begin(), p->grad.end(), T(0));
  }

  // Parameters and buffers keyed "<layer index>.<name>", in layer order.
  std::vector<std::pair<std::string, Buffer<T>*>> state() {
    std::vector<std::pair<std::string, Buffer<T>*>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const std::string prefix = std::to_string(i) + ".";
      for (Param<T>* p : layers_[i]->params()) out.emplace_back(prefix + p->name, &p->value);
      for (auto& [name, buf] : layers_[i]->buffers()) out.emplace_back(prefix + name, buf);
    }
    return out;
  }

  std::vector<std::pair<std::string, const Buffer<T>*>> state() const {
    // Layers only expose mutable accessors; nothing is modified here.
    auto mutable_state = const_cast<Sequential*>(this)->state();
    return {mutable_state.begin(), mutable_state.end()};
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (Param<T>* p : params()) n += p->value.size();
    return n;
  }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// Adam with bias correction and a constant learning rate.
template <typename T>
class Adam {
 public:
  explicit Adam(std::vector<Param<T>*> params, double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (Param<T>* p : params_) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Param<T>& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = p.grad[i];
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
        const double mh = m[i] / c1;
        const double vh = v[i] / c2;
        p.value[i] -= static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  long long steps() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  std::vector<Param<T>*> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long long t_ = 0;
};

}  // namespace rprloc::nn
