#pragma once

#include <cstddef>
#include <new>
#include <string>
#include <vector>

namespace rprloc::nn {

// Cache-line aligned storage. Vectorized reductions peel differently
// depending on the start address, so a fixed alignment keeps results
// bitwise reproducible between allocations.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

// Dense N x C x D x H x W array, row-major with W fastest.
template <typename T>
struct Tensor {
  int n = 0;
  int c = 0;
  int d = 1;
  int h = 1;
  int w = 1;
  Buffer<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int d_, int h_, int w_)
      : n(n_), c(c_), d(d_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * d_ * h_ * w_, T(0)) {}

  std::size_t spatial() const { return static_cast<std::size_t>(d) * h * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * spatial(); }
  std::size_t size() const { return data.size(); }

  T* sample(int i) { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
  const T* sample(int i) const { return data.data() + static_cast<std::size_t>(i) * sample_size(); }
  T* channel(int i, int ch) { return sample(i) + static_cast<std::size_t>(ch) * spatial(); }
  const T* channel(int i, int ch) const { return sample(i) + static_cast<std::size_t>(ch) * spatial(); }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && d == o.d && h == o.h && w == o.w; }
  std::string shape_string() const;
};

template <typename T>
std::string Tensor<T>::shape_string() const {
  return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(d) + "x" + std::to_string(h) + "x" +
         std::to_string(w);
}

// A learnable array and its accumulated gradient.
template <typename T>
struct Param {
  std::string name;
  Buffer<T> value;
  Buffer<T> grad;

  Param() = default;
  Param(std::string n, std::size_t count) : name(std::move(n)), value(count, T(0)), grad(count, T(0)) {}
};

}  // namespace rprloc::nn
