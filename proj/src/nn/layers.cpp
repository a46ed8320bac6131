#include "rprloc/nn/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rprloc/errors.hpp"

namespace rprloc::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

void require(bool ok, const std::string& what) {
  if (!ok) fail(ErrorKind::kInvalidArgument, what);
}

// Scratch buffer reused across calls on the same thread.
template <typename T>
Buffer<T>& scratch(int slot) {
  thread_local Buffer<T> buffers[2];
  return buffers[slot];
}

}  // namespace

// ---------------------------------------------------------------- Conv3d

template <typename T>
Conv3d<T>::Conv3d(int in_channels, int out_channels, int kernel)
    : cin_(in_channels),
      cout_(out_channels),
      k_(kernel),
      weight_("weight", static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel * kernel),
      bias_("bias", static_cast<std::size_t>(out_channels)) {
  require(in_channels > 0 && out_channels > 0, "conv3d channel counts must be positive");
  require(kernel > 0 && kernel % 2 == 1, "conv3d kernel must be odd");
}

template <typename T>
void Conv3d<T>::init_kaiming(std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(cin_) * k_ * k_ * k_;
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (T& v : weight_.value) v = static_cast<T>(dist(rng));
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
void Conv3d<T>::im2col(const T* x, int d, int h, int w, Buffer<T>& col) const {
  const int p = k_ / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t s = static_cast<std::size_t>(d) * plane;
  col.resize(static_cast<std::size_t>(cin_) * k_ * k_ * k_ * s);
  T* dst = col.data();
  for (int ci = 0; ci < cin_; ++ci) {
    const T* src = x + static_cast<std::size_t>(ci) * s;
    for (int kz = 0; kz < k_; ++kz)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx, dst += s) {
          const int x_lo = std::max(0, p - kx);
          const int x_hi = std::min(w, w + p - kx);
          for (int z = 0; z < d; ++z) {
            const int zz = z + kz - p;
            T* row = dst + static_cast<std::size_t>(z) * plane;
            if (zz < 0 || zz >= d) {
              std::fill(row, row + plane, T(0));
              continue;
            }
            for (int y = 0; y < h; ++y, row += w) {
              const int yy = y + ky - p;
              if (yy < 0 || yy >= h || x_lo >= x_hi) {
                std::fill(row, row + w, T(0));
                continue;
              }
              const T* in = src + static_cast<std::size_t>(zz) * plane + static_cast<std::size_t>(yy) * w + (kx - p);
              std::fill(row, row + x_lo, T(0));
              std::copy(in + x_lo, in + x_hi, row + x_lo);
              std::fill(row + x_hi, row + w, T(0));
            }
          }
        }
  }
}

template <typename T>
void Conv3d<T>::col2im(const Buffer<T>& col, int d, int h, int w, T* x) const {
  const int p = k_ / 2;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t s = static_cast<std::size_t>(d) * plane;
  std::fill(x, x + static_cast<std::size_t>(cin_) * s, T(0));
  const T* src = col.data();
  for (int ci = 0; ci < cin_; ++ci) {
    T* out = x + static_cast<std::size_t>(ci) * s;
    for (int kz = 0; kz < k_; ++kz)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx, src += s) {
          const int x_lo = std::max(0, p - kx);
          const int x_hi = std::min(w, w + p - kx);
          if (x_lo >= x_hi) continue;
          for (int z = 0; z < d; ++z) {
            const int zz = z + kz - p;
            if (zz < 0 || zz >= d) continue;
            const T* row = src + static_cast<std::size_t>(z) * plane;
            for (int y = 0; y < h; ++y, row += w) {
              const int yy = y + ky - p;
              if (yy < 0 || yy >= h) continue;
              T* o = out + static_cast<std::size_t>(zz) * plane + static_cast<std::size_t>(yy) * w + (kx - p);
              for (int xi = x_lo; xi < x_hi; ++xi) o[xi] += row[xi];
            }
          }
        }
  }
}

template <typename T>
void Conv3d<T>::convolve(const Tensor<T>& x, Tensor<T>& y, Buffer<T>& col) const {
  require(x.c == cin_, "conv3d expects " + std::to_string(cin_) + " input channels, got " + std::to_string(x.c));
  y = Tensor<T>(x.n, cout_, x.d, x.h, x.w);
  const Eigen::Index kdim = static_cast<Eigen::Index>(cin_) * k_ * k_ * k_;
  const auto s = static_cast<Eigen::Index>(x.spatial());
  Eigen::Map<const RowMat<T>> wm(weight_.value.data(), cout_, kdim);
  Eigen::Map<const Vec<T>> bm(bias_.value.data(), cout_);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.sample(i), x.d, x.h, x.w, col);
    Eigen::Map<const RowMat<T>> cm(col.data(), kdim, s);
    Eigen::Map<RowMat<T>> ym(y.sample(i), cout_, s);
    ym.noalias() = wm * cm;
    ym.colwise() += bm;
  }
}

template <typename T>
Tensor<T> Conv3d<T>::forward(const Tensor<T>& x) {
  input_ = x;
  Tensor<T> y;
  convolve(x, y, scratch<T>(0));
  return y;
}

template <typename T>
Tensor<T> Conv3d<T>::infer(const Tensor<T>& x) const {
  Tensor<T> y;
  convolve(x, y, scratch<T>(0));
  return y;
}

template <typename T>
Tensor<T> Conv3d<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T>& x = input_;
  require(grad_out.n == x.n && grad_out.c == cout_ && grad_out.spatial() == x.spatial(), "conv3d backward shape mismatch");
  const Eigen::Index kdim = static_cast<Eigen::Index>(cin_) * k_ * k_ * k_;
  const auto s = static_cast<Eigen::Index>(x.spatial());
  Eigen::Map<const RowMat<T>> wm(weight_.value.data(), cout_, kdim);
  Eigen::Map<RowMat<T>> dwm(weight_.grad.data(), cout_, kdim);
  Eigen::Map<Vec<T>> dbm(bias_.grad.data(), cout_);
  Tensor<T> dx;
  if (this->input_grad_) dx = Tensor<T>(x.n, x.c, x.d, x.h, x.w);
  Buffer<T>& col = scratch<T>(0);
  Buffer<T>& dcol = scratch<T>(1);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.sample(i), x.d, x.h, x.w, col);
    Eigen::Map<const RowMat<T>> cm(col.data(), kdim, s);
    Eigen::Map<const RowMat<T>> gm(grad_out.sample(i), cout_, s);
    dwm.noalias() += gm * cm.transpose();
    dbm += gm.rowwise().sum().transpose();
    if (this->input_grad_) {
      dcol.resize(static_cast<std::size_t>(kdim * s));
      Eigen::Map<RowMat<T>> dcm(dcol.data(), kdim, s);
      dcm.noalias() = wm.transpose() * gm;
      col2im(dcol, x.d, x.h, x.w, dx.sample(i));
    }
  }
  return dx;
}

// ---------------------------------------------------------------- BatchNorm3d

template <typename T>
BatchNorm3d<T>::BatchNorm3d(int channels, T momentum, T eps, std::size_t min_count)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      min_count_(min_count),
      gamma_("gamma", static_cast<std::size_t>(channels)),
      beta_("beta", static_cast<std::size_t>(channels)),
      running_mean_(static_cast<std::size_t>(channels), T(0)),
      running_var_(static_cast<std::size_t>(channels), T(1)) {
  std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
}

template <typename T>
Tensor<T> BatchNorm3d<T>::forward(const Tensor<T>& x) {
  require(x.c == channels_, "batchnorm channel mismatch");
  const std::size_t s = x.spatial();
  const std::size_t count = static_cast<std::size_t>(x.n) * s;
  used_batch_stats_ = count >= min_count_;
  Tensor<T> y(x.n, x.c, x.d, x.h, x.w);
  xhat_ = Tensor<T>(x.n, x.c, x.d, x.h, x.w);
  inv_std_.assign(static_cast<std::size_t>(channels_), T(0));
  for (int ch = 0; ch < channels_; ++ch) {
    const auto c = static_cast<std::size_t>(ch);
    double mean;
    double var;
    if (used_batch_stats_) {
      double sum = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.channel(i, ch);
        for (std::size_t k = 0; k < s; ++k) sum += p[k];
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.channel(i, ch);
        for (std::size_t k = 0; k < s; ++k) {
          const double dv = p[k] - mean;
          sq += dv * dv;
        }
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? sq / static_cast<double>(count - 1) : var;
      running_mean_[c] = static_cast<T>((1.0 - momentum_) * running_mean_[c] + momentum_ * mean);
      running_var_[c] = static_cast<T>((1.0 - momentum_) * running_var_[c] + momentum_ * unbiased);
    } else {
      mean = running_mean_[c];
      var = running_var_[c];
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps_)));
    inv_std_[c] = inv;
    const T g = gamma_.value[c];
    const T b = beta_.value[c];
    const T m = static_cast<T>(mean);
    for (int i = 0; i < x.n; ++i) {
      const T* p = x.channel(i, ch);
      T* xh = xhat_.channel(i, ch);
      T* q = y.channel(i, ch);
      for (std::size_t k = 0; k < s; ++k) {
        xh[k] = (p[k] - m) * inv;
        q[k] = g * xh[k] + b;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm3d<T>::infer(const Tensor<T>& x) const {
  require(x.c == channels_, "batchnorm channel mismatch");
  Tensor<T> y(x.n, x.c, x.d, x.h, x.w);
  const std::size_t s = x.spatial();
  for (int ch = 0; ch < channels_; ++ch) {
    const auto c = static_cast<std::size_t>(ch);
    const T inv = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var_[c]) + static_cast<double>(eps_)));
    const T scale = gamma_.value[c] * inv;
    const T shift = beta_.value[c] - running_mean_[c] * scale;
    for (int i = 0; i < x.n; ++i) {
      const T* p = x.channel(i, ch);
      T* q = y.channel(i, ch);
      for (std::size_t k = 0; k < s; ++k) q[k] = p[k] * scale + shift;
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm3d<T>::backward(const Tensor<T>& grad_out) {
  require(grad_out.same_shape(xhat_), "batchnorm backward shape mismatch");
  Tensor<T> dx(grad_out.n, grad_out.c, grad_out.d, grad_out.h, grad_out.w);
  const std::size_t s = grad_out.spatial();
  const double count = static_cast<double>(grad_out.n) * static_cast<double>(s);
  for (int ch = 0; ch < channels_; ++ch) {
    const auto c = static_cast<std::size_t>(ch);
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (int i = 0; i < grad_out.n; ++i) {
      const T* g = grad_out.channel(i, ch);
      const T* xh = xhat_.channel(i, ch);
      for (std::size_t k = 0; k < s; ++k) {
        sum_dy += g[k];
        sum_dy_xhat += static_cast<double>(g[k]) * xh[k];
      }
    }
    gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
    beta_.grad[c] += static_cast<T>(sum_dy);
    const T scale = gamma_.value[c] * inv_std_[c];
    if (!used_batch_stats_) {
      for (int i = 0; i < grad_out.n; ++i) {
        const T* g = grad_out.channel(i, ch);
        T* d = dx.channel(i, ch);
        for (std::size_t k = 0; k < s; ++k) d[k] = g[k] * scale;
      }
      continue;
    }
    const T mean_dy = static_cast<T>(sum_dy / count);
    const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
    for (int i = 0; i < grad_out.n; ++i) {
      const T* g = grad_out.channel(i, ch);
      const T* xh = xhat_.channel(i, ch);
      T* d = dx.channel(i, ch);
      for (std::size_t k = 0; k < s; ++k) d[k] = scale * (g[k] - mean_dy - xh[k] * mean_dy_xhat);
    }
  }
  return dx;
}

// ---------------------------------------------------------------- ReLU

template <typename T>
Tensor<T> ReLU<T>::forward(const Tensor<T>& x) {
  Tensor<T> y = x;
  active_.resize(x.size());
  T* v = y.data.data();
  std::uint8_t* a = active_.data();
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = v[i] > T(0);
    v[i] = v[i] > T(0) ? v[i] : T(0);
  }
  return y;
}

template <typename T>
Tensor<T> ReLU<T>::infer(const Tensor<T>& x) const {
  Tensor<T> y = x;
  for (T& v : y.data) v = std::max(v, T(0));
  return y;
}

template <typename T>
Tensor<T> ReLU<T>::backward(const Tensor<T>& grad_out) {
  require(grad_out.size() == active_.size(), "relu backward shape mismatch");
  Tensor<T> dx = grad_out;
  T* g = dx.data.data();
  const std::uint8_t* a = active_.data();
  const std::size_t n = dx.size();
  for (std::size_t i = 0; i < n; ++i) g[i] = a[i] ? g[i] : T(0);
  return dx;
}

// ---------------------------------------------------------------- MaxPool3d

template <typename T>
Tensor<T> MaxPool3d<T>::pool(const Tensor<T>& x, std::vector<std::uint32_t>* argmax) const {
  const int od = out_extent(x.d);
  const int oh = out_extent(x.h);
  const int ow = out_extent(x.w);
  Tensor<T> y(x.n, x.c, od, oh, ow);
  if (argmax) argmax->resize(y.size());
  std::size_t o = 0;
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* p = x.channel(i, ch);
      for (int z = 0; z < od; ++z)
        for (int yy = 0; yy < oh; ++yy)
          for (int xx = 0; xx < ow; ++xx, ++o) {
            T best = T(0);
            std::uint32_t best_idx = 0;
            bool first = true;
            for (int dz = 2 * z; dz < std::min(2 * z + 2, x.d); ++dz)
              for (int dy = 2 * yy; dy < std::min(2 * yy + 2, x.h); ++dy)
                for (int dx = 2 * xx; dx < std::min(2 * xx + 2, x.w); ++dx) {
                  const auto idx = static_cast<std::uint32_t>((static_cast<std::size_t>(dz) * x.h + dy) * x.w + dx);
                  if (first || p[idx] > best) {
                    best = p[idx];
                    best_idx = idx;
                    first = false;
                  }
                }
            y.data[o] = best;
            if (argmax) (*argmax)[o] = best_idx;
          }
    }
  return y;
}

template <typename T>
Tensor<T> MaxPool3d<T>::forward(const Tensor<T>& x) {
  input_shape_ = shape_only(x);
  return pool(x, &argmax_);
}

template <typename T>
Tensor<T> MaxPool3d<T>::infer(const Tensor<T>& x) const {
  return pool(x, nullptr);
}

template <typename T>
Tensor<T> MaxPool3d<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T>& in = input_shape_;
  require(grad_out.size() == argmax_.size(), "maxpool backward shape mismatch");
  Tensor<T> dx(in.n, in.c, in.d, in.h, in.w);
  const std::size_t per_plane = grad_out.spatial();
  std::size_t o = 0;
  for (int i = 0; i < in.n; ++i)
    for (int ch = 0; ch < in.c; ++ch) {
      T* d = dx.channel(i, ch);
      for (std::size_t k = 0; k < per_plane; ++k, ++o) d[argmax_[o]] += grad_out.data[o];
    }
  return dx;
}

// ---------------------------------------------------------------- GlobalAvgPool

template <typename T>
Tensor<T> GlobalAvgPool<T>::infer(const Tensor<T>& x) const {
  Tensor<T> y(x.n, x.c, 1, 1, 1);
  const std::size_t s = x.spatial();
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* p = x.channel(i, ch);
      T acc = T(0);
      for (std::size_t k = 0; k < s; ++k) acc += p[k];
      y.sample(i)[ch] = acc / static_cast<T>(s);
    }
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x) {
  d_ = x.d;
  h_ = x.h;
  w_ = x.w;
  return infer(x);
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> dx(grad_out.n, grad_out.c, d_, h_, w_);
  const std::size_t s = dx.spatial();
  for (int i = 0; i < grad_out.n; ++i)
    for (int ch = 0; ch < grad_out.c; ++ch) {
      const T g = grad_out.sample(i)[ch] / static_cast<T>(s);
      T* d = dx.channel(i, ch);
      std::fill(d, d + s, g);
    }
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(int in_features, int out_features)
    : in_(in_features),
      out_(out_features),
      weight_("weight", static_cast<std::size_t>(in_features) * out_features),
      bias_("bias", static_cast<std::size_t>(out_features)) {
  require(in_features > 0 && out_features > 0, "linear feature counts must be positive");
}

template <typename T>
void Linear<T>::init_kaiming(std::mt19937_64& rng, T gain) {
  std::normal_distribution<double> dist(0.0, std::sqrt(static_cast<double>(gain) / in_));
  for (T& v : weight_.value) v = static_cast<T>(dist(rng));
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
void Linear<T>::zero_init() {
  std::fill(weight_.value.begin(), weight_.value.end(), T(0));
}

template <typename T>
Tensor<T> Linear<T>::infer(const Tensor<T>& x) const {
  require(x.sample_size() == static_cast<std::size_t>(in_),
          "linear expects " + std::to_string(in_) + " features, got " + std::to_string(x.sample_size()));
  Tensor<T> y(x.n, out_, 1, 1, 1);
  Eigen::Map<const RowMat<T>> wm(weight_.value.data(), out_, in_);
  Eigen::Map<const Vec<T>> bm(bias_.value.data(), out_);
  for (int i = 0; i < x.n; ++i) {
    Eigen::Map<const Vec<T>> xv(x.sample(i), in_);
    Eigen::Map<Vec<T>> yv(y.sample(i), out_);
    yv.noalias() = wm * xv;
    yv += bm;
  }
  return y;
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  input_ = x;
  return infer(x);
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T>& x = input_;
  require(grad_out.n == x.n && grad_out.sample_size() == static_cast<std::size_t>(out_), "linear backward shape mismatch");
  Eigen::Map<const RowMat<T>> wm(weight_.value.data(), out_, in_);
  Eigen::Map<RowMat<T>> dwm(weight_.grad.data(), out_, in_);
  Eigen::Map<Vec<T>> dbm(bias_.grad.data(), out_);
  Tensor<T> dx = shape_only(x);
  dx.data.assign(x.size(), T(0));
  for (int i = 0; i < x.n; ++i) {
    Eigen::Map<const Vec<T>> xv(x.sample(i), in_);
    Eigen::Map<const Vec<T>> gv(grad_out.sample(i), out_);
    dwm.noalias() += gv * xv.transpose();
    dbm += gv;
    if (this->input_grad_) {
      Eigen::Map<Vec<T>> dxv(dx.sample(i), in_);
      dxv.noalias() = wm.transpose() * gv;
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Reshape

template <typename T>
Tensor<T> Reshape<T>::infer(const Tensor<T>& x) const {
  require(x.sample_size() == static_cast<std::size_t>(c_) * d_ * h_ * w_, "reshape size mismatch");
  Tensor<T> y = x;
  y.c = c_;
  y.d = d_;
  y.h = h_;
  y.w = w_;
  return y;
}

template <typename T>
Tensor<T> Reshape<T>::forward(const Tensor<T>& x) {
  input_shape_ = shape_only(x);
  return infer(x);
}

template <typename T>
Tensor<T> Reshape<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> dx = grad_out;
  dx.c = input_shape_.c;
  dx.d = input_shape_.d;
  dx.h = input_shape_.h;
  dx.w = input_shape_.w;
  return dx;
}

// ---------------------------------------------------------------- Upsample

template <typename T>
std::vector<std::size_t> Upsample<T>::source_index(int sd, int sh, int sw) const {
  std::vector<std::size_t> idx(static_cast<std::size_t>(d_) * h_ * w_);
  std::size_t o = 0;
  for (int z = 0; z < d_; ++z) {
    const int iz = static_cast<int>(static_cast<long long>(z) * sd / d_);
    for (int y = 0; y < h_; ++y) {
      const int iy = static_cast<int>(static_cast<long long>(y) * sh / h_);
      for (int x = 0; x < w_; ++x, ++o) {
        const int ix = static_cast<int>(static_cast<long long>(x) * sw / w_);
        idx[o] = (static_cast<std::size_t>(iz) * sh + iy) * sw + ix;
      }
    }
  }
  return idx;
}

template <typename T>
Tensor<T> Upsample<T>::infer(const Tensor<T>& x) const {
  const auto idx = source_index(x.d, x.h, x.w);
  Tensor<T> y(x.n, x.c, d_, h_, w_);
  for (int i = 0; i < x.n; ++i)
    for (int ch = 0; ch < x.c; ++ch) {
      const T* p = x.channel(i, ch);
      T* q = y.channel(i, ch);
      for (std::size_t k = 0; k < idx.size(); ++k) q[k] = p[idx[k]];
    }
  return y;
}

template <typename T>
Tensor<T> Upsample<T>::forward(const Tensor<T>& x) {
  input_shape_ = shape_only(x);
  return infer(x);
}

template <typename T>
Tensor<T> Upsample<T>::backward(const Tensor<T>& grad_out) {
  const Tensor<T>& in = input_shape_;
  const auto idx = source_index(in.d, in.h, in.w);
  Tensor<T> dx(in.n, in.c, in.d, in.h, in.w);
  for (int i = 0; i < in.n; ++i)
    for (int ch = 0; ch < in.c; ++ch) {
      const T* g = grad_out.channel(i, ch);
      T* d = dx.channel(i, ch);
      for (std::size_t k = 0; k < idx.size(); ++k) d[idx[k]] += g[k];
    }
  return dx;
}

template class Conv3d<float>;
template class Conv3d<double>;
template class BatchNorm3d<float>;
template class BatchNorm3d<double>;
template class ReLU<float>;
template class ReLU<double>;
template class MaxPool3d<float>;
template class MaxPool3d<double>;
template class GlobalAvgPool<float>;
template class GlobalAvgPool<double>;
template class Linear<float>;
template class Linear<double>;
template class Reshape<float>;
template class Reshape<double>;
template class Upsample<float>;
template class Upsample<double>;

}  // namespace rprloc::nn
