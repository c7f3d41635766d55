#pragma once

// Minimal CPU neural-network kit: NCHW tensors, convolution / transposed
// convolution via im2col + Eigen GEMM, batch norm, pooling, dense layers and
// Adam. Everything is templated on the scalar so the same code runs in float
// for training and in double for finite-difference gradient checks.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "latentscout/error.hpp"

namespace latentscout::nn {

/// Storage with a fixed SIMD alignment, so vectorized kernels take the same
/// path on every call regardless of where the heap placed the buffer.
template <class T>
using AlignedVec = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
struct Tensor {
  std::vector<int> shape;
  AlignedVec<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0)) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int v : s) n *= static_cast<std::size_t>(v);
    return n;
  }
  std::size_t size() const { return data.size(); }
  int dim(std::size_t i) const { return shape.at(i); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <class T>
struct Param {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <class T>
struct Buffer {
  std::string name;
  Tensor<T>* value;
};

namespace detail {

// Unfold image patches: cols(c*k*k + ki*k + kj, b*ph*pw + oh*pw + ow).
template <class T>
void im2col(const T* img, int batch, int channels, int height, int width, int k, int stride,
            int pad, int ph, int pw, T* cols) {
  const std::size_t ncols = static_cast<std::size_t>(batch) * ph * pw;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * ncols;
        for (int b = 0; b < batch; ++b) {
          const T* plane = img + (static_cast<std::size_t>(b) * channels + c) * height * width;
          T* dst = row + static_cast<std::size_t>(b) * ph * pw;
          for (int oh = 0; oh < ph; ++oh) {
            const int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= height) {
              std::fill(dst + oh * pw, dst + (oh + 1) * pw, T(0));
              continue;
            }
            for (int ow = 0; ow < pw; ++ow) {
              const int iw = ow * stride - pad + kj;
              dst[oh * pw + ow] = (iw >= 0 && iw < width) ? plane[ih * width + iw] : T(0);
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back into the image (img must be zeroed).
template <class T>
void col2im(const T* cols, int batch, int channels, int height, int width, int k, int stride,
            int pad, int ph, int pw, T* img) {
  const std::size_t ncols = static_cast<std::size_t>(batch) * ph * pw;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + static_cast<std::size_t>((c * k + ki) * k + kj) * ncols;
        for (int b = 0; b < batch; ++b) {
          T* plane = img + (static_cast<std::size_t>(b) * channels + c) * height * width;
          const T* src = row + static_cast<std::size_t>(b) * ph * pw;
          for (int oh = 0; oh < ph; ++oh) {
            const int ih = oh * stride - pad + ki;
            if (ih < 0 || ih >= height) continue;
            for (int ow = 0; ow < pw; ++ow) {
              const int iw = ow * stride - pad + kj;
              if (iw >= 0 && iw < width) plane[ih * width + iw] += src[oh * pw + ow];
            }
          }
        }
      }
    }
  }
}

// (B, C, HW) <-> (C, B*HW)
template <class T>
void nchw_to_cm(const T* src, int batch, int channels, int hw, T* dst) {
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      std::copy_n(src + (static_cast<std::size_t>(b) * channels + c) * hw, hw,
                  dst + static_cast<std::size_t>(c) * batch * hw + static_cast<std::size_t>(b) * hw);
}

template <class T>
void cm_to_nchw(const T* src, int batch, int channels, int hw, T* dst) {
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < channels; ++c)
      std::copy_n(src + static_cast<std::size_t>(c) * batch * hw + static_cast<std::size_t>(b) * hw, hw,
                  dst + (static_cast<std::size_t>(b) * channels + c) * hw);
}

template <class T>
void uniform_fill(Tensor<T>& t, T bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
}

}  // namespace detail

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;
  /// Training-mode forward; caches what backward needs.
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  /// Inference-mode forward; no side effects, safe to call concurrently.
  virtual Tensor<T> infer(const Tensor<T>& x) const = 0;
  /// Accumulates parameter gradients and returns the input gradient.
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  virtual void collect_params(std::vector<Param<T>>&, const std::string&) {}
  virtual void collect_buffers(std::vector<Buffer<T>>&, const std::string&) {}
  /// Appends the on/off state of piecewise-linear units from the last forward.
  virtual void activation_pattern(std::vector<bool>&) const {}
  virtual std::unique_ptr<Layer> clone() const = 0;
};

template <class T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(int in_ch, int out_ch, int kernel, int stride, int pad, std::mt19937_64& rng)
      : in_(in_ch), out_(out_ch), k_(kernel), s_(stride), p_(pad),
        weight_({out_ch, in_ch * kernel * kernel}), bias_({out_ch}),
        gweight_({out_ch, in_ch * kernel * kernel}), gbias_({out_ch}) {
    const T bound = T(1) / std::sqrt(static_cast<T>(in_ch * kernel * kernel));
    detail::uniform_fill(weight_, bound, rng);
    detail::uniform_fill(bias_, bound, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    input_shape_ = x.shape;
    return run(x, &cols_);
  }
  Tensor<T> infer(const Tensor<T>& x) const override { return run(x, nullptr); }

  Tensor<T> backward(const Tensor<T>& g) override {
    const int b = g.dim(0), oh = g.dim(2), ow = g.dim(3);
    const int kk = in_ * k_ * k_;
    const int ncols = b * oh * ow;
    AlignedVec<T> gm(static_cast<std::size_t>(out_) * ncols);
    detail::nchw_to_cm(g.ptr(), b, out_, oh * ow, gm.data());
    ConstMatMap<T> G(gm.data(), out_, ncols);
    ConstMatMap<T> C(cols_.data(), kk, ncols);
    MatMap<T>(gweight_.ptr(), out_, kk).noalias() += G * C.transpose();
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(gbias_.ptr(), out_) += G.rowwise().sum();
    AlignedVec<T> dcols(static_cast<std::size_t>(kk) * ncols);
    MatMap<T>(dcols.data(), kk, ncols).noalias() =
        ConstMatMap<T>(weight_.ptr(), out_, kk).transpose() * G;
    Tensor<T> dx(input_shape_);
    detail::col2im(dcols.data(), b, in_, input_shape_[2], input_shape_[3], k_, s_, p_, oh, ow, dx.ptr());
    return dx;
  }

  void collect_params(std::vector<Param<T>>& out, const std::string& prefix) override {
    out.push_back({prefix + "weight", &weight_, &gweight_});
    out.push_back({prefix + "bias", &bias_, &gbias_});
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Conv2d>(*this); }

 private:
  Tensor<T> run(const Tensor<T>& x, AlignedVec<T>* keep) const {
    if (x.shape.size() != 4 || x.dim(1) != in_)
      throw ContractError("Conv2d: expected NCHW input with " + std::to_string(in_) + " channels");
    const int b = x.dim(0), h = x.dim(2), w = x.dim(3);
    const int oh = (h + 2 * p_ - k_) / s_ + 1, ow = (w + 2 * p_ - k_) / s_ + 1;
    const int kk = in_ * k_ * k_;
    const int ncols = b * oh * ow;
    AlignedVec<T> local;
    AlignedVec<T>& cols = keep ? *keep : local;
    cols.resize(static_cast<std::size_t>(kk) * ncols);
    detail::im2col(x.ptr(), b, in_, h, w, k_, s_, p_, oh, ow, cols.data());
    AlignedVec<T> om(static_cast<std::size_t>(out_) * ncols);
    MatMap<T> O(om.data(), out_, ncols);
    O.noalias() = ConstMatMap<T>(weight_.ptr(), out_, kk) * ConstMatMap<T>(cols.data(), kk, ncols);
    O.colwise() += Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(bias_.ptr(), out_);
    Tensor<T> y({b, out_, oh, ow});
    detail::cm_to_nchw(om.data(), b, out_, oh * ow, y.ptr());
    return y;
  }

  int in_, out_, k_, s_, p_;
  Tensor<T> weight_, bias_, gweight_, gbias_;
  AlignedVec<T> cols_;
  std::vector<int> input_shape_;
};

/// Transposed convolution, weight layout (in, out*k*k).
/// Output size (in-1)*stride - 2*pad + k + output_pad.
template <class T>
class ConvTranspose2d final : public Layer<T> {
 public:
  ConvTranspose2d(int in_ch, int out_ch, int kernel, int stride, int pad, int output_pad,
                  std::mt19937_64& rng)
      : in_(in_ch), out_(out_ch), k_(kernel), s_(stride), p_(pad), op_(output_pad),
        weight_({in_ch, out_ch * kernel * kernel}), bias_({out_ch}),
        gweight_({in_ch, out_ch * kernel * kernel}), gbias_({out_ch}) {
    const T bound = T(1) / std::sqrt(static_cast<T>(out_ch * kernel * kernel));
    detail::uniform_fill(weight_, bound, rng);
    detail::uniform_fill(bias_, bound, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    input_shape_ = x.shape;
    xm_.resize(x.size());
    detail::nchw_to_cm(x.ptr(), x.dim(0), in_, x.dim(2) * x.dim(3), xm_.data());
    return run(x, xm_);
  }
  Tensor<T> infer(const Tensor<T>& x) const override {
    check(x);
    AlignedVec<T> xm(x.size());
    detail::nchw_to_cm(x.ptr(), x.dim(0), in_, x.dim(2) * x.dim(3), xm.data());
    return run(x, xm);
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    const int b = input_shape_[0], ih = input_shape_[2], iw = input_shape_[3];
    const int kk = out_ * k_ * k_;
    const int ncols = b * ih * iw;
    AlignedVec<T> dcols(static_cast<std::size_t>(kk) * ncols);
    detail::im2col(g.ptr(), b, out_, g.dim(2), g.dim(3), k_, s_, p_, ih, iw, dcols.data());
    ConstMatMap<T> D(dcols.data(), kk, ncols);
    ConstMatMap<T> X(xm_.data(), in_, ncols);
    MatMap<T>(gweight_.ptr(), in_, kk).noalias() += X * D.transpose();
    const int ohw = g.dim(2) * g.dim(3);
    for (int bi = 0; bi < b; ++bi)
      for (int c = 0; c < out_; ++c) {
        const T* p = g.ptr() + (static_cast<std::size_t>(bi) * out_ + c) * ohw;
        gbias_.data[c] += std::accumulate(p, p + ohw, T(0));
      }
    AlignedVec<T> dxm(static_cast<std::size_t>(in_) * ncols);
    MatMap<T>(dxm.data(), in_, ncols).noalias() = ConstMatMap<T>(weight_.ptr(), in_, kk) * D;
    Tensor<T> dx(input_shape_);
    detail::cm_to_nchw(dxm.data(), b, in_, ih * iw, dx.ptr());
    return dx;
  }

  void collect_params(std::vector<Param<T>>& out, const std::string& prefix) override {
    out.push_back({prefix + "weight", &weight_, &gweight_});
    out.push_back({prefix + "bias", &bias_, &gbias_});
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ConvTranspose2d>(*this); }

 private:
  void check(const Tensor<T>& x) const {
    if (x.shape.size() != 4 || x.dim(1) != in_)
      throw ContractError("ConvTranspose2d: expected NCHW input with " + std::to_string(in_) + " channels");
  }

  Tensor<T> run(const Tensor<T>& x, const AlignedVec<T>& xm) const {
    check(x);
    const int b = x.dim(0), ih = x.dim(2), iw = x.dim(3);
    const int oh = (ih - 1) * s_ - 2 * p_ + k_ + op_;
    const int ow = (iw - 1) * s_ - 2 * p_ + k_ + op_;
    const int kk = out_ * k_ * k_;
    const int ncols = b * ih * iw;
    AlignedVec<T> cols(static_cast<std::size_t>(kk) * ncols);
    MatMap<T>(cols.data(), kk, ncols).noalias() =
        ConstMatMap<T>(weight_.ptr(), in_, kk).transpose() * ConstMatMap<T>(xm.data(), in_, ncols);
    Tensor<T> y({b, out_, oh, ow});
    detail::col2im(cols.data(), b, out_, oh, ow, k_, s_, p_, ih, iw, y.ptr());
    const int ohw = oh * ow;
    for (int bi = 0; bi < b; ++bi)
      for (int c = 0; c < out_; ++c) {
        T* p = y.ptr() + (static_cast<std::size_t>(bi) * out_ + c) * ohw;
        for (int i = 0; i < ohw; ++i) p[i] += bias_.data[c];
      }
    return y;
  }

  int in_, out_, k_, s_, p_, op_;
  Tensor<T> weight_, bias_, gweight_, gbias_;
  AlignedVec<T> xm_;
  std::vector<int> input_shape_;
};

/// Per-channel batch normalization over (N, H, W). Training mode uses batch
/// statistics and updates running estimates; inference uses the running ones.
template <class T>
class BatchNorm2d final : public Layer<T> {
 public:
  explicit BatchNorm2d(int channels, T momentum = T(0.1), T eps = T(1e-5))
      : c_(channels), momentum_(momentum), eps_(eps), gamma_({channels}, T(1)), beta_({channels}),
        ggamma_({channels}), gbeta_({channels}), running_mean_({channels}),
        running_var_({channels}, T(1)) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    const int b = x.dim(0), hw = x.dim(2) * x.dim(3);
    const double m = static_cast<double>(b) * hw;
    xhat_ = Tensor<T>(x.shape);
    inv_std_.assign(c_, T(0));
    Tensor<T> y(x.shape);
    for (int c = 0; c < c_; ++c) {
      double sum = 0, sq = 0;
      for (int bi = 0; bi < b; ++bi) {
        const T* p = x.ptr() + (static_cast<std::size_t>(bi) * c_ + c) * hw;
        for (int i = 0; i < hw; ++i) sum += p[i];
      }
      const double mean = sum / m;
      for (int bi = 0; bi < b; ++bi) {
        const T* p = x.ptr() + (static_cast<std::size_t>(bi) * c_ + c) * hw;
        for (int i = 0; i < hw; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      const double var = sq / m;
      const double inv = 1.0 / std::sqrt(var + static_cast<double>(eps_));
      inv_std_[c] = static_cast<T>(inv);
      for (int bi = 0; bi < b; ++bi) {
        const std::size_t off = (static_cast<std::size_t>(bi) * c_ + c) * hw;
        for (int i = 0; i < hw; ++i) {
          const T xh = static_cast<T>((x.data[off + i] - mean) * inv);
          xhat_.data[off + i] = xh;
          y.data[off + i] = gamma_.data[c] * xh + beta_.data[c];
        }
      }
      const double unbiased = m > 1 ? sq / (m - 1) : var;
      running_mean_.data[c] = static_cast<T>((1 - momentum_) * running_mean_.data[c] + momentum_ * mean);
      running_var_.data[c] = static_cast<T>((1 - momentum_) * running_var_.data[c] + momentum_ * unbiased);
    }
    return y;
  }

  Tensor<T> infer(const Tensor<T>& x) const override {
    const int b = x.dim(0), hw = x.dim(2) * x.dim(3);
    Tensor<T> y(x.shape);
    for (int c = 0; c < c_; ++c) {
      const T inv = T(1) / std::sqrt(running_var_.data[c] + eps_);
      const T scale = gamma_.data[c] * inv;
      const T shift = beta_.data[c] - running_mean_.data[c] * scale;
      for (int bi = 0; bi < b; ++bi) {
        const std::size_t off = (static_cast<std::size_t>(bi) * c_ + c) * hw;
        for (int i = 0; i < hw; ++i) y.data[off + i] = x.data[off + i] * scale + shift;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& g) override {
    const int b = g.dim(0), hw = g.dim(2) * g.dim(3);
    const double m = static_cast<double>(b) * hw;
    Tensor<T> dx(g.shape);
    for (int c = 0; c < c_; ++c) {
      double sum_g = 0, sum_gx = 0;
      for (int bi = 0; bi < b; ++bi) {
        const std::size_t off = (static_cast<std::size_t>(bi) * c_ + c) * hw;
        for (int i = 0; i < hw; ++i) {
          sum_g += g.data[off + i];
          sum_gx += static_cast<double>(g.data[off + i]) * xhat_.data[off + i];
        }
      }
      ggamma_.data[c] += static_cast<T>(sum_gx);
      gbeta_.data[c] += static_cast<T>(sum_g);
      const double k = static_cast<double>(gamma_.data[c]) * inv_std_[c] / m;
      for (int bi = 0; bi < b; ++bi) {
        const std::size_t off = (static_cast<std::size_t>(bi) * c_ + c) * hw;
        for (int i = 0; i < hw; ++i)
          dx.data[off + i] = static_cast<T>(k * (m * g.data[off + i] - sum_g - xhat_.data[off + i] * sum_gx));
      }
    }
    return dx;
  }

  void collect_params(std::vector<Param<T>>& out, const std::string& prefix) override {
    out.push_back({prefix + "gamma", &gamma_, &ggamma_});
    out.push_back({prefix + "beta", &beta_, &gbeta_});
  }
  void collect_buffers(std::vector<Buffer<T>>& out, const std::string& prefix) override {
    out.push_back({prefix + "running_mean", &running_mean_});
    out.push_back({prefix + "running_var", &running_var_});
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<BatchNorm2d>(*this); }

 private:
  int c_;
  T momentum_, eps_;
  Tensor<T> gamma_, beta_, ggamma_, gbeta_, running_mean_, running_var_;
  Tensor<T> xhat_;
  AlignedVec<T> inv_std_;
};

/// y = x W^T + b on (batch, features).
template <class T>
class Linear final : public Layer<T> {
 public:
  Linear(int in_features, int out_features, std::mt19937_64& rng)
      : in_(in_features), out_(out_features), weight_({out_features, in_features}),
        bias_({out_features}), gweight_({out_features, in_features}), gbias_({out_features}) {
    const T bound = T(1) / std::sqrt(static_cast<T>(in_features));
    detail::uniform_fill(weight_, bound, rng);
    detail::uniform_fill(bias_, bound, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    input_ = x;
    return infer(x);
  }
  Tensor<T> infer(const Tensor<T>& x) const override {
    const int b = x.dim(0);
    if (static_cast<int>(x.size()) != b * in_)
      throw ContractError("Linear: expected " + std::to_string(in_) + " input features");
    Tensor<T> y({b, out_});
    MatMap<T> Y(y.ptr(), b, out_);
    Y.noalias() = ConstMatMap<T>(x.ptr(), b, in_) * ConstMatMap<T>(weight_.ptr(), out_, in_).transpose();
    Y.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias_.ptr(), out_);
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    const int b = g.dim(0);
    ConstMatMap<T> G(g.ptr(), b, out_);
    ConstMatMap<T> X(input_.ptr(), b, in_);
    MatMap<T>(gweight_.ptr(), out_, in_).noalias() += G.transpose() * X;
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(gbias_.ptr(), out_) += G.colwise().sum();
    Tensor<T> dx({b, in_});
    MatMap<T>(dx.ptr(), b, in_).noalias() = G * ConstMatMap<T>(weight_.ptr(), out_, in_);
    dx.shape = input_.shape;
    return dx;
  }
  void collect_params(std::vector<Param<T>>& out, const std::string& prefix) override {
    out.push_back({prefix + "weight", &weight_, &gweight_});
    out.push_back({prefix + "bias", &bias_, &gbias_});
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Linear>(*this); }

 private:
  int in_, out_;
  Tensor<T> weight_, bias_, gweight_, gbias_;
  Tensor<T> input_;
};

template <class T>
class ReLU final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override {
    auto y = infer(x);
    mask_ = y;
    return y;
  }
  Tensor<T> infer(const Tensor<T>& x) const override {
    Tensor<T> y = x;
    for (auto& v : y.data) v = v > T(0) ? v : T(0);
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!(mask_.data[i] > T(0))) dx.data[i] = T(0);
    return dx;
  }
  void activation_pattern(std::vector<bool>& out) const override {
    for (auto v : mask_.data) out.push_back(v > T(0));
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<ReLU>(*this); }

 private:
  Tensor<T> mask_;
};

/// Reinterprets the trailing dimensions; batch dimension preserved.
template <class T>
class Reshape final : public Layer<T> {
 public:
  explicit Reshape(std::vector<int> tail) : tail_(std::move(tail)) {}
  Tensor<T> forward(const Tensor<T>& x) override {
    in_shape_ = x.shape;
    return infer(x);
  }
  Tensor<T> infer(const Tensor<T>& x) const override {
    Tensor<T> y;
    y.shape = {x.dim(0)};
    y.shape.insert(y.shape.end(), tail_.begin(), tail_.end());
    if (Tensor<T>::count(y.shape) != x.size()) throw ContractError("Reshape: element count mismatch");
    y.data = x.data;
    return y;
  }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx = g;
    dx.shape = in_shape_;
    return dx;
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<Reshape>(*this); }

 private:
  std::vector<int> tail_;
  std::vector<int> in_shape_;
};

template <class T>
class MaxPool2d final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override {
    in_shape_ = x.shape;
    return run(x, &argmax_);
  }
  Tensor<T> infer(const Tensor<T>& x) const override { return run(x, nullptr); }
  Tensor<T> backward(const Tensor<T>& g) override {
    Tensor<T> dx(in_shape_);
    for (std::size_t i = 0; i < g.size(); ++i) dx.data[argmax_[i]] += g.data[i];
    return dx;
  }
  std::unique_ptr<Layer<T>> clone() const override { return std::make_unique<MaxPool2d>(*this); }

 private:
  Tensor<T> run(const Tensor<T>& x, std::vector<std::size_t>* keep) const {
    const int b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = h / 2, ow = w / 2;
    Tensor<T> y({b, c, oh, ow});
    if (keep) keep->assign(y.size(), 0);
    std::size_t o = 0;
    for (int p = 0; p < b * c; ++p) {
      const std::size_t base = static_cast<std::size_t>(p) * h * w;
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j, ++o) {
          std::size_t best = base + (2 * i) * w + 2 * j;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) {
              const std::size_t idx = base + (2 * i + di) * w + 2 * j + dj;
              if (x.data[idx] > x.data[best]) best = idx;
            }
          y.data[o] = x.data[best];
          if (keep) (*keep)[o] = best;
        }
    }
    return y;
  }
  std::vector<int> in_shape_;
  std::vector<std::size_t> argmax_;
};

template <class T>
class Sequential {
 public:
  Sequential() = default;
  Sequential(const Sequential& other) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
  }
  Sequential& operator=(const Sequential& other) {
    if (this != &other) {
      layers_.clear();
      for (const auto& l : other.layers_) layers_.push_back(l->clone());
    }
    return *this;
  }
  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  template <class L, class... Args>
  void add(Args&&... args) {
    layers_.push_back(std::make_unique<L>(std::forward<Args>(args)...));
  }

  Tensor<T> forward(Tensor<T> x) {
    for (auto& l : layers_) x = l->forward(x);
    return x;
  }
  Tensor<T> infer(Tensor<T> x) const {
    for (const auto& l : layers_) x = l->infer(x);
    return x;
  }
  Tensor<T> backward(Tensor<T> g) {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }
  void collect_params(std::vector<Param<T>>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->collect_params(out, prefix + std::to_string(i) + ".");
  }
  void collect_buffers(std::vector<Buffer<T>>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < layers_.size(); ++i)
      layers_[i]->collect_buffers(out, prefix + std::to_string(i) + ".");
  }
  void activation_pattern(std::vector<bool>& out) const {
    for (const auto& l : layers_) l->activation_pattern(out);
  }
  std::size_t size() const { return layers_.size(); }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

template <class T>
void zero_grads(const std::vector<Param<T>>& params) {
  for (const auto& p : params) p.grad->zero();
}

/// Adam with bias correction; moment buffers are keyed by parameter order.
template <class T>
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(const std::vector<Param<T>>& params) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.value->size(), T(0));
        v_.emplace_back(p.value->size(), T(0));
      }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, t_);
    const double c2 = 1.0 - std::pow(b2_, t_);
    const double step = lr_ * std::sqrt(c2) / c1;
    const double eps_hat = eps_ * std::sqrt(c2);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& val = params[k].value->data;
      const auto& g = params[k].grad->data;
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double gi = g[i];
        m[i] = static_cast<T>(b1_ * m[i] + (1 - b1_) * gi);
        v[i] = static_cast<T>(b2_ * v[i] + (1 - b2_) * gi * gi);
        val[i] = static_cast<T>(val[i] - step * m[i] / (std::sqrt(static_cast<double>(v[i])) + eps_hat));
      }
    }
  }
  long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<AlignedVec<T>> m_, v_;
};

}  // namespace latentscout::nn
