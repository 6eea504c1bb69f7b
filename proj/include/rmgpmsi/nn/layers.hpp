#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "rmgpmsi/error.hpp"
#include "rmgpmsi/random.hpp"
#include "rmgpmsi/tensor.hpp"

namespace rmgpmsi::nn {

enum class Mode { Train, Eval };

/// Pretrained parameters belong to the backbone; everything stacked on top
/// is newly added and trains at its own rate.
enum class ParamGroup { Pretrained, Added };

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  ParamGroup group = ParamGroup::Added;

  Param(std::string n, typename Tensor<T>::Shape shape, ParamGroup g)
      : name(std::move(n)), value(shape), grad(shape), group(g) {}
};

/// Non-trainable state that still belongs in checkpoints.
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, Mode mode) = 0;
  /// Accumulates parameter gradients and returns the input gradient for the
  /// most recent forward call.
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
  virtual void collect_params(std::vector<Param<T>*>&) {}
  virtual void collect_buffers(std::vector<Buffer<T>*>&) {}
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  struct Options {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 3;
    std::size_t stride = 1;
    std::size_t padding = 0;
    bool bias = true;
  };

  Conv2d(const std::string& name, Options o, ParamGroup group, Rng& rng)
      : opt_(o),
        weight_(name + ".weight", {o.out_channels, o.in_channels, o.kernel, o.kernel}, group) {
    if (o.bias) bias_ = std::make_unique<Param<T>>(name + ".bias", typename Tensor<T>::Shape{o.out_channels, 1, 1, 1}, group);
    const double fan_in = static_cast<double>(o.in_channels * o.kernel * o.kernel);
    const double stddev = std::sqrt(2.0 / fan_in);
    for (auto& w : weight_.value.values()) w = static_cast<T>(rng.normal(0.0, stddev));
  }

  const Options& options() const noexcept { return opt_; }
  Param<T>& weight() noexcept { return weight_; }
  Param<T>* bias() noexcept { return bias_.get(); }

  std::size_t out_size(std::size_t in) const {
    return (in + 2 * opt_.padding - opt_.kernel) / opt_.stride + 1;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    require(x.c() == opt_.in_channels, ErrorKind::ChannelMismatch,
            "conv " + weight_.name + " expects " + std::to_string(opt_.in_channels) +
                " channels, got " + std::to_string(x.c()));
    require(x.h() + 2 * opt_.padding >= opt_.kernel && x.w() + 2 * opt_.padding >= opt_.kernel,
            ErrorKind::ShapeMismatch, "conv input smaller than kernel");
    in_shape_ = x.shape();
    const std::size_t ho = out_size(x.h()), wo = out_size(x.w());
    const std::size_t rows = opt_.in_channels * opt_.kernel * opt_.kernel, cols = ho * wo;
    cols_.assign(x.n() * rows * cols, T(0));
    Tensor<T> y(x.n(), opt_.out_channels, ho, wo);
    ConstMatrixMap<T> w(weight_.value.data(), opt_.out_channels, rows);
    for (std::size_t b = 0; b < x.n(); ++b) {
      T* col = cols_.data() + b * rows * cols;
      im2col(x.item(b).data(), x.h(), x.w(), ho, wo, col);
      MatrixMap<T> out(y.item(b).data(), opt_.out_channels, cols);
      out.noalias() = w * ConstMatrixMap<T>(col, rows, cols);
      if (bias_)
        for (std::size_t o = 0; o < opt_.out_channels; ++o) out.row(o).array() += bias_->value[o];
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const std::size_t ho = dy.h(), wo = dy.w();
    const std::size_t rows = opt_.in_channels * opt_.kernel * opt_.kernel, cols = ho * wo;
    Tensor<T> dx(in_shape_);
    ConstMatrixMap<T> w(weight_.value.data(), opt_.out_channels, rows);
    MatrixMap<T> dw(weight_.grad.data(), opt_.out_channels, rows);
    std::vector<T> dcol(rows * cols);
    for (std::size_t b = 0; b < dy.n(); ++b) {
      ConstMatrixMap<T> g(dy.item(b).data(), opt_.out_channels, cols);
      ConstMatrixMap<T> col(cols_.data() + b * rows * cols, rows, cols);
      dw.noalias() += g * col.transpose();
      if (bias_)
        for (std::size_t o = 0; o < opt_.out_channels; ++o) bias_->grad[o] += g.row(o).sum();
      MatrixMap<T>(dcol.data(), rows, cols).noalias() = w.transpose() * g;
      col2im(dcol.data(), in_shape_[2], in_shape_[3], ho, wo, dx.item(b).data());
    }
    return dx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&weight_);
    if (bias_) out.push_back(bias_.get());
  }

 private:
  void im2col(const T* img, std::size_t h, std::size_t w, std::size_t ho, std::size_t wo,
              T* col) const {
    const std::size_t k = opt_.kernel;
    for (std::size_t c = 0; c < opt_.in_channels; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          T* row = col + ((c * k + ky) * k + kx) * ho * wo;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * opt_.stride + ky) -
                                      static_cast<std::ptrdiff_t>(opt_.padding);
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * opt_.stride + kx) -
                                        static_cast<std::ptrdiff_t>(opt_.padding);
              const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                  ix < static_cast<std::ptrdiff_t>(w);
              row[oy * wo + ox] = inside ? img[(c * h + iy) * w + ix] : T(0);
            }
          }
        }
  }

  void col2im(const T* col, std::size_t h, std::size_t w, std::size_t ho, std::size_t wo,
              T* img) const {
    const std::size_t k = opt_.kernel;
    for (std::size_t c = 0; c < opt_.in_channels; ++c)
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const T* row = col + ((c * k + ky) * k + kx) * ho * wo;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * opt_.stride + ky) -
                                      static_cast<std::ptrdiff_t>(opt_.padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t ox = 0; ox < wo; ++ox) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * opt_.stride + kx) -
                                        static_cast<std::ptrdiff_t>(opt_.padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
              img[(c * h + iy) * w + ix] += row[oy * wo + ox];
            }
          }
        }
  }

  Options opt_;
  Param<T> weight_;
  std::unique_ptr<Param<T>> bias_;
  typename Tensor<T>::Shape in_shape_{};
  std::vector<T> cols_;
};

/// Batch normalization over (N, H, W) per channel. Works for conv maps and
/// for (B, c, 1, 1) feature batches alike.
template <typename T>
class BatchNorm final : public Layer<T> {
 public:
  BatchNorm(const std::string& name, std::size_t channels, ParamGroup group, T momentum = T(0.1),
            T eps = T(1e-5))
      : gamma_(name + ".gamma", {channels, 1, 1, 1}, group),
        beta_(name + ".beta", {channels, 1, 1, 1}, group),
        running_mean_{name + ".running_mean", Tensor<T>(channels, 1)},
        running_var_{name + ".running_var", Tensor<T>(channels, 1, 1, 1, T(1))},
        momentum_(momentum),
        eps_(eps) {
    gamma_.value.fill(T(1));
  }

  Param<T>& gamma() noexcept { return gamma_; }
  Param<T>& beta() noexcept { return beta_; }
  Buffer<T>& running_mean() noexcept { return running_mean_; }
  Buffer<T>& running_var() noexcept { return running_var_; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    const std::size_t channels = gamma_.value.n();
    require(x.c() == channels, ErrorKind::ChannelMismatch,
            gamma_.name + " expects " + std::to_string(channels) + " channels");
    mode_ = mode;
    const std::size_t spatial = x.h() * x.w(), count = x.n() * spatial;
    Tensor<T> y = Tensor<T>::like(x);
    xhat_ = Tensor<T>::like(x);
    inv_std_.assign(channels, T(0));
    for (std::size_t c = 0; c < channels; ++c) {
      T mean, var;
      if (mode == Mode::Train) {
        T sum = 0;
        for (std::size_t b = 0; b < x.n(); ++b)
          for (std::size_t s = 0; s < spatial; ++s) sum += x.item(b)[c * spatial + s];
        mean = sum / static_cast<T>(count);
        T sq = 0;
        for (std::size_t b = 0; b < x.n(); ++b)
          for (std::size_t s = 0; s < spatial; ++s) {
            const T d = x.item(b)[c * spatial + s] - mean;
            sq += d * d;
          }
        var = sq / static_cast<T>(count);
        const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
        running_mean_.value[c] = (T(1) - momentum_) * running_mean_.value[c] + momentum_ * mean;
        running_var_.value[c] = (T(1) - momentum_) * running_var_.value[c] + momentum_ * unbiased;
      } else {
        mean = running_mean_.value[c];
        var = running_var_.value[c];
      }
      const T inv = T(1) / std::sqrt(var + eps_);
      inv_std_[c] = inv;
      const T g = gamma_.value[c], be = beta_.value[c];
      for (std::size_t b = 0; b < x.n(); ++b)
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t i = c * spatial + s;
          const T xh = (x.item(b)[i] - mean) * inv;
          xhat_.item(b)[i] = xh;
          y.item(b)[i] = g * xh + be;
        }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    const std::size_t channels = gamma_.value.n();
    const std::size_t spatial = dy.h() * dy.w(), count = dy.n() * spatial;
    Tensor<T> dx = Tensor<T>::like(dy);
    for (std::size_t c = 0; c < channels; ++c) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t b = 0; b < dy.n(); ++b)
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t i = c * spatial + s;
          sum_dy += dy.item(b)[i];
          sum_dy_xhat += dy.item(b)[i] * xhat_.item(b)[i];
        }
      gamma_.grad[c] += sum_dy_xhat;
      beta_.grad[c] += sum_dy;
      const T g = gamma_.value[c], inv = inv_std_[c];
      const T m = static_cast<T>(count);
      for (std::size_t b = 0; b < dy.n(); ++b)
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t i = c * spatial + s;
          if (mode_ == Mode::Train)
            dx.item(b)[i] = g * inv / m * (m * dy.item(b)[i] - sum_dy - xhat_.item(b)[i] * sum_dy_xhat);
          else
            dx.item(b)[i] = g * inv * dy.item(b)[i];
        }
    }
    return dx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect_buffers(std::vector<Buffer<T>*>& out) override {
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

 private:
  Param<T> gamma_;
  Param<T> beta_;
  Buffer<T> running_mean_;
  Buffer<T> running_var_;
  T momentum_;
  T eps_;
  Mode mode_ = Mode::Train;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
};

template <typename T>
inline T elu(T x) {
  return x > T(0) ? x : std::expm1(x);
}

template <typename T>
class Elu final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    y_ = Tensor<T>::like(x);
    for (std::size_t i = 0; i < x.size(); ++i) y_[i] = elu(x[i]);
    positive_.assign(x.size(), false);
    for (std::size_t i = 0; i < x.size(); ++i) positive_[i] = x[i] > T(0);
    return y_;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx = Tensor<T>::like(dy);
    for (std::size_t i = 0; i < dy.size(); ++i)
      dx[i] = positive_[i] ? dy[i] : dy[i] * (y_[i] + T(1));
    return dx;
  }

 private:
  Tensor<T> y_;
  std::vector<bool> positive_;
};

/// Fully connected layer over (B, in, 1, 1) -> (B, out, 1, 1).
template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(const std::string& name, std::size_t in, std::size_t out, ParamGroup group, Rng& rng)
      : weight_(name + ".weight", {out, in, 1, 1}, group), bias_(name + ".bias", {out, 1, 1, 1}, group) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& w : weight_.value.values()) w = static_cast<T>(rng.uniform(-bound, bound));
    for (auto& b : bias_.value.values()) b = static_cast<T>(rng.uniform(-bound, bound));
  }

  std::size_t in_features() const noexcept { return weight_.value.c(); }
  std::size_t out_features() const noexcept { return weight_.value.n(); }
  Param<T>& weight() noexcept { return weight_; }
  Param<T>& bias() noexcept { return bias_; }

  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    require(x.item_size() == in_features(), ErrorKind::LengthMismatch,
            weight_.name + " expects width " + std::to_string(in_features()) + ", got " +
                std::to_string(x.item_size()));
    x_ = x;
    Tensor<T> y(x.n(), out_features());
    ConstMatrixMap<T> xm(x.data(), x.n(), in_features());
    ConstMatrixMap<T> w(weight_.value.data(), out_features(), in_features());
    MatrixMap<T> ym(y.data(), x.n(), out_features());
    ym.noalias() = xm * w.transpose();
    for (std::size_t b = 0; b < x.n(); ++b)
      for (std::size_t o = 0; o < out_features(); ++o) ym(b, o) += bias_.value[o];
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    ConstMatrixMap<T> g(dy.data(), dy.n(), out_features());
    ConstMatrixMap<T> xm(x_.data(), x_.n(), in_features());
    ConstMatrixMap<T> w(weight_.value.data(), out_features(), in_features());
    MatrixMap<T>(weight_.grad.data(), out_features(), in_features()).noalias() += g.transpose() * xm;
    for (std::size_t b = 0; b < dy.n(); ++b)
      for (std::size_t o = 0; o < out_features(); ++o) bias_.grad[o] += g(b, o);
    Tensor<T> dx(x_.shape());
    MatrixMap<T>(dx.data(), dy.n(), in_features()).noalias() = g * w;
    return dx;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  Param<T> weight_;
  Param<T> bias_;
  Tensor<T> x_;
};

/// Spatial max per channel; ties resolve to the first position in raster order.
template <typename T>
class GlobalMaxPool final : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode) override {
    in_shape_ = x.shape();
    const std::size_t spatial = x.h() * x.w();
    require(spatial > 0, ErrorKind::ShapeMismatch, "global max pool over an empty map");
    Tensor<T> y(x.n(), x.c());
    argmax_.assign(x.n() * x.c(), 0);
    for (std::size_t b = 0; b < x.n(); ++b)
      for (std::size_t c = 0; c < x.c(); ++c) {
        const T* p = x.item(b).data() + c * spatial;
        const std::size_t best = static_cast<std::size_t>(std::max_element(p, p + spatial) - p);
        argmax_[b * x.c() + c] = best;
        y.at(b, c) = p[best];
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> dx(in_shape_);
    const std::size_t spatial = in_shape_[2] * in_shape_[3];
    for (std::size_t b = 0; b < in_shape_[0]; ++b)
      for (std::size_t c = 0; c < in_shape_[1]; ++c)
        dx.item(b)[c * spatial + argmax_[b * in_shape_[1] + c]] += dy.at(b, c);
    return dx;
  }

 private:
  typename Tensor<T>::Shape in_shape_{};
  std::vector<std::size_t> argmax_;
};

/// Ordered chain of layers.
template <typename T>
class Sequential : public Layer<T> {
 public:
  Sequential() = default;

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  void push(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

  std::size_t size() const noexcept { return layers_.size(); }
  Layer<T>& operator[](std::size_t i) { return *layers_[i]; }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) override {
    Tensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h, mode);
    return h;
  }

  Tensor<T> backward(const Tensor<T>& dy) override {
    Tensor<T> g = dy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    for (auto& l : layers_) l->collect_params(out);
  }
  void collect_buffers(std::vector<Buffer<T>*>& out) override {
    for (auto& l : layers_) l->collect_buffers(out);
  }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

template <typename T>
std::vector<Param<T>*> params_of(Layer<T>& layer) {
  std::vector<Param<T>*> out;
  layer.collect_params(out);
  return out;
}

template <typename T>
void zero_grads(std::span<Param<T>* const> params) {
  for (auto* p : params) p->grad.zero();
}

}  // namespace rmgpmsi::nn
