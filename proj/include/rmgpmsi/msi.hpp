#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmgpmsi/backbone.hpp"
#include "rmgpmsi/error.hpp"
#include "rmgpmsi/nn/layers.hpp"
#include "rmgpmsi/random.hpp"
#include "rmgpmsi/tensor.hpp"

namespace rmgpmsi::msi {

struct InteractionConfig {
  std::size_t stage_num = 3;
  std::size_t c = 128;
  std::size_t mlp_hidden = 128;
  /// When false the gates are bypassed (g = 0, so m = x) and no MLP exists.
  bool enabled = true;

  void validate(std::size_t total_stages) const {
    if (stage_num < 1 || stage_num > total_stages)
      fail(ErrorKind::InvalidStageNum, "StageNum = " + std::to_string(stage_num) +
                                           " must lie in [1, N] with N = " + std::to_string(total_stages));
    require(c > 0 && mlp_hidden > 0, ErrorKind::ConfigError, "interaction widths must be positive");
  }

  /// Interacting stages N - StageNum + 1 .. N, ascending.
  std::vector<std::size_t> stages(std::size_t total_stages) const {
    std::vector<std::size_t> out;
    for (std::size_t n = total_stages - stage_num + 1; n <= total_stages; ++n) out.push_back(n);
    return out;
  }
};

/// Logistic function that never overflows.
template <typename T>
T sigmoid(T z) {
  if (z >= T(0)) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

/// g = sigmoid(x_m * x_n), elementwise.
template <typename T>
std::vector<T> gate(std::span<const T> xm, std::span<const T> xn) {
  require(xm.size() == xn.size(), ErrorKind::LengthMismatch,
          "gate inputs differ in length: " + std::to_string(xm.size()) + " vs " + std::to_string(xn.size()));
  std::vector<T> g(xn.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = sigmoid(xm[i] * xn[i]);
  return g;
}

/// m = x + g * x, elementwise.
template <typename T>
std::vector<T> supplement(std::span<const T> xn, std::span<const T> gn) {
  require(xn.size() == gn.size(), ErrorKind::LengthMismatch,
          "supplement inputs differ in length: " + std::to_string(xn.size()) + " vs " +
              std::to_string(gn.size()));
  std::vector<T> m(xn.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = xn[i] + gn[i] * xn[i];
  return m;
}

/// Two conv layers (1x1 to 2c, then 3x3 to c) followed by global max pooling.
template <typename T>
class SmoothConvBlock {
 public:
  SmoothConvBlock(const std::string& name, std::size_t in_channels, std::size_t c, Rng& rng,
                  bool normalization = true)
      : in_channels_(in_channels), c_(c) {
    body_.template emplace<backbone::ConvBlock<T>>(
        name + ".reduce", typename nn::Conv2d<T>::Options{in_channels, 2 * c, 1, 1, 0, true},
        normalization, nn::ParamGroup::Added, rng);
    body_.template emplace<backbone::ConvBlock<T>>(
        name + ".smooth", typename nn::Conv2d<T>::Options{2 * c, c, 3, 1, 1, true}, normalization,
        nn::ParamGroup::Added, rng);
  }

  std::size_t in_channels() const noexcept { return in_channels_; }
  std::size_t width() const noexcept { return c_; }

  /// Output of the conv pair before pooling, cached from the last forward.
  const Tensor<T>& smoothed() const noexcept { return smoothed_; }

  Tensor<T> forward(const Tensor<T>& map, nn::Mode mode) {
    require(map.c() == in_channels_, ErrorKind::ChannelMismatch,
            "smooth block expects " + std::to_string(in_channels_) + " channels, got " +
                std::to_string(map.c()));
    smoothed_ = body_.forward(map, mode);
    return pool_.forward(smoothed_, mode);
  }

  Tensor<T> backward(const Tensor<T>& dx) { return body_.backward(pool_.backward(dx)); }

  std::vector<nn::Param<T>*> params() { return nn::params_of<T>(body_); }
  void collect_buffers(std::vector<nn::Buffer<T>*>& out) { body_.collect_buffers(out); }

 private:
  std::size_t in_channels_;
  std::size_t c_;
  nn::Sequential<T> body_;
  nn::GlobalMaxPool<T> pool_;
  Tensor<T> smoothed_;
};

/// f_m: Linear(StageNum*c -> hidden), ELU, Linear(hidden -> c). The output
/// layer has no activation so the mutual vector can take either sign.
template <typename T>
class MutualMlp {
 public:
  MutualMlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng& rng,
            bool hidden_activation = true)
      : fc1_(name + ".fc1", in, hidden, nn::ParamGroup::Added, rng),
        fc2_(name + ".fc2", hidden, out, nn::ParamGroup::Added, rng),
        hidden_activation_(hidden_activation) {}

  nn::Linear<T>& fc1() noexcept { return fc1_; }
  nn::Linear<T>& fc2() noexcept { return fc2_; }

  Tensor<T> forward(const Tensor<T>& x, nn::Mode mode) {
    Tensor<T> h = fc1_.forward(x, mode);
    if (hidden_activation_) h = act_.forward(h, mode);
    return fc2_.forward(h, mode);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> g = fc2_.backward(dy);
    if (hidden_activation_) g = act_.backward(g);
    return fc1_.backward(g);
  }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    fc1_.collect_params(out);
    fc2_.collect_params(out);
    return out;
  }

 private:
  nn::Linear<T> fc1_;
  nn::Linear<T> fc2_;
  nn::Elu<T> act_;
  bool hidden_activation_;
};

/// Batched interaction state for one forward pass; entry i of each list
/// belongs to stages[i]. Every tensor is (B, c, 1, 1).
template <typename T>
struct StageVectorSet {
  std::vector<std::size_t> stages;
  std::vector<Tensor<T>> x;
  std::vector<Tensor<T>> g;
  std::vector<Tensor<T>> m;
  Tensor<T> xm;

  std::size_t index_of(std::size_t stage) const {
    for (std::size_t i = 0; i < stages.size(); ++i)
      if (stages[i] == stage) return i;
    fail(ErrorKind::UnknownStage, "stage " + std::to_string(stage) + " is not interacting");
  }
};

template <typename T>
class Interaction {
 public:
  Interaction(std::size_t stage_num, std::size_t c, std::size_t hidden, Rng& rng, bool enabled = true,
              bool hidden_activation = true)
      : stage_num_(stage_num), c_(c), enabled_(enabled) {
    if (enabled_) mlp_.emplace("msi.mlp", stage_num * c, hidden, c, rng, hidden_activation);
  }

  bool enabled() const noexcept { return enabled_; }
  std::size_t stage_num() const noexcept { return stage_num_; }
  std::size_t width() const noexcept { return c_; }
  MutualMlp<T>* mlp() noexcept { return mlp_ ? &*mlp_ : nullptr; }

  void check(std::span<const Tensor<T>> x) const {
    require(x.size() == stage_num_, ErrorKind::ArityMismatch,
            "expected " + std::to_string(stage_num_) + " stage vectors, got " + std::to_string(x.size()));
    for (const auto& v : x)
      require(v.item_size() == c_ && v.n() == x.front().n(), ErrorKind::LengthMismatch,
              "stage vectors must have width " + std::to_string(c_));
  }

  /// x_m = f_m(concat(x)).
  Tensor<T> mutual_vector(std::span<const Tensor<T>> x, nn::Mode mode) {
    check(x);
    require(enabled_, ErrorKind::ConfigError, "mutual vector requested with interaction disabled");
    std::vector<const Tensor<T>*> parts;
    for (const auto& v : x) parts.push_back(&v);
    return mlp_->forward(concat_channels<T>(parts), mode);
  }

  StageVectorSet<T> forward(std::vector<std::size_t> stages, std::vector<Tensor<T>> x, nn::Mode mode) {
    check(x);
    StageVectorSet<T> out;
    out.stages = std::move(stages);
    if (enabled_) out.xm = mutual_vector(x, mode);
    for (const auto& xn : x) {
      Tensor<T> g = Tensor<T>::like(xn);
      Tensor<T> m = xn;
      if (enabled_) {
        for (std::size_t i = 0; i < xn.size(); ++i) {
          g[i] = sigmoid(out.xm[i] * xn[i]);
          m[i] = xn[i] + g[i] * xn[i];
        }
      }
      out.g.push_back(std::move(g));
      out.m.push_back(std::move(m));
    }
    out.x = std::move(x);
    cached_ = out;
    return out;
  }

  /// Given dL/dm_n (absent = zero) and an optional extra dL/dx_m, returns dL/dx_n
  /// for every interacting stage.
  std::vector<Tensor<T>> backward(std::span<const std::optional<Tensor<T>>> dm,
                                  const std::optional<Tensor<T>>& dxm_extra = std::nullopt) {
    const auto& s = cached_;
    std::vector<Tensor<T>> dx;
    for (const auto& xn : s.x) dx.push_back(Tensor<T>::like(xn));
    if (!enabled_) {
      for (std::size_t k = 0; k < dx.size(); ++k)
        if (k < dm.size() && dm[k]) dx[k] = *dm[k];
      return dx;
    }
    Tensor<T> dxm = Tensor<T>::like(s.xm);
    if (dxm_extra) dxm += *dxm_extra;
    bool any = static_cast<bool>(dxm_extra);
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (k >= dm.size() || !dm[k]) continue;
      any = true;
      const auto& x = s.x[k];
      const auto& g = s.g[k];
      const auto& d = *dm[k];
      for (std::size_t i = 0; i < x.size(); ++i) {
        const T dg = d[i] * x[i] * g[i] * (T(1) - g[i]);  // dL/dz with z = x_m * x_n
        dx[k][i] += d[i] * (T(1) + g[i]) + dg * s.xm[i];
        dxm[i] += dg * x[i];
      }
    }
    if (!any) return dx;
    const Tensor<T> dcat = mlp_->backward(dxm);
    for (std::size_t k = 0; k < dx.size(); ++k) dx[k] += slice_channels(dcat, k * c_, c_);
    return dx;
  }

  std::vector<nn::Param<T>*> params() { return mlp_ ? mlp_->params() : std::vector<nn::Param<T>*>{}; }

 private:
  std::size_t stage_num_;
  std::size_t c_;
  bool enabled_;
  std::optional<MutualMlp<T>> mlp_;
  StageVectorSet<T> cached_;
};

}  // namespace rmgpmsi::msi
