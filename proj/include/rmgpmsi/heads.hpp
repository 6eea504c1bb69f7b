#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rmgpmsi/error.hpp"
#include "rmgpmsi/nn/layers.hpp"
#include "rmgpmsi/random.hpp"
#include "rmgpmsi/tensor.hpp"

namespace rmgpmsi::heads {

/// Probability floor applied inside the log of the cross-entropy.
inline constexpr double kProbabilityFloor = 1e-12;

template <typename T>
std::vector<T> softmax(std::span<const T> logits) {
  std::vector<T> p(logits.size());
  if (logits.empty()) return p;
  const T mx = *std::max_element(logits.begin(), logits.end());
  T sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += (p[i] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= sum;
  return p;
}

/// Row-wise softmax of a (B, K, 1, 1) tensor.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& logits) {
  Tensor<T> p = Tensor<T>::like(logits);
  for (std::size_t b = 0; b < logits.n(); ++b) {
    const auto row = softmax<T>(logits.item(b));
    std::copy(row.begin(), row.end(), p.item(b).begin());
  }
  return p;
}

/// dL/dz from dL/dp for p = softmax(z).
template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& p, const Tensor<T>& dp) {
  Tensor<T> dz = Tensor<T>::like(p);
  for (std::size_t b = 0; b < p.n(); ++b) {
    const auto pr = p.item(b);
    const auto gr = dp.item(b);
    T dot = 0;
    for (std::size_t k = 0; k < pr.size(); ++k) dot += pr[k] * gr[k];
    for (std::size_t k = 0; k < pr.size(); ++k) dz.item(b)[k] = pr[k] * (gr[k] - dot);
  }
  return dz;
}

/// Mean cross-entropy of probability rows against integer labels.
template <typename T>
T cross_entropy(const Tensor<T>& probs, std::span<const int> labels) {
  require(labels.size() == probs.n(), ErrorKind::LengthMismatch, "label count differs from batch");
  T loss = 0;
  for (std::size_t b = 0; b < probs.n(); ++b) {
    const auto y = static_cast<std::size_t>(labels[b]);
    require(y < probs.item_size(), ErrorKind::LengthMismatch, "label out of range");
    loss -= std::log(std::max(probs.at(b, y), static_cast<T>(kProbabilityFloor)));
  }
  return loss / static_cast<T>(probs.n());
}

template <typename T>
Tensor<T> cross_entropy_grad(const Tensor<T>& probs, std::span<const int> labels) {
  Tensor<T> dp = Tensor<T>::like(probs);
  const T scale = T(1) / static_cast<T>(probs.n());
  for (std::size_t b = 0; b < probs.n(); ++b) {
    const auto y = static_cast<std::size_t>(labels[b]);
    const T p = probs.at(b, y);
    if (p > static_cast<T>(kProbabilityFloor)) dp.at(b, y) = -scale / p;
  }
  return dp;
}

/// Two fully connected layers with batch norm and ELU after the first,
/// followed by softmax.
template <typename T>
class Classifier {
 public:
  Classifier(const std::string& name, std::size_t in, std::size_t hidden, std::size_t classes, Rng& rng,
             bool normalization = true)
      : name_(name),
        fc1_(name + ".fc1", in, hidden, nn::ParamGroup::Added, rng),
        fc2_(name + ".fc2", hidden, classes, nn::ParamGroup::Added, rng) {
    if (normalization) bn_.emplace(name + ".bn", hidden, nn::ParamGroup::Added);
  }

  const std::string& name() const noexcept { return name_; }
  std::size_t in_features() const noexcept { return fc1_.in_features(); }
  std::size_t classes() const noexcept { return fc2_.out_features(); }
  nn::Linear<T>& fc1() noexcept { return fc1_; }
  nn::Linear<T>& fc2() noexcept { return fc2_; }

  Tensor<T> logits(const Tensor<T>& m, nn::Mode mode) {
    require(m.item_size() == in_features(), ErrorKind::LengthMismatch,
            name_ + " expects width " + std::to_string(in_features()) + ", got " +
                std::to_string(m.item_size()));
    Tensor<T> h = fc1_.forward(m, mode);
    if (bn_) h = bn_->forward(h, mode);
    h = act_.forward(h, mode);
    return fc2_.forward(h, mode);
  }

  Tensor<T> forward(const Tensor<T>& m, nn::Mode mode) {
    probs_ = softmax_rows(logits(m, mode));
    return probs_;
  }

  Tensor<T> backward_logits(const Tensor<T>& dz) {
    Tensor<T> g = act_.backward(fc2_.backward(dz));
    if (bn_) g = bn_->backward(g);
    return fc1_.backward(g);
  }

  /// Backward from dL/dprobs through the softmax of the last forward().
  Tensor<T> backward(const Tensor<T>& dp) { return backward_logits(softmax_backward(probs_, dp)); }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    fc1_.collect_params(out);
    if (bn_) bn_->collect_params(out);
    fc2_.collect_params(out);
    return out;
  }

  void collect_buffers(std::vector<nn::Buffer<T>*>& out) {
    if (bn_) bn_->collect_buffers(out);
  }

 private:
  std::string name_;
  nn::Linear<T> fc1_;
  std::optional<nn::BatchNorm<T>> bn_;
  nn::Elu<T> act_;
  nn::Linear<T> fc2_;
  Tensor<T> probs_;
};

/// Per-sample prediction outputs consumed by the combination rules.
template <typename T>
struct PredictionBundle {
  std::vector<std::size_t> stages;
  std::vector<std::vector<T>> y_hat;
  std::vector<T> y_hat_concat;
  std::vector<T> m_concat;
};

}  // namespace rmgpmsi::heads
