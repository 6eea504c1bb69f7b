#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <numbers>
#include <span>
#include <string>

#include "rmgpmsi/nn/layers.hpp"
#include "rmgpmsi/tensor.hpp"

namespace rmgpmsi::optim {

/// Cosine annealing from lr0 at epoch 0 down to 0 at epoch `horizon`.
inline double cosine_lr(double lr0, std::size_t epoch, std::size_t horizon) {
  if (horizon == 0) return lr0;
  const double t = static_cast<double>(epoch) / static_cast<double>(horizon);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

struct GroupRates {
  double pretrained = 0.0;
  double added = 0.0;
  double of(nn::ParamGroup g) const { return g == nn::ParamGroup::Pretrained ? pretrained : added; }
};

/// SGD with momentum and coupled weight decay:
///   v <- momentum * v + (grad + decay * w);  w <- w - lr * v
/// Velocity slots are keyed by parameter name and only touched when the
/// parameter takes part in a step.
template <typename T>
class Sgd {
 public:
  Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}

  double momentum() const noexcept { return momentum_; }
  double weight_decay() const noexcept { return weight_decay_; }
  std::size_t steps() const noexcept { return steps_; }
  void set_steps(std::size_t s) noexcept { steps_ = s; }

  void step(std::span<nn::Param<T>* const> params, const GroupRates& rates) {
    for (auto* p : params) {
      auto [it, inserted] = velocity_.try_emplace(p->name, p->value.shape());
      auto& v = it->second;
      const T lr = static_cast<T>(rates.of(p->group));
      const T mu = static_cast<T>(momentum_), wd = static_cast<T>(weight_decay_);
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        v[i] = mu * v[i] + (p->grad[i] + wd * p->value[i]);
        p->value[i] -= lr * v[i];
      }
    }
    ++steps_;
  }

  std::map<std::string, Tensor<T>>& velocities() noexcept { return velocity_; }
  const std::map<std::string, Tensor<T>>& velocities() const noexcept { return velocity_; }

 private:
  double momentum_;
  double weight_decay_;
  std::size_t steps_ = 0;
  std::map<std::string, Tensor<T>> velocity_;
};

}  // namespace rmgpmsi::optim
