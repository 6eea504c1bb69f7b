#pragma once

#include <cstddef>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rmgpmsi/error.hpp"
#include "rmgpmsi/nn/layers.hpp"
#include "rmgpmsi/random.hpp"
#include "rmgpmsi/tensor.hpp"
#include "rmgpmsi/text.hpp"

namespace rmgpmsi::backbone {

/// Stage s (1-based) covers layers [begin(s), end(s)).
struct StagePartition {
  std::size_t n_layers = 0;
  std::vector<std::size_t> boundaries;  // first layer index of stages 2..N
  std::vector<std::size_t> channels_per_stage;

  std::size_t stages() const noexcept { return channels_per_stage.size(); }
  std::size_t begin(std::size_t stage) const { return stage == 1 ? 0 : boundaries.at(stage - 2); }
  std::size_t end(std::size_t stage) const {
    return stage == stages() ? n_layers : boundaries.at(stage - 1);
  }

  friend bool operator==(const StagePartition&, const StagePartition&) = default;
};

/// A new stage starts wherever the channel count strictly increases.
inline StagePartition partition_stages(std::span<const std::size_t> profile) {
  require(!profile.empty(), ErrorKind::EmptyProfile, "layer channel profile is empty");
  StagePartition p;
  p.n_layers = profile.size();
  for (std::size_t i = 1; i < profile.size(); ++i) {
    if (profile[i] > profile[i - 1]) {
      p.channels_per_stage.push_back(profile[i - 1]);
      p.boundaries.push_back(i);
    }
  }
  p.channels_per_stage.push_back(profile.back());
  return p;
}

/// Adapter contract: any ordered layer list that reports its output channels
/// can serve as a stage-partitioned backbone.
template <typename T>
class BackboneLayer : public nn::Layer<T> {
 public:
  virtual std::size_t out_channels() const = 0;
};

/// conv -> [batch norm] -> ELU
template <typename T>
class ConvBlock final : public BackboneLayer<T> {
 public:
  ConvBlock(const std::string& name, typename nn::Conv2d<T>::Options conv, bool normalization,
            nn::ParamGroup group, Rng& rng)
      : out_channels_(conv.out_channels) {
    body_.template emplace<nn::Conv2d<T>>(name + ".conv", conv, group, rng);
    if (normalization) body_.template emplace<nn::BatchNorm<T>>(name + ".bn", conv.out_channels, group);
    body_.template emplace<nn::Elu<T>>();
  }

  std::size_t out_channels() const override { return out_channels_; }
  Tensor<T> forward(const Tensor<T>& x, nn::Mode mode) override { return body_.forward(x, mode); }
  Tensor<T> backward(const Tensor<T>& dy) override { return body_.backward(dy); }
  void collect_params(std::vector<nn::Param<T>*>& out) override { body_.collect_params(out); }
  void collect_buffers(std::vector<nn::Buffer<T>*>& out) override { body_.collect_buffers(out); }

 private:
  std::size_t out_channels_;
  nn::Sequential<T> body_;
};

/// Text spec (`key = value`) describing a TinyNet-style backbone.
struct BackboneSpec {
  std::size_t stages = 5;
  std::vector<std::size_t> channels{8, 16, 32, 64, 128};
  std::size_t input_size = 64;
  std::size_t in_channels = 3;
  bool normalization = true;
  bool bias = true;

  void validate() const {
    require(stages > 0 && channels.size() == stages, ErrorKind::ConfigError,
            "backbone: `channels` must list exactly `stages` = " + std::to_string(stages) + " values");
    for (std::size_t i = 1; i < channels.size(); ++i)
      require(channels[i] > channels[i - 1], ErrorKind::ConfigError,
              "backbone: channels must strictly increase between stages");
    require(input_size % (std::size_t{1} << stages) == 0, ErrorKind::ConfigError,
            "backbone: input_size must be divisible by 2^stages");
  }

  /// Spatial side of stage `stage`'s output (each stage halves the side).
  std::size_t stage_side(std::size_t stage) const { return input_size >> stage; }

  friend bool operator==(const BackboneSpec&, const BackboneSpec&) = default;
};

inline void apply_backbone_key(BackboneSpec& spec, const std::string& key, const std::string& value) {
  if (key == "stages") spec.stages = text::parse_size(value, key);
  else if (key == "channels") spec.channels = text::parse_size_list(value, key);
  else if (key == "input_size") spec.input_size = text::parse_size(value, key);
  else if (key == "in_channels") spec.in_channels = text::parse_size(value, key);
  else if (key == "normalization") spec.normalization = text::parse_bool(value, key);
  else if (key == "bias") spec.bias = text::parse_bool(value, key);
  else fail(ErrorKind::ConfigError, "unknown backbone key `" + key + "`");
}

inline BackboneSpec parse_backbone_spec(std::istream& is) {
  BackboneSpec spec;
  for (const auto& [key, value] : text::read_key_values(is)) apply_backbone_key(spec, key, value);
  spec.validate();
  return spec;
}

inline BackboneSpec load_backbone_spec(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::ConfigError, "cannot open backbone spec " + path);
  return parse_backbone_spec(in);
}

/// Feature map at the end of every stage; maps[i] belongs to stage i + 1.
template <typename T>
struct StageFeatureMaps {
  std::vector<Tensor<T>> maps;
  std::size_t stages() const noexcept { return maps.size(); }
  const Tensor<T>& stage(std::size_t n) const { return maps.at(n - 1); }
};

template <typename T>
class StagedBackbone {
 public:
  StagedBackbone(std::vector<std::unique_ptr<BackboneLayer<T>>> layers, std::size_t input_size,
                 std::size_t in_channels)
      : layers_(std::move(layers)), input_size_(input_size), in_channels_(in_channels) {
    std::vector<std::size_t> profile;
    for (const auto& l : layers_) profile.push_back(l->out_channels());
    partition_ = partition_stages(profile);
  }

  const StagePartition& partition() const noexcept { return partition_; }
  std::size_t stages() const noexcept { return partition_.stages(); }
  std::size_t input_size() const noexcept { return input_size_; }
  std::size_t stage_channels(std::size_t n) const { return partition_.channels_per_stage.at(n - 1); }

  void check_input(const Tensor<T>& x) const {
    require(x.c() == in_channels_ && x.h() == input_size_ && x.w() == input_size_,
            ErrorKind::ShapeMismatch,
            "backbone expects (B," + std::to_string(in_channels_) + "," + std::to_string(input_size_) +
                "," + std::to_string(input_size_) + "), got " + shape_string(x.shape()));
  }

  /// Runs only stage n on the previous stage's output.
  Tensor<T> forward_stage(std::size_t n, const Tensor<T>& x, nn::Mode mode) {
    Tensor<T> h = x;
    for (std::size_t i = partition_.begin(n); i < partition_.end(n); ++i) h = layers_[i]->forward(h, mode);
    return h;
  }

  /// One pass returning every stage output, up to and including `last_stage`
  /// (all stages by default).
  StageFeatureMaps<T> forward_stages(const Tensor<T>& x, nn::Mode mode,
                                     std::optional<std::size_t> last_stage = std::nullopt) {
    check_input(x);
    const std::size_t last = last_stage.value_or(stages());
    StageFeatureMaps<T> out;
    const Tensor<T>* h = &x;
    for (std::size_t n = 1; n <= last; ++n) {
      out.maps.push_back(forward_stage(n, *h, mode));
      h = &out.maps.back();
    }
    forwarded_ = last;
    return out;
  }

  /// Backpropagates per-stage output gradients (missing entries are zero).
  /// On return, `total_stage_grads[i]`, when requested, holds the full
  /// gradient reaching stage i + 1's output, including flow from deeper stages.
  Tensor<T> backward(std::span<const std::optional<Tensor<T>>> stage_grads,
                     std::vector<Tensor<T>>* total_stage_grads = nullptr) {
    std::size_t deepest = 0;
    for (std::size_t i = 0; i < stage_grads.size() && i < forwarded_; ++i)
      if (stage_grads[i]) deepest = i + 1;
    if (total_stage_grads) total_stage_grads->assign(forwarded_, Tensor<T>());
    Tensor<T> g;
    for (std::size_t n = deepest; n >= 1; --n) {
      if (n - 1 < stage_grads.size() && stage_grads[n - 1]) {
        if (g.empty()) g = *stage_grads[n - 1];
        else g += *stage_grads[n - 1];
      }
      if (total_stage_grads) (*total_stage_grads)[n - 1] = g;
      for (std::size_t i = partition_.end(n); i-- > partition_.begin(n);) g = layers_[i]->backward(g);
    }
    return g;
  }

  /// Parameters of stages 1..last_stage.
  std::vector<nn::Param<T>*> params(std::optional<std::size_t> last_stage = std::nullopt) {
    std::vector<nn::Param<T>*> out;
    const std::size_t last = last_stage.value_or(stages());
    for (std::size_t i = 0; i < partition_.end(last); ++i) layers_[i]->collect_params(out);
    return out;
  }

  std::vector<nn::Buffer<T>*> buffers() {
    std::vector<nn::Buffer<T>*> out;
    for (auto& l : layers_) l->collect_buffers(out);
    return out;
  }

 private:
  std::vector<std::unique_ptr<BackboneLayer<T>>> layers_;
  StagePartition partition_;
  std::size_t input_size_;
  std::size_t in_channels_;
  std::size_t forwarded_ = 0;
};

/// TinyNet: one [3x3 conv stride 2, norm, ELU] block per stage.
template <typename T>
StagedBackbone<T> make_tinynet(const BackboneSpec& spec, Rng& rng) {
  spec.validate();
  std::vector<std::unique_ptr<BackboneLayer<T>>> layers;
  std::size_t in = spec.in_channels;
  for (std::size_t s = 0; s < spec.stages; ++s) {
    typename nn::Conv2d<T>::Options conv{in, spec.channels[s], 3, 2, 1, spec.bias};
    layers.push_back(std::make_unique<ConvBlock<T>>("backbone.stage" + std::to_string(s + 1), conv,
                                                    spec.normalization, nn::ParamGroup::Pretrained, rng));
    in = spec.channels[s];
  }
  return StagedBackbone<T>(std::move(layers), spec.input_size, spec.in_channels);
}

}  // namespace rmgpmsi::backbone
