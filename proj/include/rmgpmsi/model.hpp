#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rmgpmsi/backbone.hpp"
#include "rmgpmsi/error.hpp"
#include "rmgpmsi/heads.hpp"
#include "rmgpmsi/msi.hpp"
#include "rmgpmsi/nn/layers.hpp"
#include "rmgpmsi/random.hpp"
#include "rmgpmsi/tensor.hpp"

namespace rmgpmsi {

struct ModelConfig {
  backbone::BackboneSpec backbone;
  msi::InteractionConfig interaction;
  std::size_t classes = 4;
  bool head_normalization = true;
  bool smooth_normalization = true;

  void validate() const {
    backbone.validate();
    interaction.validate(backbone.stages);
    require(classes >= 2, ErrorKind::ConfigError, "need at least two classes");
  }
};

/// Identifies one classifier: a stage head or the concat head.
struct Head {
  bool concat = false;
  std::size_t stage = 0;

  static Head of_stage(std::size_t n) { return {false, n}; }
  static Head of_concat() { return {true, 0}; }
  std::string label() const { return concat ? "concat" : std::to_string(stage); }
  friend bool operator==(const Head&, const Head&) = default;
};

template <typename T>
struct ForwardResult {
  backbone::StageFeatureMaps<T> maps;
  msi::StageVectorSet<T> vectors;
  Tensor<T> m_concat;
  std::vector<Tensor<T>> stage_probs;  // empty tensor when the head was not run
  Tensor<T> concat_probs;

  std::size_t batch() const noexcept { return m_concat.n(); }

  heads::PredictionBundle<T> bundle(std::size_t b) const {
    heads::PredictionBundle<T> out;
    out.stages = vectors.stages;
    for (const auto& p : stage_probs)
      out.y_hat.emplace_back(p.empty() ? std::vector<T>{} : std::vector<T>(p.item(b).begin(), p.item(b).end()));
    if (!concat_probs.empty())
      out.y_hat_concat.assign(concat_probs.item(b).begin(), concat_probs.item(b).end());
    out.m_concat.assign(m_concat.item(b).begin(), m_concat.item(b).end());
    return out;
  }
};

/// Backbone + Smooth Conv Blocks + Multi-Stage Interaction + classifiers.
template <typename T>
class RmgPmsiModel {
 public:
  RmgPmsiModel(const ModelConfig& config, Rng& rng)
      : config_((config.validate(), config)),
        backbone_(backbone::make_tinynet<T>(config.backbone, rng)),
        stages_(config.interaction.stages(config.backbone.stages)),
        interaction_(config.interaction.stage_num, config.interaction.c, config.interaction.mlp_hidden, rng,
                     config.interaction.enabled) {
    const std::size_t c = config.interaction.c;
    for (std::size_t n : stages_)
      smooth_.push_back(std::make_unique<msi::SmoothConvBlock<T>>(
          "msi.smooth" + std::to_string(n), backbone_.stage_channels(n), c, rng, config.smooth_normalization));
    const std::size_t stage_hidden = std::max<std::size_t>(1, c / 2);
    for (std::size_t n : stages_)
      stage_heads_.push_back(std::make_unique<heads::Classifier<T>>(
          "head.stage" + std::to_string(n), c, stage_hidden, config.classes, rng, config.head_normalization));
    const std::size_t concat_width = concat_uses_mutual() ? 2 * c : stages_.size() * c;
    concat_head_ = std::make_unique<heads::Classifier<T>>("head.concat", concat_width,
                                                          std::max<std::size_t>(1, concat_width / 2),
                                                          config.classes, rng, config.head_normalization);
  }

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t total_stages() const noexcept { return backbone_.stages(); }
  const std::vector<std::size_t>& interacting_stages() const noexcept { return stages_; }
  std::size_t classes() const noexcept { return config_.classes; }
  backbone::StagedBackbone<T>& backbone() noexcept { return backbone_; }
  msi::Interaction<T>& interaction() noexcept { return interaction_; }
  msi::SmoothConvBlock<T>& smooth_block(std::size_t stage) { return *smooth_.at(index_of(stage)); }
  heads::Classifier<T>& stage_head(std::size_t stage) { return *stage_heads_.at(index_of(stage)); }
  heads::Classifier<T>& concat_head() noexcept { return *concat_head_; }
  heads::Classifier<T>& head(const Head& h) { return h.concat ? concat_head() : stage_head(h.stage); }

  /// With a single interacting stage the concat head sees [x_N, x_m].
  bool concat_uses_mutual() const noexcept {
    return config_.interaction.stage_num == 1 && config_.interaction.enabled;
  }

  std::size_t index_of(std::size_t stage) const {
    for (std::size_t i = 0; i < stages_.size(); ++i)
      if (stages_[i] == stage) return i;
    fail(ErrorKind::UnknownStage, "stage " + std::to_string(stage) + " is not among the interacting stages");
  }

  /// Full pass. With `only` set, just that classifier runs; otherwise all do.
  ForwardResult<T> forward(const Tensor<T>& x, nn::Mode mode, std::optional<Head> only = std::nullopt) {
    if (only && !only->concat) index_of(only->stage);
    ForwardResult<T> r;
    r.maps = backbone_.forward_stages(x, mode);
    std::vector<Tensor<T>> vecs;
    for (std::size_t i = 0; i < stages_.size(); ++i)
      vecs.push_back(smooth_[i]->forward(r.maps.stage(stages_[i]), mode));
    r.vectors = interaction_.forward(stages_, std::move(vecs), mode);
    r.m_concat = make_concat(r.vectors);
    r.stage_probs.resize(stages_.size());
    for (std::size_t i = 0; i < stages_.size(); ++i)
      if (!only || (!only->concat && only->stage == stages_[i]))
        r.stage_probs[i] = stage_heads_[i]->forward(r.vectors.m[i], mode);
    if (!only || only->concat) r.concat_probs = concat_head_->forward(r.m_concat, mode);
    return r;
  }

  /// Backpropagates dL/dprobs of one head through the last forward pass.
  void backward(const Head& h, const Tensor<T>& dprobs,
                std::vector<Tensor<T>>* total_stage_grads = nullptr) {
    propagate(h, head(h).backward(dprobs), total_stage_grads);
  }

  /// Same, starting from dL/dlogits.
  void backward_logits(const Head& h, const Tensor<T>& dlogits,
                       std::vector<Tensor<T>>* total_stage_grads = nullptr) {
    propagate(h, head(h).backward_logits(dlogits), total_stage_grads);
  }

  std::vector<nn::Param<T>*> backbone_params() { return backbone_.params(); }

  std::vector<nn::Param<T>*> all_params() {
    auto out = backbone_.params();
    append(out, added_shared_params());
    for (auto& h : stage_heads_) append(out, h->params());
    append(out, concat_head_->params());
    return out;
  }

  /// Parameters that influence head `h`'s prediction. Other classifiers never
  /// appear; with interaction disabled a stage head reaches only its own
  /// stage's smooth block and backbone stages up to it.
  std::vector<nn::Param<T>*> phase_params(const Head& h) {
    std::vector<nn::Param<T>*> out;
    if (!h.concat && !config_.interaction.enabled) {
      out = backbone_.params(h.stage);
      append(out, smooth_.at(index_of(h.stage))->params());
      append(out, stage_head(h.stage).params());
      return out;
    }
    out = backbone_.params();
    append(out, added_shared_params());
    append(out, head(h).params());
    return out;
  }

  std::vector<nn::Buffer<T>*> buffers() {
    auto out = backbone_.buffers();
    for (auto& s : smooth_) s->collect_buffers(out);
    for (auto& h : stage_heads_) h->collect_buffers(out);
    concat_head_->collect_buffers(out);
    return out;
  }

  void zero_grads() {
    for (auto* p : all_params()) p->grad.zero();
  }

 private:
  static void append(std::vector<nn::Param<T>*>& out, const std::vector<nn::Param<T>*>& more) {
    out.insert(out.end(), more.begin(), more.end());
  }

  std::vector<nn::Param<T>*> added_shared_params() {
    std::vector<nn::Param<T>*> out;
    for (auto& s : smooth_) append(out, s->params());
    append(out, interaction_.params());
    return out;
  }

  Tensor<T> make_concat(const msi::StageVectorSet<T>& v) const {
    std::vector<const Tensor<T>*> parts;
    if (concat_uses_mutual()) {
      parts = {&v.x.back(), &v.xm};
    } else {
      for (const auto& m : v.m) parts.push_back(&m);
    }
    return concat_channels<T>(parts);
  }

  void propagate(const Head& h, const Tensor<T>& dm_head, std::vector<Tensor<T>>* total_stage_grads) {
    const std::size_t c = config_.interaction.c;
    std::vector<std::optional<Tensor<T>>> dm(stages_.size());
    std::optional<Tensor<T>> dxm_extra;
    std::optional<Tensor<T>> dx_last_extra;
    if (!h.concat) {
      dm[index_of(h.stage)] = dm_head;
    } else if (concat_uses_mutual()) {
      dx_last_extra = slice_channels(dm_head, 0, c);
      dxm_extra = slice_channels(dm_head, c, c);
    } else {
      for (std::size_t i = 0; i < stages_.size(); ++i) dm[i] = slice_channels(dm_head, i * c, c);
    }
    auto dx = interaction_.backward(dm, dxm_extra);
    if (dx_last_extra) dx.back() += *dx_last_extra;

    std::vector<std::optional<Tensor<T>>> stage_grads(total_stage());
    const bool stage_only = !h.concat && !config_.interaction.enabled;
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      if (stage_only && stages_[i] != h.stage) continue;
      stage_grads[stages_[i] - 1] = smooth_[i]->backward(dx[i]);
    }
    backbone_.backward(stage_grads, total_stage_grads);
  }

  std::size_t total_stage() const noexcept { return backbone_.stages(); }

  ModelConfig config_;
  backbone::StagedBackbone<T> backbone_;
  std::vector<std::size_t> stages_;
  msi::Interaction<T> interaction_;
  std::vector<std::unique_ptr<msi::SmoothConvBlock<T>>> smooth_;
  std::vector<std::unique_ptr<heads::Classifier<T>>> stage_heads_;
  std::unique_ptr<heads::Classifier<T>> concat_head_;
};

}  // namespace rmgpmsi
