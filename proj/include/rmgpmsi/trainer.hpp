#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rmgpmsi/checkpoint.hpp"
#include "rmgpmsi/data.hpp"
#include "rmgpmsi/error.hpp"
#include "rmgpmsi/evalkit.hpp"
#include "rmgpmsi/heads.hpp"
#include "rmgpmsi/model.hpp"
#include "rmgpmsi/optim.hpp"
#include "rmgpmsi/random.hpp"
#include "rmgpmsi/rmg.hpp"
#include "rmgpmsi/text.hpp"

namespace rmgpmsi::trainer {

struct Phase {
  Head head;
  unsigned r = 0;
  friend bool operator==(const Phase&, const Phase&) = default;
};

struct PhaseSchedule {
  std::vector<Phase> phases;
  std::size_t size() const noexcept { return phases.size(); }
};

/// Progressive: stage phases n = N - StageNum + 1 .. N with r = N - n + 1
/// (0 when `mosaic` is off), then the concat phase with r = 0.
/// Non-progressive: the concat phase alone.
inline PhaseSchedule build_schedule(std::size_t total_stages, std::size_t stage_num, bool progressive = true,
                                    bool mosaic = true) {
  if (stage_num < 1 || stage_num > total_stages)
    fail(ErrorKind::InvalidStageNum, "StageNum = " + std::to_string(stage_num) +
                                         " must lie in [1, N] with N = " + std::to_string(total_stages));
  PhaseSchedule s;
  if (progressive)
    for (std::size_t n = total_stages - stage_num + 1; n <= total_stages; ++n)
      s.phases.push_back({Head::of_stage(n), mosaic ? static_cast<unsigned>(total_stages - n + 1) : 0u});
  s.phases.push_back({Head::of_concat(), 0});
  return s;
}

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  double lr_pretrained = 0.01;
  double lr_new = 0.01;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  std::size_t freeze_epochs = 0;
  std::size_t stage_num = 3;
  std::uint64_t seed = 0;
  bool progressive = true;
  bool mosaic = true;
  bool allow_deep_recursion = false;

  void validate() const {
    require(epochs > 0, ErrorKind::ConfigError, "train.epochs must be positive");
    require(batch_size > 0, ErrorKind::ConfigError, "train.batch_size must be positive");
    require(lr_pretrained > 0 && lr_new > 0 && weight_decay > 0 && momentum > 0, ErrorKind::ConfigError,
            "learning rates, weight decay and momentum must be positive");
    require(freeze_epochs < epochs, ErrorKind::ConfigError,
            "train.freeze_epochs = " + std::to_string(freeze_epochs) + " must be below train.epochs = " +
                std::to_string(epochs));
  }
};

// ---------------------------------------------------------------------------
// Config text: `section.key = value` lines shared by config files and
// checkpoint echoes.

inline bool apply_model_key(ModelConfig& m, const std::string& key, const std::string& value) {
  if (key.rfind("backbone.", 0) == 0) {
    backbone::apply_backbone_key(m.backbone, key.substr(9), value);
  } else if (key == "msi.stage_num") {
    m.interaction.stage_num = text::parse_size(value, key);
  } else if (key == "msi.c") {
    m.interaction.c = text::parse_size(value, key);
  } else if (key == "msi.mlp_hidden") {
    m.interaction.mlp_hidden = text::parse_size(value, key);
  } else if (key == "msi.enabled") {
    m.interaction.enabled = text::parse_bool(value, key);
  } else if (key == "model.classes") {
    m.classes = text::parse_size(value, key);
  } else if (key == "model.head_normalization") {
    m.head_normalization = text::parse_bool(value, key);
  } else if (key == "model.smooth_normalization") {
    m.smooth_normalization = text::parse_bool(value, key);
  } else {
    return false;
  }
  return true;
}

inline bool apply_train_key(TrainConfig& t, const std::string& key, const std::string& value) {
  if (key == "train.epochs") t.epochs = text::parse_size(value, key);
  else if (key == "train.batch_size") t.batch_size = text::parse_size(value, key);
  else if (key == "train.lr_pretrained") t.lr_pretrained = text::parse_double(value, key);
  else if (key == "train.lr_new") t.lr_new = text::parse_double(value, key);
  else if (key == "train.weight_decay") t.weight_decay = text::parse_double(value, key);
  else if (key == "train.momentum") t.momentum = text::parse_double(value, key);
  else if (key == "train.freeze_epochs") t.freeze_epochs = text::parse_size(value, key);
  else if (key == "train.stage_num") t.stage_num = text::parse_size(value, key);
  else if (key == "train.seed") t.seed = text::parse_u64(value, key);
  else if (key == "train.progressive") t.progressive = text::parse_bool(value, key);
  else if (key == "train.mosaic") t.mosaic = text::parse_bool(value, key);
  else if (key == "rmg.allow_deep_recursion") t.allow_deep_recursion = text::parse_bool(value, key);
  else return false;
  return true;
}

inline std::vector<std::pair<std::string, std::string>> model_config_entries(const ModelConfig& m) {
  std::string channels;
  for (std::size_t i = 0; i < m.backbone.channels.size(); ++i)
    channels += (i ? "," : "") + std::to_string(m.backbone.channels[i]);
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {{"backbone.stages", std::to_string(m.backbone.stages)},
          {"backbone.channels", channels},
          {"backbone.input_size", std::to_string(m.backbone.input_size)},
          {"backbone.in_channels", std::to_string(m.backbone.in_channels)},
          {"backbone.normalization", b(m.backbone.normalization)},
          {"backbone.bias", b(m.backbone.bias)},
          {"msi.stage_num", std::to_string(m.interaction.stage_num)},
          {"msi.c", std::to_string(m.interaction.c)},
          {"msi.mlp_hidden", std::to_string(m.interaction.mlp_hidden)},
          {"msi.enabled", b(m.interaction.enabled)},
          {"model.classes", std::to_string(m.classes)},
          {"model.head_normalization", b(m.head_normalization)},
          {"model.smooth_normalization", b(m.smooth_normalization)}};
}

inline std::vector<std::pair<std::string, std::string>> train_config_entries(const TrainConfig& t) {
  const auto b = [](bool v) { return std::string(v ? "true" : "false"); };
  return {{"train.epochs", std::to_string(t.epochs)},
          {"train.batch_size", std::to_string(t.batch_size)},
          {"train.lr_pretrained", text::exact(t.lr_pretrained)},
          {"train.lr_new", text::exact(t.lr_new)},
          {"train.weight_decay", text::exact(t.weight_decay)},
          {"train.momentum", text::exact(t.momentum)},
          {"train.freeze_epochs", std::to_string(t.freeze_epochs)},
          {"train.stage_num", std::to_string(t.stage_num)},
          {"train.seed", std::to_string(t.seed)},
          {"train.progressive", b(t.progressive)},
          {"train.mosaic", b(t.mosaic)},
          {"rmg.allow_deep_recursion", b(t.allow_deep_recursion)}};
}

inline std::string entries_to_text(const std::vector<std::pair<std::string, std::string>>& entries) {
  std::string out;
  for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
  return out;
}

inline ModelConfig model_config_from_text(const std::string& textual) {
  ModelConfig m;
  std::istringstream is(textual);
  for (const auto& [k, v] : text::read_key_values(is)) apply_model_key(m, k, v);
  return m;
}

inline TrainConfig train_config_from_text(const std::string& textual) {
  TrainConfig t;
  std::istringstream is(textual);
  for (const auto& [k, v] : text::read_key_values(is)) apply_train_key(t, k, v);
  return t;
}

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRow {
  std::size_t epoch = 0;
  std::string phase;  // 1-based phase index, or "eval"
  std::string stage;  // stage number, "concat", or "all" for eval rows
  double loss = 0.0;
  std::optional<double> acc_concat;
  std::optional<double> acc_mix;
  double lr_pretrained = 0.0;
  double lr_new = 0.0;
  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline constexpr const char* kMetricsHeader = "epoch,phase,stage,loss,acc_concat,acc_mix,lr_pretrained,lr_new";

inline std::string to_csv_line(const MetricsRow& r) {
  const auto opt = [](const std::optional<double>& v) { return v ? text::exact(*v) : std::string(); };
  return std::to_string(r.epoch) + ',' + r.phase + ',' + r.stage + ',' + text::exact(r.loss) + ',' + opt(r.acc_concat) +
         ',' + opt(r.acc_mix) + ',' + text::exact(r.lr_pretrained) + ',' + text::exact(r.lr_new);
}

inline std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) out += to_csv_line(r) + "\n";
  return out;
}

inline std::vector<MetricsRow> parse_metrics_csv(const std::string& csv) {
  std::vector<MetricsRow> rows;
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) fail(ErrorKind::CorruptCheckpoint, "bad metrics header");
  const auto opt = [](const std::string& s) {
    return s.empty() ? std::optional<double>() : std::optional<double>(text::parse_double(s, "metrics"));
  };
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = text::split(line, ',');
    if (f.size() != 8) fail(ErrorKind::CorruptCheckpoint, "bad metrics row: " + line);
    rows.push_back({text::parse_size(f[0], "epoch"), f[1], f[2], text::parse_double(f[3], "loss"), opt(f[4]),
                    opt(f[5]), text::parse_double(f[6], "lr"), text::parse_double(f[7], "lr")});
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Training

struct StepReport {
  std::vector<Phase> phases;
  std::vector<double> losses;         // one per phase
  std::vector<std::size_t> correct;   // per phase, on the phase input
  std::size_t batch = 0;
  std::size_t forward_passes = 0;
  std::size_t updates = 0;
  std::map<std::string, std::size_t> head_updates;  // head label -> updates
};

template <typename T>
struct PhaseEvent {
  enum class When { Input, AfterUpdate };
  When when;
  std::size_t index;
  const Phase& phase;
  const Tensor<T>& input;
};

struct FitOptions {
  data::TransformSpec transform;
  const data::Dataset* eval = nullptr;  // defaults to the training set
  std::string checkpoint_path;          // written after every epoch when set
  std::string config_echo;              // extra key = value lines stored in checkpoints
  std::optional<std::size_t> stop_after_epoch;
  std::function<void(const std::vector<MetricsRow>&)> on_epoch;
  evalkit::EvalOptions eval_options;
};

template <typename T>
class Trainer {
 public:
  using Hook = std::function<void(const PhaseEvent<T>&)>;

  Trainer(RmgPmsiModel<T>& model, const TrainConfig& config)
      : model_(model),
        config_((config.validate(), config)),
        schedule_(build_schedule(model.total_stages(), config.stage_num, config.progressive, config.mosaic)),
        sgd_(config.momentum, config.weight_decay),
        rng_(derive_seed(config.seed, {0x7261696e})) {
    require(config.stage_num == model.config().interaction.stage_num, ErrorKind::ConfigError,
            "train.stage_num = " + std::to_string(config.stage_num) + " differs from msi.stage_num = " +
                std::to_string(model.config().interaction.stage_num));
  }

  const PhaseSchedule& schedule() const noexcept { return schedule_; }
  const TrainConfig& config() const noexcept { return config_; }
  optim::Sgd<T>& optimizer() noexcept { return sgd_; }
  Rng& rng() noexcept { return rng_; }
  std::size_t epochs_done() const noexcept { return epoch_; }
  const std::vector<MetricsRow>& metrics() const noexcept { return rows_; }
  void set_hook(Hook hook) { hook_ = std::move(hook); }

  /// Rates for 1-based `epoch`: cosine-annealed per group, pretrained
  /// group at 0 while frozen.
  optim::GroupRates rates(std::size_t epoch) const {
    const double p = frozen(epoch) ? 0.0 : optim::cosine_lr(config_.lr_pretrained, epoch - 1, config_.epochs);
    return {p, optim::cosine_lr(config_.lr_new, epoch - 1, config_.epochs)};
  }
  bool frozen(std::size_t epoch) const noexcept { return epoch <= config_.freeze_epochs; }

  /// One iteration of the phase loop: per phase, a fresh mosaic per image,
  /// a forward pass, cross-entropy against the labels, backprop and one
  /// update of exactly the parameters the phase's prediction used.
  StepReport train_step(std::span<const ImageTensor> images, std::span<const int> labels,
                        const optim::GroupRates& rates, Rng& rng, bool freeze_backbone = false) {
    require(!images.empty(), ErrorKind::EmptyBatch, "train_step on an empty batch");
    require(images.size() == labels.size(), ErrorKind::LengthMismatch, "image and label counts differ");
    StepReport report;
    report.batch = images.size();
    for (std::size_t i = 0; i < schedule_.size(); ++i) {
      const Phase& phase = schedule_.phases[i];
      std::vector<ImageTensor> inputs;
      inputs.reserve(images.size());
      for (const auto& img : images)
        inputs.push_back(phase.r == 0 ? img : rmg::generate(img, phase.r, rng, config_.allow_deep_recursion).first);
      const auto x = to_batch<T>(std::span<const ImageTensor>(inputs));
      if (hook_) hook_({PhaseEvent<T>::When::Input, i, phase, x});

      model_.zero_grads();
      const auto result = model_.forward(x, nn::Mode::Train, phase.head);
      ++report.forward_passes;
      const auto& probs =
          phase.head.concat ? result.concat_probs : result.stage_probs[model_.index_of(phase.head.stage)];
      const double loss = static_cast<double>(heads::cross_entropy<T>(probs, labels));
      if (!std::isfinite(loss))
        fail(ErrorKind::NonFiniteLoss, "phase " + std::to_string(i + 1) + " (head " + phase.head.label() +
                                           ", r = " + std::to_string(phase.r) + ") produced loss " +
                                           std::to_string(loss));
      std::size_t hits = 0;
      Tensor<T> dlogits = probs;
      const T scale = T(1) / static_cast<T>(images.size());
      for (std::size_t b = 0; b < images.size(); ++b) {
        hits += static_cast<int>(evalkit::argmax<T>(probs.item(b))) == labels[b];
        dlogits.at(b, static_cast<std::size_t>(labels[b])) -= T(1);
        for (auto& v : dlogits.item(b)) v *= scale;
      }
      model_.backward_logits(phase.head, dlogits);

      auto params = model_.phase_params(phase.head);
      if (freeze_backbone)
        std::erase_if(params, [](const nn::Param<T>* p) { return p->group == nn::ParamGroup::Pretrained; });
      sgd_.step(params, rates);
      ++report.updates;
      ++report.head_updates[phase.head.label()];
      report.phases.push_back(phase);
      report.losses.push_back(loss);
      report.correct.push_back(hits);
      if (hook_) hook_({PhaseEvent<T>::When::AfterUpdate, i, phase, x});
    }
    return report;
  }

  /// Runs the remaining epochs (all of them, or those after a restored
  /// checkpoint). Each epoch appends one row per phase and one eval row.
  const std::vector<MetricsRow>& fit(const data::Dataset& train, const FitOptions& options = {}) {
    require(!train.empty(), ErrorKind::DatasetEmpty, "training dataset is empty");
    for (const auto& s : train.samples)
      require(s.label >= 0 && static_cast<std::size_t>(s.label) < model_.classes(), ErrorKind::ConfigError,
              "label " + std::to_string(s.label) + " outside [0, " + std::to_string(model_.classes()) + ")");
    data::TransformSpec transform = options.transform;
    transform.mode = data::TransformMode::Train;
    for (std::size_t epoch = epoch_ + 1; epoch <= config_.epochs; ++epoch) {
      const auto lr = rates(epoch);
      std::vector<std::size_t> order(train.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      rng_.shuffle(order.begin(), order.end());
      std::vector<double> loss_sum(schedule_.size(), 0.0);
      for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
        const std::size_t count = std::min(config_.batch_size, order.size() - start);
        std::vector<ImageTensor> images;
        std::vector<int> labels;
        for (std::size_t j = 0; j < count; ++j) {
          const auto& s = train.samples[order[start + j]];
          images.push_back(data::apply_transform(s.image, transform, rng_));
          labels.push_back(s.label);
        }
        const auto step = train_step(images, labels, lr, rng_, frozen(epoch));
        for (std::size_t i = 0; i < schedule_.size(); ++i) loss_sum[i] += step.losses[i] * static_cast<double>(count);
      }
      for (std::size_t i = 0; i < schedule_.size(); ++i)
        rows_.push_back({epoch, std::to_string(i + 1), schedule_.phases[i].head.label(),
                         loss_sum[i] / static_cast<double>(train.size()), std::nullopt, std::nullopt, lr.pretrained,
                         lr.added});
      const auto report = evalkit::evaluate(model_, options.eval ? *options.eval : train, options.transform,
                                            options.eval_options);
      rows_.push_back({epoch, "eval", "all", report.loss_concat, report.acc_concat, report.acc_mix, lr.pretrained,
                       lr.added});
      epoch_ = epoch;
      if (!options.checkpoint_path.empty()) save_checkpoint(options.checkpoint_path, options.config_echo);
      if (options.on_epoch) options.on_epoch(rows_);
      if (options.stop_after_epoch && epoch >= *options.stop_after_epoch) break;
    }
    return rows_;
  }

  /// Mean total (summed over phases) training loss of each epoch, 1-based.
  std::vector<double> epoch_total_losses() const {
    std::vector<double> out;
    for (const auto& r : rows_) {
      if (r.phase == "eval") continue;
      if (out.size() < r.epoch) out.resize(r.epoch, 0.0);
      out[r.epoch - 1] += r.loss;
    }
    return out;
  }

  checkpoint::Checkpoint snapshot(const std::string& extra_echo = {}) {
    checkpoint::Checkpoint c;
    c.config = entries_to_text(model_config_entries(model_.config())) +
               entries_to_text(train_config_entries(config_)) + extra_echo;
    c.epoch = epoch_;
    c.rng_state = rng_.serialize();
    c.optimizer_steps = sgd_.steps();
    for (auto* p : model_.all_params()) c.params.emplace(p->name, checkpoint::to_blob(p->value));
    for (auto* b : model_.buffers()) c.buffers.emplace(b->name, checkpoint::to_blob(b->value));
    for (const auto& [name, v] : sgd_.velocities()) c.velocities.emplace(name, checkpoint::to_blob(v));
    c.metrics_csv = metrics_csv(rows_);
    return c;
  }

  void save_checkpoint(const std::string& path, const std::string& extra_echo = {}) {
    checkpoint::save(path, snapshot(extra_echo));
  }

  /// Restores model, optimizer, generator, epoch counter and metrics.
  void restore(const checkpoint::Checkpoint& c) {
    check_compatible(c);
    for (auto* p : model_.all_params()) checkpoint::from_blob(c.params.at(p->name), p->value, p->name);
    for (auto* b : model_.buffers()) checkpoint::from_blob(c.buffers.at(b->name), b->value, b->name);
    auto& vel = sgd_.velocities();
    vel.clear();
    std::map<std::string, const nn::Param<T>*> by_name;
    for (auto* p : model_.all_params()) by_name[p->name] = p;
    for (const auto& [name, blob] : c.velocities) {
      const auto it = by_name.find(name);
      require(it != by_name.end(), ErrorKind::ResumeMismatch, "optimizer slot for unknown parameter " + name);
      Tensor<T> v(it->second->value.shape());
      checkpoint::from_blob(blob, v, name);
      vel.emplace(name, std::move(v));
    }
    sgd_.set_steps(c.optimizer_steps);
    rng_ = Rng::deserialize(c.rng_state);
    epoch_ = c.epoch;
    rows_ = parse_metrics_csv(c.metrics_csv);
  }

  void load_checkpoint(const std::string& path) { restore(checkpoint::load(path)); }

 private:
  void check_compatible(const checkpoint::Checkpoint& c) {
    const ModelConfig stored = model_config_from_text(c.config);
    const TrainConfig stored_train = train_config_from_text(c.config);
    const auto mine = model_config_entries(model_.config());
    const auto theirs = model_config_entries(stored);
    for (std::size_t i = 0; i < mine.size(); ++i)
      require(mine[i] == theirs[i], ErrorKind::ResumeMismatch,
              "checkpoint has " + theirs[i].first + " = " + theirs[i].second + ", run has " + mine[i].second);
    require(stored_train.stage_num == config_.stage_num && stored_train.progressive == config_.progressive &&
                stored_train.mosaic == config_.mosaic,
            ErrorKind::ResumeMismatch,
            "checkpoint schedule (StageNum = " + std::to_string(stored_train.stage_num) +
                ") differs from the run (StageNum = " + std::to_string(config_.stage_num) + ")");
    for (auto* p : model_.all_params())
      require(c.params.count(p->name) == 1, ErrorKind::ResumeMismatch, "checkpoint lacks parameter " + p->name);
    for (auto* b : model_.buffers())
      require(c.buffers.count(b->name) == 1, ErrorKind::ResumeMismatch, "checkpoint lacks buffer " + b->name);
    require(c.params.size() == model_.all_params().size(), ErrorKind::ResumeMismatch,
            "checkpoint has parameters the model lacks");
  }

  RmgPmsiModel<T>& model_;
  TrainConfig config_;
  PhaseSchedule schedule_;
  optim::Sgd<T> sgd_;
  Rng rng_;
  std::size_t epoch_ = 0;
  std::vector<MetricsRow> rows_;
  Hook hook_;
};

}  // namespace rmgpmsi::trainer
