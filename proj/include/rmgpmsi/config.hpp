#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rmgpmsi/data.hpp"
#include "rmgpmsi/error.hpp"
#include "rmgpmsi/evalkit.hpp"
#include "rmgpmsi/model.hpp"
#include "rmgpmsi/text.hpp"
#include "rmgpmsi/trainer.hpp"

namespace rmgpmsi::config {

/// Environment variable naming the default output root.
inline constexpr const char* kOutputRootVariable = "RMGPMSI_OUT";

inline std::string default_output_root() {
  const char* env = std::getenv(kOutputRootVariable);
  return env && *env ? env : "runs";
}

/// Everything a command needs. Every field has a default; a config file
/// overrides defaults and command-line flags override the file.
struct RunConfig {
  ModelConfig model;
  trainer::TrainConfig train;
  data::TransformSpec transform;

  std::string data_root;  // empty: generate synthetic data
  std::size_t synthetic_classes = 4;
  std::size_t synthetic_train_per_class = 8;
  std::size_t synthetic_test_per_class = 8;
  std::uint64_t synthetic_seed = 0;

  std::string checkpoint;  // eval / corrupt-eval / viz input
  std::size_t eval_batch_size = 32;

  std::string corrupt_kinds = "color_jitter,gaussian_noise";
  double jitter_coefficient = 1.0;
  double noise_mean = 0.0;
  double noise_amplitude = 5.0;
  std::uint64_t corrupt_seed = 0;

  std::string viz_stages;  // comma list; empty means every interacting stage
  std::string viz_target;  // class index; empty means the predicted class
  std::string viz_format = "png";
  std::size_t viz_limit = 4;

  std::string ablate_toggles = "RPM";

  std::string out = default_output_root();

  RunConfig() {
    model.interaction.c = 128;
    train.stage_num = model.interaction.stage_num;
  }

  std::vector<std::pair<std::string, std::string>> entries() const {
    auto out_entries = trainer::model_config_entries(model);
    for (auto& e : trainer::train_config_entries(train)) out_entries.push_back(e);
    const std::vector<std::pair<std::string, std::string>> rest{
        {"transform.resize_to", std::to_string(transform.resize_to)},
        {"transform.crop_to", std::to_string(transform.crop_to)},
        {"transform.flip_probability", text::exact(transform.flip_probability)},
        {"data.root", data_root},
        {"data.synthetic_classes", std::to_string(synthetic_classes)},
        {"data.synthetic_train_per_class", std::to_string(synthetic_train_per_class)},
        {"data.synthetic_test_per_class", std::to_string(synthetic_test_per_class)},
        {"data.synthetic_seed", std::to_string(synthetic_seed)},
        {"eval.checkpoint", checkpoint},
        {"eval.batch_size", std::to_string(eval_batch_size)},
        {"corrupt.kinds", corrupt_kinds},
        {"corrupt.jitter_coefficient", text::exact(jitter_coefficient)},
        {"corrupt.noise_mean", text::exact(noise_mean)},
        {"corrupt.noise_amplitude", text::exact(noise_amplitude)},
        {"corrupt.seed", std::to_string(corrupt_seed)},
        {"viz.stages", viz_stages},
        {"viz.target_class", viz_target},
        {"viz.format", viz_format},
        {"viz.limit", std::to_string(viz_limit)},
        {"ablate.toggles", ablate_toggles},
        {"out", out}};
    out_entries.insert(out_entries.end(), rest.begin(), rest.end());
    return out_entries;
  }

  std::string to_text() const { return trainer::entries_to_text(entries()); }

  void apply(const std::string& key, const std::string& value) {
    if (trainer::apply_model_key(model, key, value)) {
      if (key == "msi.stage_num") train.stage_num = model.interaction.stage_num;
      return;
    }
    if (trainer::apply_train_key(train, key, value)) {
      if (key == "train.stage_num") model.interaction.stage_num = train.stage_num;
      return;
    }
    if (key == "transform.resize_to") transform.resize_to = text::parse_size(value, key);
    else if (key == "transform.crop_to") transform.crop_to = text::parse_size(value, key);
    else if (key == "transform.flip_probability") transform.flip_probability = text::parse_double(value, key);
    else if (key == "data.root") data_root = value;
    else if (key == "data.synthetic_classes") synthetic_classes = text::parse_size(value, key);
    else if (key == "data.synthetic_train_per_class") synthetic_train_per_class = text::parse_size(value, key);
    else if (key == "data.synthetic_test_per_class") synthetic_test_per_class = text::parse_size(value, key);
    else if (key == "data.synthetic_seed") synthetic_seed = text::parse_u64(value, key);
    else if (key == "eval.checkpoint") checkpoint = value;
    else if (key == "eval.batch_size") eval_batch_size = text::parse_size(value, key);
    else if (key == "corrupt.kinds") corrupt_kinds = value;
    else if (key == "corrupt.jitter_coefficient") jitter_coefficient = text::parse_double(value, key);
    else if (key == "corrupt.noise_mean") noise_mean = text::parse_double(value, key);
    else if (key == "corrupt.noise_amplitude") noise_amplitude = text::parse_double(value, key);
    else if (key == "corrupt.seed") corrupt_seed = text::parse_u64(value, key);
    else if (key == "viz.stages") viz_stages = value;
    else if (key == "viz.target_class") viz_target = value;
    else if (key == "viz.format") viz_format = value;
    else if (key == "viz.limit") viz_limit = text::parse_size(value, key);
    else if (key == "ablate.toggles") ablate_toggles = value;
    else if (key == "out") out = value;
    else fail(ErrorKind::ConfigError, "unknown configuration key `" + key + "`");
  }

  void apply_text(std::istream& is) {
    for (const auto& [k, v] : text::read_key_values(is)) apply(k, v);
  }

  void apply_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::ConfigError, "cannot open config file " + path);
    apply_text(in);
  }

  /// Parses `key=value` as given on the command line.
  void apply_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) fail(ErrorKind::ConfigError, "expected key=value, got `" + assignment + "`");
    apply(text::trim(assignment.substr(0, eq)), text::trim(assignment.substr(eq + 1)));
  }

  /// Model classes follow the dataset when it is synthetic.
  void validate() const {
    model.validate();
    train.validate();
    transform.validate();
    require(transform.crop_to == model.backbone.input_size, ErrorKind::ConfigError,
            "transform.crop_to = " + std::to_string(transform.crop_to) + " must equal backbone.input_size = " +
                std::to_string(model.backbone.input_size));
    require(eval_batch_size > 0, ErrorKind::ConfigError, "eval.batch_size must be positive");
  }

  std::vector<evalkit::CorruptionSpec> corruption_specs() const {
    std::vector<evalkit::CorruptionSpec> specs;
    for (const auto& k : text::split(corrupt_kinds, ',')) {
      const auto kind = text::trim(k);
      if (kind.empty()) continue;
      evalkit::CorruptionSpec s{evalkit::parse_corruption_kind(kind), jitter_coefficient, noise_mean, noise_amplitude,
                                corrupt_seed};
      s.validate();
      specs.push_back(s);
    }
    return specs;
  }
};

}  // namespace rmgpmsi::config
