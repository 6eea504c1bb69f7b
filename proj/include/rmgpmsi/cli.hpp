#pragma once

// Command-line front end: train, eval, ablate, corrupt-eval and viz.
// Exit codes: 0 success, 1 internal error, 2 configuration error,
// 3 data error, 4 numeric divergence.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rmgpmsi/ablation.hpp"
#include "rmgpmsi/checkpoint.hpp"
#include "rmgpmsi/config.hpp"
#include "rmgpmsi/data.hpp"
#include "rmgpmsi/error.hpp"
#include "rmgpmsi/evalkit.hpp"
#include "rmgpmsi/image_io.hpp"
#include "rmgpmsi/model.hpp"
#include "rmgpmsi/trainer.hpp"

namespace rmgpmsi::cli {

enum ExitCode : int { kOk = 0, kInternal = 1, kConfig = 2, kData = 3, kDivergence = 4 };

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::NonFiniteLoss:
      return kDivergence;
    case ErrorKind::DatasetEmpty:
    case ErrorKind::MissingRoot:
    case ErrorKind::NoClasses:
    case ErrorKind::UnreadableImage:
    case ErrorKind::DecodeError:
    case ErrorKind::BadSize:
    case ErrorKind::EmptyBatch:
    case ErrorKind::CorruptCheckpoint:
    case ErrorKind::VersionMismatch:
    case ErrorKind::IoError:
      return kData;
    case ErrorKind::ConfigError:
    case ErrorKind::InvalidStageNum:
    case ErrorKind::InvalidCombo:
    case ErrorKind::UnknownKind:
    case ErrorKind::UnknownStage:
    case ErrorKind::ResumeMismatch:
    case ErrorKind::RecursionLimit:
    case ErrorKind::IndivisibleImage:
      return kConfig;
    default:
      return kInternal;
  }
}

struct Options {
  std::string command;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::vector<std::string> sets;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> stage_num;
  std::optional<std::string> data_root;
  std::optional<std::string> checkpoint;
  std::optional<std::string> resume;
  std::optional<std::size_t> stop_after;
  std::optional<std::string> toggles;
  std::optional<std::string> kinds;
  std::vector<std::string> images;
};

/// defaults < checkpoint echo (if any) < config file < flags
inline config::RunConfig build_config(const Options& o, const std::string& echo = {}) {
  config::RunConfig cfg;
  if (!echo.empty()) {
    std::istringstream is(echo);
    cfg.apply_text(is);
    cfg.out = config::default_output_root();
  }
  if (!o.config_path.empty()) cfg.apply_file(o.config_path);
  for (const auto& s : o.sets) cfg.apply_assignment(s);
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.out) cfg.out = *o.out;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.stage_num) cfg.apply("train.stage_num", std::to_string(*o.stage_num));
  if (o.data_root) cfg.data_root = *o.data_root;
  if (o.checkpoint) cfg.checkpoint = *o.checkpoint;
  if (o.toggles) cfg.ablate_toggles = *o.toggles;
  if (o.kinds) cfg.corrupt_kinds = *o.kinds;
  return cfg;
}

struct Splits {
  data::Dataset train;
  data::Dataset test;
};

inline Splits load_splits(const config::RunConfig& cfg, std::ostream& log) {
  Splits s;
  if (cfg.data_root.empty()) {
    const data::SyntheticSpec spec{cfg.synthetic_classes, cfg.synthetic_train_per_class, cfg.transform.resize_to,
                                   cfg.synthetic_seed};
    s.train = data::make_synthetic(spec, 0);
    auto test_spec = spec;
    test_spec.per_class = cfg.synthetic_test_per_class;
    s.test = test_spec.per_class ? data::make_synthetic(test_spec, 1) : s.train;
    return s;
  }
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out);
  for (auto split : {data::Split::Train, data::Split::Test}) {
    const auto m = data::scan_dataset(cfg.data_root, split);
    for (const auto& w : m.warnings) log << "warning: " << w << '\n';
    std::ofstream(fs::path(cfg.out) / ("manifest_" + data::to_string(split) + ".txt")) << data::serialize_manifest(m);
    (split == data::Split::Train ? s.train : s.test) = data::load_dataset(m, cfg.transform.resize_to);
  }
  require(s.train.classes == s.test.classes, ErrorKind::ConfigError, "train and test splits list different classes");
  return s;
}

inline void write_text(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
  out << content;
}

inline std::string eval_line(const evalkit::EvalReport& r) {
  std::string s = "acc_concat=" + text::exact(r.acc_concat) + " acc_mix=" + text::exact(r.acc_mix) +
                  " loss_concat=" + text::exact(r.loss_concat);
  for (const auto& [stage, acc] : r.per_stage_acc) s += " acc_stage" + std::to_string(stage) + "=" + text::exact(acc);
  return s;
}

inline int cmd_train(const Options& o, std::ostream& out, std::ostream& log) {
  auto cfg = build_config(o);
  const auto splits = load_splits(cfg, log);
  cfg.model.classes = splits.train.num_classes();
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out);
  write_text(fs::path(cfg.out) / "config.txt", cfg.to_text());

  Rng init(derive_seed(cfg.train.seed, {0x6d6f64656c}));
  RmgPmsiModel<float> model(cfg.model, init);
  trainer::Trainer<float> t(model, cfg.train);
  if (o.resume) t.load_checkpoint(*o.resume);

  trainer::FitOptions options;
  options.transform = cfg.transform;
  options.eval = &splits.test;
  options.checkpoint_path = (fs::path(cfg.out) / "checkpoint.bin").string();
  options.config_echo = cfg.to_text();
  options.eval_options.batch_size = cfg.eval_batch_size;
  options.stop_after_epoch = o.stop_after;
  const auto metrics_path = fs::path(cfg.out) / "metrics.csv";
  options.on_epoch = [&](const std::vector<trainer::MetricsRow>& rows) {
    write_text(metrics_path, trainer::metrics_csv(rows));
    const auto& e = rows.back();
    out << "epoch " << e.epoch << "/" << cfg.train.epochs << "  eval loss " << text::fixed(e.loss, 4) << "  concat "
        << text::fixed(*e.acc_concat, 4) << "  mix " << text::fixed(*e.acc_mix, 4) << '\n';
  };
  t.fit(splits.train, options);
  write_text(metrics_path, trainer::metrics_csv(t.metrics()));
  out << "wrote " << metrics_path.string() << " and " << options.checkpoint_path << '\n';
  return kOk;
}

struct LoadedModel {
  config::RunConfig cfg;
  checkpoint::Checkpoint ckpt;
  std::unique_ptr<RmgPmsiModel<float>> model;
};

inline LoadedModel load_model(const Options& o) {
  const auto first = build_config(o);
  std::string path = first.checkpoint;
  if (path.empty()) path = (std::filesystem::path(first.out) / "checkpoint.bin").string();
  if (!std::filesystem::exists(path))
    fail(ErrorKind::ConfigError, "no checkpoint at " + path + " (set --checkpoint or eval.checkpoint)");
  LoadedModel m;
  m.ckpt = checkpoint::load(path);
  m.cfg = build_config(o, m.ckpt.config);
  const auto stored_model = trainer::model_config_from_text(m.ckpt.config);
  const auto stored_train = trainer::train_config_from_text(m.ckpt.config);
  m.cfg.model = stored_model;
  Rng init(0);
  m.model = std::make_unique<RmgPmsiModel<float>>(stored_model, init);
  trainer::Trainer<float> t(*m.model, stored_train);
  t.restore(m.ckpt);
  return m;
}

inline int cmd_eval(const Options& o, std::ostream& out, std::ostream& log) {
  auto m = load_model(o);
  const auto splits = load_splits(m.cfg, log);
  evalkit::EvalOptions options;
  options.batch_size = m.cfg.eval_batch_size;
  const auto report = evalkit::evaluate(*m.model, splits.test, m.cfg.transform, options);
  namespace fs = std::filesystem;
  fs::create_directories(m.cfg.out);
  std::string csv = "n_samples,acc_concat,acc_mix,loss_concat";
  for (const auto& [stage, acc] : report.per_stage_acc) csv += ",acc_stage" + std::to_string(stage);
  csv += "\n" + std::to_string(report.n_samples) + "," + text::exact(report.acc_concat) + "," +
         text::exact(report.acc_mix) + "," + text::exact(report.loss_concat);
  for (const auto& [stage, acc] : report.per_stage_acc) csv += "," + text::exact(acc);
  write_text(fs::path(m.cfg.out) / "eval.csv", csv + "\n");
  out << "n=" << report.n_samples << " " << eval_line(report) << '\n';
  return kOk;
}

inline int cmd_corrupt(const Options& o, std::ostream& out, std::ostream& log) {
  auto m = load_model(o);
  const auto specs = m.cfg.corruption_specs();
  const auto splits = load_splits(m.cfg, log);
  evalkit::EvalOptions options;
  options.batch_size = m.cfg.eval_batch_size;
  auto report = evalkit::robustness_eval(*m.model, splits.test, m.cfg.transform, specs, options);
  namespace fs = std::filesystem;
  fs::create_directories(m.cfg.out);
  write_text(fs::path(m.cfg.out) / "robustness.csv", report.to_csv());
  write_text(fs::path(m.cfg.out) / "robustness.txt", report.to_table());
  out << report.to_table();
  return kOk;
}

inline int cmd_viz(const Options& o, std::ostream& out, std::ostream& log) {
  auto m = load_model(o);
  std::vector<std::size_t> stages;
  if (m.cfg.viz_stages.empty()) stages = m.model->interacting_stages();
  else
    for (const auto& s : text::split(m.cfg.viz_stages, ',')) stages.push_back(text::parse_size(s, "viz.stages"));
  for (auto s : stages) m.model->index_of(s);
  std::optional<std::size_t> target;
  if (!m.cfg.viz_target.empty()) target = text::parse_size(m.cfg.viz_target, "viz.target_class");

  std::vector<std::pair<std::string, ImageTensor>> inputs;
  data::TransformSpec eval_tf = m.cfg.transform;
  eval_tf.mode = data::TransformMode::Eval;
  Rng unused(0);
  if (!o.images.empty()) {
    for (const auto& p : o.images)
      inputs.emplace_back(std::filesystem::path(p).stem().string(),
                          data::apply_transform(io::read_image(p), eval_tf, unused));
  } else {
    const auto splits = load_splits(m.cfg, log);
    for (std::size_t i = 0; i < std::min(m.cfg.viz_limit, splits.test.size()); ++i) {
      const auto& s = splits.test.samples[i];
      char stem[32];
      std::snprintf(stem, sizeof stem, "sample%04zu", i);
      inputs.emplace_back(s.path.empty() ? std::string(stem) : std::filesystem::path(s.path).stem().string(),
                          data::apply_transform(s.image, eval_tf, unused));
    }
  }
  require(!inputs.empty(), ErrorKind::DatasetEmpty, "no images to visualize");
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(m.cfg.out) / "cams";
  fs::create_directories(dir);
  std::size_t written = 0;
  for (const auto& [stem, img] : inputs)
    for (auto stage : stages) {
      const auto cam = evalkit::gradcam(*m.model, img, stage, target);
      io::write_image((dir / evalkit::cam_filename(stem, stage, m.cfg.viz_format)).string(), cam.heatmap);
      ++written;
    }
  out << "wrote " << written << " heatmaps to " << dir.string() << '\n';
  return kOk;
}

inline int cmd_ablate(const Options& o, std::ostream& out, std::ostream& log) {
  auto cfg = build_config(o);
  const auto variants = ablation::variants(ablation::parse_toggles(cfg.ablate_toggles));
  const auto splits = load_splits(cfg, log);
  cfg.model.classes = splits.train.num_classes();
  cfg.validate();
  std::vector<ablation::Row> rows;
  for (const auto& v : variants) {
    const auto start = std::chrono::steady_clock::now();
    rows.push_back(ablation::run_variant<float>(v, cfg.model, cfg.train, splits.train, splits.test, cfg.transform));
    rows.back().seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << v.label() << " done in " << text::fixed(rows.back().seconds, 1) << " s\n";
  }
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out);
  write_text(fs::path(cfg.out) / "ablation.csv", ablation::format_csv(rows));
  write_text(fs::path(cfg.out) / "ablation.txt", ablation::format_table(rows));
  out << ablation::format_table(rows);
  return kOk;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"RMG-PMSI training toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--config", o.config_path, "key = value configuration file");
  app.add_option("--seed", o.seed, "training seed");
  app.add_option("--out", o.out, std::string("output directory (default: $") + config::kOutputRootVariable + " or runs)");
  app.add_option("--set", o.sets, "override one key, e.g. --set train.lr_new=0.005");
  app.add_option("--data", o.data_root, "dataset root with train/ and test/ splits (default: synthetic)");

  auto* train = app.add_subcommand("train", "train a model, writing metrics.csv and checkpoint.bin");
  train->add_option("--epochs", o.epochs);
  train->add_option("--stage-num", o.stage_num);
  train->add_option("--resume", o.resume, "continue from a checkpoint");
  train->add_option("--stop-after", o.stop_after, "stop after this epoch; resume later with --resume");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  auto* ablate = app.add_subcommand("ablate", "train and compare component variants");
  ablate->add_option("--toggles", o.toggles, "subset of R, P, M");
  ablate->add_option("--epochs", o.epochs);
  auto* corrupt = app.add_subcommand("corrupt-eval", "robustness table under image corruptions");
  corrupt->add_option("--kinds", o.kinds, "comma list of color_jitter, gaussian_noise");
  auto* viz = app.add_subcommand("viz", "write per-stage Grad-CAM heatmaps");
  viz->add_option("--images", o.images, "input images (default: first test samples)");
  for (auto* sub : {eval, corrupt, viz}) sub->add_option("--checkpoint", o.checkpoint);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kConfig;
  }
  try {
    if (train->parsed()) return cmd_train(o, out, err);
    if (eval->parsed()) return cmd_eval(o, out, err);
    if (ablate->parsed()) return cmd_ablate(o, out, err);
    if (corrupt->parsed()) return cmd_corrupt(o, out, err);
    if (viz->parsed()) return cmd_viz(o, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}

}  // namespace rmgpmsi::cli
