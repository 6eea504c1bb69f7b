#pragma once

#include <algorithm>
#include <cstddef>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rmgpmsi/data.hpp"
#include "rmgpmsi/error.hpp"
#include "rmgpmsi/evalkit.hpp"
#include "rmgpmsi/model.hpp"
#include "rmgpmsi/random.hpp"
#include "rmgpmsi/text.hpp"
#include "rmgpmsi/trainer.hpp"

namespace rmgpmsi::ablation {

/// R = recursive mosaic inputs, P = progressive phases, M = multi-stage
/// interaction. The baseline has none of them and a single classifier on
/// the last stage.
struct Variant {
  bool mosaic = false;
  bool progressive = false;
  bool interaction = false;

  std::string label() const {
    if (!mosaic && !progressive && !interaction) return "baseline";
    std::string s = "+";
    const auto add = [&](bool on, char c) {
      if (!on) return;
      if (s.size() > 1) s += '&';
      s += c;
    };
    add(progressive, 'P');
    add(interaction, 'M');
    add(mosaic, 'R');
    return s;
  }
  bool is_baseline() const { return !mosaic && !progressive && !interaction; }
  friend bool operator==(const Variant&, const Variant&) = default;
};

inline std::set<char> parse_toggles(const std::string& s) {
  std::set<char> out;
  for (char c : s) {
    if (c == ',' || c == ' ' || c == '+' || c == '&') continue;
    const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    if (u != 'R' && u != 'P' && u != 'M') fail(ErrorKind::ConfigError, std::string("unknown ablation toggle `") + c + "`");
    out.insert(u);
  }
  return out;
}

/// Baseline followed by every valid non-empty combination drawn from the
/// toggles, in the order baseline, +M, +P, +P&M, +P&R, +P&M&R.
inline std::vector<Variant> variants(const std::set<char>& toggles) {
  if (toggles.count('R') && !toggles.count('P'))
    fail(ErrorKind::InvalidCombo, "R must be combined with P (mosaic inputs need progressive phases)");
  const std::vector<Variant> all{{false, false, false}, {false, false, true}, {false, true, false},
                                 {false, true, true},   {true, true, false},  {true, true, true}};
  std::vector<Variant> out;
  for (const auto& v : all) {
    if ((v.mosaic && !toggles.count('R')) || (v.progressive && !toggles.count('P')) ||
        (v.interaction && !toggles.count('M')))
      continue;
    out.push_back(v);
  }
  return out;
}

/// Derives the model and schedule for one variant from the full configuration.
inline void configure(const Variant& v, ModelConfig& model, trainer::TrainConfig& train) {
  model.interaction.enabled = v.interaction;
  if (v.is_baseline()) model.interaction.stage_num = 1;
  train.stage_num = model.interaction.stage_num;
  train.progressive = v.progressive;
  train.mosaic = v.mosaic;
}

struct Row {
  Variant variant;
  evalkit::EvalReport report;
  double seconds = 0.0;
};

/// Trains one variant from a fresh model and evaluates it on `test`.
template <typename T>
Row run_variant(const Variant& v, ModelConfig model_config, trainer::TrainConfig train_config,
                const data::Dataset& train, const data::Dataset& test, const data::TransformSpec& transform) {
  configure(v, model_config, train_config);
  Rng init(derive_seed(train_config.seed, {0x6d6f64656c}));
  RmgPmsiModel<T> model(model_config, init);
  trainer::Trainer<T> t(model, train_config);
  trainer::FitOptions options;
  options.transform = transform;
  options.eval = &test;
  t.fit(train, options);
  return {v, evalkit::evaluate(model, test, transform), 0.0};
}

/// Table with Concat and Mix test accuracy (percent); Mix only for
/// variants with progressive phases, since only they train stage heads.
inline std::string format_table(const std::vector<Row>& rows) {
  std::vector<std::vector<std::string>> cells{{"Method", "Concat", "Mix"}};
  for (const auto& r : rows)
    cells.push_back({r.variant.label(), text::fixed(100.0 * r.report.acc_concat, 1),
                     r.variant.progressive ? text::fixed(100.0 * r.report.acc_mix, 1) : "-"});
  std::vector<std::size_t> width(3, 0);
  for (const auto& line : cells)
    for (std::size_t j = 0; j < 3; ++j) width[j] = std::max(width[j], line[j].size());
  std::ostringstream os;
  for (const auto& line : cells) {
    std::string row;
    for (std::size_t j = 0; j < 3; ++j) {
      if (j) row += "  ";
      row += line[j] + std::string(width[j] - line[j].size(), ' ');
    }
    os << row.substr(0, row.find_last_not_of(' ') + 1) << '\n';
  }
  return os.str();
}

inline std::string format_csv(const std::vector<Row>& rows) {
  std::string out = "variant,acc_concat,acc_mix\n";
  for (const auto& r : rows)
    out += r.variant.label() + ',' + text::fixed(r.report.acc_concat, 6) + ',' +
           (r.variant.progressive ? text::fixed(r.report.acc_mix, 6) : "") + '\n';
  return out;
}

}  // namespace rmgpmsi::ablation
