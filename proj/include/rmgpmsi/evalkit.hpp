#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rmgpmsi/data.hpp"
#include "rmgpmsi/error.hpp"
#include "rmgpmsi/heads.hpp"
#include "rmgpmsi/image.hpp"
#include "rmgpmsi/image_io.hpp"
#include "rmgpmsi/model.hpp"
#include "rmgpmsi/random.hpp"
#include "rmgpmsi/text.hpp"

namespace rmgpmsi::evalkit {

/// Index of the largest entry; the lowest index wins ties.
template <typename T>
std::size_t argmax(std::span<const T> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

template <typename T>
std::size_t predict_concat(const heads::PredictionBundle<T>& b) {
  require(!b.y_hat_concat.empty(), ErrorKind::LengthMismatch, "bundle has no concat prediction");
  return argmax<T>(b.y_hat_concat);
}

/// argmax(sum of stage probabilities + concat probabilities). Stage entries
/// left empty (heads not run) are skipped.
template <typename T>
std::size_t predict_mix(const heads::PredictionBundle<T>& b) {
  const std::size_t k = b.y_hat_concat.size();
  require(k > 0, ErrorKind::LengthMismatch, "bundle has no concat prediction");
  std::vector<T> sum(k, T(0));
  for (const auto& y : b.y_hat) {
    if (y.empty()) continue;
    require(y.size() == k, ErrorKind::LengthMismatch,
            "stage prediction has " + std::to_string(y.size()) + " classes, concat has " + std::to_string(k));
    for (std::size_t i = 0; i < k; ++i) sum[i] += y[i];
  }
  for (std::size_t i = 0; i < k; ++i) sum[i] += b.y_hat_concat[i];
  return argmax<T>(sum);
}

struct EvalReport {
  double acc_concat = 0.0;
  double acc_mix = 0.0;
  std::map<std::size_t, double> per_stage_acc;
  std::size_t n_samples = 0;
  double loss_concat = 0.0;  // mean cross-entropy of the concat head
  std::vector<heads::PredictionBundle<double>> bundles;  // filled on request
  std::vector<int> labels;                                // idem

  friend bool operator==(const EvalReport& a, const EvalReport& b) {
    return a.acc_concat == b.acc_concat && a.acc_mix == b.acc_mix && a.per_stage_acc == b.per_stage_acc &&
           a.n_samples == b.n_samples && a.loss_concat == b.loss_concat;
  }
};

struct EvalOptions {
  bool use_stage_heads = true;
  bool keep_bundles = false;
  std::size_t batch_size = 32;
};

/// One eval-mode forward per image on the untouched image.
template <typename T>
EvalReport evaluate(RmgPmsiModel<T>& model, const std::vector<ImageTensor>& images, std::span<const int> labels,
                    const EvalOptions& options = {}) {
  require(!images.empty(), ErrorKind::DatasetEmpty, "nothing to evaluate");
  require(images.size() == labels.size(), ErrorKind::LengthMismatch, "image and label counts differ");
  const auto& stages = model.interacting_stages();
  std::vector<std::size_t> stage_hits(stages.size(), 0);
  std::size_t concat_hits = 0, mix_hits = 0;
  double loss = 0.0;
  EvalReport report;
  const std::size_t bs = std::max<std::size_t>(1, options.batch_size);
  for (std::size_t start = 0; start < images.size(); start += bs) {
    const std::size_t count = std::min(bs, images.size() - start);
    const auto x = to_batch<T>(std::span<const ImageTensor>(images.data() + start, count));
    const auto r = model.forward(x, nn::Mode::Eval,
                                 options.use_stage_heads ? std::nullopt : std::optional<Head>(Head::of_concat()));
    for (std::size_t b = 0; b < count; ++b) {
      const int y = labels[start + b];
      auto t = r.bundle(b);
      heads::PredictionBundle<double> bundle;
      bundle.stages = t.stages;
      for (const auto& v : t.y_hat) bundle.y_hat.emplace_back(v.begin(), v.end());
      bundle.y_hat_concat.assign(t.y_hat_concat.begin(), t.y_hat_concat.end());
      bundle.m_concat.assign(t.m_concat.begin(), t.m_concat.end());
      for (std::size_t i = 0; i < stages.size(); ++i)
        if (!bundle.y_hat[i].empty() && static_cast<int>(argmax<double>(bundle.y_hat[i])) == y) ++stage_hits[i];
      concat_hits += static_cast<int>(predict_concat(bundle)) == y;
      mix_hits += static_cast<int>(predict_mix(bundle)) == y;
      loss -= std::log(std::max(bundle.y_hat_concat[static_cast<std::size_t>(y)], heads::kProbabilityFloor));
      if (options.keep_bundles) {
        report.bundles.push_back(std::move(bundle));
        report.labels.push_back(y);
      }
    }
  }
  const double n = static_cast<double>(images.size());
  report.n_samples = images.size();
  report.acc_concat = static_cast<double>(concat_hits) / n;
  report.acc_mix = static_cast<double>(mix_hits) / n;
  report.loss_concat = loss / n;
  if (options.use_stage_heads)
    for (std::size_t i = 0; i < stages.size(); ++i) report.per_stage_acc[stages[i]] = static_cast<double>(stage_hits[i]) / n;
  return report;
}

/// Applies the eval transform to every sample, then evaluates.
template <typename T>
EvalReport evaluate(RmgPmsiModel<T>& model, const data::Dataset& ds, const data::TransformSpec& transform,
                    const EvalOptions& options = {}) {
  require(!ds.empty(), ErrorKind::DatasetEmpty, "evaluation dataset is empty");
  data::TransformSpec spec = transform;
  spec.mode = data::TransformMode::Eval;
  Rng unused(0);
  std::vector<ImageTensor> images;
  std::vector<int> labels;
  for (const auto& s : ds.samples) {
    images.push_back(data::apply_transform(s.image, spec, unused));
    labels.push_back(s.label);
  }
  return evaluate(model, images, labels, options);
}

// ---------------------------------------------------------------------------
// Corruptions

enum class CorruptionKind { ColorJitter, GaussianNoise };

inline std::string to_string(CorruptionKind k) {
  return k == CorruptionKind::ColorJitter ? "color_jitter" : "gaussian_noise";
}

inline CorruptionKind parse_corruption_kind(const std::string& s) {
  if (s == "color_jitter") return CorruptionKind::ColorJitter;
  if (s == "gaussian_noise") return CorruptionKind::GaussianNoise;
  fail(ErrorKind::UnknownKind, "unknown corruption kind `" + s + "` (expected color_jitter or gaussian_noise)");
}

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::ColorJitter;
  double jitter_coefficient = 1.0;
  double noise_mean = 0.0;       // byte-scale units
  double noise_amplitude = 5.0;  // standard deviation, byte-scale units
  std::uint64_t seed = 0;

  void validate() const {
    require(jitter_coefficient >= 0.0, ErrorKind::ConfigError, "jitter coefficient must be non-negative");
    require(noise_amplitude >= 0.0, ErrorKind::ConfigError, "noise amplitude must be non-negative");
  }

  std::string label() const { return kind == CorruptionKind::ColorJitter ? "+Color-Jitter" : "+Gaussian-Noise"; }
};

namespace detail {

inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

template <typename P>
void clip(BasicImage<P>& img, double hi) {
  for (auto& v : img.values()) v = static_cast<P>(std::clamp(static_cast<double>(v), 0.0, hi));
}

}  // namespace detail

/// Color jitter draws brightness, contrast and saturation factors (in that
/// order) from U[max(0, 1 - coef), 1 + coef] and applies them in the same
/// order, clipping after each. Gaussian noise adds N(mean, amplitude) in
/// byte-scale units. A factor of exactly 1 (or zero noise) is a no-op.
template <typename P>
BasicImage<P> corrupt(const BasicImage<P>& image, const CorruptionSpec& spec, Rng& rng) {
  spec.validate();
  BasicImage<P> out = image;
  const double hi = range_max(image.value_range());
  switch (spec.kind) {
    case CorruptionKind::ColorJitter: {
      const double lo = std::max(0.0, 1.0 - spec.jitter_coefficient), up = 1.0 + spec.jitter_coefficient;
      const double brightness = rng.uniform(lo, up), contrast = rng.uniform(lo, up), saturation = rng.uniform(lo, up);
      const bool rgb = image.channels() == 3;
      if (brightness != 1.0) {
        for (auto& v : out.values()) v = static_cast<P>(v * brightness);
        detail::clip(out, hi);
      }
      if (contrast != 1.0) {
        double mean = 0.0;
        for (std::size_t y = 0; y < out.height(); ++y)
          for (std::size_t x = 0; x < out.width(); ++x)
            mean += rgb ? detail::luma(out.at(y, x, 0), out.at(y, x, 1), out.at(y, x, 2)) : out.at(y, x, 0);
        mean /= static_cast<double>(out.height() * out.width());
        for (auto& v : out.values()) v = static_cast<P>((v - mean) * contrast + mean);
        detail::clip(out, hi);
      }
      if (saturation != 1.0 && rgb) {
        for (std::size_t y = 0; y < out.height(); ++y)
          for (std::size_t x = 0; x < out.width(); ++x) {
            const double g = detail::luma(out.at(y, x, 0), out.at(y, x, 1), out.at(y, x, 2));
            for (std::size_t c = 0; c < 3; ++c) out.at(y, x, c) = static_cast<P>((out.at(y, x, c) - g) * saturation + g);
          }
        detail::clip(out, hi);
      }
      return out;
    }
    case CorruptionKind::GaussianNoise: {
      if (spec.noise_amplitude == 0.0 && spec.noise_mean == 0.0) return out;
      const double scale = hi / 255.0;
      for (auto& v : out.values())
        v = static_cast<P>(v + rng.normal(spec.noise_mean * scale, spec.noise_amplitude * scale));
      detail::clip(out, hi);
      return out;
    }
  }
  fail(ErrorKind::UnknownKind, "unknown corruption kind");
}

template <typename P>
BasicImage<P> corrupt(const BasicImage<P>& image, const CorruptionSpec& spec) {
  Rng rng(spec.seed);
  return corrupt(image, spec, rng);
}

struct RobustnessRow {
  std::string condition;
  EvalReport report;
  double delta_concat = 0.0;
  double delta_mix = 0.0;
};

struct RobustnessReport {
  std::vector<RobustnessRow> rows;  // clean first
  bool show_mix = true;

  std::string to_csv() const {
    std::ostringstream os;
    os << "condition,acc_concat,acc_mix,delta_concat,delta_mix\n";
    for (const auto& r : rows)
      os << r.condition << ',' << text::fixed(r.report.acc_concat, 6) << ',' << text::fixed(r.report.acc_mix, 6) << ','
         << text::fixed(r.delta_concat, 6) << ',' << text::fixed(r.delta_mix, 6) << '\n';
    return os.str();
  }

  /// Percent accuracies, corrupted rows annotated with their drop.
  std::string to_table() const {
    const auto cell = [](double acc, double delta, bool clean) {
      std::string s = text::fixed(100.0 * acc, 1);
      if (!clean) s += " (" + std::string(delta >= 0 ? "+" : "") + text::fixed(100.0 * delta, 1) + ")";
      return s;
    };
    std::vector<std::vector<std::string>> cells{{"", "Concat"}};
    if (show_mix) cells[0].push_back("Mix");
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const bool clean = i == 0;
      std::vector<std::string> line{clean ? std::string("Origin") : rows[i].condition,
                                    cell(rows[i].report.acc_concat, rows[i].delta_concat, clean)};
      if (show_mix) line.push_back(cell(rows[i].report.acc_mix, rows[i].delta_mix, clean));
      cells.push_back(std::move(line));
    }
    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& line : cells)
      for (std::size_t j = 0; j < line.size(); ++j) width[j] = std::max(width[j], line[j].size());
    std::ostringstream os;
    for (const auto& line : cells) {
      std::string row;
      for (std::size_t j = 0; j < line.size(); ++j) {
        if (j) row += "  ";
        row += line[j] + std::string(width[j] - line[j].size(), ' ');
      }
      os << row.substr(0, row.find_last_not_of(' ') + 1) << '\n';
    }
    return os.str();
  }
};

/// Clean evaluation plus one row per corruption. Sample i of spec s uses the
/// stream derive_seed(s.seed, {i}).
template <typename T>
RobustnessReport robustness_eval(RmgPmsiModel<T>& model, const data::Dataset& ds, const data::TransformSpec& transform,
                                 std::span<const CorruptionSpec> specs, const EvalOptions& options = {}) {
  require(!ds.empty(), ErrorKind::DatasetEmpty, "evaluation dataset is empty");
  data::TransformSpec spec = transform;
  spec.mode = data::TransformMode::Eval;
  Rng unused(0);
  std::vector<ImageTensor> clean;
  std::vector<int> labels;
  for (const auto& s : ds.samples) {
    clean.push_back(data::apply_transform(s.image, spec, unused));
    labels.push_back(s.label);
  }
  RobustnessReport out;
  out.rows.push_back({"clean", evaluate(model, clean, labels, options), 0.0, 0.0});
  for (const auto& c : specs) {
    std::vector<ImageTensor> images;
    for (std::size_t i = 0; i < clean.size(); ++i) {
      Rng rng(derive_seed(c.seed, {i}));
      images.push_back(corrupt(clean[i], c, rng));
    }
    RobustnessRow row{c.label(), evaluate(model, images, labels, options), 0.0, 0.0};
    row.delta_concat = row.report.acc_concat - out.rows[0].report.acc_concat;
    row.delta_mix = row.report.acc_mix - out.rows[0].report.acc_mix;
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Grad-CAM

/// ReLU(sum_k alpha_k A_k) with alpha_k the spatial mean of dY/dA_k, for one
/// sample of a (1, C, h, w) map and its gradient. Returns an h x w map.
template <typename T>
std::vector<double> gradcam_map(const Tensor<T>& map, const Tensor<T>& grad) {
  require(map.shape() == grad.shape() && map.n() == 1, ErrorKind::ShapeMismatch, "gradcam expects one matching map");
  const std::size_t hw = map.h() * map.w();
  std::vector<double> cam(hw, 0.0);
  for (std::size_t c = 0; c < map.c(); ++c) {
    double alpha = 0.0;
    for (std::size_t i = 0; i < hw; ++i) alpha += grad.data()[c * hw + i];
    alpha /= static_cast<double>(hw);
    for (std::size_t i = 0; i < hw; ++i) cam[i] += alpha * map.data()[c * hw + i];
  }
  for (auto& v : cam) v = std::max(0.0, v);
  return cam;
}

struct GradCam {
  ImageTensor heatmap;  // single channel, input size, values in [0, 1]
  std::size_t target_class = 0;
  std::size_t stage = 0;
};

/// Heatmap for one stage from the stage classifier's logit of
/// `target_class` (default: the stage head's predicted class).
template <typename T>
GradCam gradcam(RmgPmsiModel<T>& model, const ImageTensor& image, std::size_t stage,
                std::optional<std::size_t> target_class = std::nullopt) {
  model.index_of(stage);
  const auto x = to_batch<T>(image);
  const auto r = model.forward(x, nn::Mode::Eval, Head::of_stage(stage));
  const auto& probs = r.stage_probs[model.index_of(stage)];
  const std::size_t target = target_class.value_or(argmax<T>(probs.item(0)));
  require(target < model.classes(), ErrorKind::LengthMismatch, "target class out of range");
  Tensor<T> dlogits = Tensor<T>::like(probs);
  dlogits.at(0, target) = T(1);
  std::vector<Tensor<T>> totals;
  model.backward_logits(Head::of_stage(stage), dlogits, &totals);
  model.zero_grads();
  const auto& map = r.maps.stage(stage);
  const auto cam = gradcam_map(map, totals.at(stage - 1));
  ImageTensor small(map.h(), map.w(), 1);
  for (std::size_t i = 0; i < cam.size(); ++i) small.values()[i] = static_cast<float>(cam[i]);
  ImageTensor up = data::resize_bilinear(small, image.height(), image.width());
  float mx = 0.0f;
  for (float v : up.values()) mx = std::max(mx, v);
  for (auto& v : up.values()) v = mx > 0.0f ? std::clamp(v / mx, 0.0f, 1.0f) : 0.0f;
  return {std::move(up), target, stage};
}

/// `<stem>_stage<n>_cam.<format>`
inline std::string cam_filename(const std::string& stem, std::size_t stage, const std::string& format = "png") {
  return stem + "_stage" + std::to_string(stage) + "_cam." + format;
}

}  // namespace rmgpmsi::evalkit
