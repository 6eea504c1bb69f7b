#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "rmgpmsi/error.hpp"
#include "rmgpmsi/image.hpp"
#include "rmgpmsi/image_io.hpp"
#include "rmgpmsi/random.hpp"
#include "rmgpmsi/text.hpp"

namespace rmgpmsi::data {

struct Sample {
  ImageTensor image;
  int label = 0;
  std::string path;  // empty for generated samples
};

struct Dataset {
  std::vector<std::string> classes;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  std::size_t num_classes() const noexcept { return classes.size(); }
};

// ---------------------------------------------------------------------------
// Manifests

enum class Split { Train, Test };

inline std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

struct ManifestEntry {
  std::string relative_path;  // relative to root/<split>
  int class_index = 0;
  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
  std::string root;
  Split split = Split::Train;
  std::vector<std::string> classes;
  std::vector<ManifestEntry> samples;
  std::vector<std::string> warnings;

  std::filesystem::path split_dir() const { return std::filesystem::path(root) / to_string(split); }
};

/// Lists `root/<split>/<class>/<image>`; classes and files in lexicographic order.
inline DatasetManifest scan_dataset(const std::string& root, Split split) {
  namespace fs = std::filesystem;
  DatasetManifest m;
  m.root = root;
  m.split = split;
  const fs::path dir = m.split_dir();
  if (!fs::is_directory(dir)) fail(ErrorKind::MissingRoot, dir.string() + " is not a directory");
  std::vector<std::string> class_dirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) fail(ErrorKind::NoClasses, dir.string() + " has no class subdirectories");
  for (std::size_t k = 0; k < class_dirs.size(); ++k) {
    m.classes.push_back(class_dirs[k]);
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir / class_dirs[k]))
      if (entry.is_regular_file() && io::is_image_file(entry.path())) files.push_back(entry.path().filename().string());
    std::sort(files.begin(), files.end());
    if (files.empty()) m.warnings.push_back("class `" + class_dirs[k] + "` has no images");
    for (const auto& f : files) {
      const fs::path full = dir / class_dirs[k] / f;
      if (!std::ifstream(full, std::ios::binary)) fail(ErrorKind::UnreadableImage, full.string());
      m.samples.push_back({class_dirs[k] + "/" + f, static_cast<int>(k)});
    }
  }
  return m;
}

/// Text form: `# class<TAB>index<TAB>name` header lines, then one
/// `class_index<TAB>relative_path` line per sample.
inline std::string serialize_manifest(const DatasetManifest& m) {
  std::ostringstream os;
  for (std::size_t k = 0; k < m.classes.size(); ++k) os << "# class\t" << k << '\t' << m.classes[k] << '\n';
  for (const auto& s : m.samples) os << s.class_index << '\t' << s.relative_path << '\n';
  return os.str();
}

inline DatasetManifest parse_manifest(const std::string& text, const std::string& root, Split split) {
  DatasetManifest m;
  m.root = root;
  m.split = split;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto fields = text::split(line, '\t');
    if (fields.size() == 3 && fields[0] == "# class") {
      if (text::parse_size(fields[1], "class index") != m.classes.size())
        fail(ErrorKind::ConfigError, "manifest class indices must be dense and ordered");
      m.classes.push_back(fields[2]);
    } else if (fields.size() == 2) {
      const auto k = text::parse_size(fields[0], "class index");
      if (k >= m.classes.size()) fail(ErrorKind::ConfigError, "manifest sample refers to unknown class " + fields[0]);
      m.samples.push_back({fields[1], static_cast<int>(k)});
    } else {
      fail(ErrorKind::ConfigError, "malformed manifest line: " + line);
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// Transforms

/// Bilinear resampling with half-pixel centres.
template <typename P>
BasicImage<P> resize_bilinear(const BasicImage<P>& src, std::size_t out_h, std::size_t out_w) {
  if (src.height() == out_h && src.width() == out_w) return src;
  BasicImage<P> out(out_h, out_w, src.channels(), src.value_range());
  const double sy = static_cast<double>(src.height()) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.width()) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height() - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, src.height() - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width() - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, src.width() - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels(); ++c) {
        const double top = (1 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
        const double bottom = (1 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
        out.at(y, x, c) = static_cast<P>((1 - wy) * top + wy * bottom);
      }
    }
  }
  return out;
}

template <typename P>
BasicImage<P> crop(const BasicImage<P>& src, std::size_t top, std::size_t left, std::size_t h, std::size_t w) {
  require(top + h <= src.height() && left + w <= src.width(), ErrorKind::OutOfBounds, "crop outside image");
  BasicImage<P> out(h, w, src.channels(), src.value_range());
  for (std::size_t y = 0; y < h; ++y)
    std::copy_n(src.pixel(top + y, left).data(), w * src.channels(), out.pixel(y, 0).data());
  return out;
}

template <typename P>
BasicImage<P> flip_horizontal(const BasicImage<P>& src) {
  BasicImage<P> out = src;
  for (std::size_t y = 0; y < src.height(); ++y)
    for (std::size_t x = 0; x < src.width(); ++x) {
      const auto from = src.pixel(y, src.width() - 1 - x);
      std::copy(from.begin(), from.end(), out.pixel(y, x).begin());
    }
  return out;
}

enum class TransformMode { Train, Eval };

struct TransformSpec {
  std::size_t resize_to = 64;
  std::size_t crop_to = 64;
  TransformMode mode = TransformMode::Eval;
  double flip_probability = 0.5;

  void validate(unsigned max_depth = 3) const {
    require(crop_to > 0 && crop_to <= resize_to, ErrorKind::ConfigError, "crop_to must lie in (0, resize_to]");
    require(crop_to % (std::size_t{1} << max_depth) == 0, ErrorKind::ConfigError,
            "crop_to must be divisible by 2^" + std::to_string(max_depth));
  }

  std::size_t center_offset() const { return (resize_to - crop_to) / 2; }
};

/// Train: resize, random horizontal flip, random crop. Eval: resize, center crop.
template <typename P>
BasicImage<P> apply_transform(const BasicImage<P>& image, const TransformSpec& spec, Rng& rng) {
  require(image.height() > 0 && image.width() > 0, ErrorKind::DecodeError, "empty image");
  BasicImage<P> resized = resize_bilinear(image, spec.resize_to, spec.resize_to);
  if (spec.mode == TransformMode::Eval) {
    const std::size_t off = spec.center_offset();
    return crop(resized, off, off, spec.crop_to, spec.crop_to);
  }
  if (rng.bernoulli(spec.flip_probability)) resized = flip_horizontal(resized);
  const std::size_t range = spec.resize_to - spec.crop_to + 1;
  const std::size_t top = rng.uniform_index(range), left = rng.uniform_index(range);
  return crop(resized, top, left, spec.crop_to, spec.crop_to);
}

/// Decodes every manifest entry, resized to `resize_to` square.
inline Dataset load_dataset(const DatasetManifest& m, std::size_t resize_to) {
  Dataset ds;
  ds.classes = m.classes;
  for (const auto& e : m.samples) {
    const std::string path = (m.split_dir() / e.relative_path).string();
    ImageTensor img = io::read_image(path);
    ds.samples.push_back({resize_bilinear(img, resize_to, resize_to), e.class_index, path});
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic fine-grained data

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t per_class = 8;
  std::size_t size = 64;
  std::uint64_t seed = 0;
};

namespace detail {

struct Glyph {
  std::size_t side = 0;
  std::vector<bool> mask;
  float color[3] = {0, 0, 0};
};

/// Class cues: a random binary texture of side size/8 with a tinted colour.
/// Classes differ only in these small local patterns.
inline std::vector<Glyph> make_glyphs(std::size_t classes, std::size_t size, std::uint64_t seed) {
  std::vector<Glyph> glyphs;
  for (std::size_t k = 0; k < classes; ++k) {
    Rng rng(derive_seed(seed, {0x91f4, k}));
    Glyph g;
    g.side = std::max<std::size_t>(3, size / 8);
    g.mask.resize(g.side * g.side);
    for (std::size_t i = 0; i < g.mask.size(); ++i) g.mask[i] = rng.bernoulli(0.5);
    const double hue = 2.0 * 3.14159265358979 * (static_cast<double>(k) + 0.3 * rng.uniform()) / static_cast<double>(classes);
    for (int c = 0; c < 3; ++c)
      g.color[c] = static_cast<float>(0.5 + 0.45 * std::cos(hue + 2.0943951 * c));
    glyphs.push_back(std::move(g));
  }
  return glyphs;
}

inline ImageTensor render(const std::vector<Glyph>& glyphs, std::size_t label, std::size_t size, Rng& rng) {
  ImageTensor img(size, size, 3);
  // Shared global structure: tinted gradient background plus one large blob.
  float base[3], slope[3], blob[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = static_cast<float>(rng.uniform(0.35, 0.5));
    slope[c] = static_cast<float>(rng.uniform(-0.1, 0.1));
    blob[c] = static_cast<float>(rng.uniform(0.3, 0.5));
  }
  const double cy = rng.uniform(0.3, 0.7) * size, cx = rng.uniform(0.3, 0.7) * size;
  const double ry = rng.uniform(0.2, 0.35) * size, rx = rng.uniform(0.2, 0.35) * size;
  const double s = static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      const double t = (static_cast<double>(x) + static_cast<double>(y)) / (2 * s);
      const double dy = (static_cast<double>(y) - cy) / ry, dx = (static_cast<double>(x) - cx) / rx;
      const bool inside = dy * dy + dx * dx < 1.0;
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) = inside ? blob[c] : static_cast<float>(base[c] + slope[c] * t);
    }
  // Class cue: four copies of the class glyph at random positions.
  const Glyph& g = glyphs[label];
  for (int copy = 0; copy < 4; ++copy) {
    const std::size_t top = rng.uniform_index(size - g.side + 1), left = rng.uniform_index(size - g.side + 1);
    for (std::size_t y = 0; y < g.side; ++y)
      for (std::size_t x = 0; x < g.side; ++x)
        if (g.mask[y * g.side + x])
          for (int c = 0; c < 3; ++c) img.at(top + y, left + x, c) = g.color[c];
  }
  for (auto& v : img.values()) v = std::clamp(v + static_cast<float>(rng.normal(0.0, 0.03)), 0.0f, 1.0f);
  return img;
}

}  // namespace detail

/// Balanced dataset whose classes differ only in small local glyph textures.
/// `stream` selects an independent sample stream over the same class glyphs,
/// so splits generated with different streams share class definitions.
inline Dataset make_synthetic(const SyntheticSpec& spec, std::uint64_t stream = 0) {
  require(spec.classes >= 2, ErrorKind::BadSize, "synthetic data needs at least two classes");
  require(spec.size >= 8 && spec.size % 8 == 0, ErrorKind::BadSize,
          "synthetic image size must be a positive multiple of 8, got " + std::to_string(spec.size));
  const auto glyphs = detail::make_glyphs(spec.classes, spec.size, spec.seed);
  Dataset ds;
  for (std::size_t k = 0; k < spec.classes; ++k) ds.classes.push_back("class" + std::to_string(k));
  Rng rng(derive_seed(spec.seed, {0x5a3b, stream}));
  for (std::size_t i = 0; i < spec.per_class; ++i)
    for (std::size_t k = 0; k < spec.classes; ++k)
      ds.samples.push_back({detail::render(glyphs, k, spec.size, rng), static_cast<int>(k), {}});
  return ds;
}

inline Dataset make_synthetic(std::size_t classes, std::size_t per_class, std::size_t size, std::uint64_t seed) {
  return make_synthetic(SyntheticSpec{classes, per_class, size, seed});
}

/// Writes a dataset as `root/<split>/<class>/<index>.png`.
inline void write_dataset(const Dataset& ds, const std::string& root, Split split) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(root) / to_string(split);
  for (const auto& name : ds.classes) fs::create_directories(dir / name);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    const auto& s = ds.samples[i];
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.png", i);
    io::write_png((dir / ds.classes[static_cast<std::size_t>(s.label)] / name).string(), s.image);
  }
}

}  // namespace rmgpmsi::data
