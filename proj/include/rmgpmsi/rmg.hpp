#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rmgpmsi/error.hpp"
#include "rmgpmsi/image.hpp"
#include "rmgpmsi/random.hpp"

namespace rmgpmsi::rmg {

/// Recursion depth accepted without an explicit override.
inline constexpr unsigned kMaxDefaultDepth = 3;

/// Quadrants are indexed 0 = top-left, 1 = top-right, 2 = bottom-left,
/// 3 = bottom-right. Output quadrant i receives input quadrant perm[i].
using Permutation = std::array<std::uint8_t, 4>;

inline constexpr Permutation kIdentity{0, 1, 2, 3};

inline bool is_permutation(const Permutation& p) {
  std::array<bool, 4> seen{};
  for (auto v : p) {
    if (v > 3 || seen[v]) return false;
    seen[v] = true;
  }
  return true;
}

inline Rect quadrant(const Rect& region, unsigned q) {
  const std::size_t hw = region.w / 2, hh = region.h / 2;
  return {region.x + (q % 2) * hw, region.y + (q / 2) * hh, hw, hh};
}

struct MosaicStep {
  Rect region;
  Permutation permutation = kIdentity;
  friend bool operator==(const MosaicStep&, const MosaicStep&) = default;
};

/// Recursion record of one generator application; steps[k] is depth k + 1.
struct MosaicTrace {
  std::vector<MosaicStep> steps;
  std::size_t depth() const noexcept { return steps.size(); }
  friend bool operator==(const MosaicTrace&, const MosaicTrace&) = default;
};

struct RmgConfig {
  unsigned r = 0;
  std::uint64_t rng_seed = 0;
  bool allow_deep_recursion = false;
};

namespace detail {

inline void check_region(const Rect& image_bounds, const Rect& region, ErrorKind odd_kind,
                         ErrorKind bounds_kind) {
  if (!image_bounds.contains(region))
    fail(bounds_kind, "region (" + std::to_string(region.x) + "," + std::to_string(region.y) + "," +
                          std::to_string(region.w) + "," + std::to_string(region.h) +
                          ") outside image");
  if (region.w % 2 != 0 || region.h % 2 != 0 || region.w == 0 || region.h == 0)
    fail(odd_kind, "region sides must be even and non-zero, got " + std::to_string(region.w) + "x" +
                       std::to_string(region.h));
}

}  // namespace detail

/// Rearranges the four quadrants of `region` in place.
template <typename P>
void apply_mosaic(BasicImage<P>& image, const Rect& region, const Permutation& perm) {
  detail::check_region(image.bounds(), region, ErrorKind::OddRegion, ErrorKind::OutOfBounds);
  require(is_permutation(perm), ErrorKind::IncompatibleTrace, "not a permutation of {0,1,2,3}");
  if (perm == kIdentity) return;
  const std::size_t hw = region.w / 2, hh = region.h / 2, ch = image.channels();
  std::vector<P> src;
  src.reserve(region.w * region.h * ch);
  for (std::size_t y = region.y; y < region.y + region.h; ++y)
    for (std::size_t x = region.x; x < region.x + region.w; ++x)
      for (auto v : image.pixel(y, x)) src.push_back(v);
  const auto src_at = [&](std::size_t ly, std::size_t lx) {
    return src.data() + (ly * region.w + lx) * ch;
  };
  for (unsigned q = 0; q < 4; ++q) {
    const Rect dst = quadrant(region, q);
    const std::size_t sy0 = (perm[q] / 2) * hh, sx0 = (perm[q] % 2) * hw;
    for (std::size_t dy = 0; dy < hh; ++dy)
      for (std::size_t dx = 0; dx < hw; ++dx) {
        const P* s = src_at(sy0 + dy, sx0 + dx);
        auto d = image.pixel(dst.y + dy, dst.x + dx);
        std::copy_n(s, ch, d.begin());
      }
  }
}

inline Permutation random_permutation(Rng& rng) {
  Permutation p = kIdentity;
  rng.shuffle(p.begin(), p.end());
  return p;
}

/// One mosaic operation: split `region` into 2x2 quadrants and reassemble them
/// in a uniformly random order (identity included).
template <typename P>
std::pair<BasicImage<P>, Permutation> mosaic_step(const BasicImage<P>& image, const Rect& region,
                                                  Rng& rng) {
  detail::check_region(image.bounds(), region, ErrorKind::OddRegion, ErrorKind::OutOfBounds);
  const Permutation perm = random_permutation(rng);
  BasicImage<P> out = image;
  apply_mosaic(out, region, perm);
  return {std::move(out), perm};
}

/// Validates that an h x w image supports r recursions.
inline void check_divisible(std::size_t height, std::size_t width, unsigned r) {
  const std::size_t unit = std::size_t{1} << r;
  if (height == 0 || width == 0 || height % unit != 0 || width % unit != 0)
    fail(ErrorKind::IndivisibleImage, std::to_string(height) + "x" + std::to_string(width) +
                                          " is not divisible by 2^" + std::to_string(r));
}

/// Applies r nested mosaic steps. Step 1 covers the whole image; each later
/// step operates on a uniformly chosen quadrant of the previous step's region.
template <typename P>
std::pair<BasicImage<P>, MosaicTrace> generate(const BasicImage<P>& image, unsigned r, Rng& rng,
                                               bool allow_deep_recursion = false) {
  if (r > kMaxDefaultDepth && !allow_deep_recursion)
    fail(ErrorKind::RecursionLimit,
         "r = " + std::to_string(r) + " exceeds " + std::to_string(kMaxDefaultDepth) +
             " without an explicit override");
  check_divisible(image.height(), image.width(), r);
  BasicImage<P> out = image;
  MosaicTrace trace;
  trace.steps.reserve(r);
  Rect region = image.bounds();
  for (unsigned depth = 0; depth < r; ++depth) {
    if (depth > 0) region = quadrant(region, static_cast<unsigned>(rng.uniform_index(4)));
    const Permutation perm = random_permutation(rng);
    apply_mosaic(out, region, perm);
    trace.steps.push_back({region, perm});
  }
  return {std::move(out), std::move(trace)};
}

template <typename P>
std::pair<BasicImage<P>, MosaicTrace> generate(const BasicImage<P>& image, const RmgConfig& config) {
  Rng rng(config.rng_seed);
  return generate(image, config.r, rng, config.allow_deep_recursion);
}

/// Checks the structural trace invariants against an image size.
inline void validate_trace(const MosaicTrace& trace, std::size_t height, std::size_t width) {
  const Rect bounds{0, 0, width, height};
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const auto& step = trace.steps[k];
    detail::check_region(bounds, step.region, ErrorKind::IncompatibleTrace,
                         ErrorKind::IncompatibleTrace);
    require(is_permutation(step.permutation), ErrorKind::IncompatibleTrace,
            "step " + std::to_string(k + 1) + " permutation invalid");
    if (k == 0) {
      require(step.region == bounds, ErrorKind::IncompatibleTrace,
              "first step must cover the whole image");
    } else {
      const Rect& parent = trace.steps[k - 1].region;
      bool nested = false;
      for (unsigned q = 0; q < 4; ++q) nested = nested || quadrant(parent, q) == step.region;
      require(nested, ErrorKind::IncompatibleTrace,
              "step " + std::to_string(k + 1) + " region is not a quadrant of its parent");
    }
  }
}

/// Reproduces generate's output from its trace.
template <typename P>
BasicImage<P> replay(const BasicImage<P>& image, const MosaicTrace& trace) {
  validate_trace(trace, image.height(), image.width());
  BasicImage<P> out = image;
  for (const auto& step : trace.steps) apply_mosaic(out, step.region, step.permutation);
  return out;
}

/// Maximal untouched blocks after applying the trace: the whole image, with
/// each step's region replaced by its four quadrants.
inline std::vector<Rect> mosaic_blocks(const MosaicTrace& trace, std::size_t height,
                                       std::size_t width) {
  std::vector<Rect> blocks{{0, 0, width, height}};
  for (const auto& step : trace.steps) {
    std::erase(blocks, step.region);
    for (unsigned q = 0; q < 4; ++q) blocks.push_back(quadrant(step.region, q));
  }
  return blocks;
}

/// Line format: `depth x y w h perm`, perm written as four digits, e.g. 2301.
inline void write_trace(std::ostream& os, const MosaicTrace& trace) {
  for (std::size_t k = 0; k < trace.steps.size(); ++k) {
    const auto& s = trace.steps[k];
    os << (k + 1) << ' ' << s.region.x << ' ' << s.region.y << ' ' << s.region.w << ' '
       << s.region.h << ' ';
    for (auto v : s.permutation) os << static_cast<char>('0' + v);
    os << '\n';
  }
}

inline std::string trace_to_string(const MosaicTrace& trace) {
  std::ostringstream os;
  write_trace(os, trace);
  return os.str();
}

inline MosaicTrace read_trace(std::istream& is) {
  MosaicTrace trace;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t depth = 0;
    MosaicStep step;
    std::string perm;
    if (!(ls >> depth >> step.region.x >> step.region.y >> step.region.w >> step.region.h >> perm) ||
        perm.size() != 4 || depth != trace.steps.size() + 1)
      fail(ErrorKind::IncompatibleTrace, "malformed trace line: " + line);
    for (std::size_t i = 0; i < 4; ++i) {
      if (perm[i] < '0' || perm[i] > '3') fail(ErrorKind::IncompatibleTrace, "bad permutation " + perm);
      step.permutation[i] = static_cast<std::uint8_t>(perm[i] - '0');
    }
    trace.steps.push_back(step);
  }
  return trace;
}

}  // namespace rmgpmsi::rmg
