#pragma once

// Frame preprocessing and flip augmentation. Raw frames are 3-channel RGB
// FeatureMaps with values on the 0..255 scale.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "mtube/kernels.hpp"
#include "mtube/rpn.hpp"

namespace mtube {

struct PreprocessConfig {
  int width = 800;
  int height = 600;
  std::array<double, 3> bgr_mean{103.939, 116.779, 123.68};
};

// Half-pixel-aligned bilinear resize with edge clamping.
inline FeatureMap resize_bilinear(const FeatureMap& in, int out_h, int out_w) {
  if (in.height() < 1 || in.width() < 1 || out_h < 1 || out_w < 1)
    throw std::invalid_argument("resize_bilinear: zero-size image");
  FeatureMap out(in.channels(), out_h, out_w);
  const double sy = static_cast<double>(in.height()) / out_h;
  const double sx = static_cast<double>(in.width()) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, in.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, in.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, in.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, in.width() - 1);
      const double wx = fx - x0;
      for (int c = 0; c < in.channels(); ++c) {
        const double top = (1 - wx) * in.at(c, y0, x0) + wx * in.at(c, y0, x1);
        const double bot = (1 - wx) * in.at(c, y1, x0) + wx * in.at(c, y1, x1);
        out.at(c, y, x) = (1 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

// Resize to the configured size, reorder RGB to BGR, subtract the channel
// means.
inline FeatureMap preprocess(const FeatureMap& rgb, const PreprocessConfig& cfg = {}) {
  if (rgb.channels() != 3) throw std::invalid_argument("preprocess: expected a 3-channel RGB frame");
  if (rgb.height() < 1 || rgb.width() < 1) throw std::invalid_argument("preprocess: zero-size image");
  const FeatureMap r = (rgb.height() == cfg.height && rgb.width() == cfg.width)
                           ? rgb
                           : resize_bilinear(rgb, cfg.height, cfg.width);
  FeatureMap out(3, cfg.height, cfg.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < cfg.height; ++y)
      for (int x = 0; x < cfg.width; ++x) out.at(c, y, x) = r.at(2 - c, y, x) - cfg.bgr_mean[c];
  return out;
}

inline FeatureMap flip_horizontal(const FeatureMap& in) {
  FeatureMap out(in.channels(), in.height(), in.width());
  for (int c = 0; c < in.channels(); ++c)
    for (int y = 0; y < in.height(); ++y)
      for (int x = 0; x < in.width(); ++x) out.at(c, y, x) = in.at(c, y, in.width() - 1 - x);
  return out;
}

inline Box flip_box(const Box& b, double image_width) {
  return Box(image_width - b.xc(), b.yc(), b.w(), b.h());
}

struct FramePairSample {
  FeatureMap frame1;
  FeatureMap frame2;
  std::vector<GroundTruthPair> gts;
};

struct FlipResult {
  FramePairSample sample;
  bool flipped = false;
};

// With probability p mirrors both frames and every box (x_c -> W - x_c).
inline FlipResult augment_flip(const FramePairSample& s, double p, std::uint64_t seed) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("augment_flip: p must lie in [0, 1]");
  std::mt19937_64 rng(seed);
  const bool flip = std::bernoulli_distribution(p)(rng);
  if (!flip) return {s, false};
  const double width = s.frame1.width();
  FlipResult r{{flip_horizontal(s.frame1), flip_horizontal(s.frame2), {}}, true};
  for (const auto& g : s.gts)
    r.sample.gts.push_back({g.tube_id, {flip_box(g.pair.b1, width), flip_box(g.pair.b2, width)}});
  return r;
}

}  // namespace mtube
