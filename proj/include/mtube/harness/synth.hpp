#pragma once

// Synthetic videos of moving rectangular blobs. Each blob is one ground-truth
// tube; its center moves at constant velocity and its size is fixed.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtube/harness/annotations.hpp"
#include "mtube/kernels.hpp"

namespace mtube {

struct BlobTrack {
  double x0 = 0.0;  // center at t_start
  double y0 = 0.0;
  double vx = 0.0;  // pixels per frame
  double vy = 0.0;
  double w = 1.0;
  double h = 1.0;
  int t_start = 1;
  int t_end = 1;
  std::array<double, 3> color{255.0, 255.0, 255.0};

  Box box_at(int t) const {
    return Box(x0 + vx * (t - t_start), y0 + vy * (t - t_start), w, h);
  }
};

struct SynthSpec {
  std::string video_id = "synth";
  int frames = 8;
  int width = 160;
  int height = 120;
  int class_id = 1;
  // RGB; the default equals the preprocessing mean, so the background
  // preprocesses to zero.
  std::array<double, 3> background{123.68, 116.779, 103.939};
  double noise = 0.0;  // Gaussian sigma added to every pixel
  std::uint64_t seed = 0;
  std::vector<BlobTrack> blobs;
};

struct SynthVideo {
  std::vector<FeatureMap> frames;  // RGB, 1-based frame t at index t - 1
  VideoAnnotation annotation;
};

namespace detail {

inline double overlap_1d(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

}  // namespace detail

// Pixels are blended by their exact area coverage; blobs are painted in
// order, later blobs on top.
inline SynthVideo synth_video(const SynthSpec& spec) {
  if (spec.frames < 1 || spec.width < 1 || spec.height < 1)
    throw std::invalid_argument("synth_video: frames and image size must be positive");
  SynthVideo v;
  v.annotation = {spec.video_id, spec.frames, spec.class_id, {}};
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, spec.noise > 0.0 ? spec.noise : 1.0);

  for (int t = 1; t <= spec.frames; ++t) {
    FeatureMap img(3, spec.height, spec.width);
    for (int c = 0; c < 3; ++c)
      std::fill(img.values().begin() + static_cast<std::ptrdiff_t>(c) * spec.height * spec.width,
                img.values().begin() + static_cast<std::ptrdiff_t>(c + 1) * spec.height * spec.width,
                spec.background[c]);
    for (std::size_t tid = 0; tid < spec.blobs.size(); ++tid) {
      const auto& blob = spec.blobs[tid];
      if (t < blob.t_start || t > blob.t_end) continue;
      const Box b = blob.box_at(t);
      v.annotation.records.push_back({t, static_cast<int>(tid) + 1, b});
      const int xa = std::max(0, static_cast<int>(std::floor(b.x1())));
      const int xb = std::min(spec.width - 1, static_cast<int>(std::ceil(b.x2())));
      const int ya = std::max(0, static_cast<int>(std::floor(b.y1())));
      const int yb = std::min(spec.height - 1, static_cast<int>(std::ceil(b.y2())));
      for (int y = ya; y <= yb; ++y) {
        const double cy = detail::overlap_1d(y, y + 1.0, b.y1(), b.y2());
        for (int x = xa; x <= xb; ++x) {
          const double cov = cy * detail::overlap_1d(x, x + 1.0, b.x1(), b.x2());
          if (cov <= 0.0) continue;
          for (int c = 0; c < 3; ++c) {
            double& px = img.at(c, y, x);
            px += cov * (blob.color[c] - px);
          }
        }
      }
    }
    if (spec.noise > 0.0)
      for (double& px : img.values()) px += noise(rng);
    v.frames.push_back(std::move(img));
  }
  validate(v.annotation);
  return v;
}

// Random blobs whose boxes stay inside the image for their whole track.
inline SynthSpec random_synth_spec(std::uint64_t seed, int frames, int width, int height,
                                   int instances, double noise = 0.0) {
  if (frames < 2) throw std::invalid_argument("random_synth_spec: need at least 2 frames");
  SynthSpec s;
  s.frames = frames;
  s.width = width;
  s.height = height;
  s.noise = noise;
  s.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < instances; ++i) {
    BlobTrack b;
    b.w = width * (0.15 + 0.2 * u(rng));
    b.h = height * (0.15 + 0.2 * u(rng));
    b.t_start = 1 + static_cast<int>(u(rng) * (frames / 2));
    b.t_end = std::min(frames, b.t_start + 1 + static_cast<int>(u(rng) * (frames - b.t_start)));
    auto cx = [&] { return b.w / 2 + u(rng) * (width - b.w); };
    auto cy = [&] { return b.h / 2 + u(rng) * (height - b.h); };
    b.x0 = cx();
    b.y0 = cy();
    const double x1 = cx(), y1 = cy();
    const int span = std::max(1, b.t_end - b.t_start);
    b.vx = (x1 - b.x0) / span;
    b.vy = (y1 - b.y0) / span;
    b.color = {255.0 * u(rng), 255.0 * u(rng), 255.0 * u(rng)};
    s.blobs.push_back(b);
  }
  return s;
}

}  // namespace mtube
