#pragma once

// Boxes, paired anchors, offset transforms, IoU and pair-NMS.
//
// All coordinates are continuous pixels. The canonical box form is
// (center x, center y, width, height); corner form is derived on demand.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mtube {

class Box {
 public:
  // Throws std::invalid_argument on non-finite fields or a non-positive
  // width/height; every downstream formula divides by w or h.
  Box(double xc, double yc, double w, double h) : xc_(xc), yc_(yc), w_(w), h_(h) {
    if (!std::isfinite(xc) || !std::isfinite(yc) || !std::isfinite(w) || !std::isfinite(h))
      throw std::invalid_argument("Box: non-finite coordinate");
    if (!(w > 0.0) || !(h > 0.0))
      throw std::invalid_argument("Box: width and height must be positive");
  }

  static Box from_corners(double x1, double y1, double x2, double y2) {
    return Box(0.5 * (x1 + x2), 0.5 * (y1 + y2), x2 - x1, y2 - y1);
  }

  double xc() const noexcept { return xc_; }
  double yc() const noexcept { return yc_; }
  double w() const noexcept { return w_; }
  double h() const noexcept { return h_; }

  double x1() const noexcept { return xc_ - 0.5 * w_; }
  double y1() const noexcept { return yc_ - 0.5 * h_; }
  double x2() const noexcept { return xc_ + 0.5 * w_; }
  double y2() const noexcept { return yc_ + 0.5 * h_; }
  double area() const noexcept { return w_ * h_; }

  std::array<double, 4> corners() const noexcept { return {x1(), y1(), x2(), y2()}; }

  bool operator==(const Box&) const = default;

 private:
  double xc_, yc_, w_, h_;
};

// Two boxes on frames t and t + delta: a 3D proposal, an anchor pair, or the
// geometry of a micro-tube.
struct BoxPair {
  Box b1;
  Box b2;

  bool operator==(const BoxPair&) const = default;
};

// Regression offsets for a box pair, ordered (x, y, w, h) for box 1 then box 2.
struct OffsetOctet {
  std::array<double, 8> v{};

  double& operator[](std::size_t i) { return v[i]; }
  double operator[](std::size_t i) const { return v[i]; }

  std::span<const double, 4> box(std::size_t which) const {
    return std::span<const double, 4>(v.data() + 4 * which, 4);
  }

  bool finite() const {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  }

  bool operator==(const OffsetOctet&) const = default;
};

struct ScoredPair {
  BoxPair pair;
  double score = 0.0;
};

// Anchor pairs laid out cell-major: pairs[(y * grid_w + x) * k + config],
// config = scale_index * |ratios| + ratio_index.
struct AnchorGrid {
  int grid_h = 0;
  int grid_w = 0;
  double stride = 16.0;
  int k = 0;
  std::vector<BoxPair> pairs;

  std::size_t index(int y, int x, int config) const {
    return (static_cast<std::size_t>(y) * grid_w + x) * k + config;
  }
};

struct AnchorConfig {
  // Square side length in pixels before the aspect ratio is applied.
  std::vector<double> scales{64.0, 128.0, 256.0, 512.0};
  // Height / width.
  std::vector<double> ratios{1.0, 0.5, 2.0};

  int k() const { return static_cast<int>(scales.size() * ratios.size()); }
};

inline AnchorGrid generate_anchor_pairs(int grid_h, int grid_w, double stride,
                                        std::span<const double> scales,
                                        std::span<const double> ratios) {
  if (grid_h < 1 || grid_w < 1)
    throw std::invalid_argument("generate_anchor_pairs: grid must be at least 1x1");
  if (scales.empty() || ratios.empty())
    throw std::invalid_argument("generate_anchor_pairs: scales and ratios must be non-empty");
  if (!(stride > 0.0))
    throw std::invalid_argument("generate_anchor_pairs: stride must be positive");

  // Area-preserving aspect: w = s / sqrt(r), h = s * sqrt(r).
  std::vector<std::pair<double, double>> shapes;
  shapes.reserve(scales.size() * ratios.size());
  for (double s : scales) {
    for (double r : ratios) {
      if (!(s > 0.0) || !(r > 0.0))
        throw std::invalid_argument("generate_anchor_pairs: scales and ratios must be positive");
      shapes.emplace_back(s / std::sqrt(r), s * std::sqrt(r));
    }
  }

  AnchorGrid grid;
  grid.grid_h = grid_h;
  grid.grid_w = grid_w;
  grid.stride = stride;
  grid.k = static_cast<int>(shapes.size());
  grid.pairs.reserve(static_cast<std::size_t>(grid_h) * grid_w * shapes.size());
  for (int y = 0; y < grid_h; ++y) {
    for (int x = 0; x < grid_w; ++x) {
      const double cx = (x + 0.5) * stride;
      const double cy = (y + 0.5) * stride;
      for (const auto& [w, h] : shapes) {
        const Box b(cx, cy, w, h);
        grid.pairs.push_back({b, b});
      }
    }
  }
  return grid;
}

inline AnchorGrid generate_anchor_pairs(int grid_h, int grid_w, double stride,
                                        const AnchorConfig& cfg) {
  return generate_anchor_pairs(grid_h, grid_w, stride, cfg.scales, cfg.ratios);
}

namespace detail {

inline Box decode_box(const Box& a, std::span<const double, 4> phi) {
  return Box(a.xc() + phi[0] * a.w(), a.yc() + phi[1] * a.h(), a.w() * std::exp(phi[2]),
             a.h() * std::exp(phi[3]));
}

inline void encode_box(const Box& a, const Box& g, double* out) {
  out[0] = (g.xc() - a.xc()) / a.w();
  out[1] = (g.yc() - a.yc()) / a.h();
  out[2] = std::log(g.w() / a.w());
  out[3] = std::log(g.h() / a.h());
}

}  // namespace detail

inline BoxPair decode_offsets(const BoxPair& anchor, const OffsetOctet& phi) {
  if (!phi.finite()) throw std::invalid_argument("decode_offsets: non-finite offsets");
  return {detail::decode_box(anchor.b1, phi.box(0)), detail::decode_box(anchor.b2, phi.box(1))};
}

// Box validity is enforced by the Box constructor, so any target reaching
// this point already has positive dimensions.
inline OffsetOctet encode_offsets(const BoxPair& anchor, const BoxPair& target) {
  OffsetOctet phi;
  detail::encode_box(anchor.b1, target.b1, phi.v.data());
  detail::encode_box(anchor.b2, target.b2, phi.v.data() + 4);
  return phi;
}

inline double intersection_area(const Box& a, const Box& b) noexcept {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

inline double iou(const Box& a, const Box& b) noexcept {
  const double inter = intersection_area(a, b);
  if (inter <= 0.0) return 0.0;
  const double uni = a.area() + b.area() - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

struct PairIoU {
  double psi1 = 0.0;
  double psi2 = 0.0;
  double mean = 0.0;
};

inline PairIoU pair_iou(const BoxPair& gt, const BoxPair& prop) noexcept {
  PairIoU r;
  r.psi1 = iou(gt.b1, prop.b1);
  r.psi2 = iou(gt.b2, prop.b2);
  r.mean = 0.5 * (r.psi1 + r.psi2);
  return r;
}

// Clips a box to [0, width] x [0, height]; nullopt if nothing with positive
// area remains.
inline std::optional<Box> clip_box(const Box& b, double width, double height) {
  const double x1 = std::clamp(b.x1(), 0.0, width);
  const double y1 = std::clamp(b.y1(), 0.0, height);
  const double x2 = std::clamp(b.x2(), 0.0, width);
  const double y2 = std::clamp(b.y2(), 0.0, height);
  if (!(x2 > x1) || !(y2 > y1)) return std::nullopt;
  return Box::from_corners(x1, y1, x2, y2);
}

inline std::optional<BoxPair> clip_pair(const BoxPair& p, double width, double height) {
  auto b1 = clip_box(p.b1, width, height);
  auto b2 = clip_box(p.b2, width, height);
  if (!b1 || !b2) return std::nullopt;
  return BoxPair{*b1, *b2};
}

// Indices into `pairs` of the greedy pair-NMS survivors, in descending score
// order. Equal scores resolve to the lower input index. A candidate is
// suppressed when its mean pair-IoU with an already kept pair exceeds
// `threshold`.
inline std::vector<std::size_t> pair_nms_indices(std::span<const ScoredPair> pairs,
                                                 double threshold, std::size_t keep) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw std::invalid_argument("pair_nms: threshold must lie in [0, 1]");
  for (const auto& p : pairs)
    if (!std::isfinite(p.score)) throw std::invalid_argument("pair_nms: non-finite score");

  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pairs[a].score > pairs[b].score;
  });

  std::vector<std::size_t> kept;
  std::vector<char> suppressed(pairs.size(), 0);
  for (std::size_t oi = 0; oi < order.size() && kept.size() < keep; ++oi) {
    const std::size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (suppressed[j]) continue;
      if (pair_iou(pairs[i].pair, pairs[j].pair).mean > threshold) suppressed[j] = 1;
    }
  }
  return kept;
}

inline std::vector<ScoredPair> pair_nms(std::span<const ScoredPair> pairs, double threshold,
                                        std::size_t keep) {
  std::vector<ScoredPair> out;
  for (std::size_t i : pair_nms_indices(pairs, threshold, keep)) out.push_back(pairs[i]);
  return out;
}

}  // namespace mtube
