#pragma once

// Dense rank-3 tensor kernels with explicit forward and backward passes.
// Storage and accumulation are double precision throughout.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mtube/geometry.hpp"

namespace mtube {

// channels x height x width, row-major with width fastest.
class FeatureMap {
 public:
  FeatureMap() = default;
  FeatureMap(int channels, int height, int width, double fill = 0.0)
      : channels_(channels), height_(height), width_(width) {
    if (channels < 0 || height < 0 || width < 0)
      throw std::invalid_argument("FeatureMap: negative dimension");
    values_.assign(static_cast<std::size_t>(channels) * height * width, fill);
  }
  FeatureMap(int channels, int height, int width, std::vector<double> values)
      : channels_(channels), height_(height), width_(width), values_(std::move(values)) {
    if (channels < 0 || height < 0 || width < 0)
      throw std::invalid_argument("FeatureMap: negative dimension");
    if (values_.size() != static_cast<std::size_t>(channels) * height * width)
      throw std::invalid_argument("FeatureMap: value count does not match shape");
  }

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::size_t offset(int c, int y, int x) const noexcept {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }
  double& at(int c, int y, int x) { return values_[offset(c, y, x)]; }
  double at(int c, int y, int x) const { return values_[offset(c, y, x)]; }

  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  bool has_grad() const noexcept { return !grad_.empty(); }
  // Allocates a zeroed gradient buffer if none exists.
  std::vector<double>& grad() {
    if (grad_.empty()) grad_.assign(values_.size(), 0.0);
    return grad_;
  }
  const std::vector<double>& grad() const { return grad_; }
  void clear_grad() { grad_.clear(); }

  bool same_shape(const FeatureMap& o) const noexcept {
    return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
  }

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> values_;
  std::vector<double> grad_;
};

struct PooledFeature {
  int channels = 0;
  int kh = 0;
  int kw = 0;
  std::vector<double> values;

  double at(int c, int i, int j) const {
    return values[(static_cast<std::size_t>(c) * kh + i) * kw + j];
  }
};

// Filter bank: out x in x kh x kw weights plus one bias per output channel.
struct ConvWeights {
  int out_channels = 0;
  int in_channels = 0;
  int kh = 0;
  int kw = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  ConvWeights() = default;
  ConvWeights(int out_c, int in_c, int kernel_h, int kernel_w)
      : out_channels(out_c),
        in_channels(in_c),
        kh(kernel_h),
        kw(kernel_w),
        weights(static_cast<std::size_t>(out_c) * in_c * kernel_h * kernel_w, 0.0),
        bias(static_cast<std::size_t>(out_c), 0.0) {}

  std::size_t offset(int o, int i, int ky, int kx) const noexcept {
    return ((static_cast<std::size_t>(o) * in_channels + i) * kh + ky) * kw + kx;
  }
  double& w(int o, int i, int ky, int kx) { return weights[offset(o, i, ky, kx)]; }
  double w(int o, int i, int ky, int kx) const { return weights[offset(o, i, ky, kx)]; }
};

struct ConvSpec {
  int stride = 1;
  int padding = 0;
};

namespace detail {

inline void check_conv(const FeatureMap& input, const ConvWeights& wts, ConvSpec spec) {
  if (wts.in_channels != input.channels())
    throw std::invalid_argument("conv2d: filter input channels do not match the feature map");
  if (wts.kh < 1 || wts.kw < 1 || wts.kh % 2 == 0 || wts.kw % 2 == 0)
    throw std::invalid_argument("conv2d: filter spatial size must be odd");
  if (wts.weights.size() !=
          static_cast<std::size_t>(wts.out_channels) * wts.in_channels * wts.kh * wts.kw ||
      wts.bias.size() != static_cast<std::size_t>(wts.out_channels))
    throw std::invalid_argument("conv2d: filter bank storage does not match its shape");
  if (spec.stride < 1 || spec.padding < 0)
    throw std::invalid_argument("conv2d: stride must be >= 1 and padding >= 0");
  if (input.height() + 2 * spec.padding < wts.kh || input.width() + 2 * spec.padding < wts.kw)
    throw std::invalid_argument("conv2d: input smaller than the filter");
}

inline int conv_out_dim(int in, int k, ConvSpec spec) {
  return (in + 2 * spec.padding - k) / spec.stride + 1;
}

}  // namespace detail

// Cross-correlation. For each output cell the sum runs over (in channel,
// ky, kx) in that order and the bias is added last.
inline FeatureMap conv2d_forward(const FeatureMap& input, const ConvWeights& wts, ConvSpec spec) {
  detail::check_conv(input, wts, spec);
  const int oh = detail::conv_out_dim(input.height(), wts.kh, spec);
  const int ow = detail::conv_out_dim(input.width(), wts.kw, spec);
  FeatureMap out(wts.out_channels, oh, ow);
  for (int o = 0; o < wts.out_channels; ++o) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int i = 0; i < wts.in_channels; ++i) {
          for (int ky = 0; ky < wts.kh; ++ky) {
            const int iy = oy * spec.stride - spec.padding + ky;
            if (iy < 0 || iy >= input.height()) continue;
            for (int kx = 0; kx < wts.kw; ++kx) {
              const int ix = ox * spec.stride - spec.padding + kx;
              if (ix < 0 || ix >= input.width()) continue;
              acc += input.at(i, iy, ix) * wts.w(o, i, ky, kx);
            }
          }
        }
        out.at(o, oy, ox) = acc + wts.bias[o];
      }
    }
  }
  return out;
}

struct ConvGrads {
  FeatureMap input;
  ConvWeights weights;  // includes bias gradients
};

inline ConvGrads conv2d_backward(const FeatureMap& input, const ConvWeights& wts, ConvSpec spec,
                                 const FeatureMap& upstream) {
  detail::check_conv(input, wts, spec);
  const int oh = detail::conv_out_dim(input.height(), wts.kh, spec);
  const int ow = detail::conv_out_dim(input.width(), wts.kw, spec);
  if (upstream.channels() != wts.out_channels || upstream.height() != oh ||
      upstream.width() != ow)
    throw std::invalid_argument("conv2d_backward: upstream gradient shape mismatch");

  ConvGrads g{FeatureMap(input.channels(), input.height(), input.width()),
              ConvWeights(wts.out_channels, wts.in_channels, wts.kh, wts.kw)};
  for (int o = 0; o < wts.out_channels; ++o) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        const double up = upstream.at(o, oy, ox);
        if (up == 0.0) continue;
        g.weights.bias[o] += up;
        for (int i = 0; i < wts.in_channels; ++i) {
          for (int ky = 0; ky < wts.kh; ++ky) {
            const int iy = oy * spec.stride - spec.padding + ky;
            if (iy < 0 || iy >= input.height()) continue;
            for (int kx = 0; kx < wts.kw; ++kx) {
              const int ix = ox * spec.stride - spec.padding + kx;
              if (ix < 0 || ix >= input.width()) continue;
              g.input.at(i, iy, ix) += up * wts.w(o, i, ky, kx);
              g.weights.w(o, i, ky, kx) += up * input.at(i, iy, ix);
            }
          }
        }
      }
    }
  }
  return g;
}

inline FeatureMap relu_forward(const FeatureMap& input) {
  FeatureMap out(input.channels(), input.height(), input.width());
  std::transform(input.values().begin(), input.values().end(), out.values().begin(),
                 [](double x) { return x > 0.0 ? x : 0.0; });
  return out;
}

inline FeatureMap relu_backward(const FeatureMap& input, const FeatureMap& upstream) {
  if (!input.same_shape(upstream))
    throw std::invalid_argument("relu_backward: upstream gradient shape mismatch");
  FeatureMap g(input.channels(), input.height(), input.width());
  for (std::size_t i = 0; i < input.size(); ++i)
    g.values()[i] = input.values()[i] > 0.0 ? upstream.values()[i] : 0.0;
  return g;
}

// Vector forms, used by the fully connected head.
inline std::vector<double> relu_forward(std::span<const double> x) {
  std::vector<double> y(x.size());
  std::transform(x.begin(), x.end(), y.begin(), [](double v) { return v > 0.0 ? v : 0.0; });
  return y;
}

inline std::vector<double> relu_backward(std::span<const double> x,
                                         std::span<const double> upstream) {
  if (x.size() != upstream.size())
    throw std::invalid_argument("relu_backward: upstream gradient size mismatch");
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = x[i] > 0.0 ? upstream[i] : 0.0;
  return g;
}

enum class FusionKind { sum, mean };

inline FeatureMap fuse(const FeatureMap& a, const FeatureMap& b, FusionKind kind) {
  if (!a.same_shape(b)) throw std::invalid_argument("fuse: feature map shapes differ");
  FeatureMap out(a.channels(), a.height(), a.width());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double s = a.values()[i] + b.values()[i];
    out.values()[i] = kind == FusionKind::sum ? s : 0.5 * s;
  }
  return out;
}

inline FeatureMap fuse_sum(const FeatureMap& a, const FeatureMap& b) {
  return fuse(a, b, FusionKind::sum);
}
inline FeatureMap fuse_mean(const FeatureMap& a, const FeatureMap& b) {
  return fuse(a, b, FusionKind::mean);
}

// Gradient with respect to each fused input; both receive the same map.
inline FeatureMap fuse_backward(const FeatureMap& upstream, FusionKind kind) {
  FeatureMap g = upstream;
  g.clear_grad();
  if (kind == FusionKind::mean)
    for (double& v : g.values()) v *= 0.5;
  return g;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) return {};
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& v : p) v /= z;
  return p;
}

// Vector-Jacobian product: d/dlogits of <upstream, softmax(logits)>.
inline std::vector<double> softmax_backward(std::span<const double> probs,
                                            std::span<const double> upstream) {
  if (probs.size() != upstream.size())
    throw std::invalid_argument("softmax_backward: size mismatch");
  double dot = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) dot += probs[i] * upstream[i];
  std::vector<double> g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (upstream[i] - dot);
  return g;
}

// y = W x + b with W stored row-major (out x in).
struct LinearWeights {
  int out_features = 0;
  int in_features = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  LinearWeights() = default;
  LinearWeights(int out_f, int in_f)
      : out_features(out_f),
        in_features(in_f),
        weights(static_cast<std::size_t>(out_f) * in_f, 0.0),
        bias(static_cast<std::size_t>(out_f), 0.0) {}

  double& w(int o, int i) { return weights[static_cast<std::size_t>(o) * in_features + i]; }
  double w(int o, int i) const { return weights[static_cast<std::size_t>(o) * in_features + i]; }
};

inline void check_linear(std::span<const double> x, const LinearWeights& wts) {
  if (x.size() != static_cast<std::size_t>(wts.in_features) ||
      wts.weights.size() != static_cast<std::size_t>(wts.out_features) * wts.in_features ||
      wts.bias.size() != static_cast<std::size_t>(wts.out_features))
    throw std::invalid_argument("linear: shape mismatch");
}

inline std::vector<double> linear_forward(std::span<const double> x, const LinearWeights& wts) {
  check_linear(x, wts);
  std::vector<double> y(wts.out_features);
  for (int o = 0; o < wts.out_features; ++o) {
    double acc = 0.0;
    const double* row = wts.weights.data() + static_cast<std::size_t>(o) * wts.in_features;
    for (int i = 0; i < wts.in_features; ++i) acc += row[i] * x[i];
    y[o] = acc + wts.bias[o];
  }
  return y;
}

struct LinearGrads {
  std::vector<double> input;
  LinearWeights weights;
};

inline LinearGrads linear_backward(std::span<const double> x, const LinearWeights& wts,
                                   std::span<const double> upstream) {
  check_linear(x, wts);
  if (upstream.size() != static_cast<std::size_t>(wts.out_features))
    throw std::invalid_argument("linear_backward: upstream gradient size mismatch");
  LinearGrads g{std::vector<double>(x.size(), 0.0),
                LinearWeights(wts.out_features, wts.in_features)};
  for (int o = 0; o < wts.out_features; ++o) {
    const double up = upstream[o];
    g.weights.bias[o] = up;
    if (up == 0.0) continue;
    for (int i = 0; i < wts.in_features; ++i) {
      g.input[i] += wts.w(o, i) * up;
      g.weights.w(o, i) = up * x[i];
    }
  }
  return g;
}

// Bilinear RoI pooling.
//
// The box is in feature-map coordinates (image pixels / stride), where cell
// (r, c) has its center at (c + 0.5, r + 0.5). Output cell (i, j) samples the
// point at fractional position ((j + 0.5) / out_w, (i + 0.5) / out_h) of the
// box extent. Each sample interpolates the four surrounding cell centers;
// neighbors outside the map contribute zero.
namespace detail {

struct BilinearTap {
  int x0, y0;    // top-left neighbor
  double fx, fy;  // fractional offsets in [0, 1)
};

inline BilinearTap bilinear_tap(double x, double y) {
  const double u = x - 0.5;
  const double v = y - 0.5;
  const double fu = std::floor(u);
  const double fv = std::floor(v);
  return {static_cast<int>(fu), static_cast<int>(fv), u - fu, v - fv};
}

inline double sample_cell(const FeatureMap& f, int c, int y, int x) {
  if (x < 0 || y < 0 || x >= f.width() || y >= f.height()) return 0.0;
  return f.at(c, y, x);
}

inline void check_pool(const FeatureMap& f, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bilinear_pool: output size must be >= 1");
  if (f.channels() < 1 || f.height() < 1 || f.width() < 1)
    throw std::invalid_argument("bilinear_pool: empty feature map");
}

}  // namespace detail

// Sample point of output cell (i, j).
inline std::pair<double, double> pool_sample_point(const Box& box, int out_h, int out_w, int i,
                                                   int j) {
  return {box.x1() + (j + 0.5) / out_w * box.w(), box.y1() + (i + 0.5) / out_h * box.h()};
}

inline PooledFeature bilinear_pool(const FeatureMap& f, const Box& box, int out_h, int out_w) {
  detail::check_pool(f, out_h, out_w);
  PooledFeature out{f.channels(), out_h, out_w,
                    std::vector<double>(static_cast<std::size_t>(f.channels()) * out_h * out_w)};
  for (int i = 0; i < out_h; ++i) {
    for (int j = 0; j < out_w; ++j) {
      const auto [x, y] = pool_sample_point(box, out_h, out_w, i, j);
      const auto t = detail::bilinear_tap(x, y);
      const double w00 = (1 - t.fx) * (1 - t.fy), w01 = t.fx * (1 - t.fy);
      const double w10 = (1 - t.fx) * t.fy, w11 = t.fx * t.fy;
      for (int c = 0; c < f.channels(); ++c) {
        out.values[(static_cast<std::size_t>(c) * out_h + i) * out_w + j] =
            w00 * detail::sample_cell(f, c, t.y0, t.x0) +
            w01 * detail::sample_cell(f, c, t.y0, t.x0 + 1) +
            w10 * detail::sample_cell(f, c, t.y0 + 1, t.x0) +
            w11 * detail::sample_cell(f, c, t.y0 + 1, t.x0 + 1);
      }
    }
  }
  return out;
}

struct PoolGrads {
  FeatureMap features;
  std::array<double, 4> box{};  // d/d(xc, yc, w, h)
};

// Gradients of <upstream, bilinear_pool(f, box)> with respect to the feature
// map and the box parameters. Piecewise-smooth in the box: the derivative
// jumps wherever a sample point crosses a cell-center line.
inline PoolGrads bilinear_pool_backward(const FeatureMap& f, const Box& box,
                                        const PooledFeature& upstream) {
  const int out_h = upstream.kh, out_w = upstream.kw;
  detail::check_pool(f, out_h, out_w);
  if (upstream.channels != f.channels() ||
      upstream.values.size() != static_cast<std::size_t>(f.channels()) * out_h * out_w)
    throw std::invalid_argument("bilinear_pool_backward: upstream gradient shape mismatch");

  PoolGrads g{FeatureMap(f.channels(), f.height(), f.width()), {}};
  auto scatter = [&](int c, int y, int x, double v) {
    if (x < 0 || y < 0 || x >= f.width() || y >= f.height()) return;
    g.features.at(c, y, x) += v;
  };
  for (int i = 0; i < out_h; ++i) {
    const double ry = (i + 0.5) / out_h - 0.5;  // dy/dh
    for (int j = 0; j < out_w; ++j) {
      const double rx = (j + 0.5) / out_w - 0.5;  // dx/dw
      const auto [x, y] = pool_sample_point(box, out_h, out_w, i, j);
      const auto t = detail::bilinear_tap(x, y);
      double dx = 0.0, dy = 0.0;
      for (int c = 0; c < f.channels(); ++c) {
        const double up = upstream.values[(static_cast<std::size_t>(c) * out_h + i) * out_w + j];
        if (up == 0.0) continue;
        const double v00 = detail::sample_cell(f, c, t.y0, t.x0);
        const double v01 = detail::sample_cell(f, c, t.y0, t.x0 + 1);
        const double v10 = detail::sample_cell(f, c, t.y0 + 1, t.x0);
        const double v11 = detail::sample_cell(f, c, t.y0 + 1, t.x0 + 1);
        scatter(c, t.y0, t.x0, up * (1 - t.fx) * (1 - t.fy));
        scatter(c, t.y0, t.x0 + 1, up * t.fx * (1 - t.fy));
        scatter(c, t.y0 + 1, t.x0, up * (1 - t.fx) * t.fy);
        scatter(c, t.y0 + 1, t.x0 + 1, up * t.fx * t.fy);
        dx += up * ((1 - t.fy) * (v01 - v00) + t.fy * (v11 - v10));
        dy += up * ((1 - t.fx) * (v10 - v00) + t.fx * (v11 - v01));
      }
      g.box[0] += dx;
      g.box[1] += dy;
      g.box[2] += dx * rx;
      g.box[3] += dy * ry;
    }
  }
  return g;
}

// Distance from the nearest interpolation kink over all sample points, in
// feature-map units. Used to keep finite-difference checks off the kinks.
inline double pool_kink_distance(const Box& box, int out_h, int out_w) {
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < out_h; ++i) {
    for (int j = 0; j < out_w; ++j) {
      const auto [x, y] = pool_sample_point(box, out_h, out_w, i, j);
      const double u = x - 0.5, v = y - 0.5;
      best = std::min(best, std::abs(u - std::round(u)));
      best = std::min(best, std::abs(v - std::round(v)));
    }
  }
  return best;
}

// Placeholder for the head's dropout layers; identity at desk scale.
inline std::span<const double> dropout_identity(std::span<const double> x) noexcept { return x; }

}  // namespace mtube
