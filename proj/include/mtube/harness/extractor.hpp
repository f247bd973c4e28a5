#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

#include "mtube/kernels.hpp"

namespace mtube {

// Anything mapping a preprocessed [3 x H x W] frame to a [D x H' x W'] map.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual FeatureMap extract(const FeatureMap& frame) const = 0;
  virtual int channels() const = 0;
  // Image pixels per feature cell.
  virtual double stride() const = 0;
};

// Fixed random two-layer conv stack: two 3x3 stride-4 pad-1 convolutions,
// each followed by ReLU, for an overall stride of 16.
class ToyExtractor final : public FeatureExtractor {
 public:
  explicit ToyExtractor(int channels = 8, std::uint64_t seed = 7, double input_scale = 1.0 / 128.0)
      : channels_(channels), input_scale_(input_scale), l1_(channels, 3, 3, 3), l2_(channels, channels, 3, 3) {
    if (channels < 1) throw std::invalid_argument("ToyExtractor: channels must be positive");
    std::mt19937_64 rng(seed);
    for (auto* w : {&l1_, &l2_}) {
      std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / (w->in_channels * 9.0)));
      for (double& v : w->weights) v = nd(rng);
      for (double& v : w->bias) v = 0.1 * nd(rng);
    }
  }

  FeatureMap extract(const FeatureMap& frame) const override {
    if (frame.channels() != 3) throw std::invalid_argument("ToyExtractor: expected 3 channels");
    FeatureMap x = frame;
    for (double& v : x.values()) v *= input_scale_;
    constexpr ConvSpec spec{4, 1};
    return relu_forward(conv2d_forward(relu_forward(conv2d_forward(x, l1_, spec)), l2_, spec));
  }

  int channels() const override { return channels_; }
  double stride() const override { return 16.0; }

 private:
  int channels_;
  double input_scale_;
  ConvWeights l1_, l2_;
};

// Output size of ToyExtractor along one axis.
inline int toy_feature_dim(int pixels) {
  const int a = (pixels + 2 - 3) / 4 + 1;
  return (a + 2 - 3) / 4 + 1;
}

}  // namespace mtube
