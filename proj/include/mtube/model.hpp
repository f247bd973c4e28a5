#pragma once

// Desk-scale detector: 3D-RPN plus the fully connected micro-tube head.
//
// Each box of a proposal is pooled from its own frame's feature map, the two
// pooled maps are sum-fused, flattened and passed through FC6 -> ReLU ->
// FC7 -> ReLU, then to a (C + 1)-way classifier and a C x 8 regressor.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "mtube/geometry.hpp"
#include "mtube/kernels.hpp"
#include "mtube/loss.hpp"
#include "mtube/rpn.hpp"

namespace mtube {

struct HeadParams {
  LinearWeights fc6;
  LinearWeights fc7;
  LinearWeights cls;  // C + 1 outputs
  LinearWeights reg;  // 8C outputs, class c at [8(c-1), 8c)
};

struct ModelConfig {
  int feature_channels = 8;  // D
  int rpn_channels = 256;
  int k = 12;
  int num_classes = 1;  // C, excluding background
  int pool_h = 7;
  int pool_w = 7;
  int hidden = 64;
};

struct ToyModel {
  ModelConfig config;
  RpnParams rpn;
  HeadParams head;
};

namespace detail {

// Gaussian weights scaled by 1/sqrt(fan_in), zero bias.
inline void init_linear(LinearWeights& w, std::mt19937_64& rng, double gain) {
  std::normal_distribution<double> nd(0.0, gain / std::sqrt(static_cast<double>(w.in_features)));
  for (double& v : w.weights) v = nd(rng);
}

inline void init_conv(ConvWeights& w, std::mt19937_64& rng, double gain) {
  const double fan_in = static_cast<double>(w.in_channels) * w.kh * w.kw;
  std::normal_distribution<double> nd(0.0, gain / std::sqrt(fan_in));
  for (double& v : w.weights) v = nd(rng);
}

}  // namespace detail

inline ToyModel make_toy_model(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.feature_channels < 1 || cfg.rpn_channels < 1 || cfg.k < 1 || cfg.num_classes < 1 ||
      cfg.pool_h < 1 || cfg.pool_w < 1 || cfg.hidden < 1)
    throw std::invalid_argument("make_toy_model: all sizes must be positive");
  ToyModel m;
  m.config = cfg;
  m.rpn = {ConvWeights(cfg.rpn_channels, cfg.feature_channels, 3, 3),
           ConvWeights(8 * cfg.k, cfg.rpn_channels, 1, 1),
           ConvWeights(2 * cfg.k, cfg.rpn_channels, 1, 1)};
  const int flat = cfg.feature_channels * cfg.pool_h * cfg.pool_w;
  m.head = {LinearWeights(cfg.hidden, flat), LinearWeights(cfg.hidden, cfg.hidden),
            LinearWeights(cfg.num_classes + 1, cfg.hidden),
            LinearWeights(8 * cfg.num_classes, cfg.hidden)};
  std::mt19937_64 rng(seed);
  const double relu_gain = std::sqrt(2.0);
  detail::init_conv(m.rpn.conv, rng, relu_gain);
  detail::init_conv(m.rpn.reg, rng, 0.1);
  detail::init_conv(m.rpn.cls, rng, 0.1);
  detail::init_linear(m.head.fc6, rng, relu_gain);
  detail::init_linear(m.head.fc7, rng, relu_gain);
  detail::init_linear(m.head.cls, rng, 0.1);
  detail::init_linear(m.head.reg, rng, 0.1);
  return m;
}

inline Box to_feature_coords(const Box& b, double stride) {
  return Box(b.xc() / stride, b.yc() / stride, b.w() / stride, b.h() / stride);
}

// Intermediates of one head evaluation, kept for the backward pass.
struct HeadTrace {
  Box fb1, fb2;  // proposal boxes in feature coordinates
  std::vector<double> x;
  std::vector<double> h6_pre, h6, h7_pre, h7;
  std::vector<double> cls_logits;
  std::vector<double> reg;
};

inline HeadTrace head_forward(const HeadParams& head, const ModelConfig& cfg,
                              const FeatureMap& f1, const FeatureMap& f2, const BoxPair& proposal,
                              double stride) {
  HeadTrace t{to_feature_coords(proposal.b1, stride), to_feature_coords(proposal.b2, stride), {}, {}, {}, {}, {}, {}, {}};
  const auto p1 = bilinear_pool(f1, t.fb1, cfg.pool_h, cfg.pool_w);
  const auto p2 = bilinear_pool(f2, t.fb2, cfg.pool_h, cfg.pool_w);
  t.x.resize(p1.values.size());
  for (std::size_t i = 0; i < t.x.size(); ++i) t.x[i] = p1.values[i] + p2.values[i];
  t.h6_pre = linear_forward(t.x, head.fc6);
  t.h6 = relu_forward(t.h6_pre);
  t.h7_pre = linear_forward(dropout_identity(t.h6), head.fc7);
  t.h7 = relu_forward(t.h7_pre);
  t.cls_logits = linear_forward(dropout_identity(t.h7), head.cls);
  t.reg = linear_forward(t.h7, head.reg);
  return t;
}

inline std::vector<OffsetOctet> split_octets(std::span<const double> reg) {
  std::vector<OffsetOctet> out(reg.size() / 8);
  for (std::size_t c = 0; c < out.size(); ++c)
    for (std::size_t j = 0; j < 8; ++j) out[c][j] = reg[8 * c + j];
  return out;
}

struct HeadGrads {
  HeadParams params;
  std::array<double, 4> box1{}, box2{};  // d/d(xc, yc, w, h) in feature coordinates
};

inline HeadGrads head_backward(const HeadParams& head, const ModelConfig& cfg,
                               const FeatureMap& f1, const FeatureMap& f2, const HeadTrace& t,
                               std::span<const double> grad_cls, std::span<const OffsetOctet> grad_reg,
                               bool want_box_grads = false) {
  std::vector<double> greg(8 * grad_reg.size());
  for (std::size_t c = 0; c < grad_reg.size(); ++c)
    for (std::size_t j = 0; j < 8; ++j) greg[8 * c + j] = grad_reg[c][j];

  auto gc = linear_backward(t.h7, head.cls, grad_cls);
  auto gr = linear_backward(t.h7, head.reg, greg);
  std::vector<double> gh7(t.h7.size());
  for (std::size_t i = 0; i < gh7.size(); ++i) gh7[i] = gc.input[i] + gr.input[i];
  auto g7 = linear_backward(t.h6, head.fc7, relu_backward(t.h7_pre, gh7));
  auto g6 = linear_backward(t.x, head.fc6, relu_backward(t.h6_pre, g7.input));

  HeadGrads out{{std::move(g6.weights), std::move(g7.weights), std::move(gc.weights),
                 std::move(gr.weights)}};
  if (want_box_grads) {
    PooledFeature up{cfg.feature_channels, cfg.pool_h, cfg.pool_w, g6.input};
    out.box1 = bilinear_pool_backward(f1, t.fb1, up).box;
    out.box2 = bilinear_pool_backward(f2, t.fb2, up).box;
  }
  return out;
}

}  // namespace mtube
