#pragma once

// 3D region proposal head and proposal sampling.
//
// Head layout: 3x3 conv (stride 1, pad 1) -> ReLU -> two parallel 1x1 convs.
// The regression map has 8k channels, anchor config a owning channels
// [8a, 8a + 8) in octet order; the actionness map has 2k channels, channel
// 2a being "no action" and 2a + 1 "action".

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "mtube/geometry.hpp"
#include "mtube/kernels.hpp"

namespace mtube {

struct RpnParams {
  ConvWeights conv;  // mid x D x 3 x 3
  ConvWeights reg;   // 8k x mid x 1 x 1
  ConvWeights cls;   // 2k x mid x 1 x 1

  int k() const noexcept { return reg.out_channels / 8; }
};

// Gaussian(0, sigma) weights, zero biases.
inline RpnParams make_rpn_params(int in_channels, int mid_channels, int k, std::uint64_t seed,
                                 double sigma = 0.01) {
  if (in_channels < 1 || mid_channels < 1 || k < 1)
    throw std::invalid_argument("make_rpn_params: channel counts must be positive");
  RpnParams p{ConvWeights(mid_channels, in_channels, 3, 3), ConvWeights(8 * k, mid_channels, 1, 1),
              ConvWeights(2 * k, mid_channels, 1, 1)};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, sigma);
  for (auto* w : {&p.conv, &p.reg, &p.cls})
    for (double& v : w->weights) v = nd(rng);
  return p;
}

struct RpnOutput {
  FeatureMap offsets;     // 8k x H' x W'
  FeatureMap actionness;  // 2k x H' x W' logits
};

// Intermediates kept for the backward pass.
struct RpnTrace {
  FeatureMap pre;     // conv output before ReLU
  FeatureMap hidden;  // after ReLU
  RpnOutput out;
};

inline constexpr ConvSpec kRpnConv{1, 1};
inline constexpr ConvSpec kRpnHeads{1, 0};

inline RpnTrace rpn_forward_traced(const FeatureMap& fused, const RpnParams& p) {
  if (fused.channels() != p.conv.in_channels)
    throw std::invalid_argument("rpn_forward: fused map channel count does not match the head");
  if (p.reg.out_channels % 8 != 0 || p.cls.out_channels != p.reg.out_channels / 4)
    throw std::invalid_argument("rpn_forward: head widths must be 8k and 2k");
  RpnTrace t;
  t.pre = conv2d_forward(fused, p.conv, kRpnConv);
  t.hidden = relu_forward(t.pre);
  t.out.offsets = conv2d_forward(t.hidden, p.reg, kRpnHeads);
  t.out.actionness = conv2d_forward(t.hidden, p.cls, kRpnHeads);
  return t;
}

inline RpnOutput rpn_forward(const FeatureMap& fused, const RpnParams& p) {
  return rpn_forward_traced(fused, p).out;
}

struct RpnGrads {
  RpnParams params;
  FeatureMap input;
};

inline RpnGrads rpn_backward(const FeatureMap& fused, const RpnParams& p, const RpnTrace& t,
                             const FeatureMap& grad_offsets, const FeatureMap& grad_actionness) {
  auto greg = conv2d_backward(t.hidden, p.reg, kRpnHeads, grad_offsets);
  auto gcls = conv2d_backward(t.hidden, p.cls, kRpnHeads, grad_actionness);
  FeatureMap ghidden = greg.input;
  for (std::size_t i = 0; i < ghidden.size(); ++i) ghidden.values()[i] += gcls.input.values()[i];
  auto gpre = relu_backward(t.pre, ghidden);
  auto gconv = conv2d_backward(fused, p.conv, kRpnConv, gpre);
  return {{std::move(gconv.weights), std::move(greg.weights), std::move(gcls.weights)},
          std::move(gconv.input)};
}

inline OffsetOctet anchor_offsets(const RpnOutput& out, const AnchorGrid& grid,
                                  std::size_t anchor) {
  const int k = grid.k;
  const int cell = static_cast<int>(anchor / k);
  const int a = static_cast<int>(anchor % k);
  const int y = cell / grid.grid_w, x = cell % grid.grid_w;
  OffsetOctet phi;
  for (int j = 0; j < 8; ++j) phi[j] = out.offsets.at(8 * a + j, y, x);
  return phi;
}

inline std::array<double, 2> anchor_logits(const RpnOutput& out, const AnchorGrid& grid,
                                           std::size_t anchor) {
  const int k = grid.k;
  const int cell = static_cast<int>(anchor / k);
  const int a = static_cast<int>(anchor % k);
  const int y = cell / grid.grid_w, x = cell % grid.grid_w;
  return {out.actionness.at(2 * a, y, x), out.actionness.at(2 * a + 1, y, x)};
}

struct Proposal {
  BoxPair pair;
  double score = 0.0;  // actionness probability
  std::size_t anchor = 0;
};

// Log-space size offsets are clamped before exponentiation.
inline constexpr double kMaxLogScale = 4.135166556742356;  // ln(1000 / 16)

// Decodes every anchor pair, clips to the image and drops pairs that lose
// all area.
inline std::vector<Proposal> decode_proposals(const AnchorGrid& grid, const RpnOutput& out,
                                              double image_w, double image_h) {
  if (out.offsets.channels() != 8 * grid.k || out.actionness.channels() != 2 * grid.k ||
      out.offsets.height() != grid.grid_h || out.offsets.width() != grid.grid_w)
    throw std::invalid_argument("decode_proposals: head output does not match the anchor grid");
  std::vector<Proposal> props;
  props.reserve(grid.pairs.size());
  for (std::size_t a = 0; a < grid.pairs.size(); ++a) {
    OffsetOctet phi = anchor_offsets(out, grid, a);
    for (int j : {2, 3, 6, 7}) phi[j] = std::min(phi[j], kMaxLogScale);
    const auto logits = anchor_logits(out, grid, a);
    const auto prob = softmax(logits);
    auto clipped = clip_pair(decode_offsets(grid.pairs[a], phi), image_w, image_h);
    if (!clipped) continue;
    props.push_back({*clipped, prob[1], a});
  }
  return props;
}

struct GroundTruthPair {
  int tube_id = 0;
  BoxPair pair;
};

enum class PositiveRule {
  both_boxes,  // psi1 >= pos and psi2 >= pos
  mean_iou,    // (psi1 + psi2) / 2 >= pos
};

struct SamplerConfig {
  double pos_thresh = 0.5;
  double neg_thresh = 0.3;
  std::size_t batch_size = 256;
  PositiveRule rule = PositiveRule::both_boxes;
  std::uint64_t seed = 0;
};

enum class SampleLabel { positive, negative, ignored };

struct ProposalLabel {
  SampleLabel label = SampleLabel::ignored;
  bool forced = false;             // max mean-IoU proposal for some ground truth
  std::optional<std::size_t> gt;   // best mean-IoU ground truth
  double best_mean = 0.0;
};

// Applies the labeling rules to every proposal, before any capping.
inline std::vector<ProposalLabel> label_proposals(std::span<const Proposal> props,
                                                  std::span<const GroundTruthPair> gts,
                                                  const SamplerConfig& cfg) {
  std::vector<ProposalLabel> labels(props.size());
  std::vector<double> gt_best(gts.size(), -1.0);
  std::vector<std::size_t> gt_arg(gts.size(), 0);

  for (std::size_t p = 0; p < props.size(); ++p) {
    bool pos = false, neg = true;
    auto& L = labels[p];
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const PairIoU r = pair_iou(gts[g].pair, props[p].pair);
      if (cfg.rule == PositiveRule::both_boxes ? (r.psi1 >= cfg.pos_thresh && r.psi2 >= cfg.pos_thresh)
                                               : r.mean >= cfg.pos_thresh)
        pos = true;
      if (!(r.psi1 < cfg.neg_thresh && r.psi2 < cfg.neg_thresh)) neg = false;
      if (!L.gt || r.mean > L.best_mean) {
        L.gt = g;
        L.best_mean = r.mean;
      }
      if (r.mean > gt_best[g]) {
        gt_best[g] = r.mean;
        gt_arg[g] = p;
      }
    }
    L.label = pos ? SampleLabel::positive : (neg ? SampleLabel::negative : SampleLabel::ignored);
  }
  if (!props.empty()) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      auto& L = labels[gt_arg[g]];
      L.forced = true;
      L.label = SampleLabel::positive;
    }
  }
  return labels;
}

struct Sample {
  std::size_t proposal = 0;
  bool positive = false;
  std::optional<std::size_t> gt;  // index into the ground-truth list, positives only
};

struct Minibatch {
  std::vector<Sample> samples;
  std::size_t batch_size = 0;

  std::size_t num_positive() const {
    return static_cast<std::size_t>(
        std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.positive; }));
  }
};

// Positives are capped at B/2: forced positives rank first, the rest by
// descending best mean IoU, ties to the lower proposal index. Negatives fill
// the remaining slots, subsampled uniformly under cfg.seed. Samples are
// returned positives first, each group in proposal order.
inline Minibatch sample_train(std::span<const Proposal> props,
                              std::span<const GroundTruthPair> gts, const SamplerConfig& cfg) {
  if (props.empty()) throw std::invalid_argument("sample_train: no proposals");
  if (!(cfg.neg_thresh >= 0.0 && cfg.neg_thresh < cfg.pos_thresh && cfg.pos_thresh <= 1.0))
    throw std::invalid_argument("sample_train: need 0 <= neg_thresh < pos_thresh <= 1");

  const auto labels = label_proposals(props, gts, cfg);
  std::vector<std::size_t> pos, neg;
  for (std::size_t p = 0; p < labels.size(); ++p) {
    if (labels[p].label == SampleLabel::positive) pos.push_back(p);
    if (labels[p].label == SampleLabel::negative) neg.push_back(p);
  }

  std::stable_sort(pos.begin(), pos.end(), [&](std::size_t a, std::size_t b) {
    if (labels[a].forced != labels[b].forced) return labels[a].forced;
    return labels[a].best_mean > labels[b].best_mean;
  });
  const std::size_t pos_cap = cfg.batch_size / 2;
  if (pos.size() > pos_cap) pos.resize(pos_cap);
  std::sort(pos.begin(), pos.end());

  const std::size_t neg_slots = cfg.batch_size - pos.size();
  if (neg.size() > neg_slots) {
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(neg.begin(), neg.end(), rng);
    neg.resize(neg_slots);
    std::sort(neg.begin(), neg.end());
  }

  Minibatch mb;
  mb.batch_size = cfg.batch_size;
  for (std::size_t p : pos) mb.samples.push_back({p, true, labels[p].gt});
  for (std::size_t p : neg) mb.samples.push_back({p, false, std::nullopt});
  return mb;
}

inline constexpr std::size_t kDefaultTestKeep = 1000;

inline std::vector<Proposal> select_test(std::span<const Proposal> props, double nms_thresh,
                                         std::size_t keep = kDefaultTestKeep) {
  std::vector<ScoredPair> scored;
  scored.reserve(props.size());
  for (const auto& p : props) scored.push_back({p.pair, p.score});
  std::vector<Proposal> out;
  for (std::size_t i : pair_nms_indices(scored, nms_thresh, keep)) out.push_back(props[i]);
  return out;
}

}  // namespace mtube
