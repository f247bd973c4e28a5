#pragma once

// Plain gradient descent on the multi-task objective over one fixed batch.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "mtube/geometry.hpp"
#include "mtube/kernels.hpp"
#include "mtube/loss.hpp"
#include "mtube/model.hpp"
#include "mtube/rpn.hpp"

namespace mtube {

// One frame pair with its sampled proposals. Proposals are fixed at batch
// construction; their regression targets are constants during fitting.
struct TrainingBatch {
  FeatureMap f1, f2;  // per-frame feature maps, D x H' x W'
  FusionKind fusion = FusionKind::sum;
  double stride = 16.0;
  AnchorGrid anchors;
  std::vector<Proposal> proposals;
  std::vector<GroundTruthPair> gts;
  int class_id = 1;  // action class of every positive in the batch
  Minibatch minibatch;
};

inline TrainingBatch make_training_batch(const ToyModel& model, FeatureMap f1, FeatureMap f2,
                                         std::vector<GroundTruthPair> gts, int class_id,
                                         double image_w, double image_h, double stride,
                                         const AnchorConfig& anchor_cfg,
                                         const SamplerConfig& sampler,
                                         FusionKind fusion = FusionKind::sum) {
  if (class_id < 1 || class_id > model.config.num_classes)
    throw std::invalid_argument("make_training_batch: class id outside [1, C]");
  TrainingBatch b;
  b.fusion = fusion;
  b.stride = stride;
  b.anchors = generate_anchor_pairs(f1.height(), f1.width(), stride, anchor_cfg);
  if (b.anchors.k != model.config.k)
    throw std::invalid_argument("make_training_batch: anchor count k does not match the model");
  const auto out = rpn_forward(fuse(f1, f2, fusion), model.rpn);
  b.proposals = decode_proposals(b.anchors, out, image_w, image_h);
  b.minibatch = sample_train(b.proposals, gts, sampler);
  b.f1 = std::move(f1);
  b.f2 = std::move(f2);
  b.gts = std::move(gts);
  b.class_id = class_id;
  return b;
}

struct ModelGrads {
  RpnParams rpn;
  HeadParams head;
};

struct BatchEvaluation {
  LossReport report;
  ModelGrads grads;
};

inline std::vector<SampleTarget> batch_targets(const TrainingBatch& b) {
  std::vector<SampleTarget> targets;
  for (const auto& s : b.minibatch.samples) {
    SampleTarget t;
    if (s.positive) {
      const auto& prop = b.proposals[s.proposal];
      const auto& gt = b.gts[*s.gt].pair;
      t.c_e = b.class_id;
      t.g_e = encode_offsets(prop.pair, gt);
      t.c_m = 1;
      t.g_m = encode_offsets(b.anchors.pairs[prop.anchor], gt);
    }
    targets.push_back(t);
  }
  return targets;
}

inline BatchEvaluation evaluate_batch(const ToyModel& m, const TrainingBatch& b,
                                      const LossWeights& w, bool with_grads = true) {
  const auto fused = fuse(b.f1, b.f2, b.fusion);
  const auto rt = rpn_forward_traced(fused, m.rpn);

  const auto& samples = b.minibatch.samples;
  std::vector<HeadTrace> traces;
  std::vector<SamplePrediction> preds;
  traces.reserve(samples.size());
  for (const auto& s : samples) {
    const auto& prop = b.proposals[s.proposal];
    traces.push_back(head_forward(m.head, m.config, b.f1, b.f2, prop.pair, b.stride));
    SamplePrediction p;
    p.end_logits = traces.back().cls_logits;
    p.end_offsets = split_octets(traces.back().reg);
    p.mid_logits = anchor_logits(rt.out, b.anchors, prop.anchor);
    p.mid_offsets = anchor_offsets(rt.out, b.anchors, prop.anchor);
    preds.push_back(std::move(p));
  }
  const auto targets = batch_targets(b);
  auto loss = multi_task_loss_batch(preds, targets, w);

  BatchEvaluation ev{loss.report, {}};
  if (!with_grads) return ev;

  FeatureMap g_off(rt.out.offsets.channels(), rt.out.offsets.height(), rt.out.offsets.width());
  FeatureMap g_act(rt.out.actionness.channels(), rt.out.actionness.height(),
                   rt.out.actionness.width());
  const int k = b.anchors.k;
  bool head_init = false;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    const std::size_t anchor = b.proposals[samples[s].proposal].anchor;
    const int cell = static_cast<int>(anchor / k), a = static_cast<int>(anchor % k);
    const int y = cell / b.anchors.grid_w, x = cell % b.anchors.grid_w;
    for (int j = 0; j < 8; ++j) g_off.at(8 * a + j, y, x) += loss.grads[s].mid_offsets[j];
    for (int j = 0; j < 2; ++j) g_act.at(2 * a + j, y, x) += loss.grads[s].mid_logits[j];

    auto hg = head_backward(m.head, m.config, b.f1, b.f2, traces[s], loss.grads[s].end_logits,
                            loss.grads[s].end_offsets);
    if (!head_init) {
      ev.grads.head = std::move(hg.params);
      head_init = true;
      continue;
    }
    auto acc = [](LinearWeights& dst, const LinearWeights& src) {
      for (std::size_t i = 0; i < dst.weights.size(); ++i) dst.weights[i] += src.weights[i];
      for (std::size_t i = 0; i < dst.bias.size(); ++i) dst.bias[i] += src.bias[i];
    };
    acc(ev.grads.head.fc6, hg.params.fc6);
    acc(ev.grads.head.fc7, hg.params.fc7);
    acc(ev.grads.head.cls, hg.params.cls);
    acc(ev.grads.head.reg, hg.params.reg);
  }
  if (!head_init) {
    const auto& h = m.head;
    ev.grads.head = {LinearWeights(h.fc6.out_features, h.fc6.in_features),
                     LinearWeights(h.fc7.out_features, h.fc7.in_features),
                     LinearWeights(h.cls.out_features, h.cls.in_features),
                     LinearWeights(h.reg.out_features, h.reg.in_features)};
  }
  ev.grads.rpn = rpn_backward(fused, m.rpn, rt, g_off, g_act).params;
  return ev;
}

inline void gradient_step(ToyModel& m, const ModelGrads& g, double lr) {
  auto step_conv = [lr](ConvWeights& p, const ConvWeights& d) {
    for (std::size_t i = 0; i < p.weights.size(); ++i) p.weights[i] -= lr * d.weights[i];
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] -= lr * d.bias[i];
  };
  auto step_lin = [lr](LinearWeights& p, const LinearWeights& d) {
    for (std::size_t i = 0; i < p.weights.size(); ++i) p.weights[i] -= lr * d.weights[i];
    for (std::size_t i = 0; i < p.bias.size(); ++i) p.bias[i] -= lr * d.bias[i];
  };
  step_conv(m.rpn.conv, g.rpn.conv);
  step_conv(m.rpn.reg, g.rpn.reg);
  step_conv(m.rpn.cls, g.rpn.cls);
  step_lin(m.head.fc6, g.head.fc6);
  step_lin(m.head.fc7, g.head.fc7);
  step_lin(m.head.cls, g.head.cls);
  step_lin(m.head.reg, g.head.reg);
}

struct ToyFitResult {
  // trace[0] is the initial loss, trace[i] the loss after i steps.
  std::vector<LossReport> trace;
  bool diverged = false;
};

// Divergence (a non-finite loss) ends the run and is reported, not thrown.
inline ToyFitResult toy_fit(ToyModel& m, const TrainingBatch& b, std::size_t steps, double lr,
                            const LossWeights& w = {}) {
  if (b.minibatch.samples.empty()) throw std::invalid_argument("toy_fit: empty minibatch");
  ToyFitResult r;
  r.trace.reserve(steps + 1);
  for (std::size_t s = 0; s <= steps; ++s) {
    auto ev = evaluate_batch(m, b, w, s < steps);
    r.trace.push_back(ev.report);
    if (!ev.report.finite()) {
      r.diverged = true;
      break;
    }
    if (s < steps) gradient_step(m, ev.grads, lr);
  }
  return r;
}

}  // namespace mtube
