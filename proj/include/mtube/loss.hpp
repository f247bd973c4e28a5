#pragma once

// Smooth-L1, cross-entropy and the four-term multi-task objective.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mtube/geometry.hpp"
#include "mtube/kernels.hpp"

namespace mtube {

struct LossWeights {
  double e_cls = 1.0;
  double e_loc = 1.0;
  double m_cls = 1.0;
  double m_loc = 1.0;

  static LossWeights uniform() { return {1.0, 1.0, 1.0, 1.0}; }
  // Down-weights the proposal-stage terms: [1, 1, 0.5, 0.5].
  static LossWeights reduced_mid() { return {1.0, 1.0, 0.5, 0.5}; }

  void validate() const {
    for (double v : {e_cls, e_loc, m_cls, m_loc})
      if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument("LossWeights: weights must be finite and non-negative");
  }
};

struct LossReport {
  double total = 0.0;
  double e_cls = 0.0;
  double e_loc = 0.0;
  double m_cls = 0.0;
  double m_loc = 0.0;

  bool finite() const {
    return std::isfinite(total) && std::isfinite(e_cls) && std::isfinite(e_loc) &&
           std::isfinite(m_cls) && std::isfinite(m_loc);
  }
};

struct SmoothL1 {
  double value = 0.0;
  OffsetOctet grad;  // d value / d pred
};

inline SmoothL1 smooth_l1(const OffsetOctet& pred, const OffsetOctet& target) {
  SmoothL1 r;
  for (std::size_t i = 0; i < 8; ++i) {
    const double d = pred[i] - target[i];
    if (std::abs(d) < 1.0) {
      r.value += 0.5 * d * d;
      r.grad[i] = d;
    } else {
      r.value += std::abs(d) - 0.5;
      r.grad[i] = d > 0.0 ? 1.0 : -1.0;
    }
  }
  return r;
}

inline double cross_entropy(std::span<const double> probs, int true_class) {
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= probs.size())
    throw std::invalid_argument("cross_entropy: class index out of range");
  return -std::log(probs[static_cast<std::size_t>(true_class)]);
}

struct SoftmaxCrossEntropy {
  double value = 0.0;
  std::vector<double> probs;
  std::vector<double> grad;  // probs - onehot
};

// Computed in log-sum-exp form so that confident logits do not underflow.
inline SoftmaxCrossEntropy softmax_cross_entropy(std::span<const double> logits, int true_class) {
  if (true_class < 0 || static_cast<std::size_t>(true_class) >= logits.size())
    throw std::invalid_argument("softmax_cross_entropy: class index out of range");
  SoftmaxCrossEntropy r;
  r.probs = softmax(logits);
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  r.value = mx + std::log(z) - logits[static_cast<std::size_t>(true_class)];
  r.grad = r.probs;
  r.grad[static_cast<std::size_t>(true_class)] -= 1.0;
  return r;
}

// Single-sample objective. `phi_e` holds one octet per action class
// (class c at index c - 1); background has none. Regression targets must be
// present whenever their gate is open.
inline LossReport multi_task_loss(std::span<const double> p_e, int c_e,
                                  std::span<const OffsetOctet> phi_e,
                                  const std::optional<OffsetOctet>& g_e, std::span<const double> p_m,
                                  int c_m, const OffsetOctet& phi_m,
                                  const std::optional<OffsetOctet>& g_m,
                                  const LossWeights& w = {}) {
  w.validate();
  if (c_m != 0 && c_m != 1) throw std::invalid_argument("multi_task_loss: c_m must be 0 or 1");
  if (p_m.size() != 2) throw std::invalid_argument("multi_task_loss: p_m must have 2 entries");
  if (p_e.size() != phi_e.size() + 1)
    throw std::invalid_argument("multi_task_loss: expected one offset octet per action class");

  LossReport r;
  r.e_cls = cross_entropy(p_e, c_e);
  r.m_cls = cross_entropy(p_m, c_m);
  if (c_e >= 1) {
    if (!g_e) throw std::invalid_argument("multi_task_loss: missing micro-tube regression target");
    r.e_loc = smooth_l1(phi_e[static_cast<std::size_t>(c_e - 1)], *g_e).value;
  }
  if (c_m == 1) {
    if (!g_m) throw std::invalid_argument("multi_task_loss: missing proposal regression target");
    r.m_loc = smooth_l1(phi_m, *g_m).value;
  }
  r.total = w.e_cls * r.e_cls + w.e_loc * r.e_loc + w.m_cls * r.m_cls + w.m_loc * r.m_loc;
  return r;
}

// Batch form on logits, with gradients.
struct SamplePrediction {
  std::vector<double> end_logits;        // C + 1
  std::vector<OffsetOctet> end_offsets;  // C
  std::array<double, 2> mid_logits{};
  OffsetOctet mid_offsets;
};

struct SampleTarget {
  int c_e = 0;
  std::optional<OffsetOctet> g_e;
  int c_m = 0;
  std::optional<OffsetOctet> g_m;
};

struct SampleGrad {
  std::vector<double> end_logits;
  std::vector<OffsetOctet> end_offsets;
  std::array<double, 2> mid_logits{};
  OffsetOctet mid_offsets;
};

struct BatchLoss {
  LossReport report;
  std::vector<SampleGrad> grads;
};

// Classification terms are averaged over all samples; each regression term
// over the samples whose gate is open. Weighting is applied after averaging.
inline BatchLoss multi_task_loss_batch(std::span<const SamplePrediction> preds,
                                       std::span<const SampleTarget> targets,
                                       const LossWeights& w = {}) {
  w.validate();
  if (preds.size() != targets.size())
    throw std::invalid_argument("multi_task_loss_batch: prediction/target count mismatch");
  BatchLoss out;
  out.grads.resize(preds.size());
  if (preds.empty()) return out;

  std::size_t n_eloc = 0, n_mloc = 0;
  for (const auto& t : targets) {
    if (t.c_e >= 1) {
      if (!t.g_e) throw std::invalid_argument("multi_task_loss: missing micro-tube regression target");
      ++n_eloc;
    }
    if (t.c_m == 1) {
      if (!t.g_m) throw std::invalid_argument("multi_task_loss: missing proposal regression target");
      ++n_mloc;
    }
    if (t.c_m != 0 && t.c_m != 1) throw std::invalid_argument("multi_task_loss: c_m must be 0 or 1");
  }
  const double inv_n = 1.0 / static_cast<double>(preds.size());
  const double inv_e = n_eloc ? 1.0 / static_cast<double>(n_eloc) : 0.0;
  const double inv_m = n_mloc ? 1.0 / static_cast<double>(n_mloc) : 0.0;

  auto& R = out.report;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const auto& p = preds[s];
    const auto& t = targets[s];
    auto& g = out.grads[s];
    if (p.end_logits.size() != p.end_offsets.size() + 1)
      throw std::invalid_argument("multi_task_loss: expected one offset octet per action class");

    const auto ce = softmax_cross_entropy(p.end_logits, t.c_e);
    R.e_cls += ce.value * inv_n;
    g.end_logits = ce.grad;
    for (double& v : g.end_logits) v *= w.e_cls * inv_n;

    const auto cm = softmax_cross_entropy(p.mid_logits, t.c_m);
    R.m_cls += cm.value * inv_n;
    for (std::size_t i = 0; i < 2; ++i) g.mid_logits[i] = cm.grad[i] * w.m_cls * inv_n;

    g.end_offsets.assign(p.end_offsets.size(), OffsetOctet{});
    if (t.c_e >= 1) {
      const auto sl = smooth_l1(p.end_offsets[static_cast<std::size_t>(t.c_e - 1)], *t.g_e);
      R.e_loc += sl.value * inv_e;
      auto& ge = g.end_offsets[static_cast<std::size_t>(t.c_e - 1)];
      for (std::size_t i = 0; i < 8; ++i) ge[i] = sl.grad[i] * w.e_loc * inv_e;
    }
    if (t.c_m == 1) {
      const auto sl = smooth_l1(p.mid_offsets, *t.g_m);
      R.m_loc += sl.value * inv_m;
      for (std::size_t i = 0; i < 8; ++i) g.mid_offsets[i] = sl.grad[i] * w.m_loc * inv_m;
    }
  }
  R.total = w.e_cls * R.e_cls + w.e_loc * R.e_loc + w.m_cls * R.m_cls + w.m_loc * R.m_loc;
  return out;
}

}  // namespace mtube
