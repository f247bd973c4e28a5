#pragma once

// Micro-tube linking into action tubes.
//
// A micro-tube at step t covers frames t and t + delta. Consecutive linking
// steps are two frames apart, so a T-frame video has T/2 steps and the
// forward pass computes T/2 - 1 stages of edge scores.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mtube/geometry.hpp"

namespace mtube {

inline constexpr int kLinkStepFrames = 2;

struct MicroTube {
  BoxPair pair;
  int t = 1;
  int delta = 1;
  std::vector<double> scores;  // C + 1 entries, index 0 = background
};

struct ActionTube {
  int class_id = 0;
  int t_start = 0;
  int t_end = 0;
  std::vector<Box> boxes;  // one per frame in [t_start, t_end]
  double score = 0.0;      // mean class score of the members
  std::vector<MicroTube> members;

  const Box& box_at(int frame) const { return boxes.at(static_cast<std::size_t>(frame - t_start)); }
};

struct LinkingEnergy {
  double lambda_o = 1.0;

  void validate() const {
    if (!std::isfinite(lambda_o) || lambda_o < 0.0)
      throw std::invalid_argument("LinkingEnergy: lambda_o must be finite and non-negative");
  }
};

inline double edge_score(const MicroTube& m_t, const MicroTube& m_next) {
  if (m_next.t != m_t.t + kLinkStepFrames)
    throw std::invalid_argument("edge_score: micro-tubes are not on consecutive linking steps");
  return iou(m_t.pair.b2, m_next.pair.b1);
}

struct ViterbiResult {
  std::vector<std::size_t> path;  // node index per layer
  double energy = 0.0;
  std::size_t edge_stages = 0;
};

// Maximizes sum_l node(l, i_l) + lambda * sum_l edge(l, i_l, i_{l+1}) over
// layered graphs. Ties resolve to the lower node index.
template <class NodeFn, class EdgeFn>
ViterbiResult viterbi(std::span<const std::size_t> layer_sizes, NodeFn&& node, EdgeFn&& edge,
                      double lambda) {
  ViterbiResult r;
  const std::size_t L = layer_sizes.size();
  if (L == 0) return r;
  for (std::size_t n : layer_sizes)
    if (n == 0) throw std::invalid_argument("viterbi: empty layer");

  std::vector<std::vector<double>> dp(L);
  std::vector<std::vector<std::size_t>> back(L);
  dp[0].resize(layer_sizes[0]);
  for (std::size_t i = 0; i < layer_sizes[0]; ++i) dp[0][i] = node(std::size_t{0}, i);
  for (std::size_t l = 1; l < L; ++l) {
    ++r.edge_stages;
    dp[l].assign(layer_sizes[l], 0.0);
    back[l].assign(layer_sizes[l], 0);
    for (std::size_t j = 0; j < layer_sizes[l]; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t i = 0; i < layer_sizes[l - 1]; ++i) {
        const double v = dp[l - 1][i] + lambda * edge(l - 1, i, j);
        if (v > best) {
          best = v;
          arg = i;
        }
      }
      dp[l][j] = best + node(l, j);
      back[l][j] = arg;
    }
  }
  const auto& last = dp[L - 1];
  const std::size_t end = static_cast<std::size_t>(std::max_element(last.begin(), last.end()) - last.begin());
  r.energy = last[end];
  r.path.assign(L, 0);
  r.path[L - 1] = end;
  for (std::size_t l = L - 1; l > 0; --l) r.path[l - 1] = back[l][r.path[l]];
  return r;
}

// Frames are filled from each member in order, so where two members claim a
// frame the later member's first box wins. Frames strictly inside a
// micro-tube (delta > 1) are linearly interpolated between its two boxes.
inline ActionTube assemble_tube(int class_id, std::vector<MicroTube> members) {
  if (members.empty()) throw std::invalid_argument("assemble_tube: no members");
  ActionTube tube;
  tube.class_id = class_id;
  tube.t_start = members.front().t;
  tube.t_end = tube.t_start;
  for (const auto& m : members) tube.t_end = std::max(tube.t_end, m.t + m.delta);

  std::vector<std::optional<Box>> frames(static_cast<std::size_t>(tube.t_end - tube.t_start + 1));
  auto put = [&](int f, const Box& b) { frames[static_cast<std::size_t>(f - tube.t_start)] = b; };
  double score_sum = 0.0;
  for (const auto& m : members) {
    const auto& a = m.pair.b1;
    const auto& b = m.pair.b2;
    put(m.t + m.delta, b);
    for (int d = 1; d < m.delta; ++d) {
      const double s = static_cast<double>(d) / m.delta;
      put(m.t + d, Box(a.xc() + s * (b.xc() - a.xc()), a.yc() + s * (b.yc() - a.yc()),
                       a.w() + s * (b.w() - a.w()), a.h() + s * (b.h() - a.h())));
    }
    put(m.t, a);
    score_sum += m.scores.at(static_cast<std::size_t>(class_id));
  }
  for (const auto& f : frames) {
    if (!f) throw std::invalid_argument("assemble_tube: members leave an uncovered frame");
    tube.boxes.push_back(*f);
  }
  tube.score = score_sum / static_cast<double>(members.size());
  tube.members = std::move(members);
  return tube;
}

struct LinkResult {
  std::vector<ActionTube> tubes;
  std::vector<double> energies;    // per extracted path
  std::size_t edge_stages = 0;     // first forward pass
  std::size_t total_edge_stages = 0;
};

namespace detail {

inline void check_steps(std::span<const std::vector<MicroTube>> steps) {
  for (std::size_t s = 0; s < steps.size(); ++s) {
    if (steps[s].empty()) throw std::invalid_argument("link_class_paths: empty timestep");
    const int t = steps[s].front().t;
    for (const auto& m : steps[s])
      if (m.t != t) throw std::invalid_argument("link_class_paths: mixed frames within a timestep");
    if (s > 0 && t != steps[s - 1].front().t + kLinkStepFrames)
      throw std::invalid_argument("link_class_paths: timesteps must be spaced by two frames");
  }
}

}  // namespace detail

// Extracts up to max_paths class-c paths spanning every timestep. After each
// path its micro-tubes are removed and the energy re-maximized; extraction
// stops early once a timestep runs out of micro-tubes.
inline LinkResult link_class_paths(std::span<const std::vector<MicroTube>> steps, int class_id,
                                   const LinkingEnergy& energy, std::size_t max_paths) {
  energy.validate();
  detail::check_steps(steps);
  LinkResult res;
  if (steps.empty()) return res;
  for (const auto& layer : steps)
    for (const auto& m : layer)
      if (class_id < 0 || static_cast<std::size_t>(class_id) >= m.scores.size())
        throw std::invalid_argument("link_class_paths: class index outside the score vector");

  std::vector<std::vector<MicroTube>> pool(steps.begin(), steps.end());
  for (std::size_t p = 0; p < max_paths; ++p) {
    if (std::any_of(pool.begin(), pool.end(), [](const auto& l) { return l.empty(); })) break;
    std::vector<std::size_t> sizes;
    for (const auto& l : pool) sizes.push_back(l.size());
    const auto vr = viterbi(
        sizes,
        [&](std::size_t l, std::size_t i) {
          return pool[l][i].scores[static_cast<std::size_t>(class_id)];
        },
        [&](std::size_t l, std::size_t i, std::size_t j) {
          return edge_score(pool[l][i], pool[l + 1][j]);
        },
        energy.lambda_o);
    if (p == 0) res.edge_stages = vr.edge_stages;
    res.total_edge_stages += vr.edge_stages;

    std::vector<MicroTube> members;
    for (std::size_t l = 0; l < pool.size(); ++l) members.push_back(pool[l][vr.path[l]]);
    res.tubes.push_back(assemble_tube(class_id, std::move(members)));
    res.energies.push_back(vr.energy);
    for (std::size_t l = 0; l < pool.size(); ++l)
      pool[l].erase(pool[l].begin() + static_cast<std::ptrdiff_t>(vr.path[l]));
  }
  return res;
}

// Frame-level linking of single boxes over consecutive frames; T frames take
// T - 1 edge stages. Kept as the reference for the stage-count comparison.
struct ScoredBox {
  Box box;
  double score = 0.0;
};

inline ViterbiResult link_frame_boxes(std::span<const std::vector<ScoredBox>> frames,
                                      double lambda_o) {
  std::vector<std::size_t> sizes;
  for (const auto& f : frames) sizes.push_back(f.size());
  return viterbi(
      sizes, [&](std::size_t l, std::size_t i) { return frames[l][i].score; },
      [&](std::size_t l, std::size_t i, std::size_t j) {
        return iou(frames[l][i].box, frames[l + 1][j].box);
      },
      lambda_o);
}

// Splits a tube into maximal runs of steps scoring >= threshold and keeps the
// runs with at least min_len steps, each rescored by its own mean.
inline std::vector<ActionTube> trim_tube(const ActionTube& tube,
                                         std::span<const double> step_scores, double threshold,
                                         std::size_t min_len) {
  if (step_scores.size() != tube.members.size())
    throw std::invalid_argument("trim_tube: one score per member micro-tube expected");
  std::vector<ActionTube> out;
  std::size_t i = 0;
  while (i < step_scores.size()) {
    if (!(step_scores[i] >= threshold)) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < step_scores.size() && step_scores[j] >= threshold) ++j;
    if (j - i >= min_len && j > i) {
      std::vector<MicroTube> run(tube.members.begin() + static_cast<std::ptrdiff_t>(i),
                                 tube.members.begin() + static_cast<std::ptrdiff_t>(j));
      out.push_back(assemble_tube(tube.class_id, std::move(run)));
    }
    i = j;
  }
  return out;
}

struct TrimConfig {
  std::optional<double> threshold;  // absolute; overrides `relative`
  double relative = 0.5;            // fraction of the path's best step score
  std::size_t min_len = 2;

  double threshold_for(std::span<const double> step_scores) const {
    if (threshold) return *threshold;
    if (step_scores.empty()) return 0.0;
    return relative * *std::max_element(step_scores.begin(), step_scores.end());
  }
};

inline std::vector<double> step_scores(const ActionTube& tube) {
  std::vector<double> s;
  for (const auto& m : tube.members) s.push_back(m.scores.at(static_cast<std::size_t>(tube.class_id)));
  return s;
}

inline std::vector<ActionTube> trim_tube(const ActionTube& tube, const TrimConfig& cfg) {
  const auto s = step_scores(tube);
  return trim_tube(tube, s, cfg.threshold_for(s), cfg.min_len);
}

struct LinkingConfig {
  LinkingEnergy energy;
  std::map<int, double> class_lambda;  // per-class lambda_o overrides
  std::size_t max_paths = 3;
  TrimConfig trim;

  LinkingEnergy energy_for(int class_id) const {
    auto it = class_lambda.find(class_id);
    return it == class_lambda.end() ? energy : LinkingEnergy{it->second};
  }
};

// Links and trims every action class 1..C; sorted by descending score, ties
// in class then extraction order.
inline std::vector<ActionTube> build_all_tubes(std::span<const std::vector<MicroTube>> steps,
                                               int num_classes, const LinkingConfig& cfg) {
  std::vector<ActionTube> all;
  if (steps.empty()) return all;
  for (int c = 1; c <= num_classes; ++c) {
    auto linked = link_class_paths(steps, c, cfg.energy_for(c), cfg.max_paths);
    for (const auto& path : linked.tubes)
      for (auto& t : trim_tube(path, cfg.trim)) all.push_back(std::move(t));
  }
  std::stable_sort(all.begin(), all.end(),
                   [](const ActionTube& a, const ActionTube& b) { return a.score > b.score; });
  return all;
}

struct VideoLinks {
  std::vector<ActionTube> tubes;
  std::size_t edge_stages = 0;  // first-path forward stages, summed over segments
};

// Links each maximal run of consecutive non-empty steps on its own, so that
// stretches with no detections split a video into independent segments.
inline VideoLinks link_video(std::span<const std::vector<MicroTube>> steps, int num_classes,
                             const LinkingConfig& cfg) {
  VideoLinks out;
  std::size_t i = 0;
  while (i < steps.size()) {
    if (steps[i].empty()) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < steps.size() && !steps[j].empty()) ++j;
    const auto seg = steps.subspan(i, j - i);
    for (auto& t : build_all_tubes(seg, num_classes, cfg)) out.tubes.push_back(std::move(t));
    out.edge_stages += link_class_paths(seg, 1, cfg.energy_for(1), 1).edge_stages;
    i = j;
  }
  std::stable_sort(out.tubes.begin(), out.tubes.end(),
                   [](const ActionTube& a, const ActionTube& b) { return a.score > b.score; });
  return out;
}

}  // namespace mtube
