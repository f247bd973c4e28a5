#pragma once

// Frame-AP and video-AP.
//
// AP uses all-point interpolation: the precision envelope integrated over
// every recall step. Detections are ranked by descending score with ties kept
// in input order, and each is matched greedily to the unmatched ground truth
// of its class (and frame or video) with the highest overlap >= delta.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtube/geometry.hpp"
#include "mtube/linking.hpp"

namespace mtube {

struct GroundTruthTube {
  int tube_id = 0;
  int class_id = 0;
  int t_start = 0;
  int t_end = 0;
  std::vector<Box> boxes;  // one per frame in [t_start, t_end]

  const Box& box_at(int frame) const { return boxes.at(static_cast<std::size_t>(frame - t_start)); }
};

template <class T>
concept TubeLike = requires(const T& t, int f) {
  { t.t_start } -> std::convertible_to<int>;
  { t.t_end } -> std::convertible_to<int>;
  { t.box_at(f) } -> std::convertible_to<const Box&>;
};

// Temporal IoU times the mean per-frame box IoU over the shared frames.
template <TubeLike A, TubeLike B>
double tube_iou(const A& a, const B& b) {
  const int lo = std::max(a.t_start, b.t_start);
  const int hi = std::min(a.t_end, b.t_end);
  if (hi < lo) return 0.0;
  const double inter = hi - lo + 1;
  const double uni = std::max(a.t_end, b.t_end) - std::min(a.t_start, b.t_start) + 1;
  double spatial = 0.0;
  for (int f = lo; f <= hi; ++f) spatial += iou(a.box_at(f), b.box_at(f));
  return (inter / uni) * (spatial / inter);
}

struct PrCurve {
  std::vector<std::pair<double, double>> points;  // (recall, precision) after each detection
  std::optional<double> ap;                       // undefined without ground truth
  std::size_t num_gt = 0;
  std::size_t tp = 0;
  std::size_t fp = 0;
};

struct ApResult {
  std::map<int, PrCurve> per_class;
  std::optional<double> mean_ap;  // unweighted mean over classes with a defined AP
};

// All-point AP from true-positive flags in rank order.
inline double average_precision(std::span<const char> is_tp, std::size_t num_gt,
                                std::vector<std::pair<double, double>>* points = nullptr) {
  if (num_gt == 0) return 0.0;
  std::vector<double> rec, prec;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < is_tp.size(); ++i) {
    tp += is_tp[i] ? 1 : 0;
    rec.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
    prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  if (points) {
    points->clear();
    for (std::size_t i = 0; i < rec.size(); ++i) points->emplace_back(rec[i], prec[i]);
  }
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    ap += (rec[i] - prev_r) * prec[i];
    prev_r = rec[i];
  }
  return std::clamp(ap, 0.0, 1.0);
}

namespace detail {

template <class Det, class Gt, class ClassOf, class ScoreOf, class SameGroup, class Overlap>
ApResult match_and_score(std::span<const Det> dets, std::span<const Gt> gts, double delta,
                         ClassOf det_class, ClassOf gt_class, ScoreOf score, SameGroup same,
                         Overlap overlap) {
  std::set<int> classes;
  for (const auto& d : dets) classes.insert(det_class(d));
  for (const auto& g : gts) classes.insert(gt_class(g));

  ApResult res;
  double sum = 0.0;
  std::size_t defined = 0;
  for (int c : classes) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (det_class(dets[i]) == c) order.push_back(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return score(dets[a]) > score(dets[b]); });
    std::vector<std::size_t> cls_gts;
    for (std::size_t j = 0; j < gts.size(); ++j)
      if (gt_class(gts[j]) == c) cls_gts.push_back(j);

    std::vector<char> used(gts.size(), 0), is_tp;
    for (std::size_t i : order) {
      double best = -1.0;
      std::size_t arg = 0;
      for (std::size_t j : cls_gts) {
        if (used[j] || !same(dets[i], gts[j])) continue;
        const double o = overlap(dets[i], gts[j]);
        if (o > best) {
          best = o;
          arg = j;
        }
      }
      const bool hit = best >= delta && best >= 0.0;
      if (hit) used[arg] = 1;
      is_tp.push_back(hit ? 1 : 0);
    }

    PrCurve pr;
    pr.num_gt = cls_gts.size();
    pr.tp = static_cast<std::size_t>(std::count(is_tp.begin(), is_tp.end(), 1));
    pr.fp = is_tp.size() - pr.tp;
    if (pr.num_gt > 0) {
      pr.ap = average_precision(is_tp, pr.num_gt, &pr.points);
      sum += *pr.ap;
      ++defined;
    }
    res.per_class.emplace(c, std::move(pr));
  }
  if (defined) res.mean_ap = sum / static_cast<double>(defined);
  return res;
}

}  // namespace detail

struct FrameDetection {
  std::string video;
  int frame = 0;
  int class_id = 0;
  Box box{0.5, 0.5, 1.0, 1.0};
  double score = 0.0;
};

struct FrameGroundTruth {
  std::string video;
  int frame = 0;
  int class_id = 0;
  Box box{0.5, 0.5, 1.0, 1.0};
};

inline ApResult frame_ap(std::span<const FrameDetection> dets,
                         std::span<const FrameGroundTruth> gts, double delta = 0.5) {
  auto dcls = [](const auto& x) { return x.class_id; };
  return detail::match_and_score<FrameDetection, FrameGroundTruth>(
      dets, gts, delta, dcls, dcls, [](const FrameDetection& d) { return d.score; },
      [](const FrameDetection& d, const FrameGroundTruth& g) {
        return d.frame == g.frame && d.video == g.video;
      },
      [](const FrameDetection& d, const FrameGroundTruth& g) { return iou(d.box, g.box); });
}

struct TubeDetection {
  std::string video;
  ActionTube tube;
};

struct TubeGroundTruth {
  std::string video;
  GroundTruthTube tube;
};

inline ApResult video_ap(std::span<const TubeDetection> dets, std::span<const TubeGroundTruth> gts,
                         double delta) {
  auto cls = [](const auto& x) { return x.tube.class_id; };
  return detail::match_and_score<TubeDetection, TubeGroundTruth>(
      dets, gts, delta, cls, cls, [](const TubeDetection& d) { return d.tube.score; },
      [](const TubeDetection& d, const TubeGroundTruth& g) { return d.video == g.video; },
      [](const TubeDetection& d, const TubeGroundTruth& g) { return tube_iou(d.tube, g.tube); });
}

}  // namespace mtube
