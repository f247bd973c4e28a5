#pragma once

// Detection report JSON (schema 1).
//
//   { "schema": 1,
//     "videos": [ { "video_id", "frames", "edge_stages",
//                   "micro_tubes": [ { "t", "delta", "b1", "b2", "scores" } ],
//                   "tubes": [ { "class", "t_start", "t_end", "boxes", "score" } ] } ],
//     "metrics": { ... } }
//
// Boxes are corner-form arrays [x1, y1, x2, y2].

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mtube/eval.hpp"
#include "mtube/geometry.hpp"
#include "mtube/harness/annotations.hpp"
#include "mtube/harness/errors.hpp"
#include "mtube/linking.hpp"

namespace mtube {

inline constexpr int kReportSchema = 1;

struct VideoDetections {
  std::string video_id;
  int frames = 0;
  std::size_t edge_stages = 0;
  std::vector<MicroTube> micro_tubes;
  std::vector<ActionTube> tubes;
};

struct MetricsReport {
  int num_classes = 1;
  double frame_delta = 0.5;
  ApResult frame;
  std::vector<std::pair<double, ApResult>> video;  // per delta
};

struct DetectionReport {
  std::vector<VideoDetections> videos;
  std::optional<MetricsReport> metrics;
};

inline nlohmann::json box_json(const Box& b) { return {b.x1(), b.y1(), b.x2(), b.y2()}; }

inline Box box_from_json(const nlohmann::json& j) {
  const auto c = j.get<std::vector<double>>();
  if (c.size() != 4) throw ValidationError("report: a box needs 4 numbers");
  if (!(c[2] > c[0]) || !(c[3] > c[1])) throw ValidationError("report: degenerate box");
  return Box::from_corners(c[0], c[1], c[2], c[3]);
}

inline nlohmann::json micro_tube_json(const MicroTube& m) {
  return {{"t", m.t}, {"delta", m.delta}, {"b1", box_json(m.pair.b1)},
          {"b2", box_json(m.pair.b2)}, {"scores", m.scores}};
}

inline nlohmann::json tube_json(const ActionTube& t) {
  nlohmann::json boxes = nlohmann::json::array();
  for (const auto& b : t.boxes) boxes.push_back(box_json(b));
  return {{"class", t.class_id}, {"t_start", t.t_start}, {"t_end", t.t_end},
          {"boxes", boxes}, {"score", t.score}};
}

inline nlohmann::json ap_json(const ApResult& r, int num_classes) {
  nlohmann::json per = nlohmann::json::object();
  for (int c = 1; c <= num_classes; ++c) {
    auto it = r.per_class.find(c);
    nlohmann::json e;
    if (it == r.per_class.end() || !it->second.ap) {
      e["ap"] = nullptr;
    } else {
      e["ap"] = *it->second.ap;
    }
    e["num_gt"] = it == r.per_class.end() ? 0 : it->second.num_gt;
    e["tp"] = it == r.per_class.end() ? 0 : it->second.tp;
    e["fp"] = it == r.per_class.end() ? 0 : it->second.fp;
    per[std::to_string(c)] = e;
  }
  return {{"per_class", per}, {"map", r.mean_ap ? nlohmann::json(*r.mean_ap) : nlohmann::json(nullptr)}};
}

inline nlohmann::json metrics_json(const MetricsReport& m) {
  nlohmann::json video = nlohmann::json::array();
  for (const auto& [d, r] : m.video) {
    auto j = ap_json(r, m.num_classes);
    j["delta"] = d;
    video.push_back(j);
  }
  auto frame = ap_json(m.frame, m.num_classes);
  frame["delta"] = m.frame_delta;
  return {{"frame_ap", frame}, {"video_ap", video}};
}

inline nlohmann::json report_json(const DetectionReport& r) {
  nlohmann::json vids = nlohmann::json::array();
  for (const auto& v : r.videos) {
    nlohmann::json mts = nlohmann::json::array();
    for (const auto& m : v.micro_tubes) mts.push_back(micro_tube_json(m));
    nlohmann::json tubes = nlohmann::json::array();
    for (const auto& t : v.tubes) tubes.push_back(tube_json(t));
    vids.push_back({{"video_id", v.video_id}, {"frames", v.frames}, {"edge_stages", v.edge_stages},
                    {"micro_tubes", mts}, {"tubes", tubes}});
  }
  nlohmann::json j{{"schema", kReportSchema}, {"videos", vids}};
  if (r.metrics) j["metrics"] = metrics_json(*r.metrics);
  return j;
}

inline std::string serialize_report(const DetectionReport& r) { return report_json(r).dump(2) + "\n"; }

// Reads micro-tubes and tubes back. Tubes come back without member
// micro-tubes; metrics are not read.
inline DetectionReport parse_report(const nlohmann::json& j) {
  try {
    if (!j.contains("schema") || j.at("schema").get<int>() != kReportSchema)
      throw ValidationError("report: unsupported or missing schema version");
    DetectionReport r;
    for (const auto& jv : j.at("videos")) {
      VideoDetections v;
      v.video_id = jv.at("video_id").get<std::string>();
      v.frames = jv.at("frames").get<int>();
      if (jv.contains("edge_stages")) v.edge_stages = jv.at("edge_stages").get<std::size_t>();
      for (const auto& jm : jv.at("micro_tubes")) {
        MicroTube m{{box_from_json(jm.at("b1")), box_from_json(jm.at("b2"))},
                    jm.at("t").get<int>(), jm.value("delta", 1),
                    jm.at("scores").get<std::vector<double>>()};
        v.micro_tubes.push_back(std::move(m));
      }
      if (jv.contains("tubes")) {
        for (const auto& jt : jv.at("tubes")) {
          ActionTube t;
          t.class_id = jt.at("class").get<int>();
          t.t_start = jt.at("t_start").get<int>();
          t.t_end = jt.at("t_end").get<int>();
          t.score = jt.at("score").get<double>();
          for (const auto& jb : jt.at("boxes")) t.boxes.push_back(box_from_json(jb));
          if (t.t_end < t.t_start ||
              t.boxes.size() != static_cast<std::size_t>(t.t_end - t.t_start + 1))
            throw ValidationError("report: tube box count does not match its extent");
          v.tubes.push_back(std::move(t));
        }
      }
      r.videos.push_back(std::move(v));
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("report: ") + e.what());
  }
}

// Groups micro-tubes into linking steps t = 1, 3, 5, ... up to `frames`;
// steps without detections stay empty.
inline std::vector<std::vector<MicroTube>> group_steps(const std::vector<MicroTube>& mts, int frames) {
  std::map<int, std::vector<MicroTube>> by_t;
  for (const auto& m : mts) {
    if (m.t < 1 || m.t % kLinkStepFrames != 1 || m.t + m.delta > frames)
      throw ValidationError("report: micro-tube at frame " + std::to_string(m.t) + " is not on a linking step");
    by_t[m.t].push_back(m);
  }
  std::vector<std::vector<MicroTube>> steps;
  for (int t = 1; t < frames; t += kLinkStepFrames) steps.push_back(by_t[t]);
  while (!steps.empty() && steps.back().empty()) steps.pop_back();
  return steps;
}

// Each micro-tube contributes one detection per action class with a
// positive score, on each of its two frames.
inline std::vector<FrameDetection> frame_detections(const VideoDetections& v) {
  std::vector<FrameDetection> out;
  for (const auto& m : v.micro_tubes) {
    for (std::size_t c = 1; c < m.scores.size(); ++c) {
      if (!(m.scores[c] > 0.0)) continue;
      out.push_back({v.video_id, m.t, static_cast<int>(c), m.pair.b1, m.scores[c]});
      out.push_back({v.video_id, m.t + m.delta, static_cast<int>(c), m.pair.b2, m.scores[c]});
    }
  }
  return out;
}

inline std::vector<FrameGroundTruth> frame_ground_truth(const VideoAnnotation& a) {
  std::vector<FrameGroundTruth> out;
  for (const auto& r : a.records) out.push_back({a.video_id, r.fno, a.class_id, r.box});
  return out;
}

inline MetricsReport evaluate_report(const std::vector<VideoDetections>& videos,
                                     const std::vector<VideoAnnotation>& annotations,
                                     int num_classes, double frame_delta,
                                     const std::vector<double>& video_deltas) {
  std::vector<FrameDetection> fdets;
  std::vector<FrameGroundTruth> fgts;
  std::vector<TubeDetection> tdets;
  std::vector<TubeGroundTruth> tgts;
  for (const auto& v : videos) {
    for (auto& d : frame_detections(v)) fdets.push_back(std::move(d));
    for (const auto& t : v.tubes) tdets.push_back({v.video_id, t});
  }
  for (const auto& a : annotations) {
    for (auto& g : frame_ground_truth(a)) fgts.push_back(std::move(g));
    for (auto& t : to_tubes(a)) tgts.push_back({a.video_id, std::move(t)});
  }
  MetricsReport m;
  m.num_classes = num_classes;
  m.frame_delta = frame_delta;
  m.frame = frame_ap(fdets, fgts, frame_delta);
  for (double d : video_deltas) m.video.emplace_back(d, video_ap(tdets, tgts, d));
  return m;
}

}  // namespace mtube
