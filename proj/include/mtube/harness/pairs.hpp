#pragma once

// Training frame-pair schemes.
//
//   scheme 11: {1,2}, {2,3}, {3,4}, ...   overlapping consecutive pairs
//   scheme 21: {1,2}, {3,4}, ...          disjoint consecutive pairs
//   scheme 32: {1,3}, {4,6}, ...          gap-2 pairs with stride 3

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mtube/harness/annotations.hpp"
#include "mtube/rpn.hpp"

namespace mtube {

enum class SamplingScheme { s11 = 11, s21 = 21, s32 = 32 };

inline SamplingScheme scheme_from_int(int code) {
  switch (code) {
    case 11: return SamplingScheme::s11;
    case 21: return SamplingScheme::s21;
    case 32: return SamplingScheme::s32;
    default: throw std::invalid_argument("unknown sampling scheme " + std::to_string(code));
  }
}

struct FramePair {
  int t1 = 0;
  int t2 = 0;
  std::vector<GroundTruthPair> gts;  // one per tube present on both frames
};

inline std::vector<std::pair<int, int>> scheme_frames(int frames, SamplingScheme scheme) {
  int gap = 1, stride = 1;
  switch (scheme) {
    case SamplingScheme::s11: gap = 1; stride = 1; break;
    case SamplingScheme::s21: gap = 1; stride = 2; break;
    case SamplingScheme::s32: gap = 2; stride = 3; break;
    default: throw std::invalid_argument("unknown sampling scheme");
  }
  std::vector<std::pair<int, int>> out;
  for (int t = 1; t + gap <= frames; t += stride) out.emplace_back(t, t + gap);
  return out;
}

inline std::vector<FramePair> make_pairs(const VideoAnnotation& a, SamplingScheme scheme) {
  std::map<int, std::map<int, Box>> by_tid;
  for (const auto& r : a.records) by_tid[r.tid].emplace(r.fno, r.box);
  std::vector<FramePair> out;
  for (const auto& [t1, t2] : scheme_frames(a.frames, scheme)) {
    FramePair fp{t1, t2, {}};
    for (const auto& [tid, boxes] : by_tid) {
      auto i1 = boxes.find(t1);
      auto i2 = boxes.find(t2);
      if (i1 == boxes.end() || i2 == boxes.end()) continue;
      fp.gts.push_back({tid, BoxPair{i1->second, i2->second}});
    }
    out.push_back(std::move(fp));
  }
  return out;
}

// Test-time pairs {t, t + delta} at linking steps t = 1, 3, 5, ...
inline std::vector<std::pair<int, int>> test_frames(int frames, int delta) {
  if (delta < 1) throw std::invalid_argument("test_frames: delta must be >= 1");
  std::vector<std::pair<int, int>> out;
  for (int t = 1; t + delta <= frames; t += 2) out.emplace_back(t, t + delta);
  return out;
}

}  // namespace mtube
