#pragma once

// Ground-truth annotation files.
//
//   video <id> <frames> <class>
//   <fno> <tid> <xc> <yc> <w> <h>
//   ...
//
// Blank lines and lines starting with '#' are ignored. Frame numbers are
// 1-based; boxes are center/size in pixels.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "mtube/eval.hpp"
#include "mtube/geometry.hpp"
#include "mtube/harness/errors.hpp"

namespace mtube {

struct AnnotationRecord {
  int fno = 0;
  int tid = 0;
  Box box{0.5, 0.5, 1.0, 1.0};

  bool operator==(const AnnotationRecord&) const = default;
};

struct VideoAnnotation {
  std::string video_id;
  int frames = 0;
  int class_id = 0;
  std::vector<AnnotationRecord> records;

  bool operator==(const VideoAnnotation&) const = default;

  const AnnotationRecord* find(int tid, int fno) const {
    for (const auto& r : records)
      if (r.tid == tid && r.fno == fno) return &r;
    return nullptr;
  }
};

inline void validate(const VideoAnnotation& a) {
  if (a.video_id.empty()) throw ValidationError("video id must be non-empty");
  if (a.frames < 1) throw ValidationError("video " + a.video_id + ": frame count must be >= 1");
  std::set<std::pair<int, int>> seen;
  for (const auto& r : a.records) {
    if (r.fno < 1 || r.fno > a.frames)
      throw ValidationError("video " + a.video_id + ": frame " + std::to_string(r.fno) +
                            " outside [1, " + std::to_string(a.frames) + "]");
    if (!seen.emplace(r.tid, r.fno).second)
      throw ValidationError("video " + a.video_id + ": duplicate record for tube " +
                            std::to_string(r.tid) + " frame " + std::to_string(r.fno));
  }
}

// Groups records by tube id. Each tube must cover a contiguous frame range.
inline std::vector<GroundTruthTube> to_tubes(const VideoAnnotation& a) {
  std::map<int, std::map<int, Box>> by_tid;
  for (const auto& r : a.records) by_tid[r.tid].emplace(r.fno, r.box);
  std::vector<GroundTruthTube> tubes;
  for (const auto& [tid, frames] : by_tid) {
    GroundTruthTube t;
    t.tube_id = tid;
    t.class_id = a.class_id;
    t.t_start = frames.begin()->first;
    t.t_end = frames.rbegin()->first;
    if (static_cast<int>(frames.size()) != t.t_end - t.t_start + 1)
      throw ValidationError("video " + a.video_id + ": tube " + std::to_string(tid) +
                            " has a gap in its frame range");
    for (const auto& [f, b] : frames) t.boxes.push_back(b);
    tubes.push_back(std::move(t));
  }
  return tubes;
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline double parse_number(std::string_view tok, std::size_t line) {
  double v = 0.0;
  const auto* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, v);
  if (ec != std::errc{} || ptr != end || !std::isfinite(v))
    throw ParseError(line, "expected a number, got '" + std::string(tok) + "'");
  return v;
}

inline int parse_int(std::string_view tok, std::size_t line) {
  const double v = parse_number(tok, line);
  if (v != std::floor(v) || std::abs(v) > 2e9)
    throw ParseError(line, "expected an integer, got '" + std::string(tok) + "'");
  return static_cast<int>(v);
}

inline std::string format_number(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

inline std::vector<VideoAnnotation> parse_annotations(std::istream& in) {
  std::vector<VideoAnnotation> videos;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto toks = detail::split_ws(line);
    if (toks.empty() || toks.front().front() == '#') continue;
    if (toks.front() == "video") {
      if (toks.size() != 4) throw ParseError(lineno, "header must be 'video <id> <frames> <class>'");
      VideoAnnotation a;
      a.video_id = std::string(toks[1]);
      a.frames = detail::parse_int(toks[2], lineno);
      a.class_id = detail::parse_int(toks[3], lineno);
      videos.push_back(std::move(a));
      continue;
    }
    if (videos.empty()) throw ParseError(lineno, "record before any video header");
    if (toks.size() != 6) throw ParseError(lineno, "record must have 6 fields: fno tid xc yc w h");
    AnnotationRecord r;
    r.fno = detail::parse_int(toks[0], lineno);
    r.tid = detail::parse_int(toks[1], lineno);
    double v[4];
    for (int i = 0; i < 4; ++i) v[i] = detail::parse_number(toks[2 + i], lineno);
    if (!(v[2] > 0.0) || !(v[3] > 0.0))
      throw ValidationError("line " + std::to_string(lineno) + ": box width and height must be positive");
    r.box = Box(v[0], v[1], v[2], v[3]);
    videos.back().records.push_back(r);
  }
  for (const auto& a : videos) validate(a);
  return videos;
}

inline std::vector<VideoAnnotation> parse_annotations_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open annotation file '" + path + "'");
  return parse_annotations(in);
}

// Numbers are written in shortest round-trip form, so parsing the output
// reproduces the input exactly.
inline void write_annotations(std::ostream& out, const std::vector<VideoAnnotation>& videos) {
  using detail::format_number;
  for (const auto& a : videos) {
    out << "video " << a.video_id << ' ' << a.frames << ' ' << a.class_id << '\n';
    for (const auto& r : a.records) {
      out << r.fno << ' ' << r.tid << ' ' << format_number(r.box.xc()) << ' '
          << format_number(r.box.yc()) << ' ' << format_number(r.box.w()) << ' '
          << format_number(r.box.h()) << '\n';
    }
  }
}

inline std::string write_annotations(const std::vector<VideoAnnotation>& videos) {
  std::ostringstream os;
  write_annotations(os, videos);
  return os.str();
}

}  // namespace mtube
