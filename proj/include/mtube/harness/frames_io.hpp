#pragma once

// Binary frame container for raw videos.
//
//   "MTFRAMES" u32 version=1 u32 num_videos
//   per video: u32 id_len, id bytes, u32 frames, u32 channels, u32 height,
//              u32 width, then frames*channels*height*width little-endian f64
//
// Frames are stored in order t = 1..frames.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "mtube/harness/errors.hpp"
#include "mtube/kernels.hpp"

namespace mtube {

static_assert(std::endian::native == std::endian::little, "frame files assume a little-endian host");

struct RawVideo {
  std::string video_id;
  std::vector<FeatureMap> frames;
};

namespace detail {

inline constexpr char kFramesMagic[8] = {'M', 'T', 'F', 'R', 'A', 'M', 'E', 'S'};

inline void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw ValidationError("frames: truncated file");
  return v;
}

}  // namespace detail

inline void write_frames(std::ostream& out, const std::vector<RawVideo>& videos) {
  out.write(detail::kFramesMagic, 8);
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(videos.size()));
  for (const auto& v : videos) {
    detail::put_u32(out, static_cast<std::uint32_t>(v.video_id.size()));
    out.write(v.video_id.data(), static_cast<std::streamsize>(v.video_id.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(v.frames.size()));
    const FeatureMap empty;
    const FeatureMap& f0 = v.frames.empty() ? empty : v.frames.front();
    detail::put_u32(out, static_cast<std::uint32_t>(f0.channels()));
    detail::put_u32(out, static_cast<std::uint32_t>(f0.height()));
    detail::put_u32(out, static_cast<std::uint32_t>(f0.width()));
    for (const auto& f : v.frames) {
      if (!f.same_shape(f0)) throw ValidationError("frames: all frames of a video must share one shape");
      out.write(reinterpret_cast<const char*>(f.values().data()),
                static_cast<std::streamsize>(f.size() * sizeof(double)));
    }
  }
}

inline std::vector<RawVideo> read_frames(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, detail::kFramesMagic, 8) != 0)
    throw ValidationError("frames: not a frame file");
  if (detail::get_u32(in) != 1) throw ValidationError("frames: unsupported version");
  const std::uint32_t n = detail::get_u32(in);
  std::vector<RawVideo> videos;
  for (std::uint32_t i = 0; i < n; ++i) {
    RawVideo v;
    v.video_id.resize(detail::get_u32(in));
    if (!in.read(v.video_id.data(), static_cast<std::streamsize>(v.video_id.size())))
      throw ValidationError("frames: truncated file");
    const std::uint32_t frames = detail::get_u32(in);
    const auto c = static_cast<int>(detail::get_u32(in));
    const auto h = static_cast<int>(detail::get_u32(in));
    const auto w = static_cast<int>(detail::get_u32(in));
    if (frames > 0 && (c < 1 || h < 1 || w < 1)) throw ValidationError("frames: empty frame shape");
    for (std::uint32_t t = 0; t < frames; ++t) {
      std::vector<double> values(static_cast<std::size_t>(c) * h * w);
      if (!in.read(reinterpret_cast<char*>(values.data()),
                   static_cast<std::streamsize>(values.size() * sizeof(double))))
        throw ValidationError("frames: truncated file");
      v.frames.emplace_back(c, h, w, std::move(values));
    }
    videos.push_back(std::move(v));
  }
  return videos;
}

inline void write_frames_file(const std::string& path, const std::vector<RawVideo>& videos) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  write_frames(out, videos);
}

inline std::vector<RawVideo> read_frames_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open frame file '" + path + "'");
  return read_frames(in);
}

}  // namespace mtube
