#pragma once

// End-to-end detection at desk scale: preprocess -> per-frame features ->
// fuse -> 3D-RPN -> decode -> test-time pair-NMS -> head (bilinear pooling of
// each box, sum fusion, FC layers) -> micro-tube NMS -> linking/trimming ->
// evaluation against ground truth when available.

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mtube/geometry.hpp"
#include "mtube/harness/annotations.hpp"
#include "mtube/harness/config.hpp"
#include "mtube/harness/errors.hpp"
#include "mtube/harness/extractor.hpp"
#include "mtube/harness/pairs.hpp"
#include "mtube/harness/preprocess.hpp"
#include "mtube/harness/report.hpp"
#include "mtube/kernels.hpp"
#include "mtube/linking.hpp"
#include "mtube/model.hpp"
#include "mtube/rpn.hpp"

namespace mtube {

struct VideoInput {
  std::string video_id;
  std::vector<FeatureMap> frames;  // raw RGB, frame t at index t - 1
  std::optional<VideoAnnotation> annotation;
};

inline ModelConfig model_config(const PipelineConfig& cfg) {
  ModelConfig m;
  m.feature_channels = cfg.feature_channels;
  m.rpn_channels = cfg.rpn_channels;
  m.k = cfg.anchors.k();
  m.num_classes = cfg.num_classes;
  m.pool_h = cfg.pool_size;
  m.pool_w = cfg.pool_size;
  m.hidden = cfg.hidden;
  return m;
}

namespace detail {

template <class Fn>
auto run_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const PipelineError&) {
    throw;
  } catch (const NumericError& e) {
    throw PipelineError(stage, ErrorKind::numeric, e.what());
  } catch (const std::exception& e) {
    throw PipelineError(stage, ErrorKind::data, e.what());
  }
}

inline void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in ") + what);
}

inline Box scale_box(const Box& b, double sx, double sy) {
  return Box(b.xc() * sx, b.yc() * sy, b.w() * sx, b.h() * sy);
}

}  // namespace detail

class Pipeline {
 public:
  // `model` defaults to a freshly initialized one seeded from the config.
  explicit Pipeline(PipelineConfig cfg, std::optional<ToyModel> model = std::nullopt)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    model_ = model ? std::move(*model) : make_toy_model(model_config(cfg_), cfg_.seed);
    if (model_.config.feature_channels != cfg_.feature_channels || model_.config.k != cfg_.anchors.k() ||
        model_.config.num_classes != cfg_.num_classes)
      throw std::invalid_argument("Pipeline: model shape does not match the configuration");
    stream1_ = std::make_unique<ToyExtractor>(cfg_.feature_channels, cfg_.seed + 7);
    if (!cfg_.shared_extractor)
      stream2_ = std::make_unique<ToyExtractor>(cfg_.feature_channels, cfg_.seed + 8);
  }

  const PipelineConfig& config() const noexcept { return cfg_; }
  const ToyModel& model() const noexcept { return model_; }

  VideoDetections detect(const VideoInput& in) const {
    VideoDetections out;
    out.video_id = in.video_id;
    out.frames = static_cast<int>(in.frames.size());
    if (in.annotation && in.annotation->video_id != in.video_id)
      throw PipelineError("input", ErrorKind::data,
                          "annotation id '" + in.annotation->video_id + "' does not match video '" + in.video_id + "'");
    if (in.frames.empty()) return out;
    if (cfg_.head == HeadMode::oracle && !in.annotation)
      throw PipelineError("head", ErrorKind::usage, "the oracle head needs ground-truth annotations");

    const double W = cfg_.image_width, H = cfg_.image_height;
    const double sx = W / in.frames.front().width(), sy = H / in.frames.front().height();

    const PreprocessConfig pc{cfg_.image_width, cfg_.image_height, {103.939, 116.779, 123.68}};
    std::vector<FeatureMap> pre = detail::run_stage("preprocess", [&] {
      std::vector<FeatureMap> v;
      for (const auto& f : in.frames) {
        if (f.width() != in.frames.front().width() || f.height() != in.frames.front().height())
          throw ValidationError("frames differ in size");
        detail::require_finite(f.values(), "input frame");
        v.push_back(preprocess(f, pc));
      }
      return v;
    });

    std::vector<std::optional<FeatureMap>> feat1(pre.size()), feat2(pre.size());
    auto features = [&](int t, bool second) -> const FeatureMap& {
      auto& cache = (second && stream2_) ? feat2 : feat1;
      const auto& ex = (second && stream2_) ? *stream2_ : *stream1_;
      auto& slot = cache[static_cast<std::size_t>(t - 1)];
      if (!slot) {
        slot = detail::run_stage("extract", [&] {
          auto f = ex.extract(pre[static_cast<std::size_t>(t - 1)]);
          detail::require_finite(f.values(), "features");
          return f;
        });
      }
      return *slot;
    };

    std::vector<std::vector<MicroTube>> steps;
    for (const auto& [t1, t2] : test_frames(out.frames, cfg_.delta)) {
      const FeatureMap& f1 = features(t1, false);
      const FeatureMap& f2 = features(t2, true);
      const auto anchors = generate_anchor_pairs(f1.height(), f1.width(), stream1_->stride(), cfg_.anchors);

      std::vector<GroundTruthPair> gts;
      if (in.annotation) {
        const auto& a = *in.annotation;
        for (const auto& r1 : a.records) {
          if (r1.fno != t1) continue;
          if (const auto* r2 = a.find(r1.tid, t2))
            gts.push_back({r1.tid, {detail::scale_box(r1.box, sx, sy), detail::scale_box(r2->box, sx, sy)}});
        }
      }
      const int gt_class = in.annotation ? in.annotation->class_id : 0;

      const auto props = detail::run_stage("rpn", [&] {
        const auto rout = rpn_forward(fuse(f1, f2, cfg_.fusion), model_.rpn);
        detail::require_finite(rout.offsets.values(), "proposal offsets");
        detail::require_finite(rout.actionness.values(), "actionness");
        auto decoded = decode_proposals(anchors, rout, W, H);
        // The oracle replaces actionness by the best mean pair-IoU too.
        if (cfg_.head == HeadMode::oracle)
          for (auto& p : decoded) p.score = best_overlap(p.pair, gts).first;
        return select_test(decoded, cfg_.rpn_nms, cfg_.test_keep);
      });

      auto mts = detail::run_stage("head", [&] {
        std::vector<MicroTube> v;
        std::vector<ScoredPair> scored;
        for (const auto& p : props) {
          auto [scores, octets] = cfg_.head == HeadMode::oracle
                                      ? oracle_head(p.pair, gts, gt_class)
                                      : learned_head(f1, f2, p.pair);
          detail::require_finite(scores, "class scores");
          std::size_t best = 1;
          for (std::size_t c = 2; c < scores.size(); ++c)
            if (scores[c] > scores[best]) best = c;
          if (!(scores[best] > 0.0)) continue;
          OffsetOctet phi = octets[best - 1];
          for (int j : {2, 3, 6, 7}) phi[j] = std::min(phi[j], kMaxLogScale);
          auto clipped = clip_pair(decode_offsets(p.pair, phi), W, H);
          if (!clipped) continue;
          scored.push_back({*clipped, scores[best]});
          v.push_back({*clipped, t1, cfg_.delta, std::move(scores)});
        }
        std::vector<MicroTube> kept;
        for (std::size_t i : pair_nms_indices(scored, cfg_.det_nms, cfg_.det_keep)) kept.push_back(v[i]);
        for (auto& m : kept)
          m.pair = {detail::scale_box(m.pair.b1, 1.0 / sx, 1.0 / sy),
                    detail::scale_box(m.pair.b2, 1.0 / sx, 1.0 / sy)};
        return kept;
      });
      for (const auto& m : mts) out.micro_tubes.push_back(m);
      steps.push_back(std::move(mts));
    }

    detail::run_stage("link", [&] {
      auto links = link_video(steps, cfg_.num_classes, cfg_.linking());
      out.tubes = std::move(links.tubes);
      out.edge_stages = links.edge_stages;
      return 0;
    });
    return out;
  }

 private:
  using HeadOutput = std::pair<std::vector<double>, std::vector<OffsetOctet>>;

  static std::pair<double, const GroundTruthPair*> best_overlap(const BoxPair& prop,
                                                               std::span<const GroundTruthPair> gts) {
    double best = 0.0;
    const GroundTruthPair* arg = nullptr;
    for (const auto& g : gts) {
      const double m = pair_iou(g.pair, prop).mean;
      if (m > best) {
        best = m;
        arg = &g;
      }
    }
    return {best, arg};
  }

  // Scores a proposal by its best mean pair-IoU m with a ground-truth pair:
  // m for the video's class, 1 - m for background. Proposals with
  // m >= oracle_min_overlap regress exactly onto that ground truth.
  HeadOutput oracle_head(const BoxPair& prop, std::span<const GroundTruthPair> gts,
                         int gt_class) const {
    std::vector<double> scores(static_cast<std::size_t>(cfg_.num_classes) + 1, 0.0);
    std::vector<OffsetOctet> octets(static_cast<std::size_t>(cfg_.num_classes));
    scores[0] = 1.0;
    if (gt_class < 1 || gt_class > cfg_.num_classes || gts.empty()) return {scores, octets};
    const auto [best, arg] = best_overlap(prop, gts);
    scores[static_cast<std::size_t>(gt_class)] = best;
    scores[0] = 1.0 - best;
    if (arg && best >= cfg_.oracle_min_overlap)
      octets[static_cast<std::size_t>(gt_class - 1)] = encode_offsets(prop, arg->pair);
    return {scores, octets};
  }

  HeadOutput learned_head(const FeatureMap& f1, const FeatureMap& f2, const BoxPair& prop) const {
    const auto t = head_forward(model_.head, model_.config, f1, f2, prop, stream1_->stride());
    return {softmax(t.cls_logits), split_octets(t.reg)};
  }

  PipelineConfig cfg_;
  ToyModel model_;
  std::unique_ptr<FeatureExtractor> stream1_;
  std::unique_ptr<FeatureExtractor> stream2_;
};

inline DetectionReport run_pipeline(const PipelineConfig& cfg, std::span<const VideoInput> videos,
                                    std::optional<ToyModel> model = std::nullopt) {
  Pipeline p(cfg, std::move(model));
  DetectionReport r;
  std::vector<VideoAnnotation> anns;
  bool annotated = false;
  for (const auto& v : videos) {
    r.videos.push_back(p.detect(v));
    if (v.annotation) {
      anns.push_back(*v.annotation);
      annotated = true;
    }
  }
  if (annotated) {
    r.metrics = detail::run_stage("eval", [&] {
      return evaluate_report(r.videos, anns, cfg.num_classes, cfg.frame_ap_delta, cfg.video_ap_deltas);
    });
  }
  return r;
}

}  // namespace mtube
