#pragma once

// Single-batch fitting data: one synthetic two-frame clip with one blob,
// preprocessed and run through the toy extractor.

#include <cstdint>

#include "mtube/harness/config.hpp"
#include "mtube/harness/extractor.hpp"
#include "mtube/harness/pairs.hpp"
#include "mtube/harness/pipeline.hpp"
#include "mtube/harness/preprocess.hpp"
#include "mtube/harness/synth.hpp"
#include "mtube/model.hpp"
#include "mtube/training.hpp"

namespace mtube {

inline TrainingBatch toy_training_batch(const PipelineConfig& cfg, const ToyModel& model) {
  const auto spec = random_synth_spec(cfg.seed, 2, cfg.image_width, cfg.image_height, 1);
  const auto video = synth_video(spec);
  const ToyExtractor ex(cfg.feature_channels, cfg.seed + 7);
  const PreprocessConfig pc{cfg.image_width, cfg.image_height, {103.939, 116.779, 123.68}};
  auto f1 = ex.extract(preprocess(video.frames[0], pc));
  auto f2 = ex.extract(preprocess(video.frames[1], pc));
  const auto pairs = make_pairs(video.annotation, SamplingScheme::s11);
  return make_training_batch(model, std::move(f1), std::move(f2), pairs.front().gts,
                             video.annotation.class_id, cfg.image_width, cfg.image_height,
                             ex.stride(), cfg.anchors, cfg.sampler(), cfg.fusion);
}

inline ToyModel toy_model(const PipelineConfig& cfg) {
  return make_toy_model(model_config(cfg), cfg.seed);
}

}  // namespace mtube
