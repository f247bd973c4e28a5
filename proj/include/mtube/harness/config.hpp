#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtube/geometry.hpp"
#include "mtube/harness/errors.hpp"
#include "mtube/harness/pairs.hpp"
#include "mtube/kernels.hpp"
#include "mtube/linking.hpp"
#include "mtube/loss.hpp"
#include "mtube/rpn.hpp"

namespace mtube {

enum class HeadMode { oracle, learned };

struct PipelineConfig {
  int image_width = 800;
  int image_height = 600;
  AnchorConfig anchors;
  FusionKind fusion = FusionKind::sum;

  // Proposal sampling.
  double pos_iou = 0.5;
  double neg_iou = 0.3;
  std::size_t batch_size = 256;
  PositiveRule positive_rule = PositiveRule::both_boxes;

  // Test-time selection.
  std::size_t test_keep = kDefaultTestKeep;
  double rpn_nms = 0.7;
  double det_nms = 0.3;
  std::size_t det_keep = 100;  // micro-tubes kept per linking step

  int delta = 1;
  int scheme = 21;
  LossWeights loss_weights;

  double lambda_o = 1.0;
  std::map<int, double> class_lambda;
  std::size_t max_paths = 3;
  std::optional<double> trim_threshold;
  double trim_relative = 0.5;
  std::size_t trim_min_len = 2;

  double flip_prob = 0.5;

  int feature_channels = 8;
  int rpn_channels = 256;
  int hidden = 64;
  int pool_size = 7;
  int num_classes = 1;
  bool shared_extractor = true;
  HeadMode head = HeadMode::oracle;
  double oracle_min_overlap = 0.3;

  double frame_ap_delta = 0.5;
  std::vector<double> video_ap_deltas{0.1, 0.2, 0.3, 0.4, 0.5};

  std::size_t train_steps = 500;
  double learning_rate = 0.05;

  std::uint64_t seed = 0;

  void validate() const {
    auto unit = [](double v, const char* name) {
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument(std::string(name) + " must lie in [0, 1]");
    };
    unit(pos_iou, "pos_iou");
    unit(neg_iou, "neg_iou");
    unit(rpn_nms, "rpn_nms");
    unit(det_nms, "det_nms");
    unit(flip_prob, "flip_prob");
    unit(trim_relative, "trim_relative");
    unit(oracle_min_overlap, "oracle_min_overlap");
    unit(frame_ap_delta, "frame_ap_delta");
    for (double d : video_ap_deltas) unit(d, "video_ap_deltas");
    if (trim_threshold) unit(*trim_threshold, "trim_threshold");
    if (!(neg_iou < pos_iou)) throw std::invalid_argument("neg_iou must be below pos_iou");
    if (delta < 1) throw std::invalid_argument("delta must be >= 1");
    if (image_width < 1 || image_height < 1) throw std::invalid_argument("image size must be positive");
    if (anchors.scales.empty() || anchors.ratios.empty())
      throw std::invalid_argument("anchor scales and ratios must be non-empty");
    if (num_classes < 1) throw std::invalid_argument("num_classes must be >= 1");
    if (lambda_o < 0.0) throw std::invalid_argument("lambda_o must be non-negative");
    scheme_from_int(scheme);
    loss_weights.validate();
  }

  LinkingConfig linking() const {
    LinkingConfig lc;
    lc.energy.lambda_o = lambda_o;
    lc.class_lambda = class_lambda;
    lc.max_paths = max_paths;
    lc.trim.threshold = trim_threshold;
    lc.trim.relative = trim_relative;
    lc.trim.min_len = trim_min_len;
    return lc;
  }

  SamplerConfig sampler() const {
    return {pos_iou, neg_iou, batch_size, positive_rule, seed};
  }
};

inline nlohmann::json to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["image_width"] = c.image_width;
  j["image_height"] = c.image_height;
  j["anchor_scales"] = c.anchors.scales;
  j["anchor_ratios"] = c.anchors.ratios;
  j["fusion"] = c.fusion == FusionKind::sum ? "sum" : "mean";
  j["pos_iou"] = c.pos_iou;
  j["neg_iou"] = c.neg_iou;
  j["batch_size"] = c.batch_size;
  j["positive_rule"] = c.positive_rule == PositiveRule::both_boxes ? "both" : "mean";
  j["test_keep"] = c.test_keep;
  j["rpn_nms"] = c.rpn_nms;
  j["det_nms"] = c.det_nms;
  j["det_keep"] = c.det_keep;
  j["delta"] = c.delta;
  j["scheme"] = c.scheme;
  j["loss_weights"] = {c.loss_weights.e_cls, c.loss_weights.e_loc, c.loss_weights.m_cls,
                       c.loss_weights.m_loc};
  j["lambda_o"] = c.lambda_o;
  nlohmann::json cl = nlohmann::json::object();
  for (const auto& [k, v] : c.class_lambda) cl[std::to_string(k)] = v;
  j["class_lambda"] = cl;
  j["max_paths"] = c.max_paths;
  j["trim_threshold"] = c.trim_threshold ? nlohmann::json(*c.trim_threshold) : nlohmann::json(nullptr);
  j["trim_relative"] = c.trim_relative;
  j["trim_min_len"] = c.trim_min_len;
  j["flip_prob"] = c.flip_prob;
  j["feature_channels"] = c.feature_channels;
  j["rpn_channels"] = c.rpn_channels;
  j["hidden"] = c.hidden;
  j["pool_size"] = c.pool_size;
  j["num_classes"] = c.num_classes;
  j["shared_extractor"] = c.shared_extractor;
  j["head"] = c.head == HeadMode::oracle ? "oracle" : "learned";
  j["oracle_min_overlap"] = c.oracle_min_overlap;
  j["frame_ap_delta"] = c.frame_ap_delta;
  j["video_ap_deltas"] = c.video_ap_deltas;
  j["train_steps"] = c.train_steps;
  j["learning_rate"] = c.learning_rate;
  j["seed"] = c.seed;
  return j;
}

// Keys present in `j` override the corresponding fields of `c`; unknown keys
// are rejected.
inline void apply_json(PipelineConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "image_width") c.image_width = v.get<int>();
      else if (key == "image_height") c.image_height = v.get<int>();
      else if (key == "anchor_scales") c.anchors.scales = v.get<std::vector<double>>();
      else if (key == "anchor_ratios") c.anchors.ratios = v.get<std::vector<double>>();
      else if (key == "fusion") {
        const auto s = v.get<std::string>();
        if (s != "sum" && s != "mean") throw ValidationError("config: fusion must be sum or mean");
        c.fusion = s == "sum" ? FusionKind::sum : FusionKind::mean;
      } else if (key == "pos_iou") c.pos_iou = v.get<double>();
      else if (key == "neg_iou") c.neg_iou = v.get<double>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "positive_rule") {
        const auto s = v.get<std::string>();
        if (s != "both" && s != "mean") throw ValidationError("config: positive_rule must be both or mean");
        c.positive_rule = s == "both" ? PositiveRule::both_boxes : PositiveRule::mean_iou;
      } else if (key == "test_keep") c.test_keep = v.get<std::size_t>();
      else if (key == "rpn_nms") c.rpn_nms = v.get<double>();
      else if (key == "det_nms") c.det_nms = v.get<double>();
      else if (key == "det_keep") c.det_keep = v.get<std::size_t>();
      else if (key == "delta") c.delta = v.get<int>();
      else if (key == "scheme") c.scheme = v.get<int>();
      else if (key == "loss_weights") {
        const auto w = v.get<std::vector<double>>();
        if (w.size() != 4) throw ValidationError("config: loss_weights needs 4 entries");
        c.loss_weights = {w[0], w[1], w[2], w[3]};
      } else if (key == "lambda_o") c.lambda_o = v.get<double>();
      else if (key == "class_lambda") {
        c.class_lambda.clear();
        for (const auto& [ck, cv] : v.items()) c.class_lambda[std::stoi(ck)] = cv.get<double>();
      } else if (key == "max_paths") c.max_paths = v.get<std::size_t>();
      else if (key == "trim_threshold") {
        if (v.is_null()) c.trim_threshold.reset();
        else c.trim_threshold = v.get<double>();
      } else if (key == "trim_relative") c.trim_relative = v.get<double>();
      else if (key == "trim_min_len") c.trim_min_len = v.get<std::size_t>();
      else if (key == "flip_prob") c.flip_prob = v.get<double>();
      else if (key == "feature_channels") c.feature_channels = v.get<int>();
      else if (key == "rpn_channels") c.rpn_channels = v.get<int>();
      else if (key == "hidden") c.hidden = v.get<int>();
      else if (key == "pool_size") c.pool_size = v.get<int>();
      else if (key == "num_classes") c.num_classes = v.get<int>();
      else if (key == "shared_extractor") c.shared_extractor = v.get<bool>();
      else if (key == "head") {
        const auto s = v.get<std::string>();
        if (s != "oracle" && s != "learned") throw ValidationError("config: head must be oracle or learned");
        c.head = s == "oracle" ? HeadMode::oracle : HeadMode::learned;
      } else if (key == "oracle_min_overlap") c.oracle_min_overlap = v.get<double>();
      else if (key == "frame_ap_delta") c.frame_ap_delta = v.get<double>();
      else if (key == "video_ap_deltas") c.video_ap_deltas = v.get<std::vector<double>>();
      else if (key == "train_steps") c.train_steps = v.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ValidationError("config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  PipelineConfig c;
  apply_json(c, j);
  return c;
}

}  // namespace mtube
