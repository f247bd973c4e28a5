#pragma once

// ToyModel parameters as JSON.

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtube/harness/errors.hpp"
#include "mtube/model.hpp"

namespace mtube {

namespace detail {

inline nlohmann::json conv_json(const ConvWeights& w) {
  return {{"shape", {w.out_channels, w.in_channels, w.kh, w.kw}}, {"weights", w.weights}, {"bias", w.bias}};
}

inline ConvWeights conv_from_json(const nlohmann::json& j) {
  const auto s = j.at("shape").get<std::vector<int>>();
  if (s.size() != 4) throw ValidationError("model: conv shape needs 4 entries");
  ConvWeights w(s[0], s[1], s[2], s[3]);
  w.weights = j.at("weights").get<std::vector<double>>();
  w.bias = j.at("bias").get<std::vector<double>>();
  if (w.weights.size() != static_cast<std::size_t>(s[0]) * s[1] * s[2] * s[3] ||
      w.bias.size() != static_cast<std::size_t>(s[0]))
    throw ValidationError("model: conv parameter count does not match its shape");
  return w;
}

inline nlohmann::json linear_json(const LinearWeights& w) {
  return {{"shape", {w.out_features, w.in_features}}, {"weights", w.weights}, {"bias", w.bias}};
}

inline LinearWeights linear_from_json(const nlohmann::json& j) {
  const auto s = j.at("shape").get<std::vector<int>>();
  if (s.size() != 2) throw ValidationError("model: linear shape needs 2 entries");
  LinearWeights w(s[0], s[1]);
  w.weights = j.at("weights").get<std::vector<double>>();
  w.bias = j.at("bias").get<std::vector<double>>();
  if (w.weights.size() != static_cast<std::size_t>(s[0]) * s[1] || w.bias.size() != static_cast<std::size_t>(s[0]))
    throw ValidationError("model: linear parameter count does not match its shape");
  return w;
}

}  // namespace detail

inline nlohmann::json model_json(const ToyModel& m) {
  const auto& c = m.config;
  return {{"config",
           {{"feature_channels", c.feature_channels}, {"rpn_channels", c.rpn_channels}, {"k", c.k},
            {"num_classes", c.num_classes}, {"pool_h", c.pool_h}, {"pool_w", c.pool_w}, {"hidden", c.hidden}}},
          {"rpn",
           {{"conv", detail::conv_json(m.rpn.conv)}, {"reg", detail::conv_json(m.rpn.reg)},
            {"cls", detail::conv_json(m.rpn.cls)}}},
          {"head",
           {{"fc6", detail::linear_json(m.head.fc6)}, {"fc7", detail::linear_json(m.head.fc7)},
            {"cls", detail::linear_json(m.head.cls)}, {"reg", detail::linear_json(m.head.reg)}}}};
}

// Parameters are checked against the shapes the config implies.
inline ToyModel model_from_json(const nlohmann::json& j) {
  try {
    const auto& jc = j.at("config");
    ModelConfig c;
    c.feature_channels = jc.at("feature_channels").get<int>();
    c.rpn_channels = jc.at("rpn_channels").get<int>();
    c.k = jc.at("k").get<int>();
    c.num_classes = jc.at("num_classes").get<int>();
    c.pool_h = jc.at("pool_h").get<int>();
    c.pool_w = jc.at("pool_w").get<int>();
    c.hidden = jc.at("hidden").get<int>();
    ToyModel m = make_toy_model(c, 0);
    ToyModel r;
    r.config = c;
    r.rpn = {detail::conv_from_json(j.at("rpn").at("conv")), detail::conv_from_json(j.at("rpn").at("reg")),
             detail::conv_from_json(j.at("rpn").at("cls"))};
    r.head = {detail::linear_from_json(j.at("head").at("fc6")), detail::linear_from_json(j.at("head").at("fc7")),
              detail::linear_from_json(j.at("head").at("cls")), detail::linear_from_json(j.at("head").at("reg"))};
    auto same_conv = [](const ConvWeights& a, const ConvWeights& b) {
      return a.out_channels == b.out_channels && a.in_channels == b.in_channels && a.kh == b.kh && a.kw == b.kw;
    };
    auto same_lin = [](const LinearWeights& a, const LinearWeights& b) {
      return a.out_features == b.out_features && a.in_features == b.in_features;
    };
    if (!same_conv(r.rpn.conv, m.rpn.conv) || !same_conv(r.rpn.reg, m.rpn.reg) || !same_conv(r.rpn.cls, m.rpn.cls) ||
        !same_lin(r.head.fc6, m.head.fc6) || !same_lin(r.head.fc7, m.head.fc7) ||
        !same_lin(r.head.cls, m.head.cls) || !same_lin(r.head.reg, m.head.reg))
      throw ValidationError("model: parameter shapes do not match the model config");
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("model: ") + e.what());
  }
}

inline void save_model(const std::string& path, const ToyModel& m) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << model_json(m).dump() << "\n";
}

inline ToyModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model file '" + path + "'");
  try {
    return model_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError(std::string("model: ") + e.what());
  }
}

}  // namespace mtube
