// mtube command-line driver.
//
//   mtube synth      generate synthetic videos (frame file + annotation file)
//   mtube train-toy  fit the toy model on one synthetic batch
//   mtube detect     run the detection pipeline and write a JSON report
//   mtube link       re-link the micro-tubes of a report into tubes
//   mtube eval       score a report against annotations
//   mtube gradcheck  run the gradient audit
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 non-finite value.

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtube/mtube.hpp"

namespace {

using nlohmann::json;

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

// Flag text to JSON: JSON literals pass through, comma lists become arrays,
// anything else is a string.
json flag_value(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
  }
  if (text.find(',') != std::string::npos) {
    json arr = json::array();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) arr.push_back(flag_value(item));
    return arr;
  }
  return text;
}

// Registers one string flag per PipelineConfig field on `cmd`.
struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file; flags override it");
    const json defaults = mtube::to_json(mtube::PipelineConfig{});
    for (const auto& [key, def] : defaults.items()) {
      cmd->add_option(flag_name(key), values[key], "config field '" + key + "' (default " + def.dump() + ")");
    }
  }

  mtube::PipelineConfig resolve(CLI::App* cmd) const {
    mtube::PipelineConfig cfg = config_path.empty() ? mtube::PipelineConfig{} : mtube::load_config(config_path);
    json overrides = json::object();
    for (const auto& [key, text] : values)
      if (cmd->count(flag_name(key)) > 0) overrides[key] = flag_value(text);
    try {
      mtube::apply_json(cfg, overrides);
      cfg.validate();
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }
};

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw mtube::ValidationError("cannot write '" + path + "'");
  out << text;
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mtube::ValidationError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw mtube::ValidationError(path + ": " + e.what());
  }
}

std::map<std::string, mtube::VideoAnnotation> annotations_by_id(const std::string& path) {
  std::map<std::string, mtube::VideoAnnotation> out;
  for (auto& a : mtube::parse_annotations_file(path)) {
    const std::string id = a.video_id;
    if (!out.emplace(id, std::move(a)).second)
      throw mtube::ValidationError("duplicate video id '" + id + "' in " + path);
  }
  return out;
}

// ---- synth -----------------------------------------------------------------

struct SynthArgs {
  std::string out_frames, out_annotations;
  int videos = 1, frames = 8, width = 160, height = 120, instances = 1, class_id = 1;
  double noise = 0.0;
  std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
  std::vector<mtube::RawVideo> raw;
  std::vector<mtube::VideoAnnotation> anns;
  for (int i = 0; i < a.videos; ++i) {
    auto spec = mtube::random_synth_spec(a.seed + static_cast<std::uint64_t>(i), a.frames, a.width, a.height,
                                         a.instances, a.noise);
    spec.video_id = "synth_" + std::to_string(i + 1);
    spec.class_id = a.class_id;
    auto v = mtube::synth_video(spec);
    raw.push_back({spec.video_id, std::move(v.frames)});
    anns.push_back(std::move(v.annotation));
  }
  mtube::write_frames_file(a.out_frames, raw);
  write_text(a.out_annotations, mtube::write_annotations(anns));
  return kOk;
}

// ---- train-toy -------------------------------------------------------------

struct TrainArgs {
  std::string out_model, out_trace;
  std::optional<std::size_t> steps;
  std::optional<double> lr;
};

int run_train(const TrainArgs& a, const mtube::PipelineConfig& cfg) {
  const std::size_t steps = a.steps.value_or(cfg.train_steps);
  const double lr = a.lr.value_or(cfg.learning_rate);

  auto model = mtube::toy_model(cfg);
  const auto batch = mtube::toy_training_batch(cfg, model);
  const auto fit = mtube::toy_fit(model, batch, steps, lr, cfg.loss_weights);

  json trace = json::array();
  for (const auto& r : fit.trace)
    trace.push_back({{"total", r.total}, {"e_cls", r.e_cls}, {"e_loc", r.e_loc}, {"m_cls", r.m_cls}, {"m_loc", r.m_loc}});
  const double first = fit.trace.front().total, last = fit.trace.back().total;
  std::cerr << "samples " << batch.minibatch.samples.size() << " (positives " << batch.minibatch.num_positive()
            << "), loss " << first << " -> " << last << " after " << fit.trace.size() - 1 << " steps\n";
  if (!a.out_trace.empty())
    write_text(a.out_trace, json{{"diverged", fit.diverged}, {"trace", trace}}.dump(2) + "\n");
  if (!a.out_model.empty()) mtube::save_model(a.out_model, model);
  if (fit.diverged) throw mtube::NumericError("training loss became non-finite");
  return kOk;
}

// ---- detect ----------------------------------------------------------------

struct DetectArgs {
  std::string frames, annotations, model, out;
};

int run_detect(const DetectArgs& a, const mtube::PipelineConfig& cfg) {
  const auto raw = mtube::read_frames_file(a.frames);
  std::map<std::string, mtube::VideoAnnotation> anns;
  if (!a.annotations.empty()) anns = annotations_by_id(a.annotations);
  std::vector<mtube::VideoInput> inputs;
  for (const auto& v : raw) {
    mtube::VideoInput in{v.video_id, v.frames, std::nullopt};
    if (auto it = anns.find(v.video_id); it != anns.end()) {
      if (it->second.frames != static_cast<int>(v.frames.size()))
        throw mtube::ValidationError("video '" + v.video_id + "': annotation frame count differs from the frame file");
      in.annotation = it->second;
    }
    inputs.push_back(std::move(in));
  }
  std::optional<mtube::ToyModel> model;
  if (!a.model.empty()) model = mtube::load_model(a.model);
  const auto report = mtube::run_pipeline(cfg, inputs, std::move(model));
  write_text(a.out, mtube::serialize_report(report));
  return kOk;
}

// ---- link / eval -----------------------------------------------------------

int run_link(const std::string& in, const std::string& out, const mtube::PipelineConfig& cfg) {
  auto report = mtube::parse_report(read_json(in));
  for (auto& v : report.videos) {
    try {
      auto links = mtube::link_video(mtube::group_steps(v.micro_tubes, v.frames), cfg.num_classes, cfg.linking());
      v.tubes = std::move(links.tubes);
      v.edge_stages = links.edge_stages;
    } catch (const std::invalid_argument& e) {
      throw mtube::ValidationError("video '" + v.video_id + "': " + e.what());
    }
  }
  write_text(out, mtube::serialize_report(report));
  return kOk;
}

int run_eval(const std::string& det_path, const std::string& ann_path, const std::string& out,
             const mtube::PipelineConfig& cfg) {
  const auto report = mtube::parse_report(read_json(det_path));
  std::vector<mtube::VideoAnnotation> anns;
  for (auto& [id, a] : annotations_by_id(ann_path)) anns.push_back(std::move(a));
  const auto m = mtube::evaluate_report(report.videos, anns, cfg.num_classes, cfg.frame_ap_delta,
                                        cfg.video_ap_deltas);
  write_text(out, json{{"schema", mtube::kReportSchema}, {"metrics", mtube::metrics_json(m)}}.dump(2) + "\n");
  return kOk;
}

int run_gradcheck(std::uint64_t seed) {
  bool ok = true;
  for (const auto& e : mtube::gradient_audit(seed)) {
    std::cout << (e.report.passed() ? "PASS " : "FAIL ") << e.name << " max_rel_error=" << e.report.max_rel_error
              << " checked=" << e.report.checked << " skipped=" << e.report.skipped << "\n";
    ok = ok && e.report.passed();
  }
  return ok ? kOk : kNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mtube: paired-proposal action detection toolkit"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate synthetic moving-blob videos");
  synth->add_option("--out-frames", sa.out_frames, "frame file to write")->required();
  synth->add_option("--out-annotations", sa.out_annotations, "annotation file to write")->required();
  synth->add_option("--videos", sa.videos, "number of videos")->check(CLI::PositiveNumber);
  synth->add_option("--frames", sa.frames, "frames per video")->check(CLI::Range(2, 100000));
  synth->add_option("--width", sa.width, "frame width")->check(CLI::PositiveNumber);
  synth->add_option("--height", sa.height, "frame height")->check(CLI::PositiveNumber);
  synth->add_option("--instances", sa.instances, "blobs per video")->check(CLI::NonNegativeNumber);
  synth->add_option("--class", sa.class_id, "class id of every video")->check(CLI::PositiveNumber);
  synth->add_option("--noise", sa.noise, "pixel noise sigma")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", sa.seed, "random seed");

  TrainArgs ta;
  ConfigFlags train_flags;
  auto* train = app.add_subcommand("train-toy", "fit the toy model on one synthetic batch");
  train->add_option("--out-model", ta.out_model, "write the fitted model as JSON");
  train->add_option("--out-trace", ta.out_trace, "write the loss trace as JSON");
  train->add_option("--steps", ta.steps, "gradient steps (overrides train_steps)");
  train->add_option("--lr", ta.lr, "learning rate (overrides learning_rate)");
  train_flags.attach(train);

  DetectArgs da;
  ConfigFlags detect_flags;
  auto* detect = app.add_subcommand("detect", "run the pipeline on a frame file");
  detect->add_option("--frames", da.frames, "frame file")->required();
  detect->add_option("--annotations", da.annotations, "annotation file (required by the oracle head)");
  detect->add_option("--model", da.model, "model JSON from train-toy");
  detect->add_option("--out", da.out, "report path (default stdout)");
  detect_flags.attach(detect);

  std::string link_in, link_out;
  ConfigFlags link_flags;
  auto* link = app.add_subcommand("link", "re-link micro-tubes of a report");
  link->add_option("--detections", link_in, "report JSON")->required();
  link->add_option("--out", link_out, "report path (default stdout)");
  link_flags.attach(link);

  std::string eval_det, eval_ann, eval_out;
  ConfigFlags eval_flags;
  auto* eval = app.add_subcommand("eval", "frame-AP and video-AP of a report");
  eval->add_option("--detections", eval_det, "report JSON")->required();
  eval->add_option("--annotations", eval_ann, "annotation file")->required();
  eval->add_option("--out", eval_out, "metrics path (default stdout)");
  eval_flags.attach(eval);

  std::uint64_t audit_seed = 0;
  auto* grad = app.add_subcommand("gradcheck", "check every backward pass against central differences");
  grad->add_option("--seed", audit_seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*synth) return run_synth(sa);
    if (*train) return run_train(ta, train_flags.resolve(train));
    if (*detect) return run_detect(da, detect_flags.resolve(detect));
    if (*link) return run_link(link_in, link_out, link_flags.resolve(link));
    if (*eval) return run_eval(eval_det, eval_ann, eval_out, eval_flags.resolve(eval));
    if (*grad) return run_gradcheck(audit_seed);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const mtube::PipelineError& e) {
    std::cerr << "error in stage " << e.what() << "\n";
    switch (e.kind()) {
      case mtube::ErrorKind::usage: return kUsage;
      case mtube::ErrorKind::numeric: return kNumeric;
      default: return kData;
    }
  } catch (const mtube::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kNumeric;
  } catch (const mtube::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kData;
  } catch (const mtube::ValidationError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
