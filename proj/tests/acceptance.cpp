// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "scenes.hpp"

using namespace mtube;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void run(const char* id, const char* name, double time_limit_s, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (time_limit_s > 0 && secs >= time_limit_s) {
    o.pass = false;
    o.detail += " (over the " + std::to_string(time_limit_s) + " s limit)";
  }
  if (!o.pass) ++failures;
  std::printf("%s %-5s %-34s %8.3f s  %s\n", o.pass ? "PASS" : "FAIL", id, name, secs, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

Outcome anchor_count() {
  const auto grid = generate_anchor_pairs(38, 50, 16.0, AnchorConfig{});
  const bool ok = grid.k == 12 && grid.pairs.size() == 22800;
  return {ok, "k=" + std::to_string(grid.k) + ", pairs=" + std::to_string(grid.pairs.size())};
}

Outcome roundtrip() {
  auto g = oracle::rng(2024);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const BoxPair anchor = oracle::random_pair(g, 800.0);
    const BoxPair target = oracle::random_pair(g, 800.0);
    const BoxPair back = decode_offsets(anchor, encode_offsets(anchor, target));
    for (auto [a, b] : {std::pair{back.b1, target.b1}, std::pair{back.b2, target.b2}}) {
      const double got[4] = {a.xc(), a.yc(), a.w(), a.h()};
      const double want[4] = {b.xc(), b.yc(), b.w(), b.h()};
      for (int k = 0; k < 4; ++k)
        worst = std::max(worst, std::abs(got[k] - want[k]) / std::max(std::abs(want[k]), 1e-12));
    }
  }
  return {worst < 1e-9, fmt("max relative error %.3g over 10000 pairs", worst)};
}

Outcome gradient() {
  double worst = 0.0;
  std::string failed;
  std::size_t checked = 0, skipped = 0;
  const auto entries = gradient_audit(0);
  for (const auto& e : entries) {
    worst = std::max(worst, e.report.max_rel_error);
    checked += e.report.checked;
    skipped += e.report.skipped;
    if (!e.report.passed() || !(e.report.max_rel_error < 1e-4)) failed += " " + e.name;
  }
  std::string d = std::to_string(entries.size()) + " ops, " + std::to_string(checked) + " coords (" +
                  std::to_string(skipped) + " near kinks skipped), " + fmt("max rel error %.3g", worst);
  if (!failed.empty()) d += ", failing:" + failed;
  return {failed.empty(), d};
}

Outcome dp_optimality() {
  int mismatches = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto g = oracle::rng(10000 + seed);
    const int L = oracle::uniform_int(g, 1, 5);
    const int C = oracle::uniform_int(g, 1, 3);
    const auto steps = oracle::random_steps(g, L, 4, C);
    const int c = oracle::uniform_int(g, 1, C);
    const double lambda = oracle::uniform(g, 0.0, 2.0);
    const double want = oracle::best_path_energy(steps, c, lambda);
    const auto got = link_class_paths(steps, c, {lambda}, 1);
    if (got.energies.size() != 1 || got.energies[0] != want) ++mismatches;
  }
  return {mismatches == 0, std::to_string(200 - mismatches) + "/200 instances match exhaustive search exactly"};
}

Outcome stage_count() {
  bool ok = true;
  std::string d;
  for (int T : {20, 21, 50, 100}) {
    std::vector<std::vector<MicroTube>> steps;
    for (int t = 1; t + 1 <= T; t += 2)
      steps.push_back({{{Box(20, 20, 8, 8), Box(21, 20, 8, 8)}, t, 1, {0.1, 0.9}}});
    std::vector<std::vector<ScoredBox>> frames(static_cast<std::size_t>(T), {{Box(20, 20, 8, 8), 0.9}});
    const auto micro = link_class_paths(steps, 1, {1.0}, 1).edge_stages;
    const auto frame = link_frame_boxes(frames, 1.0).edge_stages;
    const double ratio = static_cast<double>(micro) / static_cast<double>(frame);
    ok = ok && micro == static_cast<std::size_t>(T / 2 - 1) && frame == static_cast<std::size_t>(T - 1) &&
         ratio <= 0.52;
    d += "T=" + std::to_string(T) + ": " + std::to_string(micro) + "/" + std::to_string(frame) + fmt(" = %.3f; ", ratio);
  }
  return {ok, d};
}

Outcome nms_and_sampler() {
  int nms_bad = 0, sampler_bad = 0, invariant_bad = 0, skipped = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto g = oracle::rng(20000 + seed);
    const std::size_t n = static_cast<std::size_t>(oracle::uniform_int(g, 1, 200));
    std::vector<ScoredPair> pairs;
    for (std::size_t i = 0; i < n; ++i) {
      // Coarse scores so that ties occur.
      pairs.push_back({oracle::random_pair(g, 120.0), std::round(oracle::uniform(g, 0, 1) * 20) / 20});
    }
    const double thr = oracle::uniform(g, 0.2, 0.8);
    const std::size_t keep = static_cast<std::size_t>(oracle::uniform_int(g, 1, 250));
    if (pair_nms_indices(pairs, thr, keep) != oracle::nms(pairs, thr, keep)) ++nms_bad;
  }
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto g = oracle::rng(30000 + seed);
    std::vector<GroundTruthPair> gts;
    const int ng = oracle::uniform_int(g, 0, 3);
    for (int i = 0; i < ng; ++i) gts.push_back({i, oracle::random_pair(g, 100.0)});
    const std::size_t n = static_cast<std::size_t>(oracle::uniform_int(g, 1, 200));
    std::vector<Proposal> props;
    for (std::size_t i = 0; i < n; ++i) {
      BoxPair p = oracle::random_pair(g, 100.0);
      if (!gts.empty() && oracle::uniform(g, 0, 1) < 0.5) {
        const auto& t = gts[static_cast<std::size_t>(oracle::uniform_int(g, 0, ng - 1))].pair;
        auto jit = [&](const Box& b) {
          return Box(b.xc() + oracle::uniform(g, -4, 4), b.yc() + oracle::uniform(g, -4, 4),
                     b.w() * oracle::uniform(g, 0.8, 1.25), b.h() * oracle::uniform(g, 0.8, 1.25));
        };
        p = {jit(t.b1), jit(t.b2)};
      }
      props.push_back({p, oracle::uniform(g, 0, 1), i});
    }
    SamplerConfig cfg;  // B = 256, thresholds 0.5 / 0.3
    const auto mb = sample_train(props, gts, cfg);
    const auto want = oracle::minibatch(props, gts, cfg.batch_size);
    if (!want) {
      ++skipped;
    } else {
      std::vector<std::size_t> pos, neg;
      for (const auto& s : mb.samples) (s.positive ? pos : neg).push_back(s.proposal);
      if (pos != want->first || neg != want->second) ++sampler_bad;
    }
    const auto labels = oracle::label(props, gts, 0.5, 0.3);
    bool inv = mb.samples.size() <= 256 && mb.num_positive() <= 128;
    for (const auto& s : mb.samples) {
      if (s.positive) {
        // Rule-positive (both IoUs >= 0.5 against some ground truth) or the forced match.
        inv = inv && labels.positive.count(s.proposal);
      } else {
        bool below = true;
        for (const auto& gt : gts)
          below = below && iou(gt.pair.b1, props[s.proposal].pair.b1) < 0.3 &&
                  iou(gt.pair.b2, props[s.proposal].pair.b2) < 0.3;
        inv = inv && below;
      }
    }
    invariant_bad += !inv;
  }
  const bool ok = nms_bad == 0 && sampler_bad == 0 && invariant_bad == 0 && skipped == 0;
  return {ok, "nms mismatches " + std::to_string(nms_bad) + "/100, sampler mismatches " +
                  std::to_string(sampler_bad) + "/100, invariant violations " + std::to_string(invariant_bad) +
                  (skipped ? ", oracle skipped " + std::to_string(skipped) : "")};
}

Outcome toy_overfit() {
  PipelineConfig cfg;
  cfg.image_width = 320;
  cfg.image_height = 240;
  cfg.rpn_channels = 32;
  auto model = toy_model(cfg);
  const auto batch = toy_training_batch(cfg, model);
  const auto fit = toy_fit(model, batch, 500, cfg.learning_rate, cfg.loss_weights);
  bool finite = !fit.diverged;
  for (const auto& r : fit.trace) finite = finite && r.finite();
  const double first = fit.trace.front().total, last = fit.trace.back().total;
  const bool reduced = last < 0.1 * first;

  // Gating: offsets of background samples, non-target classes and
  // non-action anchors must not move the loss.
  const auto targets = batch_targets(batch);
  auto g = oracle::rng(77);
  const int C = model.config.num_classes;
  std::vector<SamplePrediction> preds;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    SamplePrediction p;
    for (int c = 0; c <= C; ++c) p.end_logits.push_back(oracle::uniform(g, -1, 1));
    p.end_offsets.assign(static_cast<std::size_t>(C), OffsetOctet{});
    for (auto& o : p.end_offsets)
      for (std::size_t k = 0; k < 8; ++k) o[k] = oracle::uniform(g, -1, 1);
    p.mid_logits = {oracle::uniform(g, -1, 1), oracle::uniform(g, -1, 1)};
    for (std::size_t k = 0; k < 8; ++k) p.mid_offsets[k] = oracle::uniform(g, -1, 1);
    preds.push_back(p);
  }
  const double base = multi_task_loss_batch(preds, targets, cfg.loss_weights).report.total;
  auto perturbed = preds;
  std::size_t gated = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    for (int c = 1; c <= C; ++c) {
      if (targets[i].c_e == c) continue;
      for (std::size_t k = 0; k < 8; ++k) perturbed[i].end_offsets[static_cast<std::size_t>(c - 1)][k] += 100.0;
      ++gated;
    }
    if (targets[i].c_m == 0) {
      for (std::size_t k = 0; k < 8; ++k) perturbed[i].mid_offsets[k] -= 100.0;
      ++gated;
    }
  }
  const double after = multi_task_loss_batch(perturbed, targets, cfg.loss_weights).report.total;
  const bool gating = gated > 0 && after == base;

  return {reduced && finite && gating,
          fmt("loss %.4g -> %.4g", first, last) + fmt(" (%.2f%% of initial), ", 100 * last / first) +
              std::to_string(batch.minibatch.samples.size()) + " samples / " +
              std::to_string(batch.minibatch.num_positive()) + " positive, components " +
              (finite ? "finite" : "NOT finite") + ", gating " + (gating ? "holds" : "BROKEN") + " over " +
              std::to_string(gated) + " gated octets"};
}

Outcome end_to_end() {
  const std::vector<VideoInput> in{scenes::annotated_input(scenes::moving_blob())};
  const PipelineConfig cfg;  // 800x600, oracle head
  auto r = run_pipeline(cfg, in);
  double video = -1.0;
  for (const auto& [d, res] : r.metrics->video)
    if (d == 0.5) video = res.mean_ap.value_or(-1.0);
  const double frame = r.metrics->frame.mean_ap.value_or(-1.0);
  scenes::inject_duplicates(r.videos[0]);
  const auto dup = evaluate_report(r.videos, {*in[0].annotation}, 1, 0.5, {0.5});
  const double dup_frame = dup.frame.mean_ap.value_or(-1.0);
  // Every copied tube must be scored as a false positive. With a single
  // ground-truth tube all-point AP stays 1 whatever the order, so the counts
  // are checked instead.
  const PrCurve base = r.metrics->video[0].second.per_class.at(1);
  auto tubes = r.videos[0].tubes;
  for (const auto& t : tubes) r.videos[0].tubes.push_back(t);
  const auto dup2 = evaluate_report(r.videos, {*in[0].annotation}, 1, 0.5, {0.5});
  const auto& curve = dup2.video[0].second.per_class.at(1);
  const bool ok = frame == 1.0 && video == 1.0 && dup_frame < 1.0 && curve.tp == base.tp &&
                  curve.fp == base.fp + tubes.size();
  return {ok, fmt("frame-AP %.4f, video-AP@0.5 %.4f", frame, video) +
                  fmt("; with duplicates frame-AP %.4f", dup_frame) + ", duplicate tubes " +
                  std::to_string(curve.tp) + " TP / " + std::to_string(curve.fp) + " FP (was " +
                  std::to_string(base.tp) + " / " + std::to_string(base.fp) + ")"};
}

Outcome determinism() {
  std::vector<VideoInput> in;
  for (int i = 0; i < 2; ++i) {
    auto spec = random_synth_spec(40 + static_cast<std::uint64_t>(i), 6, 160, 120, 1, 2.0);
    spec.video_id = "clip_" + std::to_string(i);
    in.push_back(scenes::annotated_input(spec));
  }
  PipelineConfig cfg;
  cfg.image_width = 320;
  cfg.image_height = 240;
  cfg.seed = 11;
  const auto a = serialize_report(run_pipeline(cfg, in));
  const auto b = serialize_report(run_pipeline(cfg, in));
  cfg.head = HeadMode::learned;
  const auto c = serialize_report(run_pipeline(cfg, in));
  const auto d = serialize_report(run_pipeline(cfg, in));
  return {a == b && c == d, std::to_string(a.size()) + " and " + std::to_string(c.size()) +
                                " byte reports (oracle and learned head), " + (a == b && c == d ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  run("AC1", "anchor-pair count", 1.0, anchor_count);
  run("AC2", "offset roundtrip", 0.0, roundtrip);
  run("AC3", "gradient audit", 60.0, gradient);
  run("AC4", "linking DP optimality", 30.0, dp_optimality);
  run("AC5", "linking edge-stage ratio", 0.0, stage_count);
  run("AC6", "pair-NMS and sampler oracles", 0.0, nms_and_sampler);
  run("AC7", "toy overfit", 0.0, toy_overfit);
  run("AC8", "end-to-end oracle run", 0.0, end_to_end);
  run("AC9", "determinism", 0.0, determinism);
  std::printf("INFO AC10  published benchmark mAP tables      not reproduced: they need GPU training on the full "
              "video datasets; AC1-AC9 stand in for them\n");
  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
