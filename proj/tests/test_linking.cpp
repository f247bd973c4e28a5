#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "oracles.hpp"

using namespace mtube;

namespace {

MicroTube mt(const Box& a, const Box& b, int t, std::vector<double> scores, int delta = 1) {
  return {{a, b}, t, delta, std::move(scores)};
}

// One micro-tube per step following a box drifting right by 2 px per frame.
std::vector<std::vector<MicroTube>> track(int steps, double x0, double y0, double score, int first_t = 1) {
  std::vector<std::vector<MicroTube>> out;
  for (int s = 0; s < steps; ++s) {
    const int t = first_t + 2 * s;
    out.push_back({mt(Box(x0 + 2 * (t - 1), y0, 10, 10), Box(x0 + 2 * t, y0, 10, 10), t, {1 - score, score})});
  }
  return out;
}

}  // namespace

TEST(EdgeScore, JunctionIoU) {
  const Box a(10, 10, 10, 10), b(15, 10, 10, 10);
  EXPECT_DOUBLE_EQ(edge_score(mt(a, a, 1, {0, 1}), mt(a, b, 3, {0, 1})), 1.0);
  EXPECT_DOUBLE_EQ(edge_score(mt(a, b, 1, {0, 1}), mt(a, b, 3, {0, 1})), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(edge_score(mt(a, Box(50, 50, 4, 4), 1, {0, 1}), mt(a, a, 3, {0, 1})), 0.0);
  EXPECT_THROW(edge_score(mt(a, a, 1, {0, 1}), mt(a, a, 2, {0, 1})), std::invalid_argument);
  EXPECT_THROW(edge_score(mt(a, a, 1, {0, 1}), mt(a, a, 5, {0, 1})), std::invalid_argument);
}

TEST(Viterbi, UniquePathEnergy) {
  const auto steps = track(4, 20, 20, 0.8);
  const auto r = link_class_paths(steps, 1, {1.0}, 1);
  ASSERT_EQ(r.tubes.size(), 1u);
  // Each junction spans one frame of 2 px motion on a 10 px box: IoU 8/12.
  EXPECT_NEAR(r.energies[0], 4 * 0.8 + 3 * (2.0 / 3.0), 1e-12);
  EXPECT_EQ(r.tubes[0].t_start, 1);
  EXPECT_EQ(r.tubes[0].t_end, 8);
  EXPECT_EQ(r.tubes[0].boxes.size(), 8u);
  EXPECT_NEAR(r.tubes[0].score, 0.8, 1e-12);
}

TEST(Viterbi, MatchesExhaustiveSearch) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto g = oracle::rng(seed);
    const int L = oracle::uniform_int(g, 1, 5);
    const auto steps = oracle::random_steps(g, L, 4, 2);
    const int c = oracle::uniform_int(g, 1, 2);
    const double lambda = oracle::uniform(g, 0, 2);
    std::vector<std::size_t> want_path;
    const double want = oracle::best_path_energy(steps, c, lambda, &want_path);
    const auto r = link_class_paths(steps, c, {lambda}, 1);
    ASSERT_EQ(r.energies.size(), 1u);
    EXPECT_NEAR(r.energies[0], want, 1e-12) << "seed " << seed;
    // The chosen members must realize the reported energy.
    double e = 0.0;
    const auto& m = r.tubes[0].members;
    for (std::size_t s = 0; s < m.size(); ++s) {
      e += m[s].scores[static_cast<std::size_t>(c)];
      if (s > 0) e += lambda * iou(m[s - 1].pair.b2, m[s].pair.b1);
    }
    EXPECT_NEAR(e, r.energies[0], 1e-12);
  }
}

TEST(Viterbi, ThreeByThreeByThree) {
  auto g = oracle::rng(27);
  std::vector<std::vector<MicroTube>> steps(3);
  for (int s = 0; s < 3; ++s)
    for (int i = 0; i < 3; ++i) steps[s].push_back({oracle::random_pair(g, 30.0), 1 + 2 * s, 1, oracle::random_scores(g, 1)});
  std::vector<std::size_t> arg;
  const double want = oracle::best_path_energy(steps, 1, 1.0, &arg);
  const auto r = link_class_paths(steps, 1, {1.0}, 1);
  EXPECT_NEAR(r.energies[0], want, 1e-12);
  for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(r.tubes[0].members[s].pair, steps[s][arg[s]].pair);
}

TEST(Viterbi, StageCountVersusFrameLinking) {
  const auto steps = track(4, 20, 20, 0.9);
  EXPECT_EQ(link_class_paths(steps, 1, {1.0}, 1).edge_stages, 3u);
  std::vector<std::vector<ScoredBox>> frames(8, std::vector<ScoredBox>{{Box(10, 10, 5, 5), 1.0}});
  EXPECT_EQ(link_frame_boxes(frames, 1.0).edge_stages, 7u);
  for (int T : {20, 40, 100}) {
    const auto long_steps = track(T / 2, 20, 20, 0.9);
    const double ratio = static_cast<double>(link_class_paths(long_steps, 1, {1.0}, 1).edge_stages) / (T - 1);
    EXPECT_LE(ratio, 0.52) << T;
  }
}

TEST(Viterbi, ZeroLambdaIsGreedy) {
  auto g = oracle::rng(31);
  const auto steps = oracle::random_steps(g, 5, 6, 1);
  const auto r = link_class_paths(steps, 1, {0.0}, 1);
  for (std::size_t s = 0; s < steps.size(); ++s) {
    double best = -1.0;
    for (const auto& m : steps[s]) best = std::max(best, m.scores[1]);
    EXPECT_EQ(r.tubes[0].members[s].scores[1], best);
  }
}

TEST(Viterbi, PathsAreNodeDisjoint) {
  auto g = oracle::rng(32);
  for (int trial = 0; trial < 30; ++trial) {
    const auto steps = oracle::random_steps(g, 4, 5, 1);
    const auto r = link_class_paths(steps, 1, {1.0}, 3);
    std::size_t min_size = 99;
    for (const auto& l : steps) min_size = std::min(min_size, l.size());
    EXPECT_EQ(r.tubes.size(), std::min<std::size_t>(3, min_size));
    for (std::size_t s = 0; s < steps.size(); ++s) {
      std::set<std::pair<double, double>> used;
      for (const auto& t : r.tubes) EXPECT_TRUE(used.insert({t.members[s].pair.b1.xc(), t.members[s].pair.b1.yc()}).second);
    }
    // Later paths never beat earlier ones.
    for (std::size_t i = 1; i < r.energies.size(); ++i) EXPECT_LE(r.energies[i], r.energies[i - 1] + 1e-12);
  }
}

TEST(Viterbi, TwoDisjointInstances) {
  auto a = track(5, 20, 20, 0.9);
  const auto b = track(5, 200, 150, 0.7);
  for (std::size_t s = 0; s < a.size(); ++s) a[s].push_back(b[s][0]);
  const auto r = link_class_paths(a, 1, {1.0}, 2);
  ASSERT_EQ(r.tubes.size(), 2u);
  for (const auto& m : r.tubes[0].members) EXPECT_LT(m.pair.b1.xc(), 100);
  for (const auto& m : r.tubes[1].members) EXPECT_GT(m.pair.b1.xc(), 100);
}

TEST(Viterbi, RejectsBadSteps) {
  auto steps = track(3, 20, 20, 0.9);
  steps[1].clear();
  EXPECT_THROW(link_class_paths(steps, 1, {1.0}, 1), std::invalid_argument);
  auto gap = track(3, 20, 20, 0.9);
  gap[2][0].t = 7;
  EXPECT_THROW(link_class_paths(gap, 1, {1.0}, 1), std::invalid_argument);
  EXPECT_THROW(link_class_paths(track(2, 1, 1, 0.5), 2, {1.0}, 1), std::invalid_argument);
  EXPECT_THROW(link_class_paths(track(2, 1, 1, 0.5), 1, {-1.0}, 1), std::invalid_argument);
  EXPECT_TRUE(link_class_paths(std::span<const std::vector<MicroTube>>{}, 1, {1.0}, 1).tubes.empty());
}

TEST(AssembleTube, JunctionFramesAndInterpolation) {
  const Box a(10, 10, 4, 4), b(12, 10, 4, 4), c(14, 10, 4, 4), d(16, 10, 4, 4);
  const auto tube = assemble_tube(1, {mt(a, b, 1, {0, 0.5}), mt(c, d, 3, {0, 1.0})});
  ASSERT_EQ(tube.boxes.size(), 4u);
  EXPECT_EQ(tube.box_at(1), a);
  EXPECT_EQ(tube.box_at(2), b);
  EXPECT_EQ(tube.box_at(3), c);
  EXPECT_EQ(tube.box_at(4), d);
  EXPECT_DOUBLE_EQ(tube.score, 0.75);

  // delta = 2: the two micro-tubes share frame 3 and the later one's box wins.
  const auto t2 = assemble_tube(1, {mt(a, b, 1, {0, 1}, 2), mt(c, d, 3, {0, 1}, 2)});
  ASSERT_EQ(t2.boxes.size(), 5u);
  EXPECT_DOUBLE_EQ(t2.box_at(2).xc(), 11.0);
  EXPECT_EQ(t2.box_at(3), c);
  EXPECT_DOUBLE_EQ(t2.box_at(4).xc(), 15.0);
  EXPECT_THROW(assemble_tube(1, {}), std::invalid_argument);
}

TEST(Trim, RunLengthOracle) {
  auto g = oracle::rng(40);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = oracle::uniform_int(g, 1, 12);
    const auto steps = track(n, 20, 20, 0.5);
    std::vector<MicroTube> members;
    std::vector<double> scores;
    for (const auto& s : steps) {
      members.push_back(s[0]);
      scores.push_back(oracle::uniform(g, 0, 1));
      members.back().scores = {1 - scores.back(), scores.back()};
    }
    const auto tube = assemble_tube(1, members);
    const double thr = oracle::uniform(g, 0.2, 0.8);
    const std::size_t min_len = static_cast<std::size_t>(oracle::uniform_int(g, 1, 3));
    // Expected runs from a plain scan.
    std::vector<std::pair<int, int>> want;
    int start = -1;
    for (int i = 0; i <= n; ++i) {
      const bool in = i < n && scores[static_cast<std::size_t>(i)] >= thr;
      if (in && start < 0) start = i;
      if (!in && start >= 0) {
        if (static_cast<std::size_t>(i - start) >= min_len) want.push_back({start, i});
        start = -1;
      }
    }
    const auto got = trim_tube(tube, scores, thr, min_len);
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      EXPECT_EQ(got[k].t_start, 1 + 2 * want[k].first);
      EXPECT_EQ(got[k].t_end, 2 * want[k].second);
      double mean = 0;
      for (int i = want[k].first; i < want[k].second; ++i) mean += scores[static_cast<std::size_t>(i)];
      EXPECT_NEAR(got[k].score, mean / (want[k].second - want[k].first), 1e-12);
    }
  }
}

TEST(Trim, RelativeThresholdDefault) {
  std::vector<MicroTube> members;
  const std::vector<double> s{0.9, 0.8, 0.3, 0.6, 0.5, 0.2, 0.95};
  for (std::size_t i = 0; i < s.size(); ++i)
    members.push_back(mt(Box(10, 10, 4, 4), Box(10, 10, 4, 4), 1 + 2 * static_cast<int>(i), {1 - s[i], s[i]}));
  const auto tube = assemble_tube(1, members);
  const auto out = trim_tube(tube, TrimConfig{});
  // threshold 0.475: runs [0, 2) and [3, 5); the last step is alone.
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].t_start, 1);
  EXPECT_EQ(out[0].t_end, 4);
  EXPECT_EQ(out[1].t_start, 7);
  EXPECT_EQ(out[1].t_end, 10);
  EXPECT_THROW(trim_tube(tube, std::vector<double>{1.0}, 0.5, 1), std::invalid_argument);
}

TEST(LinkVideo, SegmentsAroundEmptySteps) {
  auto steps = track(6, 20, 20, 0.9);
  steps[2].clear();
  LinkingConfig cfg;
  const auto r = link_video(steps, 1, cfg);
  ASSERT_EQ(r.tubes.size(), 2u);
  EXPECT_EQ(r.edge_stages, 1u + 2u);
  std::set<int> starts{r.tubes[0].t_start, r.tubes[1].t_start};
  EXPECT_EQ(starts, (std::set<int>{1, 7}));
  EXPECT_TRUE(link_video(std::vector<std::vector<MicroTube>>(3), 1, cfg).tubes.empty());
}

TEST(LinkVideo, PerClassLambda) {
  LinkingConfig cfg;
  cfg.class_lambda[2] = 0.0;
  EXPECT_EQ(cfg.energy_for(1).lambda_o, 1.0);
  EXPECT_EQ(cfg.energy_for(2).lambda_o, 0.0);
  auto steps = track(3, 20, 20, 0.6);
  for (auto& l : steps) l[0].scores = {0.1, 0.6, 0.3};
  const auto tubes = build_all_tubes(steps, 2, cfg);
  ASSERT_EQ(tubes.size(), 2u);
  EXPECT_EQ(tubes[0].class_id, 1);
  EXPECT_EQ(tubes[1].class_id, 2);
  EXPECT_GE(tubes[0].score, tubes[1].score);
}
