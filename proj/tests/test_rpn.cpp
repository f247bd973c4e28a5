#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "oracles.hpp"

using namespace mtube;

namespace {

std::vector<Proposal> random_proposals(std::mt19937_64& g, std::size_t n, double extent = 100.0) {
  std::vector<Proposal> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({oracle::random_pair(g, extent), oracle::uniform(g, 0, 1), i});
  return out;
}

// Proposals jittered around ground truths so that every label occurs.
std::vector<Proposal> near_proposals(std::mt19937_64& g, const std::vector<GroundTruthPair>& gts, std::size_t n) {
  std::vector<Proposal> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& t = gts[i % gts.size()].pair;
    auto jitter = [&](const Box& b) {
      const double s = oracle::uniform(g, 0, 0.6);
      return Box(b.xc() + s * b.w() * oracle::uniform(g, -1, 1), b.yc() + s * b.h() * oracle::uniform(g, -1, 1),
                 b.w() * oracle::uniform(g, 0.6, 1.5), b.h() * oracle::uniform(g, 0.6, 1.5));
    };
    out.push_back({{jitter(t.b1), jitter(t.b2)}, oracle::uniform(g, 0, 1), i});
  }
  return out;
}

std::vector<GroundTruthPair> random_gts(std::mt19937_64& g, int n) {
  std::vector<GroundTruthPair> out;
  for (int i = 0; i < n; ++i) out.push_back({i, oracle::random_pair(g)});
  return out;
}

}  // namespace

TEST(RpnHead, OutputShapes) {
  const auto p = make_rpn_params(4, 6, 12, 1);
  EXPECT_EQ(p.k(), 12);
  const FeatureMap x(4, 5, 7, 0.3);
  const auto out = rpn_forward(x, p);
  EXPECT_EQ(out.offsets.channels(), 96);
  EXPECT_EQ(out.actionness.channels(), 24);
  EXPECT_EQ(out.offsets.height(), 5);
  EXPECT_EQ(out.offsets.width(), 7);
  EXPECT_EQ(out.actionness.height(), 5);
  EXPECT_EQ(out.actionness.width(), 7);
  EXPECT_THROW(rpn_forward(FeatureMap(3, 5, 7), p), std::invalid_argument);
  EXPECT_THROW(make_rpn_params(0, 6, 12, 1), std::invalid_argument);
}

TEST(RpnHead, ZeroWeightsGiveBias) {
  RpnParams p{ConvWeights(3, 2, 3, 3), ConvWeights(8, 3, 1, 1), ConvWeights(2, 3, 1, 1)};
  p.cls.bias = {0.25, -0.75};
  p.reg.bias[3] = 1.5;
  auto g = oracle::rng(3);
  FeatureMap x(2, 4, 4);
  for (double& v : x.values()) v = oracle::uniform(g, -1, 1);
  const auto out = rpn_forward(x, p);
  for (int y = 0; y < 4; ++y)
    for (int c = 0; c < 4; ++c) {
      EXPECT_EQ(out.actionness.at(0, y, c), 0.25);
      EXPECT_EQ(out.actionness.at(1, y, c), -0.75);
      EXPECT_EQ(out.offsets.at(3, y, c), 1.5);
      EXPECT_EQ(out.offsets.at(0, y, c), 0.0);
    }
}

TEST(RpnHead, ComposesConvReluConv) {
  auto g = oracle::rng(4);
  const auto p = make_rpn_params(3, 5, 2, 9, 0.5);
  FeatureMap x(3, 4, 6);
  for (double& v : x.values()) v = oracle::uniform(g, -1, 1);
  const auto hidden = relu_forward(conv2d_forward(x, p.conv, {1, 1}));
  const auto out = rpn_forward(x, p);
  EXPECT_EQ(out.offsets.values(), conv2d_forward(hidden, p.reg, {1, 0}).values());
  EXPECT_EQ(out.actionness.values(), conv2d_forward(hidden, p.cls, {1, 0}).values());
}

TEST(RpnHead, AnchorChannelLayout) {
  const auto grid = generate_anchor_pairs(2, 3, 16.0, AnchorConfig{{32.0}, {1.0, 2.0}});
  RpnOutput out{FeatureMap(16, 2, 3), FeatureMap(4, 2, 3)};
  out.offsets.at(8 * 1 + 5, 1, 2) = 0.7;
  out.actionness.at(2 * 1 + 1, 1, 2) = 3.0;
  const std::size_t a = grid.index(1, 2, 1);
  EXPECT_EQ(anchor_offsets(out, grid, a)[5], 0.7);
  EXPECT_EQ(anchor_logits(out, grid, a)[1], 3.0);
  EXPECT_EQ(anchor_offsets(out, grid, a - 1)[5], 0.0);
}

TEST(DecodeProposals, ZeroOffsetsReturnClippedAnchors) {
  const auto grid = generate_anchor_pairs(3, 4, 16.0, AnchorConfig{{16.0, 48.0}, {1.0}});
  const RpnOutput out{FeatureMap(16, 3, 4), FeatureMap(4, 3, 4)};
  const auto props = decode_proposals(grid, out, 64.0, 48.0);
  ASSERT_EQ(props.size(), grid.pairs.size());
  for (const auto& p : props) {
    EXPECT_NEAR(p.score, 0.5, 1e-15);
    const auto want = clip_pair(grid.pairs[p.anchor], 64.0, 48.0);
    ASSERT_TRUE(want.has_value());
    EXPECT_EQ(p.pair, *want);
    EXPECT_GE(p.pair.b1.x1(), 0.0);
    EXPECT_LE(p.pair.b2.x2(), 64.0);
    EXPECT_LE(p.pair.b2.y2(), 48.0);
  }
}

TEST(DecodeProposals, ScoreIsActionProbability) {
  const auto grid = generate_anchor_pairs(1, 1, 16.0, AnchorConfig{{16.0}, {1.0}});
  RpnOutput out{FeatureMap(8, 1, 1), FeatureMap(2, 1, 1)};
  out.actionness.at(1, 0, 0) = std::log(3.0);
  const auto props = decode_proposals(grid, out, 32.0, 32.0);
  ASSERT_EQ(props.size(), 1u);
  EXPECT_NEAR(props[0].score, 0.75, 1e-12);
}

TEST(DecodeProposals, HugeLogScaleIsClamped) {
  const auto grid = generate_anchor_pairs(1, 1, 16.0, AnchorConfig{{16.0}, {1.0}});
  RpnOutput out{FeatureMap(8, 1, 1), FeatureMap(2, 1, 1)};
  out.offsets.at(2, 0, 0) = 1e6;
  const auto props = decode_proposals(grid, out, 1e5, 1e5);
  ASSERT_EQ(props.size(), 1u);
  EXPECT_TRUE(std::isfinite(props[0].pair.b1.w()));
}

TEST(DecodeProposals, GridMismatchThrows) {
  const auto grid = generate_anchor_pairs(2, 2, 16.0, AnchorConfig{{16.0}, {1.0}});
  const RpnOutput out{FeatureMap(8, 2, 3), FeatureMap(2, 2, 3)};
  EXPECT_THROW(decode_proposals(grid, out, 64, 64), std::invalid_argument);
}

TEST(Sampler, LabelsMatchOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto g = oracle::rng(seed);
    const auto gts = random_gts(g, 3);
    const auto props = near_proposals(g, gts, 200);
    for (bool mean_rule : {false, true}) {
      SamplerConfig cfg;
      cfg.rule = mean_rule ? PositiveRule::mean_iou : PositiveRule::both_boxes;
      const auto got = label_proposals(props, gts, cfg);
      const auto want = oracle::label(props, gts, 0.5, 0.3, mean_rule);
      for (std::size_t p = 0; p < props.size(); ++p) {
        EXPECT_EQ(got[p].label == SampleLabel::positive, want.positive.count(p) == 1) << seed << " " << p;
        EXPECT_EQ(got[p].label == SampleLabel::negative, want.negative.count(p) == 1) << seed << " " << p;
        EXPECT_EQ(got[p].forced, want.forced.count(p) == 1);
      }
    }
  }
}

TEST(Sampler, MeanRuleAdmitsUnevenPair) {
  // One box matches exactly, the other only at IoU 1/3: mean 2/3.
  const BoxPair gt{Box(50, 50, 20, 20), Box(50, 50, 20, 20)};
  const BoxPair prop{Box(50, 50, 20, 20), Box(55, 50, 20, 20)};
  const std::vector<GroundTruthPair> gts{{0, gt}};
  std::vector<Proposal> props{{prop, 0.5, 0}, {gt, 0.5, 1}};
  SamplerConfig both;
  SamplerConfig mean;
  mean.rule = PositiveRule::mean_iou;
  // Proposal 1 is the forced match; proposal 0 is judged on the rule alone.
  EXPECT_EQ(label_proposals(props, gts, both)[0].label, SampleLabel::positive);  // psi2 = 0.6
  std::vector<Proposal> far{{{Box(50, 50, 20, 20), Box(60, 50, 20, 20)}, 0.5, 0}, {gt, 0.5, 1}};
  EXPECT_EQ(label_proposals(far, gts, both)[0].label, SampleLabel::ignored);  // psi2 = 1/3
  EXPECT_EQ(label_proposals(far, gts, mean)[0].label, SampleLabel::positive);
}

TEST(Sampler, IdenticalProposalIsPositive) {
  auto g = oracle::rng(11);
  const auto gts = random_gts(g, 1);
  auto props = random_proposals(g, 50, 300.0);
  props.push_back({gts[0].pair, 0.1, 50});
  const auto labels = label_proposals(props, gts, {});
  EXPECT_EQ(labels[50].label, SampleLabel::positive);
  EXPECT_TRUE(labels[50].forced);
  EXPECT_DOUBLE_EQ(labels[50].best_mean, 1.0);
}

TEST(Sampler, ForcedPositiveWhenNothingClears) {
  const std::vector<GroundTruthPair> gts{{0, {Box(50, 50, 20, 20), Box(50, 50, 20, 20)}}};
  const std::vector<Proposal> props{{{Box(62, 50, 20, 20), Box(62, 50, 20, 20)}, 0.5, 0},
                                    {{Box(150, 150, 20, 20), Box(150, 150, 20, 20)}, 0.5, 1}};
  const auto mb = sample_train(props, gts, {});
  ASSERT_EQ(mb.num_positive(), 1u);
  EXPECT_EQ(mb.samples[0].proposal, 0u);
  EXPECT_EQ(mb.samples[0].gt, std::optional<std::size_t>(0));
}

TEST(Sampler, BatchAndPositiveCaps) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto g = oracle::rng(100 + seed);
    const auto gts = random_gts(g, 3);
    auto props = near_proposals(g, gts, 600);
    const auto more = random_proposals(g, 400, 400.0);
    for (const auto& p : more) props.push_back({p.pair, p.score, props.size()});
    for (std::size_t B : {16u, 64u, 256u}) {
      SamplerConfig cfg;
      cfg.batch_size = B;
      cfg.seed = seed;
      const auto mb = sample_train(props, gts, cfg);
      const auto want = oracle::label(props, gts, 0.5, 0.3);
      EXPECT_LE(mb.samples.size(), B);
      EXPECT_LE(mb.num_positive(), B / 2);
      EXPECT_EQ(mb.num_positive(), std::min(want.positive.size(), B / 2));
      EXPECT_EQ(mb.samples.size(), std::min(B, mb.num_positive() + want.negative.size()));
      std::set<std::size_t> seen;
      for (const auto& s : mb.samples) {
        EXPECT_TRUE(seen.insert(s.proposal).second);
        EXPECT_EQ(s.positive ? want.positive.count(s.proposal) : want.negative.count(s.proposal), 1u);
        EXPECT_EQ(s.gt.has_value(), s.positive);
      }
      // Forced positives survive the cap.
      for (std::size_t f : want.forced) EXPECT_EQ(seen.count(f), 1u) << "forced " << f;
    }
  }
}

TEST(Sampler, PositivesRankedByMeanIoU) {
  const BoxPair gt{Box(50, 50, 20, 20), Box(50, 50, 20, 20)};
  std::vector<Proposal> props;
  for (int i = 0; i < 6; ++i) {
    const double dx = 0.5 * i;
    props.push_back({{Box(50 + dx, 50, 20, 20), Box(50 + dx, 50, 20, 20)}, 0.5, static_cast<std::size_t>(i)});
  }
  SamplerConfig cfg;
  cfg.batch_size = 6;  // positive cap 3
  const std::vector<GroundTruthPair> gts{{0, gt}};
  const auto mb = sample_train(props, gts, cfg);
  ASSERT_EQ(mb.num_positive(), 3u);
  EXPECT_EQ(mb.samples[0].proposal, 0u);
  EXPECT_EQ(mb.samples[1].proposal, 1u);
  EXPECT_EQ(mb.samples[2].proposal, 2u);
}

TEST(Sampler, NoGroundTruthGivesNegatives) {
  auto g = oracle::rng(12);
  const auto props = random_proposals(g, 300);
  SamplerConfig cfg;
  cfg.batch_size = 128;
  const auto mb = sample_train(props, std::span<const GroundTruthPair>{}, cfg);
  EXPECT_EQ(mb.samples.size(), 128u);
  EXPECT_EQ(mb.num_positive(), 0u);
}

TEST(Sampler, RejectsBadInput) {
  const std::vector<GroundTruthPair> gts{{0, {Box(5, 5, 2, 2), Box(5, 5, 2, 2)}}};
  EXPECT_THROW(sample_train(std::span<const Proposal>{}, gts, {}), std::invalid_argument);
  auto g = oracle::rng(1);
  const auto props = random_proposals(g, 5);
  SamplerConfig cfg;
  cfg.neg_thresh = 0.6;
  EXPECT_THROW(sample_train(props, gts, cfg), std::invalid_argument);
}

TEST(Sampler, SeedDeterminism) {
  auto g = oracle::rng(13);
  const auto gts = random_gts(g, 2);
  const auto props = random_proposals(g, 800, 200.0);
  SamplerConfig cfg;
  cfg.batch_size = 32;
  cfg.seed = 5;
  const auto a = sample_train(props, gts, cfg), b = sample_train(props, gts, cfg);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) EXPECT_EQ(a.samples[i].proposal, b.samples[i].proposal);
  cfg.seed = 6;
  const auto c = sample_train(props, gts, cfg);
  bool differs = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) differs |= a.samples[i].proposal != c.samples[i].proposal;
  EXPECT_TRUE(differs);
}

TEST(Sampler, IgnoreBandIsNeverSampled) {
  // psi = 0.4 on both boxes: neither positive nor negative.
  const BoxPair gt{Box(50, 50, 20, 20), Box(50, 50, 20, 20)};
  const double dx = 20.0 * (1 - 0.4) / (1 + 0.4);  // IoU of equal squares shifted by dx
  const std::vector<GroundTruthPair> gts{{0, gt}};
  const std::vector<Proposal> props{{gt, 0.5, 0},
                                    {{Box(50 + dx, 50, 20, 20), Box(50 + dx, 50, 20, 20)}, 0.5, 1},
                                    {{Box(150, 150, 20, 20), Box(150, 150, 20, 20)}, 0.5, 2}};
  EXPECT_NEAR(iou(gt.b1, props[1].pair.b1), 0.4, 1e-12);
  const auto mb = sample_train(props, gts, {});
  for (const auto& s : mb.samples) EXPECT_NE(s.proposal, 1u);
  EXPECT_EQ(mb.samples.size(), 2u);
}

TEST(SelectTest, MatchesQuadraticNms) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto g = oracle::rng(200 + seed);
    const auto props = random_proposals(g, 1500, 150.0);
    std::vector<ScoredPair> scored;
    for (const auto& p : props) scored.push_back({p.pair, p.score});
    for (std::size_t keep : {1000u, 300u}) {
      const auto got = select_test(props, 0.7, keep);
      const auto want = oracle::nms(scored, 0.7, keep);
      ASSERT_EQ(got.size(), want.size());
      EXPECT_LE(got.size(), keep);
      for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i].anchor, props[want[i]].anchor);
    }
  }
}

TEST(RpnBackward, FiniteDifferenceOnInput) {
  auto g = oracle::rng(14);
  const auto p = make_rpn_params(2, 3, 1, 15, 0.5);
  FeatureMap x(2, 3, 3);
  for (double& v : x.values()) v = oracle::uniform(g, -1, 1);
  FeatureMap go(8, 3, 3), ga(2, 3, 3);
  for (double& v : go.values()) v = oracle::uniform(g, -1, 1);
  for (double& v : ga.values()) v = oracle::uniform(g, -1, 1);
  auto objective = [&](const FeatureMap& in) {
    const auto out = rpn_forward(in, p);
    double s = 0.0;
    for (std::size_t i = 0; i < go.size(); ++i) s += go.values()[i] * out.offsets.values()[i];
    for (std::size_t i = 0; i < ga.size(); ++i) s += ga.values()[i] * out.actionness.values()[i];
    return s;
  };
  const auto t = rpn_forward_traced(x, p);
  const auto grads = rpn_backward(x, p, t, go, ga);
  const double h = 1e-5;
  for (std::size_t i = 0; i < x.size(); ++i) {
    // Skip coordinates whose perturbation flips a ReLU.
    auto xp = x, xm = x;
    xp.values()[i] += h;
    xm.values()[i] -= h;
    const auto tp = rpn_forward_traced(xp, p), tm = rpn_forward_traced(xm, p);
    bool flip = false;
    for (std::size_t j = 0; j < tp.pre.size(); ++j) flip |= (tp.pre.values()[j] > 0) != (tm.pre.values()[j] > 0);
    if (flip) continue;
    const double num = (objective(xp) - objective(xm)) / (2 * h);
    EXPECT_LT(relative_error(grads.input.values()[i], num, 1e-3), 1e-5);
  }
}
