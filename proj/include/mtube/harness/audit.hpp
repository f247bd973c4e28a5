#pragma once

// Gradient audit: every differentiable kernel checked against central
// differences on random unit-scale inputs. Tensor-valued ops are reduced to
// a scalar through a fixed random projection.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mtube/geometry.hpp"
#include "mtube/gradcheck.hpp"
#include "mtube/kernels.hpp"
#include "mtube/loss.hpp"

namespace mtube {

struct AuditEntry {
  std::string name;
  GradCheckReport report;
};

namespace detail {

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline FeatureMap shaped(const FeatureMap& like, std::span<const double> x) {
  return FeatureMap(like.channels(), like.height(), like.width(), std::vector<double>(x.begin(), x.end()));
}

}  // namespace detail

inline std::vector<AuditEntry> gradient_audit(std::uint64_t seed = 0,
                                              const GradCheckOptions& base = {}) {
  using detail::dot;
  using detail::random_vector;
  using detail::shaped;
  std::mt19937_64 rng(seed);
  std::vector<AuditEntry> out;
  auto run = [&](std::string name, const Differentiable& f, std::span<const double> x,
                 const GradCheckOptions& opt) { out.push_back({std::move(name), grad_check(f, x, opt)}); };

  // conv2d, with respect to the input and to the weights + bias.
  {
    const ConvSpec spec{2, 1};
    const FeatureMap x0(2, 5, 6, random_vector(rng, 60));
    ConvWeights w(3, 2, 3, 3);
    w.weights = random_vector(rng, w.weights.size());
    w.bias = random_vector(rng, 3);
    const FeatureMap probe = conv2d_forward(x0, w, spec);
    const auto r = random_vector(rng, probe.size());
    const FeatureMap up = shaped(probe, r);
    run("conv2d/input",
        {[&](std::span<const double> x) { return dot(r, conv2d_forward(shaped(x0, x), w, spec).values()); },
         [&](std::span<const double> x) { return conv2d_backward(shaped(x0, x), w, spec, up).input.values(); }},
        x0.values(), base);

    std::vector<double> theta = w.weights;
    theta.insert(theta.end(), w.bias.begin(), w.bias.end());
    auto unpack = [&](std::span<const double> t) {
      ConvWeights v = w;
      std::copy(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(w.weights.size()), v.weights.begin());
      std::copy(t.begin() + static_cast<std::ptrdiff_t>(w.weights.size()), t.end(), v.bias.begin());
      return v;
    };
    run("conv2d/weights",
        {[&](std::span<const double> t) { return dot(r, conv2d_forward(x0, unpack(t), spec).values()); },
         [&](std::span<const double> t) {
           const auto g = conv2d_backward(x0, unpack(t), spec, up).weights;
           std::vector<double> v = g.weights;
           v.insert(v.end(), g.bias.begin(), g.bias.end());
           return v;
         }},
        theta, base);
  }

  // linear, with respect to the input and to the weights + bias.
  {
    LinearWeights w(4, 6);
    w.weights = random_vector(rng, 24);
    w.bias = random_vector(rng, 4);
    const auto x0 = random_vector(rng, 6);
    const auto r = random_vector(rng, 4);
    run("linear/input",
        {[&](std::span<const double> x) { return dot(r, linear_forward(x, w)); },
         [&](std::span<const double> x) { return linear_backward(x, w, r).input; }},
        x0, base);
    std::vector<double> theta = w.weights;
    theta.insert(theta.end(), w.bias.begin(), w.bias.end());
    auto unpack = [&](std::span<const double> t) {
      LinearWeights v = w;
      std::copy(t.begin(), t.begin() + 24, v.weights.begin());
      std::copy(t.begin() + 24, t.end(), v.bias.begin());
      return v;
    };
    run("linear/weights",
        {[&](std::span<const double> t) { return dot(r, linear_forward(x0, unpack(t))); },
         [&](std::span<const double> t) {
           const auto g = linear_backward(x0, unpack(t), r).weights;
           std::vector<double> v = g.weights;
           v.insert(v.end(), g.bias.begin(), g.bias.end());
           return v;
         }},
        theta, base);
  }

  // relu, skipping coordinates whose perturbation would cross zero.
  {
    const FeatureMap x0(3, 4, 4, random_vector(rng, 48));
    const auto r = random_vector(rng, 48);
    GradCheckOptions opt = base;
    opt.skip = [](std::span<const double> x, std::size_t i, double h) { return std::abs(x[i]) <= 10.0 * h; };
    run("relu",
        {[&](std::span<const double> x) { return dot(r, relu_forward(shaped(x0, x)).values()); },
         [&](std::span<const double> x) { return relu_backward(shaped(x0, x), shaped(x0, r)).values(); }},
        x0.values(), opt);
  }

  {
    const auto x0 = random_vector(rng, 5, -2.0, 2.0);
    const auto r = random_vector(rng, 5);
    run("softmax",
        {[&](std::span<const double> x) { return dot(r, softmax(x)); },
         [&](std::span<const double> x) { return softmax_backward(softmax(x), r); }},
        x0, base);
    run("softmax+cross_entropy",
        {[&](std::span<const double> x) { return softmax_cross_entropy(x, 2).value; },
         [&](std::span<const double> x) { return softmax_cross_entropy(x, 2).grad; }},
        x0, base);
  }

  // smooth-L1 in the prediction, skipping |d| near 1; differences span both branches.
  {
    OffsetOctet target;
    const auto tv = random_vector(rng, 8);
    std::copy(tv.begin(), tv.end(), target.v.begin());
    auto x0 = random_vector(rng, 8, -2.5, 2.5);
    for (std::size_t i = 0; i < 8; ++i) x0[i] += target[i];
    auto octet = [](std::span<const double> x) {
      OffsetOctet o;
      std::copy(x.begin(), x.end(), o.v.begin());
      return o;
    };
    GradCheckOptions opt = base;
    opt.skip = [target](std::span<const double> x, std::size_t i, double h) {
      return std::abs(std::abs(x[i] - target[i]) - 1.0) <= 10.0 * h;
    };
    run("smooth_l1",
        {[&](std::span<const double> x) { return smooth_l1(octet(x), target).value; },
         [&](std::span<const double> x) {
           const auto g = smooth_l1(octet(x), target).grad;
           return std::vector<double>(g.v.begin(), g.v.end());
         }},
        x0, opt);
  }

  // fusion, with respect to both inputs stacked.
  for (FusionKind kind : {FusionKind::sum, FusionKind::mean}) {
    const FeatureMap a0(2, 3, 4);
    const auto x0 = random_vector(rng, 48);
    const auto r = random_vector(rng, 24);
    auto split = [&](std::span<const double> x, std::size_t half) { return shaped(a0, x.subspan(half * 24, 24)); };
    run(kind == FusionKind::sum ? "fuse_sum" : "fuse_mean",
        {[&, kind](std::span<const double> x) { return dot(r, fuse(split(x, 0), split(x, 1), kind).values()); },
         [&, kind](std::span<const double>) {
           const auto g = fuse_backward(shaped(a0, r), kind).values();
           std::vector<double> v = g;
           v.insert(v.end(), g.begin(), g.end());
           return v;
         }},
        x0, base);
  }

  // bilinear pooling, with respect to the features and to (xc, yc, w, h).
  {
    const FeatureMap f0(3, 6, 7, random_vector(rng, 126));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Box box(1.5 + 4.0 * u(rng), 1.5 + 3.0 * u(rng), 1.0 + 3.0 * u(rng), 1.0 + 3.0 * u(rng));
    const int kh = 4, kw = 5;
    const auto r = random_vector(rng, 3 * kh * kw);
    const PooledFeature up{3, kh, kw, r};
    run("bilinear_pool/features",
        {[&](std::span<const double> x) { return dot(r, bilinear_pool(shaped(f0, x), box, kh, kw).values); },
         [&](std::span<const double> x) { return bilinear_pool_backward(shaped(f0, x), box, up).features.values(); }},
        f0.values(), base);

    auto as_box = [](std::span<const double> x) { return Box(x[0], x[1], x[2], x[3]); };
    GradCheckOptions opt = base;
    opt.skip = [&, kh, kw](std::span<const double> x, std::size_t, double h) {
      return pool_kink_distance(as_box(x), kh, kw) <= 2.0 * h;
    };
    const std::vector<double> b0{box.xc(), box.yc(), box.w(), box.h()};
    run("bilinear_pool/box",
        {[&](std::span<const double> x) { return dot(r, bilinear_pool(f0, as_box(x), kh, kw).values); },
         [&](std::span<const double> x) {
           const auto g = bilinear_pool_backward(f0, as_box(x), up).box;
           return std::vector<double>(g.begin(), g.end());
         }},
        b0, opt);
  }

  // conv -> relu -> pool chain, with respect to the conv input. A coordinate
  // is skipped when its perturbation flips any ReLU mask or crosses a kink.
  {
    const ConvSpec spec{1, 1};
    const FeatureMap x0(2, 6, 6, random_vector(rng, 72));
    ConvWeights w(3, 2, 3, 3);
    w.weights = random_vector(rng, w.weights.size(), -0.5, 0.5);
    w.bias = random_vector(rng, 3, -0.2, 0.2);
    const Box box(3.1, 2.9, 3.7, 3.3);
    const int kh = 3, kw = 3;
    const auto r = random_vector(rng, 3 * kh * kw);
    const PooledFeature up{3, kh, kw, r};
    auto forward = [&](std::span<const double> x) {
      return dot(r, bilinear_pool(relu_forward(conv2d_forward(shaped(x0, x), w, spec)), box, kh, kw).values);
    };
    auto backward = [&](std::span<const double> x) {
      const FeatureMap pre = conv2d_forward(shaped(x0, x), w, spec);
      const auto gp = bilinear_pool_backward(relu_forward(pre), box, up).features;
      return conv2d_backward(shaped(x0, x), w, spec, relu_backward(pre, gp)).input.values();
    };
    GradCheckOptions opt = base;
    opt.skip = [&](std::span<const double> x, std::size_t i, double h) {
      std::vector<double> xp(x.begin(), x.end()), xm(x.begin(), x.end());
      xp[i] += h;
      xm[i] -= h;
      const auto a = conv2d_forward(shaped(x0, xp), w, spec).values();
      const auto b = conv2d_forward(shaped(x0, xm), w, spec).values();
      for (std::size_t j = 0; j < a.size(); ++j)
        if ((a[j] > 0.0) != (b[j] > 0.0)) return true;
      return false;
    };
    run("conv2d>relu>bilinear_pool", {forward, backward}, x0.values(), opt);
  }

  // Batched multi-task loss, with respect to every logit and offset of a
  // small batch mixing foreground and background samples.
  {
    const int C = 2;
    std::vector<SampleTarget> targets(3);
    targets[0] = {1, OffsetOctet{}, 1, OffsetOctet{}};
    targets[1] = {2, OffsetOctet{}, 1, OffsetOctet{}};
    targets[2] = {0, std::nullopt, 0, std::nullopt};
    for (auto& t : targets) {
      for (auto* g : {&t.g_e, &t.g_m})
        if (*g) {
          const auto v = random_vector(rng, 8);
          std::copy(v.begin(), v.end(), (*g)->v.begin());
        }
    }
    const std::size_t per = (C + 1) + 8 * C + 2 + 8;
    auto unpack = [&](std::span<const double> x) {
      std::vector<SamplePrediction> preds(targets.size());
      for (std::size_t s = 0; s < preds.size(); ++s) {
        auto it = x.begin() + static_cast<std::ptrdiff_t>(s * per);
        preds[s].end_logits.assign(it, it + C + 1);
        it += C + 1;
        preds[s].end_offsets.resize(C);
        for (auto& o : preds[s].end_offsets) {
          std::copy(it, it + 8, o.v.begin());
          it += 8;
        }
        preds[s].mid_logits = {it[0], it[1]};
        it += 2;
        std::copy(it, it + 8, preds[s].mid_offsets.v.begin());
      }
      return preds;
    };
    const auto x0 = random_vector(rng, per * targets.size(), -1.5, 1.5);
    const LossWeights lw = LossWeights::reduced_mid();
    auto near_kink = [&](std::span<const double> x, std::size_t i, double h) {
      const std::size_t s = i / per, k = i % per;
      const auto& t = targets[s];
      std::optional<double> target;
      if (k >= static_cast<std::size_t>(C + 1) && k < static_cast<std::size_t>(C + 1 + 8 * C)) {
        const std::size_t cls = (k - (C + 1)) / 8 + 1, j = (k - (C + 1)) % 8;
        if (t.c_e == static_cast<int>(cls)) target = (*t.g_e)[j];
      } else if (k >= static_cast<std::size_t>(C + 3 + 8 * C) && t.c_m == 1) {
        target = (*t.g_m)[k - (C + 3 + 8 * C)];
      }
      return target && std::abs(std::abs(x[i] - *target) - 1.0) <= 10.0 * h;
    };
    GradCheckOptions opt = base;
    opt.skip = near_kink;
    run("multi_task_loss",
        {[&](std::span<const double> x) { return multi_task_loss_batch(unpack(x), targets, lw).report.total; },
         [&](std::span<const double> x) {
           const auto b = multi_task_loss_batch(unpack(x), targets, lw);
           std::vector<double> v;
           for (const auto& g : b.grads) {
             v.insert(v.end(), g.end_logits.begin(), g.end_logits.end());
             for (const auto& o : g.end_offsets) v.insert(v.end(), o.v.begin(), o.v.end());
             v.insert(v.end(), g.mid_logits.begin(), g.mid_logits.end());
             v.insert(v.end(), g.mid_offsets.v.begin(), g.mid_offsets.v.end());
           }
           return v;
         }},
        x0, opt);
  }
  return out;
}

}  // namespace mtube
