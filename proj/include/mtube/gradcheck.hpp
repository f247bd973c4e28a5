#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace mtube {

// A scalar objective over a flat parameter vector and its analytic gradient.
// Ops with tensor outputs are checked through a fixed random projection
// L(x) = <r, f(x)>, whose gradient is the op's backward with upstream r.
struct Differentiable {
  std::function<double(std::span<const double>)> value;
  std::function<std::vector<double>(std::span<const double>)> gradient;
};

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  // Denominator floor for the relative error, so that coordinates whose true
  // derivative is ~0 are compared absolutely.
  double scale_floor = 1e-3;
  // Returns true when coordinate i of x sits too close to a kink to be
  // compared by central differences.
  std::function<bool(std::span<const double> x, std::size_t i, double step)> skip;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::vector<std::size_t> failing;

  bool passed() const noexcept { return failing.empty() && checked > 0; }
};

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline GradCheckReport grad_check(const Differentiable& f, std::span<const double> x0,
                                  const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  std::vector<double> x(x0.begin(), x0.end());
  const std::vector<double> analytic = f.gradient(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (opt.skip && opt.skip(x, i, opt.step)) {
      ++report.skipped;
      continue;
    }
    const double saved = x[i];
    x[i] = saved + opt.step;
    const double fp = f.value(x);
    x[i] = saved - opt.step;
    const double fm = f.value(x);
    x[i] = saved;
    const double numeric = (fp - fm) / (2.0 * opt.step);
    const double err = relative_error(analytic[i], numeric, opt.scale_floor);
    report.max_rel_error = std::max(report.max_rel_error, err);
    ++report.checked;
    if (!(err < opt.tolerance)) report.failing.push_back(i);
  }
  return report;
}

}  // namespace mtube
