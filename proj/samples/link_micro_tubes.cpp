// Links hand-made micro-tubes for two actors into action tubes and shows the
// effect of trimming a weak stretch.

#include <cstdio>
#include <vector>

#include "mtube/mtube.hpp"

using mtube::Box;
using mtube::MicroTube;

int main() {
  // Linking steps at frames 1, 3, ..., 11; each micro-tube covers {t, t + 1}.
  // Actor A walks right with a dip in confidence at frames 5-6; actor B
  // stands still on the right.
  const std::vector<double> a_score{0.9, 0.85, 0.2, 0.8, 0.9, 0.88};
  std::vector<std::vector<MicroTube>> steps;
  for (int s = 0; s < 6; ++s) {
    const int t = 1 + 2 * s;
    const double ax = 30 + 6 * (t - 1);
    steps.push_back({
        {{Box(ax, 60, 30, 40), Box(ax + 6, 60, 30, 40)}, t, 1, {1 - a_score[s], a_score[s]}},
        {{Box(220, 70, 28, 44), Box(220, 70, 28, 44)}, t, 1, {0.3, 0.7}},
    });
  }

  mtube::LinkingConfig cfg;
  cfg.max_paths = 2;
  const auto linked = mtube::link_class_paths(steps, 1, cfg.energy, cfg.max_paths);
  std::printf("%zu paths over %zu steps (%zu edge stages)\n", linked.tubes.size(), steps.size(), linked.edge_stages);
  for (std::size_t i = 0; i < linked.tubes.size(); ++i) {
    const auto& t = linked.tubes[i];
    std::printf("  path %zu: energy %.3f, frames %d-%d, mean score %.3f\n", i, linked.energies[i], t.t_start, t.t_end,
                t.score);
    for (const auto& piece : mtube::trim_tube(t, cfg.trim))
      std::printf("    kept after trimming: frames %d-%d, score %.3f\n", piece.t_start, piece.t_end, piece.score);
  }
  return 0;
}
