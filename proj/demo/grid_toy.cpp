// Two-feature walk-through: the plain optimum (10, 10) versus the setback-robust
// choice (14, 7) for x = (14, 10) under the rule 70 - 3 bp - 4 vit >= 0.

#include <cstdio>

#include "cfx/cfx.hpp"

int main() {
  using namespace cfx;
  const Schema schema = grid_toy_schema();
  const auto rule = grid_toy_rule();
  const Instance x = grid_toy_query();
  std::printf("x = (%.1f, %.1f) predicted %d\n", x[0], x[1], rule.predict(x));

  for (const Instance& z : {Instance{10.0, 10.0}, Instance{14.0, 7.0}}) {
    const auto w = max_c_setback(schema, x, z);
    const auto c = setback_correction_cost(schema, z, w);
    std::printf("z = (%.1f, %.1f): L1 %.1f, max setback (%.1f, %.1f), intended + correction %.1f, "
                "setback flips prediction: %s\n",
                z[0], z[1], std::abs(z[0] - x[0]) + std::abs(z[1] - x[1]), w.delta[0], w.delta[1],
                std::abs(z[0] - x[0]) + std::abs(z[1] - x[1]) + c.raw, rule.predict(w.apply(z)) != 1 ? "yes" : "no");
  }

  for (auto mode : {RobustnessMode::none, RobustnessMode::C}) {
    SearchConfig cfg;
    cfg.population = 200;
    cfg.generations = 60;
    cfg.robustness_mode = mode;
    cfg.seed = 1;
    const auto r = repeat_best(schema, x, rule, 1, cfg, 5);
    std::printf("CoGS %-4s -> (%.3f, %.3f) valid %d objective %.4f\n", std::string(to_string(mode)).c_str(), r.best[0],
                r.best[1], r.valid, r.objective);
  }
}
