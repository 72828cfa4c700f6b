#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cfx/cfx.hpp"
#include "toys.hpp"

using namespace cfx;
using toys::cat;
using toys::num;

namespace {

SearchConfig small(Algorithm a = Algorithm::cogs, RobustnessMode m = RobustnessMode::none) {
  SearchConfig c;
  c.algorithm = a;
  c.robustness_mode = m;
  c.population = 100;
  c.generations = 30;
  c.seed = 3;
  return c;
}

Schema mixed() {
  return Schema({num("a", 0, 10, Constraint::increase_only, 1, 1), cat("b", {"p", "q", "r"}, Constraint::none, {0}),
                 num("c", 0, 10, Constraint::decrease_only, 0.5, 0.5), cat("d", {"u", "v"}, Constraint::frozen, {}),
                 num("e", 0, 10, Constraint::none, 2, 2), num("f", 0, 10, Constraint::frozen, 1, 1)});
}

FunctionPredictor mixed_model() {
  return FunctionPredictor([](const Instance& z) {
    const double s = 0.3 * z[0] - 0.2 * z[2] + (z.category(1) == 2 ? 1.0 : 0.0) + 0.25 * z[4] - 3.0;
    return s >= 0 ? 1 : 0;
  });
}

}  // namespace

TEST(Cogs, ThresholdBoundaryAtDefaultBudget) {
  const Schema s = toys::threshold_schema();
  SearchConfig c;
  c.seed = 1;
  const auto r = cogs_search(s, Instance{0}, toys::threshold_model(), 1, c);
  EXPECT_TRUE(r.valid);
  EXPECT_GE(r.best[0], 5.0);
  EXPECT_LE(r.best[0], 5.2);
  EXPECT_EQ(r.breakdown.validity, 0.0);
}

TEST(Cogs, NoPlausibleValidPoint) {
  const Schema s = toys::threshold_schema(Constraint::decrease_only);
  const auto r = cogs_search(s, Instance{2}, toys::threshold_model(), 1, small());
  EXPECT_FALSE(r.valid);
  EXPECT_EQ(r.breakdown.validity, 1.0);
  EXPECT_LE(r.best[0], 2.0);
}

TEST(Search, QueryAlreadyTargetIsPrecondition) {
  const Schema s = toys::threshold_schema();
  for (auto a : {Algorithm::cogs, Algorithm::growing_spheres, Algorithm::nelder_mead, Algorithm::random})
    EXPECT_THROW(run_search(s, Instance{7}, toys::threshold_model(), 1, small(a)), PreconditionError);
}

TEST(Search, ConfigValidation) {
  SearchConfig c = small();
  c.population = 7;
  EXPECT_THROW(c.validate(), PreconditionError);
  c = small();
  c.s_mut = 0;
  EXPECT_THROW(c.validate(), PreconditionError);
  c = small();
  c.tournament = 1;
  EXPECT_THROW(c.validate(), PreconditionError);
  EXPECT_NO_THROW(small().validate());
}

TEST(Cogs, SeededDeterminism) {
  const Schema s = mixed();
  const Instance x{2, 0, 8, 1, 3, 5};
  for (auto m : {RobustnessMode::none, RobustnessMode::C, RobustnessMode::K, RobustnessMode::both}) {
    const auto a = cogs_search(s, x, mixed_model(), 1, small(Algorithm::cogs, m));
    const auto b = cogs_search(s, x, mixed_model(), 1, small(Algorithm::cogs, m));
    EXPECT_TRUE(a.best == b.best);
    EXPECT_EQ(a.objective, b.objective);
    EXPECT_EQ(a.evaluations, b.evaluations);
    EXPECT_EQ(a.best_history, b.best_history);
  }
  const auto r1 = random_search(s, x, mixed_model(), 1, small(Algorithm::random));
  const auto r2 = random_search(s, x, mixed_model(), 1, small(Algorithm::random));
  EXPECT_TRUE(r1.best == r2.best);
}

TEST(Cogs, ParallelEvaluationMatchesSerial) {
  const Schema s = mixed();
  const Instance x{2, 0, 8, 1, 3, 5};
  SearchConfig c = small(Algorithm::cogs, RobustnessMode::both);
  const auto serial = cogs_search(s, x, mixed_model(), 1, c);
  c.jobs = 4;
  const auto parallel = cogs_search(s, x, mixed_model(), 1, c);
  EXPECT_TRUE(serial.best == parallel.best);
  EXPECT_EQ(serial.objective, parallel.objective);
}

TEST(Search, EveryEvaluatedCandidateIsFeasible) {
  const Schema s = mixed();
  const Instance x{2, 0, 8, 1, 3, 5};
  for (auto a : {Algorithm::cogs, Algorithm::growing_spheres, Algorithm::nelder_mead, Algorithm::random})
    for (auto m : {RobustnessMode::none, RobustnessMode::both}) {
      SearchConfig c = small(a, m);
      c.debug_checks = true;
      c.gs_layer_points = 200;
      SearchResult r;
      ASSERT_NO_THROW(r = run_search(s, x, mixed_model(), 1, c)) << to_string(a);
      EXPECT_NO_THROW(check_instance(s, r.best));
      EXPECT_TRUE(check_plausible(s, x, r.best));
      EXPECT_EQ(r.valid, r.breakdown.validity == 0.0);
    }
}

TEST(Cogs, ArchiveIsMonotone) {
  const Schema s = mixed();
  const auto r = cogs_search(s, Instance{2, 0, 8, 1, 3, 5}, mixed_model(), 1, small(Algorithm::cogs, RobustnessMode::both));
  ASSERT_EQ(r.best_history.size(), 31u);
  for (std::size_t g = 1; g < r.best_history.size(); ++g) EXPECT_LE(r.best_history[g], r.best_history[g - 1]);
  EXPECT_EQ(r.best_history.back(), r.objective);
}

TEST(Cogs, RobustResultFields) {
  const Schema s = mixed();
  const Instance x{2, 0, 8, 1, 3, 5};
  const auto none = cogs_search(s, x, mixed_model(), 1, small(Algorithm::cogs, RobustnessMode::none));
  EXPECT_FALSE(none.robustified_gower.has_value());
  EXPECT_FALSE(none.k_score.has_value());
  const auto c = cogs_search(s, x, mixed_model(), 1, small(Algorithm::cogs, RobustnessMode::C));
  ASSERT_TRUE(c.robustified_gower.has_value());
  EXPECT_DOUBLE_EQ(*c.robustified_gower, robustified_gower(s, x, c.best));
  EXPECT_DOUBLE_EQ(c.objective, 0.5 * *c.robustified_gower + 0.5 * c.breakdown.sparsity + c.breakdown.validity);
  const auto k = cogs_search(s, x, mixed_model(), 1, small(Algorithm::cogs, RobustnessMode::K));
  ASSERT_TRUE(k.valid);
  ASSERT_TRUE(k.k_score.has_value());
  EXPECT_DOUBLE_EQ(k.objective, k.breakdown.total + 0.5 * (1.0 - *k.k_score));
}

TEST(Cogs, KWithZeroSamplesEqualsNone) {
  const Schema s = mixed();
  const Instance x{2, 0, 8, 1, 3, 5};
  SearchConfig k = small(Algorithm::cogs, RobustnessMode::K);
  k.m_k_samples = 0;
  const auto a = cogs_search(s, x, mixed_model(), 1, k);
  const auto b = cogs_search(s, x, mixed_model(), 1, small());
  EXPECT_TRUE(a.best == b.best);
  EXPECT_EQ(a.objective, b.objective);
  EXPECT_EQ(a.model_queries, b.model_queries);
}

TEST(Cogs, KModeSpendsMoreQueries) {
  const Schema s = mixed();
  const Instance x{2, 0, 8, 1, 3, 5};
  const auto none = cogs_search(s, x, mixed_model(), 1, small());
  const auto k = cogs_search(s, x, mixed_model(), 1, small(Algorithm::cogs, RobustnessMode::K));
  EXPECT_GT(k.model_queries, none.model_queries);
}

TEST(Objective, KScoreIsAFunctionOfZ) {
  const Schema s = mixed();
  const Instance x{2, 0, 8, 1, 3, 5};
  SearchConfig c = small(Algorithm::cogs, RobustnessMode::K);
  const Instance z{10, 0, 8, 1, 10, 5};
  const auto model = mixed_model();
  Objective a(s, x, model, 1, c);
  const auto e1 = a.evaluate(z);
  Objective b(s, x, model, 1, c);
  b.evaluate(Instance{9, 0, 8, 1, 10, 5});
  const auto e2 = b.evaluate(z);
  ASSERT_TRUE(e1.k_score.has_value());
  EXPECT_EQ(*e1.k_score, *e2.k_score);
  // Invalid candidates take the maximal K penalty.
  const auto bad = a.evaluate(x);
  EXPECT_FALSE(bad.valid());
  EXPECT_DOUBLE_EQ(bad.total, bad.plain.total + 0.5);
}

TEST(Cogs, ConstraintsAreHonoured) {
  const Schema s = mixed();
  const Instance x{2, 0, 8, 1, 3, 5};
  const auto r = cogs_search(s, x, mixed_model(), 1, small());
  EXPECT_GE(r.best[0], x[0]);
  EXPECT_LE(r.best[2], x[2]);
  EXPECT_EQ(r.best[3], x[3]);
  EXPECT_EQ(r.best[5], x[5]);
}

TEST(Cogs, AllCategoricalToyMatchesBruteForce) {
  const Schema s({cat("a", {"0", "1", "2", "3"}, Constraint::none, {0, 1}), cat("b", {"0", "1", "2", "3"}, Constraint::none, {3}),
                  cat("c", {"0", "1", "2", "3"}, Constraint::none, {}), cat("d", {"0", "1", "2"}, Constraint::none, {0, 2})});
  const FunctionPredictor f([](const Instance& z) {
    return z.category(0) + z.category(1) + z.category(2) + (z.category(3) == 1 ? 2 : 0) >= 6 ? 1 : 0;
  });
  const Instance x{0, 0, 0, 0};
  for (auto m : {RobustnessMode::none, RobustnessMode::C}) {
    SearchConfig c = small(Algorithm::cogs, m);
    // Oracle: enumerate all 192 points with the plain/robustified loss written out by hand.
    double best = 1e9;
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b)
        for (int cc = 0; cc < 4; ++cc)
          for (int d = 0; d < 3; ++d) {
            const int v[4] = {a, b, cc, d};
            const Instance z{static_cast<double>(a), static_cast<double>(b), static_cast<double>(cc),
                             static_cast<double>(d)};
            double g = 0, l = 0;
            for (std::size_t i = 0; i < 4; ++i) {
              if (v[i] == 0) continue;
              ++l;
              const bool revert = m == RobustnessMode::C && s[i].reachable(0);
              g += revert ? 2 : 1;
            }
            const double total = 0.5 * g / 4 + 0.5 * l / 4 + (f.predict(z) == 1 ? 0 : 1);
            best = std::min(best, total);
          }
    const auto r = repeat_best(s, x, f, 1, c, 5);
    EXPECT_NEAR(r.objective, best, 1e-12) << to_string(m);
  }
}

TEST(RepeatBest, PicksMinimumAndSumsCounts) {
  const Schema s = mixed();
  const Instance x{2, 0, 8, 1, 3, 5};
  SearchConfig c = small();
  c.population = 10;
  c.generations = 3;
  std::vector<SearchResult> runs;
  for (int r = 0; r < 4; ++r) {
    SearchConfig cr = c;
    cr.seed = c.seed + static_cast<std::uint64_t>(r);
    runs.push_back(cogs_search(s, x, mixed_model(), 1, cr));
  }
  std::size_t arg = 0, evals = 0;
  for (std::size_t r = 0; r < runs.size(); ++r) {
    if (runs[r].objective < runs[arg].objective) arg = r;
    evals += runs[r].evaluations;
  }
  const auto best = repeat_best(s, x, mixed_model(), 1, c, 4);
  EXPECT_EQ(best.seed, runs[arg].seed);
  EXPECT_TRUE(best.best == runs[arg].best);
  EXPECT_EQ(best.evaluations, evals);
  const auto single = repeat_best(s, x, mixed_model(), 1, c, 1);
  EXPECT_TRUE(single.best == runs[0].best);
  EXPECT_EQ(single.evaluations, runs[0].evaluations);
  EXPECT_THROW(repeat_best(s, x, mixed_model(), 1, c, 0), PreconditionError);
}

TEST(RepeatBest, TiesGoToLowestSeed) {
  // Every run reaches the same optimum of a tiny discrete problem.
  const Schema s({cat("a", {"0", "1"})});
  const FunctionPredictor f([](const Instance& z) { return z.category(0); });
  const auto r = repeat_best(s, Instance{0}, f, 1, small(), 5);
  EXPECT_EQ(r.seed, small().seed);
}

TEST(GrowingSpheres, DiskTarget) {
  const Schema s({num("a", 0, 1), num("b", 0, 1)});
  const FunctionPredictor f([](const Instance& z) { return std::hypot(z[0] - 0.6, z[1] - 0.6) < 0.3 ? 1 : 0; });
  const Instance x{0.2, 0.2};
  const auto r = growing_spheres_search(s, x, f, 1, small(Algorithm::growing_spheres));
  ASSERT_TRUE(r.valid);
  const double gap = std::hypot(0.4, 0.4) - 0.3;
  // The first layer beyond the initial ball spans [0.1, 0.28].
  EXPECT_GE(std::hypot(r.best[0] - x[0], r.best[1] - x[1]), gap - 1e-12);
  EXPECT_LE(std::hypot(r.best[0] - x[0], r.best[1] - x[1]), 0.28 + 1e-12);
}

TEST(GrowingSpheres, UnreachableTarget) {
  const Schema s({num("a", 0, 1), num("b", 0, 1)});
  SearchConfig c = small(Algorithm::growing_spheres);
  c.gs_layer_points = 100;
  const auto r = growing_spheres_search(s, Instance{0.5, 0.5}, ConstantPredictor(0), 1, c);
  EXPECT_FALSE(r.valid);
}

TEST(GrowingSpheres, ThresholdBoundary) {
  const Schema s = toys::threshold_schema();
  const auto r = growing_spheres_search(s, Instance{0}, toys::threshold_model(), 1, small(Algorithm::growing_spheres));
  ASSERT_TRUE(r.valid);
  EXPECT_GE(r.best[0], 5.0);
  EXPECT_LE(r.best[0], 5.0 + 0.1 * 10);
}

TEST(GrowingSpheres, SparsityStepRevertsUselessChanges) {
  const Schema s({num("a", 0, 1), num("b", 0, 1), num("c", 0, 1)});
  const FunctionPredictor f([](const Instance& z) { return z[0] > 0.7 ? 1 : 0; });
  const auto r = growing_spheres_search(s, Instance{0.5, 0.5, 0.5}, f, 1, small(Algorithm::growing_spheres));
  ASSERT_TRUE(r.valid);
  EXPECT_EQ(r.best[1], 0.5);
  EXPECT_EQ(r.best[2], 0.5);
}

TEST(NelderMead, ConvergesNearBoundary) {
  const Schema s = toys::threshold_schema();
  const auto r = nelder_mead_search(s, Instance{4.9}, toys::threshold_model(), 1, small(Algorithm::nelder_mead));
  ASSERT_TRUE(r.valid);
  EXPECT_NEAR(r.best[0], 5.0, 1e-2 * 10);
}

TEST(NelderMead, PlateauFails) {
  const Schema s = toys::threshold_schema();
  const auto r = nelder_mead_search(s, Instance{0}, toys::threshold_model(), 1, small(Algorithm::nelder_mead));
  EXPECT_FALSE(r.valid);
}

TEST(NelderMead, NeverWorseThanQuery) {
  const Schema s({num("a", 0, 1), num("b", 0, 1)});
  const FunctionPredictor f([](const Instance& z) { return z[0] + z[1] > 1.2 ? 1 : 0; });
  const Instance x{0.55, 0.55};
  const auto r = nelder_mead_search(s, x, f, 1, small(Algorithm::nelder_mead));
  EXPECT_LE(r.objective, loss(s, x, x, f, 1).total);
}

TEST(RandomSearch, SingleDraw) {
  const Schema s = toys::threshold_schema();
  SearchConfig c = small(Algorithm::random);
  c.population = 1;
  c.generations = 1;
  const auto r = random_search(s, Instance{0}, toys::threshold_model(), 1, c);
  EXPECT_EQ(r.evaluations, 1u);
  EXPECT_EQ(r.model_queries, 1u);
}

TEST(RandomSearch, LargeAndZeroMeasureValidRegions) {
  const Schema s({num("a", 0, 1)});
  const FunctionPredictor big([](const Instance& z) { return z[0] > 0.01 ? 1 : 0; });
  EXPECT_TRUE(random_search(s, Instance{0}, big, 1, small(Algorithm::random)).valid);
  const FunctionPredictor point([](const Instance& z) { return z[0] == 0.123456789 ? 1 : 0; });
  EXPECT_FALSE(random_search(s, Instance{0}, point, 1, small(Algorithm::random)).valid);
}

TEST(Names, RoundTrip) {
  for (auto a : {Algorithm::cogs, Algorithm::growing_spheres, Algorithm::nelder_mead, Algorithm::random})
    EXPECT_EQ(parse_algorithm(to_string(a)), a);
  for (auto m : {RobustnessMode::none, RobustnessMode::C, RobustnessMode::K, RobustnessMode::both})
    EXPECT_EQ(parse_mode(to_string(m)), m);
  EXPECT_FALSE(parse_mode("sideways").has_value());
}
