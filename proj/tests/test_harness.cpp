#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cfx/cfx.hpp"
#include "toys.hpp"

using namespace cfx;

namespace {

HarnessConfig tiny(std::uint64_t seed = 5) {
  HarnessConfig c;
  c.folds = 3;
  c.repeats = 1;
  c.instances_per_fold = 2;
  c.seed = seed;
  c.search.population = 60;
  c.search.generations = 15;
  c.search.m_k_samples = 8;
  c.n_perturbations = 40;
  c.m_eval = 200;
  return c;
}

struct Fixture {
  SyntheticData sd;
  std::shared_ptr<const Predictor> model;
};

Fixture credit(std::size_t d = 6, std::uint64_t seed = 11) {
  Fixture fx{generate_synthetic(Profile::credit_like, 120, d, seed), nullptr};
  fx.model = std::make_shared<LinearRulePredictor>(fx.sd.rule);
  return fx;
}

Dataset threshold_data(const Predictor& f) {
  Dataset d{toys::threshold_schema(), {}, {}, {"no", "yes"}, 1};
  for (int i = 0; i < 60; ++i) {
    Instance z{i / 6.0};
    d.labels.push_back(f.predict(z));
    d.instances.push_back(std::move(z));
  }
  return d;
}

std::string csv_of(const Table& t) {
  std::ostringstream os;
  write_csv(t, os);
  return os.str();
}

}  // namespace

TEST(Config, UnknownKeysAreRejected) {
  HarnessConfig c;
  EXPECT_THROW(apply_config(c, nlohmann::json{{"fold", 3}}), ParseError);
  EXPECT_THROW(apply_config(c, nlohmann::json{{"search", {{"populaton", 3}}}}), ParseError);
  EXPECT_THROW(apply_config(c, nlohmann::json{{"grid", {{{"trees", 3}}}}}), ParseError);
  EXPECT_THROW(apply_config(c, nlohmann::json{{"modes", {"robust"}}}), ParseError);
  EXPECT_THROW(apply_config(c, nlohmann::json{{"folds", "three"}}), ParseError);
  EXPECT_THROW(apply_config(c, nlohmann::json::array()), ParseError);
}

TEST(Config, ValuesAreApplied) {
  HarnessConfig c;
  apply_config(c, nlohmann::json::parse(R"({"folds": 4, "modes": ["none", "K"],
      "grid": [{"n_trees": 7, "min_samples_split": 3, "max_features": "all_d"}],
      "search": {"population": 33, "robustness_mode": "both", "nm_maxiter": 9}})"));
  EXPECT_EQ(c.folds, 4);
  EXPECT_EQ(c.modes, (std::vector<RobustnessMode>{RobustnessMode::none, RobustnessMode::K}));
  ASSERT_EQ(c.grid.size(), 1u);
  EXPECT_EQ(c.grid[0].n_trees, 7);
  EXPECT_EQ(c.grid[0].max_features, MaxFeatures::all_d);
  EXPECT_EQ(c.search.population, 33);
  EXPECT_EQ(c.search.robustness_mode, RobustnessMode::both);
  EXPECT_EQ(c.search.nm_maxiter, 9);
}

TEST(Config, JsonRoundTripIsStable) {
  const auto c = HarnessConfig::desk();
  HarnessConfig back;
  auto j = harness_config_json(c);
  apply_config(back, j);
  EXPECT_EQ(harness_config_json(back), j);
}

TEST(Prepare, PicksNonTargetTestRows) {
  auto fx = credit();
  const auto cfg = tiny();
  const auto p = prepare(fx.sd.data, cfg, fx.model);
  ASSERT_EQ(p.folds.size(), 3u);
  for (const auto& ctx : p.folds) {
    EXPECT_LE(ctx.instances.size(), cfg.instances_per_fold);
    EXPECT_TRUE(std::is_sorted(ctx.instances.begin(), ctx.instances.end()));
    for (auto row : ctx.instances) EXPECT_NE(fx.model->predict(fx.sd.data.instances[row]), fx.sd.data.target_class);
  }
  const auto q = prepare(fx.sd.data, cfg, fx.model);
  for (std::size_t f = 0; f < 3; ++f) EXPECT_EQ(p.folds[f].instances, q.folds[f].instances);
}

TEST(Prepare, TrainsOneForestPerFold) {
  auto fx = credit(4);
  auto cfg = tiny();
  cfg.grid = {{5, 2, MaxFeatures::all_d}};
  cfg.cv_k = 2;
  const auto p = prepare(fx.sd.data, cfg);
  for (const auto& ctx : p.folds) {
    ASSERT_TRUE(ctx.params.has_value());
    EXPECT_EQ(ctx.params->n_trees, 5);
    EXPECT_GT(ctx.test_accuracy, 0.5);
  }
}

TEST(Rq1, MatchIsMonotoneInTolerance) {
  const Schema s({toys::num("a", 0, 10), toys::num("b", 0, 10), toys::cat("c", {"p", "q"})});
  const Instance x{0, 0, 0};
  const Instance a{5, 0, 1}, b{5.4, 0, 1};
  EXPECT_FALSE(counterfactuals_match(s, x, a, b, 0.01));
  EXPECT_TRUE(counterfactuals_match(s, x, a, b, 0.05));
  EXPECT_FALSE(counterfactuals_match(s, x, a, Instance{5, 1, 1}, 0.10));
  EXPECT_FALSE(counterfactuals_match(s, x, a, Instance{5, 0, 0}, 0.10));

  auto fx = credit();
  const auto cfg = tiny();
  const auto p = prepare(fx.sd.data, cfg, fx.model);
  const auto outcomes = run_modes(p, cfg, cfg.modes);
  const auto reps = run_rq1(outcomes, fx.sd.data.schema, {0.01, 0.05, 0.10});
  ASSERT_EQ(reps.size(), 9u);
  for (std::size_t m = 0; m < 3; ++m) {
    const auto& r1 = reps[3 * m];
    const auto& r5 = reps[3 * m + 1];
    const auto& r10 = reps[3 * m + 2];
    EXPECT_LE(r1.frequency, r5.frequency);
    EXPECT_LE(r5.frequency, r10.frequency);
    for (std::size_t k = 0; k < r1.matched.size(); ++k) {
      if (r1.matched[k]) {
        EXPECT_TRUE(r5.matched[k]);
      }
      if (r5.matched[k]) {
        EXPECT_TRUE(r10.matched[k]);
      }
    }
  }
}

TEST(Rq1, IdenticalRunsMatchEverywhere) {
  auto fx = credit();
  const auto cfg = tiny();
  const auto p = prepare(fx.sd.data, cfg, fx.model);
  auto outcomes = run_modes(p, cfg, {RobustnessMode::none});
  for (auto& o : outcomes) o.by_mode[RobustnessMode::C] = o.by_mode[RobustnessMode::none];
  for (const auto& r : run_rq1(outcomes, fx.sd.data.schema, {0.01})) EXPECT_EQ(r.frequency, 1.0);
}

class Perturbations : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fx_ = new Fixture(credit(6));
    cfg_ = tiny();
    prepared_ = new Prepared(prepare(fx_->sd.data, cfg_, fx_->model));
    outcomes_ = new std::vector<InstanceOutcome>(run_modes(*prepared_, cfg_, cfg_.modes));
    study_ = new PerturbationStudy(run_perturbations(*outcomes_, fx_->sd.data, cfg_));
  }
  static void TearDownTestSuite() {
    delete study_;
    delete outcomes_;
    delete prepared_;
    delete fx_;
  }
  static Fixture* fx_;
  static HarnessConfig cfg_;
  static Prepared* prepared_;
  static std::vector<InstanceOutcome>* outcomes_;
  static PerturbationStudy* study_;
};
Fixture* Perturbations::fx_ = nullptr;
HarnessConfig Perturbations::cfg_;
Prepared* Perturbations::prepared_ = nullptr;
std::vector<InstanceOutcome>* Perturbations::outcomes_ = nullptr;
PerturbationStudy* Perturbations::study_ = nullptr;

TEST_F(Perturbations, CScopeIsAlwaysFixable) {
  std::size_t seen = 0;
  for (const auto& c : study_->cells)
    if (c.scope == Scope::C_only) {
      EXPECT_EQ(c.fixable, 1.0);
      ++seen;
    }
  EXPECT_GT(seen, 0u);
  EXPECT_NO_THROW(rq2_table(*study_));
}

TEST_F(Perturbations, FrozenPerturbableFeatureBreaksFixability) {
  // inflation (frozen, perturbable) lowers the score; a minimal z sits on the
  // boundary, so some K-scope perturbations invalidate it for good.
  const auto fix = group_cells(*study_, [](const PerturbationCell& c) { return std::optional<double>(c.fixable); });
  EXPECT_LT(mean_of(fix.at({RobustnessMode::none, Scope::K_only, "uniform"})), 1.0);
}

TEST_F(Perturbations, ExcludedCountsAreConserved) {
  const std::size_t pairs = outcomes_->size() * cfg_.modes.size();
  EXPECT_EQ(study_->cells.size(), (pairs - study_->excluded_invalid) * 3 * 2);
  std::size_t invalid = 0;
  for (const auto& o : *outcomes_)
    for (const auto& [m, r] : o.by_mode) invalid += !r.valid;
  EXPECT_EQ(study_->excluded_invalid, invalid);
}

TEST_F(Perturbations, NoneModeCostsAreAtLeastIdeal) {
  for (const auto& c : study_->cells) {
    if (c.mode != RobustnessMode::none) continue;
    if (c.cost_ratio) {
      EXPECT_DOUBLE_EQ(*c.cost_ratio, 1.0);
    }
    if (c.relative_cost) {
      EXPECT_GE(*c.relative_cost, 1.0 - 1e-12);
    }
  }
  for (const auto& [m, v] : cost_ratios(*study_))
    for (double r : v) EXPECT_GT(r, 0.0);
}

TEST_F(Perturbations, FractionsAreProbabilities) {
  for (const auto& c : study_->cells) {
    EXPECT_GE(c.fixable, 0.0);
    EXPECT_LE(c.fixable, 1.0);
    EXPECT_GE(c.invalid, 0.0);
    EXPECT_LE(c.invalid, 1.0);
    // valid points are fixable, so fixable + invalid >= 1
    EXPECT_GE(c.fixable + c.invalid, 1.0 - 1e-12);
  }
}

TEST_F(Perturbations, SignificanceIsHolmAdjusted) {
  const auto t = significance_table(*study_);
  for (const auto& row : t.rows) EXPECT_GE(std::stod(row[5]), std::stod(row[4]) - 1e-15);
}

TEST_F(Perturbations, TablesAreDeterministic) {
  const auto again = run_perturbations(*outcomes_, fx_->sd.data, cfg_);
  EXPECT_EQ(csv_of(rq2_table(*study_)), csv_of(rq2_table(again)));
  EXPECT_EQ(csv_of(rq3_table(*study_)), csv_of(rq3_table(again)));
  EXPECT_EQ(csv_of(perturbation_cells_table(*study_)), csv_of(perturbation_cells_table(again)));
  auto par = cfg_;
  par.jobs = 3;
  const auto p2 = prepare(fx_->sd.data, par, fx_->model);
  const auto o2 = run_modes(p2, par, par.modes);
  EXPECT_EQ(csv_of(perturbation_cells_table(run_perturbations(o2, fx_->sd.data, par))),
            csv_of(perturbation_cells_table(*study_)));
}

TEST(Rq2, UnconstrainedSchemaIsFullyFixable) {
  auto fx = credit(6);
  std::vector<FeatureSchema> fs = fx.sd.data.schema.features();
  for (auto& f : fs) f.constraint = Constraint::none;
  fx.sd.data.schema = Schema(fs);
  const auto cfg = tiny();
  const auto p = prepare(fx.sd.data, cfg, fx.model);
  const auto study = run_perturbations(run_modes(p, cfg, cfg.modes), fx.sd.data, cfg);
  ASSERT_FALSE(study.cells.empty());
  for (const auto& c : study.cells) EXPECT_EQ(c.fixable, 1.0);
}

TEST(Benchmark, CogsAgainstItselfIsZero) {
  auto fx = credit(5);
  auto cfg = tiny();
  cfg.algorithms = {Algorithm::cogs};
  const auto p = prepare(fx.sd.data, cfg, fx.model);
  const auto rows = run_benchmark(p, cfg);
  ASSERT_EQ(rows.size(), 1u);
  for (double v : rows[0].relative_loss_change) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(rows[0].success_per_fold.size(), 3u);
}

TEST(Benchmark, ThresholdToy) {
  const auto f = std::make_shared<FunctionPredictor>(toys::threshold_model());
  const auto data = threshold_data(*f);
  auto cfg = tiny();
  cfg.algorithms = {Algorithm::cogs, Algorithm::random};
  const auto p = prepare(data, cfg, f);
  const auto rows = run_benchmark(p, cfg);
  EXPECT_EQ(rows[0].algorithm, Algorithm::cogs);
  EXPECT_EQ(rows[0].success_mean, 1.0);
  EXPECT_EQ(rows[0].success_sd, 0.0);
}

TEST(Benchmark, RandomNeverHitsAZeroMeasureTarget) {
  const auto f = std::make_shared<FunctionPredictor>([](const Instance& z) { return z[0] == 7.123456789 ? 1 : 0; });
  Dataset data{toys::threshold_schema(), {}, {}, {"no", "yes"}, 1};
  for (int i = 0; i < 60; ++i) {
    data.instances.push_back(Instance{i / 6.0});
    data.labels.push_back(i % 2);
  }
  auto cfg = tiny();
  cfg.algorithms = {Algorithm::random};
  const auto rows = run_benchmark(prepare(data, cfg, f), cfg);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].algorithm, Algorithm::random);
  EXPECT_EQ(rows[1].success_mean, 0.0);
  EXPECT_TRUE(rows[1].relative_loss_change.empty());
}

TEST(MSweep, ZeroSamplesMatchesPlainSearch) {
  auto fx = credit(5);
  auto cfg = tiny();
  cfg.m_values = {0};
  const auto p = prepare(fx.sd.data, cfg, fx.model);
  const auto rows = run_m_sweep(p, cfg);
  const auto none = run_modes(p, cfg, {RobustnessMode::none});
  ASSERT_EQ(rows.size(), 1u);
  double q = 0;
  std::size_t valid = 0;
  for (const auto& o : none) {
    q += static_cast<double>(o.by_mode.at(RobustnessMode::none).model_queries);
    valid += o.by_mode.at(RobustnessMode::none).valid;
  }
  EXPECT_DOUBLE_EQ(rows[0].model_queries, q / static_cast<double>(none.size()));
  EXPECT_EQ(rows[0].valid, valid);
}

TEST(MSweep, MoreSamplesDoNotHurtRobustness) {
  auto fx = credit(6);
  auto cfg = tiny();
  cfg.m_values = {0, 16};
  const auto rows = run_m_sweep(prepare(fx.sd.data, cfg, fx.model), cfg);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_GE(rows[1].ground_truth_score, rows[0].ground_truth_score - 0.05);
  EXPECT_GT(rows[1].model_queries, rows[0].model_queries);
  const auto t = msweep_table(rows, false);
  EXPECT_EQ(t.rows[0][5], "0");
}

TEST(Tables, WriteTableEmitsCsvAndSidecar) {
  const auto dir = std::filesystem::temp_directory_path() / "cfx_harness_table";
  std::filesystem::create_directories(dir);
  Table t{"demo", {"a", "b"}, {}};
  t.add({"1", "x,y"});
  const auto cfg = tiny(42);
  write_table(t, dir.string(), harness_config_json(cfg), cfg.seed);
  std::ifstream csv(dir / "demo.csv");
  std::stringstream body;
  body << csv.rdbuf();
  EXPECT_EQ(body.str(), "a,b\n1,\"x,y\"\n");
  std::ifstream side(dir / "demo.json");
  const auto j = nlohmann::json::parse(side);
  EXPECT_EQ(j.at("table"), "demo");
  EXPECT_EQ(j.at("seed"), 42u);
  EXPECT_EQ(j.at("version"), CFX_VERSION);
  EXPECT_EQ(j.at("config").at("folds"), 3);
  std::filesystem::remove_all(dir);
}

TEST(Tables, QuantilesAndMoments) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(mean_of({1, 2, 3}), 2.0);
  EXPECT_DOUBLE_EQ(sd_of({1, 2, 3}), 1.0);
}
