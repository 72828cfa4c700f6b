#pragma once

// Experiment protocols over stratified folds: benchmark, RQ1 (matching), RQ2
// (fixability), RQ3 (relative cost), invalidity, m-sweep and pairwise
// significance. Every table is a pure function of (data, config, seed).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "cfx/cost.hpp"
#include "cfx/csv.hpp"
#include "cfx/forest.hpp"
#include "cfx/parallel.hpp"
#include "cfx/perturb.hpp"
#include "cfx/search.hpp"
#include "cfx/stats.hpp"

#ifndef CFX_VERSION
#define CFX_VERSION "unknown"
#endif

namespace cfx {

struct HarnessConfig {
  int folds = 5;
  int repeats = 5;
  std::size_t instances_per_fold = 8;
  std::uint64_t seed = 0;
  SearchConfig search;
  std::vector<ForestParams> grid;
  int cv_k = 5;
  std::size_t n_perturbations = 100;
  double normal_sigma = 0.1;
  std::vector<double> tolerances{0.01, 0.05, 0.10};
  std::vector<std::size_t> m_values{0, 4, 16, 64};
  std::size_t m_eval = 1000;
  std::vector<RobustnessMode> modes{RobustnessMode::none, RobustnessMode::C, RobustnessMode::K, RobustnessMode::both};
  std::vector<Algorithm> algorithms{Algorithm::cogs, Algorithm::growing_spheres, Algorithm::nelder_mead,
                                    Algorithm::random};
  RelativeCostOptions relative_cost;
  unsigned jobs = 1;
  bool timing = false;

  static HarnessConfig desk() {
    HarnessConfig c;
    c.search.population = 200;
    c.search.generations = 40;
    const int trees[] = {50};
    const int split[] = {2, 8};
    const MaxFeatures mf[] = {MaxFeatures::sqrt_d, MaxFeatures::all_d};
    c.grid = make_grid(trees, split, mf);
    return c;
  }

  std::vector<Distribution> distributions() const {
    return {Distribution::uniform(), Distribution::normal(normal_sigma)};
  }
};

// ---------------------------------------------------------------------------
// Folds and models

struct FoldContext {
  int fold = 0;
  std::shared_ptr<const Predictor> model;
  std::vector<std::size_t> instances;  // dataset rows with f(x) != t, in row order
  std::optional<ForestParams> params;
  double cv_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::size_t candidates = 0;  // test rows with f(x) != t
};

struct Prepared {
  const Dataset* data = nullptr;
  std::vector<FoldContext> folds;
};

// Trains one tuned forest per fold (or reuses `fixed_model` for every fold)
// and picks up to instances_per_fold test rows that the model does not assign
// to the target class.
inline Prepared prepare(const Dataset& data, const HarnessConfig& cfg,
                        std::shared_ptr<const Predictor> fixed_model = nullptr) {
  data.validate();
  Prepared p{&data, {}};
  const FoldPlan plan = stratified_folds(data.labels, cfg.folds, derive_seed(cfg.seed, 0xf01d5));
  p.folds.resize(static_cast<std::size_t>(cfg.folds));
  parallel_for(p.folds.size(), cfg.jobs, [&](std::size_t f) {
    FoldContext& ctx = p.folds[f];
    ctx.fold = static_cast<int>(f);
    const auto train_rows = plan.train_indices(ctx.fold);
    const auto test_rows = plan.test_indices(ctx.fold);
    const Dataset test = data.subset(test_rows);
    if (fixed_model) {
      ctx.model = fixed_model;
    } else {
      const Dataset train = data.subset(train_rows);
      const auto grid = cfg.grid.empty() ? default_grid() : cfg.grid;
      const auto gs = grid_search(train, grid, cfg.cv_k, derive_seed(cfg.seed, 0x9a1d, f));
      ctx.params = gs.best;
      ctx.cv_accuracy = gs.cv_accuracy;
      ctx.model = std::make_shared<ForestModel>(train_forest(train, gs.best, derive_seed(cfg.seed, 0x70de1, f)));
    }
    ctx.test_accuracy = accuracy(*ctx.model, test);
    const auto pred = ctx.model->predict_batch(test.instances);
    std::vector<std::size_t> pool;
    for (std::size_t k = 0; k < test_rows.size(); ++k)
      if (pred[k] != data.target_class) pool.push_back(test_rows[k]);
    ctx.candidates = pool.size();
    Rng rng = make_rng(derive_seed(cfg.seed, 0x91c4, f));
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(std::min(pool.size(), cfg.instances_per_fold));
    std::sort(pool.begin(), pool.end());
    ctx.instances = std::move(pool);
  });
  return p;
}

// ---------------------------------------------------------------------------
// Searches

struct InstanceOutcome {
  int fold = 0;
  std::size_t instance = 0;
  Instance x;
  std::shared_ptr<const Predictor> model;
  std::map<RobustnessMode, SearchResult> by_mode;
};

inline std::uint64_t instance_seed(const HarnessConfig& cfg, int fold, std::size_t instance) {
  return derive_seed(cfg.seed, 0x5ea4c, static_cast<std::uint64_t>(fold), instance);
}

// repeat_best for every selected instance and mode; all modes of one instance
// share the seed sequence.
inline std::vector<InstanceOutcome> run_modes(const Prepared& p, const HarnessConfig& cfg,
                                              const std::vector<RobustnessMode>& modes) {
  std::vector<InstanceOutcome> out;
  for (const auto& ctx : p.folds)
    for (auto row : ctx.instances) out.push_back({ctx.fold, row, p.data->instances[row], ctx.model, {}});
  const std::size_t cells = out.size() * modes.size();
  std::vector<SearchResult> results(cells);
  parallel_for(cells, cfg.jobs, [&](std::size_t c) {
    const auto& o = out[c / modes.size()];
    SearchConfig sc = cfg.search;
    sc.robustness_mode = modes[c % modes.size()];
    sc.seed = instance_seed(cfg, o.fold, o.instance);
    sc.jobs = 1;
    results[c] = repeat_best(p.data->schema, o.x, *o.model, p.data->target_class, sc, cfg.repeats);
  });
  for (std::size_t c = 0; c < cells; ++c) out[c / modes.size()].by_mode[modes[c % modes.size()]] = results[c];
  return out;
}

// ---------------------------------------------------------------------------
// Tables

struct Table {
  std::string name;
  std::vector<std::string> header;
  std::vector<csv::Row> rows;

  void add(csv::Row row) { rows.push_back(std::move(row)); }
};

inline std::string num(double v) { return csv::format_number(v); }
inline std::string num(std::size_t v) { return std::to_string(v); }

inline void write_csv(const Table& t, std::ostream& out) {
  csv::write_row(out, t.header);
  for (const auto& r : t.rows) csv::write_row(out, r);
}

inline nlohmann::json harness_config_json(const HarnessConfig& cfg) {
  const auto& s = cfg.search;
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& g : cfg.grid)
    grid.push_back({{"n_trees", g.n_trees},
                    {"min_samples_split", g.min_samples_split},
                    {"max_features", std::string(to_string(g.max_features))}});
  std::vector<std::string> modes, algos;
  for (auto m : cfg.modes) modes.emplace_back(to_string(m));
  for (auto a : cfg.algorithms) algos.emplace_back(to_string(a));
  return {{"folds", cfg.folds},
          {"repeats", cfg.repeats},
          {"instances_per_fold", cfg.instances_per_fold},
          {"seed", cfg.seed},
          {"cv_k", cfg.cv_k},
          {"grid", grid},
          {"n_perturbations", cfg.n_perturbations},
          {"normal_sigma", cfg.normal_sigma},
          {"tolerances", cfg.tolerances},
          {"m_values", cfg.m_values},
          {"m_eval", cfg.m_eval},
          {"modes", modes},
          {"algorithms", algos},
          {"correction_counts_sparsity", cfg.relative_cost.correction_counts_sparsity},
          {"search",
           {{"algorithm", std::string(to_string(s.algorithm))},
            {"m_k_samples", s.m_k_samples},
            {"population", s.population},
            {"generations", s.generations},
            {"tournament", s.tournament},
            {"s_mut", s.s_mut},
            {"copy_prob_scale", s.copy_prob_scale},
            {"honor_constraints", s.honor_constraints},
            {"k_weight", s.k_weight},
            {"k_sample_seed", s.k_sample_seed},
            {"tol_abs", s.tol_abs},
            {"gs_layer_points", s.gs_layer_points},
            {"gs_first_radius", s.gs_first_radius},
            {"gs_decrease_radius", s.gs_decrease_radius},
            {"nm_maxiter", s.nm_maxiter},
            {"nm_xatol", s.nm_xatol},
            {"nm_fatol", s.nm_fatol}}}};
}

namespace detail {

template <class T>
void read_key(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("config: '") + key + "': " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known,
                           const std::string& where) {
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw ParseError("config: unknown key '" + where + k + "'");
}

}  // namespace detail

// Overlays a JSON config onto `cfg`. Unknown keys are rejected.
inline void apply_config(HarnessConfig& cfg, const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("config: expected a JSON object");
  detail::reject_unknown(j,
                         {"folds", "repeats", "instances_per_fold", "seed", "cv_k", "grid", "n_perturbations",
                          "normal_sigma", "tolerances", "m_values", "m_eval", "modes", "algorithms",
                          "correction_counts_sparsity", "jobs", "search", "data"},
                         "");
  detail::read_key(j, "folds", cfg.folds);
  detail::read_key(j, "repeats", cfg.repeats);
  detail::read_key(j, "instances_per_fold", cfg.instances_per_fold);
  detail::read_key(j, "seed", cfg.seed);
  detail::read_key(j, "cv_k", cfg.cv_k);
  detail::read_key(j, "n_perturbations", cfg.n_perturbations);
  detail::read_key(j, "normal_sigma", cfg.normal_sigma);
  detail::read_key(j, "tolerances", cfg.tolerances);
  detail::read_key(j, "m_values", cfg.m_values);
  detail::read_key(j, "m_eval", cfg.m_eval);
  detail::read_key(j, "jobs", cfg.jobs);
  detail::read_key(j, "correction_counts_sparsity", cfg.relative_cost.correction_counts_sparsity);
  if (j.contains("grid")) {
    cfg.grid.clear();
    for (const auto& g : j.at("grid")) {
      detail::reject_unknown(g, {"n_trees", "min_samples_split", "max_features"}, "grid.");
      ForestParams fp;
      detail::read_key(g, "n_trees", fp.n_trees);
      detail::read_key(g, "min_samples_split", fp.min_samples_split);
      std::string mf = "sqrt_d";
      detail::read_key(g, "max_features", mf);
      if (mf != "sqrt_d" && mf != "all_d") throw ParseError("config: max_features must be sqrt_d or all_d");
      fp.max_features = mf == "all_d" ? MaxFeatures::all_d : MaxFeatures::sqrt_d;
      cfg.grid.push_back(fp);
    }
  }
  if (j.contains("modes")) {
    cfg.modes.clear();
    for (const auto& m : j.at("modes")) {
      auto mode = m.is_string() ? parse_mode(m.get<std::string>()) : std::nullopt;
      if (!mode) throw ParseError("config: bad robustness mode");
      cfg.modes.push_back(*mode);
    }
  }
  if (j.contains("algorithms")) {
    cfg.algorithms.clear();
    for (const auto& a : j.at("algorithms")) {
      auto algo = a.is_string() ? parse_algorithm(a.get<std::string>()) : std::nullopt;
      if (!algo) throw ParseError("config: bad algorithm");
      cfg.algorithms.push_back(*algo);
    }
  }
  if (j.contains("search")) {
    const auto& s = j.at("search");
    detail::reject_unknown(s,
                           {"algorithm", "robustness_mode", "m_k_samples", "population", "generations", "tournament",
                            "s_mut", "copy_prob_scale", "honor_constraints", "k_weight", "k_sample_seed", "tol_abs",
                            "gs_layer_points", "gs_first_radius", "gs_decrease_radius", "nm_maxiter", "nm_xatol",
                            "nm_fatol"},
                           "search.");
    auto& sc = cfg.search;
    if (s.contains("algorithm")) {
      auto a = parse_algorithm(s.at("algorithm").get<std::string>());
      if (!a) throw ParseError("config: bad search.algorithm");
      sc.algorithm = *a;
    }
    if (s.contains("robustness_mode")) {
      auto m = parse_mode(s.at("robustness_mode").get<std::string>());
      if (!m) throw ParseError("config: bad search.robustness_mode");
      sc.robustness_mode = *m;
    }
    detail::read_key(s, "m_k_samples", sc.m_k_samples);
    detail::read_key(s, "population", sc.population);
    detail::read_key(s, "generations", sc.generations);
    detail::read_key(s, "tournament", sc.tournament);
    detail::read_key(s, "s_mut", sc.s_mut);
    detail::read_key(s, "copy_prob_scale", sc.copy_prob_scale);
    detail::read_key(s, "honor_constraints", sc.honor_constraints);
    detail::read_key(s, "k_weight", sc.k_weight);
    detail::read_key(s, "k_sample_seed", sc.k_sample_seed);
    detail::read_key(s, "tol_abs", sc.tol_abs);
    detail::read_key(s, "gs_layer_points", sc.gs_layer_points);
    detail::read_key(s, "gs_first_radius", sc.gs_first_radius);
    detail::read_key(s, "gs_decrease_radius", sc.gs_decrease_radius);
    detail::read_key(s, "nm_maxiter", sc.nm_maxiter);
    detail::read_key(s, "nm_xatol", sc.nm_xatol);
    detail::read_key(s, "nm_fatol", sc.nm_fatol);
  }
}

// Writes <dir>/<name>.csv and <dir>/<name>.json (config, seed, version).
inline void write_table(const Table& t, const std::string& dir, const nlohmann::json& config, std::uint64_t seed) {
  const std::string base = dir + "/" + t.name;
  {
    std::ofstream out(base + ".csv", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + base + ".csv'");
    write_csv(t, out);
  }
  std::ofstream side(base + ".json", std::ios::binary);
  if (!side) throw std::runtime_error("cannot write '" + base + ".json'");
  side << nlohmann::json{{"table", t.name}, {"seed", seed}, {"version", CFX_VERSION}, {"config", config}}.dump(2)
       << '\n';
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return std::nan("");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double e : v) s += (e - m) * (e - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

// Linear-interpolated quantile of a sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) return std::nan("");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline Table fold_table(const Prepared& p) {
  Table t{"folds", {"fold", "n_trees", "min_samples_split", "max_features", "cv_accuracy", "test_accuracy",
                    "candidates", "selected"}, {}};
  for (const auto& c : p.folds)
    t.add({std::to_string(c.fold), c.params ? std::to_string(c.params->n_trees) : "",
           c.params ? std::to_string(c.params->min_samples_split) : "",
           c.params ? std::string(to_string(c.params->max_features)) : "", num(c.cv_accuracy), num(c.test_accuracy),
           num(c.candidates), num(c.instances.size())});
  return t;
}

inline Table records_table(const std::vector<InstanceOutcome>& outcomes, const Dataset& data, bool timing) {
  Table t{"records", {"fold", "instance", "mode", "seed", "valid", "loss_total", "objective", "gower", "sparsity",
                      "intervention_cost", "robustified_gower", "k_score", "evaluations", "model_queries"}, {}};
  if (timing) t.header.push_back("wall_time");
  for (const auto& o : outcomes)
    for (const auto& [mode, r] : o.by_mode) {
      csv::Row row{std::to_string(o.fold), num(o.instance), std::string(to_string(mode)), std::to_string(r.seed),
                   r.valid ? "1" : "0", num(r.breakdown.total), num(r.objective), num(r.breakdown.gower),
                   num(r.breakdown.sparsity), num(intervention_cost(data.schema, o.x, r.best)),
                   r.robustified_gower ? num(*r.robustified_gower) : "", r.k_score ? num(*r.k_score) : "",
                   num(r.evaluations), num(r.model_queries)};
      if (timing) row.push_back(num(r.wall_time));
      t.add(std::move(row));
    }
  return t;
}

// ---------------------------------------------------------------------------
// RQ1

struct MatchReport {
  RobustnessMode mode = RobustnessMode::none;
  double tolerance = 0.0;
  std::vector<bool> matched;
  double frequency = 0.0;
};

// Both leave a feature unchanged, or both change it and agree within
// tolerance * range (categorical: equal).
inline bool counterfactuals_match(const Schema& schema, const Instance& x, const Instance& a, const Instance& b,
                                  double tolerance, double tol_abs = kDefaultTolerance) {
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& f = schema[i];
    const bool ca = feature_changed(f, x[i], a[i], tol_abs), cb = feature_changed(f, x[i], b[i], tol_abs);
    if (!ca && !cb) continue;
    if (ca != cb) return false;
    if (f.is_categorical() ? a.category(i) != b.category(i) : std::fabs(a[i] - b[i]) > tolerance * f.range())
      return false;
  }
  return true;
}

inline std::vector<MatchReport> run_rq1(const std::vector<InstanceOutcome>& outcomes, const Schema& schema,
                                        const std::vector<double>& tolerances, double tol_abs = kDefaultTolerance) {
  std::vector<MatchReport> out;
  std::vector<RobustnessMode> modes;
  if (!outcomes.empty())
    for (const auto& [m, r] : outcomes.front().by_mode)
      if (m != RobustnessMode::none) modes.push_back(m);
  for (auto mode : modes)
    for (double tol : tolerances) {
      MatchReport rep{mode, tol, {}, 0.0};
      for (const auto& o : outcomes)
        rep.matched.push_back(counterfactuals_match(schema, o.x, o.by_mode.at(RobustnessMode::none).best,
                                                    o.by_mode.at(mode).best, tol, tol_abs));
      rep.frequency = rep.matched.empty() ? 0.0
                                          : static_cast<double>(std::count(rep.matched.begin(), rep.matched.end(), true)) /
                                                static_cast<double>(rep.matched.size());
      out.push_back(std::move(rep));
    }
  return out;
}

inline Table rq1_table(const std::vector<MatchReport>& reports) {
  Table t{"rq1", {"mode", "tolerance", "matched", "instances", "frequency"}, {}};
  for (const auto& r : reports)
    t.add({std::string(to_string(r.mode)), num(r.tolerance),
           num(static_cast<std::size_t>(std::count(r.matched.begin(), r.matched.end(), true))), num(r.matched.size()),
           num(r.frequency)});
  return t;
}

// ---------------------------------------------------------------------------
// Perturbation study shared by RQ2, RQ3 and invalidity

struct PerturbationCell {
  int fold = 0;
  std::size_t instance = 0;
  RobustnessMode mode = RobustnessMode::none;
  Scope scope = Scope::C_only;
  std::string dist;
  double fixable = 0.0;
  double invalid = 0.0;
  std::optional<double> relative_cost;  // mean over perturbations
  std::optional<double> cost_ratio;     // cost(x, z_mode) / ideal, no perturbation
};

struct PerturbationStudy {
  std::vector<PerturbationCell> cells;
  std::size_t excluded_invalid = 0;     // (instance, mode) pairs whose z is invalid
  std::size_t excluded_zero_ideal = 0;  // instances without a usable ideal cost
};

inline std::uint64_t scope_stream(Scope s) { return static_cast<std::uint64_t>(s) + 1; }

inline PerturbationStudy run_perturbations(const std::vector<InstanceOutcome>& outcomes, const Dataset& data,
                                           const HarnessConfig& cfg) {
  const auto& schema = data.schema;
  const int target = data.target_class;
  const auto dists = cfg.distributions();
  const Scope scopes[] = {Scope::C_only, Scope::K_only, Scope::both};
  PerturbationStudy study;
  std::vector<std::vector<PerturbationCell>> per(outcomes.size());
  std::vector<std::size_t> bad(outcomes.size(), 0), zero(outcomes.size(), 0);
  parallel_for(outcomes.size(), cfg.jobs, [&](std::size_t k) {
    const auto& o = outcomes[k];
    std::optional<double> ideal;
    if (auto it = o.by_mode.find(RobustnessMode::none); it != o.by_mode.end() && it->second.valid) {
      const double c = intervention_cost(schema, o.x, it->second.best);
      if (c > 0) ideal = c;
    }
    if (!ideal) zero[k] = 1;
    for (const auto& [mode, r] : o.by_mode) {
      if (!r.valid) {
        ++bad[k];
        continue;
      }
      const double cost_xz = intervention_cost(schema, o.x, r.best);
      for (auto scope : scopes)
        for (std::size_t di = 0; di < dists.size(); ++di) {
          Rng rng = make_rng(derive_seed(cfg.seed, 0x9e27, static_cast<std::uint64_t>(o.fold), o.instance,
                                         scope_stream(scope), di));
          std::vector<Instance> pts;
          for (std::size_t s = 0; s < cfg.n_perturbations; ++s)
            pts.push_back(sample_perturbation(schema, o.x, r.best, scope, dists[di], rng, cfg.search.tol_abs)
                              .apply(r.best));
          const auto labels = o.model->predict_batch(pts);
          std::size_t fix = 0, inv = 0;
          std::vector<double> rel;
          for (std::size_t s = 0; s < pts.size(); ++s) {
            const bool valid = labels[s] == target;
            const bool fixable = valid || fixability(schema, o.x, r.best, pts[s]);
            fix += fixable;
            inv += !valid;
            if (scope == Scope::C_only && !fixable)
              throw std::logic_error("C-scope perturbation found unfixable");
            if (ideal) {
              const double corr =
                  valid ? 0.0
                        : intervention_cost(schema, pts[s], r.best, cfg.relative_cost.correction_counts_sparsity);
              rel.push_back((cost_xz + corr) / *ideal);
            }
          }
          PerturbationCell cell{o.fold, o.instance, mode, scope, dists[di].name(),
                                static_cast<double>(fix) / static_cast<double>(pts.size()),
                                static_cast<double>(inv) / static_cast<double>(pts.size()), std::nullopt, std::nullopt};
          if (ideal) {
            cell.relative_cost = mean_of(rel);
            cell.cost_ratio = cost_xz / *ideal;
          }
          per[k].push_back(std::move(cell));
        }
    }
  });
  for (std::size_t k = 0; k < outcomes.size(); ++k) {
    for (auto& c : per[k]) study.cells.push_back(std::move(c));
    study.excluded_invalid += bad[k];
    study.excluded_zero_ideal += zero[k];
  }
  return study;
}

struct CellKey {
  RobustnessMode mode;
  Scope scope;
  std::string dist;
  auto operator<=>(const CellKey&) const = default;
};

template <class Get>
std::map<CellKey, std::vector<double>> group_cells(const PerturbationStudy& s, Get get) {
  std::map<CellKey, std::vector<double>> g;
  for (const auto& c : s.cells)
    if (auto v = get(c)) g[{c.mode, c.scope, c.dist}].push_back(*v);
  return g;
}

inline double rq2_gap(const PerturbationStudy& s, RobustnessMode better, RobustnessMode base, Scope scope,
                      const std::string& dist) {
  auto g = group_cells(s, [](const PerturbationCell& c) { return std::optional<double>(c.fixable); });
  return mean_of(g[{better, scope, dist}]) - mean_of(g[{base, scope, dist}]);
}

inline Table rq2_table(const PerturbationStudy& s) {
  Table t{"rq2", {"mode", "scope", "dist", "fixability", "sd", "instances", "excluded_invalid"}, {}};
  for (const auto& [k, v] :
       group_cells(s, [](const PerturbationCell& c) { return std::optional<double>(c.fixable); })) {
    if (k.scope == Scope::C_only)
      for (double e : v)
        if (e != 1.0) throw std::logic_error("RQ2: C-scope fixability below 1");
    t.add({std::string(to_string(k.mode)), std::string(to_string(k.scope)), k.dist, num(mean_of(v)), num(sd_of(v)),
           num(v.size()), num(s.excluded_invalid)});
  }
  return t;
}

inline Table invalidity_table(const PerturbationStudy& s) {
  Table t{"invalidity", {"mode", "scope", "dist", "invalidity", "sd", "instances", "excluded_invalid"}, {}};
  for (const auto& [k, v] :
       group_cells(s, [](const PerturbationCell& c) { return std::optional<double>(c.invalid); }))
    t.add({std::string(to_string(k.mode)), std::string(to_string(k.scope)), k.dist, num(mean_of(v)), num(sd_of(v)),
           num(v.size()), num(s.excluded_invalid)});
  return t;
}

inline Table rq3_table(const PerturbationStudy& s) {
  Table t{"rq3", {"mode", "scope", "dist", "mean", "q1", "median", "q3", "instances", "excluded_invalid",
                  "excluded_zero_ideal"}, {}};
  for (const auto& [k, v] : group_cells(s, [](const PerturbationCell& c) { return c.relative_cost; }))
    t.add({std::string(to_string(k.mode)), std::string(to_string(k.scope)), k.dist, num(mean_of(v)),
           num(quantile(v, 0.25)), num(quantile(v, 0.5)), num(quantile(v, 0.75)), num(v.size()),
           num(s.excluded_invalid), num(s.excluded_zero_ideal)});
  return t;
}

// Cost of the robust counterfactual relative to the ideal one, no perturbation.
inline std::map<RobustnessMode, std::vector<double>> cost_ratios(const PerturbationStudy& s) {
  std::map<RobustnessMode, std::vector<double>> out;
  for (const auto& c : s.cells)
    if (c.scope == Scope::C_only && c.dist == "uniform" && c.cost_ratio) out[c.mode].push_back(*c.cost_ratio);
  return out;
}

inline Table cost_ratio_table(const PerturbationStudy& s) {
  Table t{"cost_ratio", {"mode", "mean", "median", "max", "instances", "excluded_zero_ideal"}, {}};
  for (const auto& [m, v] : cost_ratios(s))
    t.add({std::string(to_string(m)), num(mean_of(v)), num(quantile(v, 0.5)), num(*std::max_element(v.begin(), v.end())),
           num(v.size()), num(s.excluded_zero_ideal)});
  return t;
}

inline std::map<RobustnessMode, double> mean_relative_cost(const PerturbationStudy& s, Scope scope,
                                                           const std::string& dist) {
  std::map<RobustnessMode, double> out;
  for (const auto& [k, v] : group_cells(s, [](const PerturbationCell& c) { return c.relative_cost; }))
    if (k.scope == scope && k.dist == dist) out[k.mode] = mean_of(v);
  return out;
}

// Pairwise Mann-Whitney/Holm across modes of the per-instance relative cost,
// one matrix per (scope, dist).
inline Table significance_table(const PerturbationStudy& s) {
  Table t{"significance", {"scope", "dist", "group_a", "group_b", "p_raw", "p_holm"}, {}};
  std::map<std::pair<Scope, std::string>, std::map<RobustnessMode, std::vector<double>>> by;
  for (const auto& c : s.cells)
    if (c.relative_cost) by[{c.scope, c.dist}][c.mode].push_back(*c.relative_cost);
  for (const auto& [key, groups] : by) {
    std::vector<std::pair<std::string, std::vector<double>>> g;
    for (const auto& [m, v] : groups)
      if (v.size() >= 2) g.emplace_back(std::string(to_string(m)), v);
    if (g.size() < 2) continue;
    const auto pm = mann_whitney_holm(g);
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = i + 1; j < g.size(); ++j)
        t.add({std::string(to_string(key.first)), key.second, pm.names[i], pm.names[j], num(pm.raw[i][j]),
               num(pm.adjusted[i][j])});
  }
  return t;
}

// ---------------------------------------------------------------------------
// m-sweep

struct MSweepRow {
  std::size_t m = 0;
  double ground_truth_score = 0.0;  // mean over valid results
  std::size_t valid = 0;
  std::size_t instances = 0;
  double model_queries = 0.0;
  double wall_time = 0.0;
};

inline std::vector<MSweepRow> run_m_sweep(const Prepared& p, const HarnessConfig& cfg) {
  std::vector<std::pair<int, std::size_t>> items;
  std::vector<std::shared_ptr<const Predictor>> models;
  for (const auto& ctx : p.folds)
    for (auto row : ctx.instances) {
      items.emplace_back(ctx.fold, row);
      models.push_back(ctx.model);
    }
  const auto& ms = cfg.m_values;
  struct Cell {
    std::optional<double> score;
    std::size_t queries = 0;
    double wall = 0;
  };
  std::vector<Cell> cells(items.size() * ms.size());
  parallel_for(cells.size(), cfg.jobs, [&](std::size_t c) {
    const auto [fold, row] = items[c / ms.size()];
    const Predictor& model = *models[c / ms.size()];
    SearchConfig sc = cfg.search;
    sc.robustness_mode = RobustnessMode::K;
    sc.m_k_samples = ms[c % ms.size()];
    sc.seed = instance_seed(cfg, fold, row);
    sc.jobs = 1;
    const Instance& x = p.data->instances[row];
    const auto r = repeat_best(p.data->schema, x, model, p.data->target_class, sc, cfg.repeats);
    cells[c].queries = r.model_queries;
    cells[c].wall = r.wall_time;
    if (r.valid) {
      Rng rng = make_rng(derive_seed(cfg.seed, 0x67d, static_cast<std::uint64_t>(fold), row));
      cells[c].score = k_robustness_score(p.data->schema, x, r.best, model, cfg.m_eval, rng, sc.tol_abs);
    }
  });
  std::vector<MSweepRow> out;
  for (std::size_t j = 0; j < ms.size(); ++j) {
    MSweepRow row{ms[j], 0.0, 0, items.size(), 0.0, 0.0};
    std::vector<double> scores;
    double q = 0, w = 0;
    for (std::size_t k = 0; k < items.size(); ++k) {
      const auto& c = cells[k * ms.size() + j];
      if (c.score) scores.push_back(*c.score);
      q += static_cast<double>(c.queries);
      w += c.wall;
    }
    row.valid = scores.size();
    row.ground_truth_score = mean_of(scores);
    row.model_queries = items.empty() ? 0.0 : q / static_cast<double>(items.size());
    row.wall_time = items.empty() ? 0.0 : w / static_cast<double>(items.size());
    out.push_back(row);
  }
  return out;
}

inline Table msweep_table(const std::vector<MSweepRow>& rows, bool timing) {
  Table t{"msweep", {"m", "ground_truth_score", "valid", "instances", "model_queries", "extra_queries_vs_m0"}, {}};
  if (timing) {
    t.header.push_back("wall_time");
    t.header.push_back("extra_wall_time_vs_m0");
  }
  const MSweepRow* base = nullptr;
  for (const auto& r : rows)
    if (r.m == 0) base = &r;
  for (const auto& r : rows) {
    csv::Row row{num(r.m), num(r.ground_truth_score), num(r.valid), num(r.instances), num(r.model_queries),
                 base ? num(r.model_queries - base->model_queries) : ""};
    if (timing) {
      row.push_back(num(r.wall_time));
      row.push_back(base ? num(r.wall_time - base->wall_time) : "");
    }
    t.add(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Benchmark

struct BenchmarkRow {
  Algorithm algorithm = Algorithm::cogs;
  std::vector<double> success_per_fold;
  double success_mean = 0.0;
  double success_sd = 0.0;
  double mean_wall_time = 0.0;
  double mean_evaluations = 0.0;
  std::vector<double> relative_loss_change;  // (L_alg - L_cogs) / L_cogs where both succeed
};

inline std::vector<BenchmarkRow> run_benchmark(const Prepared& p, const HarnessConfig& cfg) {
  struct Item {
    int fold;
    std::size_t row;
    const Predictor* model;
  };
  std::vector<Item> items;
  for (const auto& ctx : p.folds)
    for (auto row : ctx.instances) items.push_back({ctx.fold, row, ctx.model.get()});
  std::vector<Algorithm> algos = cfg.algorithms;
  if (std::find(algos.begin(), algos.end(), Algorithm::cogs) == algos.end()) algos.insert(algos.begin(), Algorithm::cogs);
  const std::size_t na = algos.size();
  std::vector<SearchResult> res(items.size() * na);
  parallel_for(res.size(), cfg.jobs, [&](std::size_t c) {
    const auto& it = items[c / na];
    SearchConfig sc = cfg.search;
    sc.algorithm = algos[c % na];
    sc.robustness_mode = RobustnessMode::none;
    sc.seed = instance_seed(cfg, it.fold, it.row);
    sc.jobs = 1;
    res[c] = repeat_best(p.data->schema, p.data->instances[it.row], *it.model, p.data->target_class, sc, cfg.repeats);
  });
  const std::size_t cogs_idx = static_cast<std::size_t>(std::find(algos.begin(), algos.end(), Algorithm::cogs) - algos.begin());
  std::vector<BenchmarkRow> out;
  for (std::size_t a = 0; a < na; ++a) {
    BenchmarkRow row;
    row.algorithm = algos[a];
    double wall = 0, evals = 0;
    for (const auto& ctx : p.folds) {
      std::size_t n = 0, ok = 0;
      for (std::size_t k = 0; k < items.size(); ++k)
        if (items[k].fold == ctx.fold) {
          ++n;
          ok += res[k * na + a].valid;
        }
      if (n > 0) row.success_per_fold.push_back(static_cast<double>(ok) / static_cast<double>(n));
    }
    for (std::size_t k = 0; k < items.size(); ++k) {
      const auto& r = res[k * na + a];
      const auto& base = res[k * na + cogs_idx];
      wall += r.wall_time;
      evals += static_cast<double>(r.evaluations);
      if (r.valid && base.valid && base.breakdown.total > 0)
        row.relative_loss_change.push_back((r.breakdown.total - base.breakdown.total) / base.breakdown.total);
    }
    row.success_mean = mean_of(row.success_per_fold);
    row.success_sd = sd_of(row.success_per_fold);
    if (!items.empty()) {
      row.mean_wall_time = wall / static_cast<double>(items.size());
      row.mean_evaluations = evals / static_cast<double>(items.size());
    }
    out.push_back(std::move(row));
  }
  return out;
}

inline Table benchmark_table(const std::vector<BenchmarkRow>& rows, bool timing) {
  Table t{"benchmark", {"algorithm", "success_mean", "success_sd", "folds", "mean_evaluations", "rel_loss_change_mean",
                        "rel_loss_change_median", "compared"}, {}};
  if (timing) t.header.push_back("mean_wall_time");
  for (const auto& r : rows) {
    csv::Row row{std::string(to_string(r.algorithm)), num(r.success_mean), num(r.success_sd),
                 num(r.success_per_fold.size()), num(r.mean_evaluations), num(mean_of(r.relative_loss_change)),
                 num(quantile(r.relative_loss_change, 0.5)), num(r.relative_loss_change.size())};
    if (timing) row.push_back(num(r.mean_wall_time));
    t.add(std::move(row));
  }
  return t;
}

inline Table perturbation_cells_table(const PerturbationStudy& s) {
  Table t{"perturbation_cells", {"fold", "instance", "mode", "scope", "dist", "fixable", "invalid", "relative_cost",
                                 "cost_ratio"}, {}};
  for (const auto& c : s.cells)
    t.add({std::to_string(c.fold), num(c.instance), std::string(to_string(c.mode)), std::string(to_string(c.scope)),
           c.dist, num(c.fixable), num(c.invalid), c.relative_cost ? num(*c.relative_cost) : "",
           c.cost_ratio ? num(*c.cost_ratio) : ""});
  return t;
}

}  // namespace cfx
