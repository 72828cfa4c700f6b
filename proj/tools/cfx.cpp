// cfx: generate synthetic data, train forests, search counterfactuals, run
// experiments, probe robustness and serve models over the line protocol.

#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cfx/cfx.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cfx;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitRuntime = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AlreadyTarget : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t resolve_seed(const CLI::Option* opt, std::uint64_t flag_value, std::optional<std::uint64_t> config) {
  if (opt->count() > 0) return flag_value;
  if (const char* env = std::getenv("CFX_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError("CFX_SEED is not an unsigned integer");
    }
  }
  return config.value_or(0);
}

// Timestamps come from SOURCE_DATE_EPOCH when set, so manifests stay
// reproducible; otherwise they are only recorded with --timing.
std::optional<std::string> timestamp(bool timing) {
  std::time_t t = 0;
  if (const char* e = std::getenv("SOURCE_DATE_EPOCH")) {
    t = static_cast<std::time_t>(std::stoll(e));
  } else if (timing) {
    t = std::time(nullptr);
  } else {
    return std::nullopt;
  }
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return std::string(buf);
}

void write_manifest(const std::string& path, const std::string& command, const json& config, std::uint64_t seed,
                    const std::vector<std::string>& outputs, bool timing) {
  json m{{"command", command}, {"config", config}, {"seed", seed}, {"outputs", outputs}, {"version", CFX_VERSION}};
  if (auto ts = timestamp(timing)) m["started_at"] = *ts;
  write_json_file(path, m);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory '" + dir + "': " + ec.message());
}

json instance_json(const Schema& schema, const Instance& z) {
  json j = json::object();
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (schema[i].is_numerical())
      j[schema[i].name] = z[i];
    else
      j[schema[i].name] = format_value(schema[i], z[i]);
  }
  return j;
}

json result_json(const Schema& schema, std::size_t id, const Instance& x, const SearchResult& r, bool timing) {
  json diff = json::array();
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (!feature_changed(schema[i], x[i], r.best[i])) continue;
    json d{{"feature", schema[i].name}};
    if (schema[i].is_numerical()) {
      d["from"] = x[i];
      d["to"] = r.best[i];
      d["delta"] = r.best[i] - x[i];
    } else {
      d["from"] = format_value(schema[i], x[i]);
      d["to"] = format_value(schema[i], r.best[i]);
    }
    diff.push_back(std::move(d));
  }
  json j{{"instance", id},
         {"x", instance_json(schema, x)},
         {"counterfactual", instance_json(schema, r.best)},
         {"explanation", diff},
         {"valid", r.valid},
         {"loss", {{"gower", r.breakdown.gower}, {"sparsity", r.breakdown.sparsity},
                   {"validity", r.breakdown.validity}, {"total", r.breakdown.total}}},
         {"objective", r.objective},
         {"evaluations", r.evaluations},
         {"model_queries", r.model_queries},
         {"seed", r.seed}};
  if (r.robustified_gower) j["robustified_gower"] = *r.robustified_gower;
  if (r.k_score) j["k_score"] = *r.k_score;
  if (timing) j["wall_time"] = r.wall_time;
  return j;
}

Instance parse_instance_text(const Schema& schema, const std::string& text, const std::string& what) {
  std::istringstream in(text);
  auto row = csv::read_row(in);
  if (!row || row->size() != schema.size())
    throw SchemaViolation(what + ": expected " + std::to_string(schema.size()) + " comma-separated values");
  Instance z = parse_instance(schema, *row, what);
  check_instance(schema, z, what);
  return z;
}

struct DataOptions {
  std::string annotations;
  std::string dataset;
};

void add_data_options(CLI::App* cmd, DataOptions& d, bool required = true) {
  auto* a = cmd->add_option("--annotations", d.annotations, "Annotation JSON");
  auto* b = cmd->add_option("--dataset", d.dataset, "Data CSV");
  if (required) {
    a->required();
    b->required();
  }
}

// Harness/search settings: preset, then --config, then flags.
struct RunOptions {
  std::string preset = "desk";
  std::string config;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string robust = "none";
  CLI::Option* robust_opt = nullptr;
  std::size_t m = 64;
  CLI::Option* m_opt = nullptr;
  int repeats = 5;
  CLI::Option* repeats_opt = nullptr;
  int population = 0;
  CLI::Option* population_opt = nullptr;
  int generations = 0;
  CLI::Option* generations_opt = nullptr;
  std::string algorithm = "cogs";
  CLI::Option* algorithm_opt = nullptr;
  unsigned jobs = 1;
  CLI::Option* jobs_opt = nullptr;
  bool timing = false;
};

void add_run_options(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--preset", o.preset, "Built-in defaults: desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--config", o.config, "JSON config overriding the preset; flags override the config");
  o.seed_opt = cmd->add_option("--seed", o.seed, "Seed (fallback: CFX_SEED, then config, then 0)");
  o.robust_opt = cmd->add_option("--robust", o.robust, "Robustness mode: none, c, k, both")
                     ->check(CLI::IsMember({"none", "c", "k", "both", "C", "K"}));
  o.m_opt = cmd->add_option("--m", o.m, "K-neighbours per candidate");
  o.repeats_opt = cmd->add_option("--repeats", o.repeats, "Repetitions; the best run is kept");
  o.population_opt = cmd->add_option("--population", o.population, "CoGS population size");
  o.generations_opt = cmd->add_option("--generations", o.generations, "CoGS generations");
  o.algorithm_opt = cmd->add_option("--algorithm", o.algorithm, "cogs, growing_spheres, nelder_mead, random");
  o.jobs_opt = cmd->add_option("--jobs", o.jobs, "Worker threads (default: logical cores)");
  cmd->add_flag("--timing", o.timing, "Record wall times (outputs are then not reproducible)");
}

HarnessConfig paper_preset() {
  HarnessConfig c;
  c.grid = default_grid();
  c.instances_per_fold = 100;
  return c;
}

HarnessConfig resolve_config(const RunOptions& o, json* data_section = nullptr) {
  HarnessConfig cfg = o.preset == "paper" ? paper_preset() : HarnessConfig::desk();
  cfg.jobs = default_jobs();
  std::optional<std::uint64_t> config_seed;
  if (!o.config.empty()) {
    json j;
    try {
      j = read_json_file(o.config);
      apply_config(cfg, j);
    } catch (const ParseError& e) {
      throw UsageError(e.what());
    }
    if (j.contains("seed")) config_seed = cfg.seed;
    if (data_section && j.contains("data")) *data_section = j.at("data");
  }
  cfg.seed = resolve_seed(o.seed_opt, o.seed, config_seed);
  if (o.robust_opt->count()) cfg.search.robustness_mode = *parse_mode(o.robust);
  if (o.m_opt->count()) cfg.search.m_k_samples = o.m;
  if (o.repeats_opt->count()) cfg.repeats = o.repeats;
  if (o.population_opt->count()) cfg.search.population = o.population;
  if (o.generations_opt->count()) cfg.search.generations = o.generations;
  if (o.algorithm_opt->count()) {
    auto a = parse_algorithm(o.algorithm);
    if (!a) throw UsageError("unknown algorithm '" + o.algorithm + "'");
    cfg.search.algorithm = *a;
  }
  if (o.jobs_opt->count()) cfg.jobs = std::max(1u, o.jobs);
  cfg.timing = o.timing;
  if (cfg.repeats < 1) throw UsageError("--repeats must be >= 1");
  cfg.search.validate();
  return cfg;
}

std::shared_ptr<const Predictor> open_model(const std::string& model_path, const std::string& external,
                                            const Dataset& data) {
  if (!external.empty()) return std::make_shared<ExternalPredictor>(external, data.schema, data.class_names);
  if (model_path.empty()) throw UsageError("either --model or --external is required");
  return std::shared_ptr<const Predictor>(load_model(model_path, data.schema, data.class_count()));
}

// ---------------------------------------------------------------------------

struct GenOptions {
  std::string profile = "credit_like";
  std::size_t n = 400;
  std::size_t d = 0;
  double noise = 0.05;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out;
};

int cmd_gen(const GenOptions& o) {
  const auto profile = parse_profile(o.profile);
  if (!profile) throw UsageError("unknown profile '" + o.profile + "'");
  const std::size_t d = o.d ? o.d : (*profile == Profile::grid_toy ? 2 : 8);
  const std::uint64_t seed = resolve_seed(o.seed_opt, o.seed, std::nullopt);
  ensure_dir(o.out);
  const json config{{"profile", o.profile}, {"n", o.n}, {"d", d}, {"noise", o.noise}};
  write_manifest(o.out + "/manifest.json", "gen", config, seed, {"annotation.json", "data.csv", "rule.json"}, false);
  const auto sd = generate_synthetic(*profile, o.n, d, seed, o.noise);
  save_dataset(sd.data, o.out + "/annotation.json", o.out + "/data.csv");
  write_json_file(o.out + "/rule.json", sd.rule.to_json());
  std::cerr << "wrote " << sd.data.size() << " rows (" << d << " features) to " << o.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  DataOptions data;
  int k = 5;
  RunOptions run;
  std::string out;
};

int cmd_train(TrainOptions& o) {
  const HarnessConfig cfg = resolve_config(o.run);
  const Dataset data = load_dataset(o.data.annotations, o.data.dataset);
  data.validate();
  ensure_dir(o.out);
  json mcfg = harness_config_json(cfg);
  mcfg["k"] = o.k;
  std::vector<std::string> outputs{"model.json", "folds.csv"};
  for (int f = 0; f < o.k; ++f) outputs.push_back("fold" + std::to_string(f) + ".json");
  write_manifest(o.out + "/manifest.json", "train", mcfg, cfg.seed, outputs, cfg.timing);
  const auto grid = cfg.grid.empty() ? default_grid() : cfg.grid;

  // Seeds match the per-fold models of `experiment` on the same data.
  auto tuned = [&](const Dataset& train, std::uint64_t stream, std::optional<GridSearchResult>& gs) {
    std::set<int> classes(train.labels.begin(), train.labels.end());
    if (classes.size() < 2) {
      std::cerr << "warning: training data holds a single class; writing a constant model\n";
      return train_forest(train, grid.front(), derive_seed(cfg.seed, 0x70de1, stream));
    }
    gs = grid_search(train, grid, cfg.cv_k, derive_seed(cfg.seed, 0x9a1d, stream));
    return train_forest(train, gs->best, derive_seed(cfg.seed, 0x70de1, stream));
  };

  Table t{"folds", {"fold", "n_trees", "min_samples_split", "max_features", "cv_accuracy", "test_accuracy"}, {}};
  std::set<int> classes(data.labels.begin(), data.labels.end());
  if (classes.size() >= 2) {
    const FoldPlan plan = stratified_folds(data.labels, o.k, derive_seed(cfg.seed, 0xf01d5));
    for (int f = 0; f < o.k; ++f) {
      std::optional<GridSearchResult> gs;
      const auto model = tuned(data.subset(plan.train_indices(f)), static_cast<std::uint64_t>(f), gs);
      write_json_file(o.out + "/fold" + std::to_string(f) + ".json", model.to_json());
      const double acc = accuracy(model, data.subset(plan.test_indices(f)));
      t.add({std::to_string(f), std::to_string(model.params.n_trees), std::to_string(model.params.min_samples_split),
             std::string(to_string(model.params.max_features)), gs ? num(gs->cv_accuracy) : "", num(acc)});
      std::cerr << "fold " << f << ": test accuracy " << acc << "\n";
    }
  }
  std::optional<GridSearchResult> gs;
  const auto full = tuned(data, 0xa11, gs);
  write_json_file(o.out + "/model.json", full.to_json());
  std::ofstream csv_out(o.out + "/folds.csv", std::ios::binary);
  write_csv(t, csv_out);
  return 0;
}

// ---------------------------------------------------------------------------

struct SearchOptions {
  DataOptions data;
  std::string model;
  std::string external;
  std::vector<std::size_t> instances;
  bool all_nontarget = false;
  RunOptions run;
  std::string out;
};

int cmd_search(SearchOptions& o) {
  HarnessConfig cfg = resolve_config(o.run);
  const Dataset data = load_dataset(o.data.annotations, o.data.dataset);
  data.validate();
  const auto model = open_model(o.model, o.external, data);
  std::vector<std::size_t> ids = o.instances;
  if (o.all_nontarget) {
    const auto pred = model->predict_batch(data.instances);
    for (std::size_t r = 0; r < pred.size(); ++r)
      if (pred[r] != data.target_class) ids.push_back(r);
  }
  if (ids.empty()) throw UsageError("give --instance or --all-nontarget");
  for (auto id : ids) {
    if (id >= data.size())
      throw UnknownInstance("instance " + std::to_string(id) + " does not exist (dataset has " +
                            std::to_string(data.size()) + " rows)");
    if (!o.all_nontarget && model->predict(data.instances[id]) == data.target_class)
      throw AlreadyTarget("instance " + std::to_string(id) + " is already classified as '" +
                              data.class_names[static_cast<std::size_t>(data.target_class)] +
                              "'; nothing to explain");
  }
  if (!o.out.empty()) {
    write_manifest(o.out + ".manifest.json", "search", harness_config_json(cfg), cfg.seed, {o.out}, cfg.timing);
  }
  std::vector<json> results(ids.size());
  parallel_for(ids.size(), cfg.jobs, [&](std::size_t k) {
    SearchConfig sc = cfg.search;
    sc.seed = derive_seed(cfg.seed, ids[k]);
    sc.jobs = 1;
    const auto r = repeat_best(data.schema, data.instances[ids[k]], *model, data.target_class, sc, cfg.repeats);
    results[k] = result_json(data.schema, ids[k], data.instances[ids[k]], r, cfg.timing);
  });
  const json doc{{"algorithm", std::string(to_string(cfg.search.algorithm))},
                 {"robustness_mode", std::string(to_string(cfg.search.robustness_mode))},
                 {"target_class", data.class_names[static_cast<std::size_t>(data.target_class)]},
                 {"results", results}};
  if (o.out.empty()) {
    std::cout << doc.dump(2) << '\n';
  } else {
    write_json_file(o.out, doc);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct ExperimentOptions {
  std::string which = "all";
  DataOptions data;
  std::string profile;
  std::size_t n = 400;
  std::size_t d = 0;
  std::string model;
  std::string external;
  int folds = 0;
  std::size_t instances = 0;
  RunOptions run;
  std::string out;
};

int cmd_experiment(ExperimentOptions& o) {
  json data_section = json::object();
  HarnessConfig cfg = resolve_config(o.run, &data_section);
  if (o.folds > 0) cfg.folds = o.folds;
  if (o.instances > 0) cfg.instances_per_fold = o.instances;
  std::string profile = o.profile;
  std::size_t n = o.n, d = o.d;
  if (profile.empty() && o.data.annotations.empty() && data_section.contains("profile")) {
    profile = data_section.at("profile").get<std::string>();
    n = data_section.value("n", n);
    d = data_section.value("d", d);
  }

  Dataset data;
  std::shared_ptr<const Predictor> fixed;
  json data_json;
  if (!profile.empty()) {
    const auto p = parse_profile(profile);
    if (!p) throw UsageError("unknown profile '" + profile + "'");
    if (d == 0) d = *p == Profile::grid_toy ? 2 : 8;
    auto sd = generate_synthetic(*p, n, d, derive_seed(cfg.seed, 0xda7a));
    data = std::move(sd.data);
    data_json = {{"profile", profile}, {"n", n}, {"d", d}};
  } else {
    if (o.data.annotations.empty() || o.data.dataset.empty())
      throw UsageError("give --profile or both --annotations and --dataset");
    data = load_dataset(o.data.annotations, o.data.dataset);
    data_json = {{"annotations", o.data.annotations}, {"dataset", o.data.dataset}};
  }
  data.validate();
  if (!o.model.empty() || !o.external.empty()) fixed = open_model(o.model, o.external, data);

  const std::vector<std::string> known{"benchmark", "rq1", "rq2", "rq3", "invalidity", "msweep", "all"};
  if (std::find(known.begin(), known.end(), o.which) == known.end())
    throw UsageError("unknown experiment '" + o.which + "'");
  auto wants = [&](const std::string& w) { return o.which == w || o.which == "all"; };

  ensure_dir(o.out);
  json config = harness_config_json(cfg);
  config["data"] = data_json;
  std::vector<std::string> outputs{"folds.csv"};
  if (wants("benchmark")) outputs.push_back("benchmark.csv");
  if (wants("rq1")) outputs.push_back("rq1.csv");
  if (wants("rq2") || wants("rq3") || wants("invalidity")) outputs.push_back("records.csv");
  if (wants("rq2")) outputs.push_back("rq2.csv");
  if (wants("rq3")) {
    outputs.push_back("rq3.csv");
    outputs.push_back("cost_ratio.csv");
    outputs.push_back("significance.csv");
  }
  if (wants("invalidity")) outputs.push_back("invalidity.csv");
  if (wants("msweep")) outputs.push_back("msweep.csv");
  write_manifest(o.out + "/manifest.json", "experiment " + o.which, config, cfg.seed, outputs, cfg.timing);

  auto emit = [&](const Table& t) {
    write_table(t, o.out, config, cfg.seed);
    std::cerr << "wrote " << o.out << "/" << t.name << ".csv\n";
  };
  const Prepared prepared = prepare(data, cfg, fixed);
  emit(fold_table(prepared));
  if (wants("benchmark")) emit(benchmark_table(run_benchmark(prepared, cfg), cfg.timing));
  if (wants("rq1") || wants("rq2") || wants("rq3") || wants("invalidity")) {
    const auto outcomes = run_modes(prepared, cfg, cfg.modes);
    if (wants("rq1")) emit(rq1_table(run_rq1(outcomes, data.schema, cfg.tolerances, cfg.search.tol_abs)));
    if (wants("rq2") || wants("rq3") || wants("invalidity")) {
      emit(records_table(outcomes, data, cfg.timing));
      const auto study = run_perturbations(outcomes, data, cfg);
      emit(perturbation_cells_table(study));
      if (wants("rq2")) emit(rq2_table(study));
      if (wants("rq3")) {
        emit(rq3_table(study));
        emit(cost_ratio_table(study));
        emit(significance_table(study));
      }
      if (wants("invalidity")) emit(invalidity_table(study));
    }
  }
  if (wants("msweep")) emit(msweep_table(run_m_sweep(prepared, cfg), cfg.timing));
  return 0;
}

// ---------------------------------------------------------------------------

struct RobustnessOptions {
  DataOptions data;
  std::string model;
  std::string external;
  std::optional<std::size_t> instance;
  std::string x_text;
  std::string z_text;
  std::size_t m = 1000;
  std::size_t n_pert = 100;
  double sigma = 0.1;
  std::uint64_t seed = 0;
  CLI::Option* seed_opt = nullptr;
  std::string out;
};

int cmd_eval_robustness(RobustnessOptions& o) {
  const Dataset data = load_dataset(o.data.annotations, o.data.dataset);
  data.validate();
  const auto model = open_model(o.model, o.external, data);
  const std::uint64_t seed = resolve_seed(o.seed_opt, o.seed, std::nullopt);
  Instance x;
  if (o.instance) {
    if (*o.instance >= data.size()) throw UnknownInstance("instance " + std::to_string(*o.instance) + " does not exist");
    x = data.instances[*o.instance];
  } else if (!o.x_text.empty()) {
    x = parse_instance_text(data.schema, o.x_text, "--x");
  } else {
    throw UsageError("give --instance or --x");
  }
  const Instance z = parse_instance_text(data.schema, o.z_text, "--z");
  const auto& schema = data.schema;
  const int target = data.target_class;
  const auto part = induced_partition(schema, x, z);
  const auto w = max_c_setback(schema, x, z);
  const auto corr = setback_correction_cost(schema, z, w);
  std::vector<std::string> c_names, k_names;
  for (auto i : part.change) c_names.push_back(schema[i].name);
  for (auto i : part.keep) k_names.push_back(schema[i].name);
  json setback = json::object();
  for (auto i : part.change) {
    if (schema[i].is_numerical())
      setback[schema[i].name] = w.delta[i] + 0.0;
    else
      setback[schema[i].name] = w.category[i] == kNoChange ? json(nullptr) : json(schema[i].categories[static_cast<std::size_t>(w.category[i])]);
  }
  Rng rng = make_rng(derive_seed(seed, 1));
  json doc{{"x", instance_json(schema, x)},
           {"z", instance_json(schema, z)},
           {"prediction", data.class_names[static_cast<std::size_t>(model->predict(z))]},
           {"valid", model->predict(z) == target},
           {"plausible", check_plausible(schema, x, z)},
           {"C", c_names},
           {"K", k_names},
           {"max_c_setback", setback},
           {"setback_correction", {{"raw_l1", corr.raw}, {"modeled", corr.modeled}}},
           {"intervention_cost", intervention_cost(schema, x, z)},
           {"gower", gower(schema, x, z)},
           {"robustified_gower", robustified_gower(schema, x, z)},
           {"m", o.m},
           {"k_robustness_score", o.m ? k_robustness_score(schema, x, z, *model, o.m, rng) : 1.0}};
  json inval = json::object();
  for (auto scope : {Scope::C_only, Scope::K_only, Scope::both})
    for (const auto& dist : {Distribution::uniform(), Distribution::normal(o.sigma)}) {
      Rng r = make_rng(derive_seed(seed, 2, static_cast<std::uint64_t>(scope), dist.kind == Distribution::Kind::normal));
      inval[std::string(to_string(scope)) + "/" + dist.name()] =
          invalidity_rate(schema, x, z, *model, target, scope, dist, o.n_pert, r);
    }
  doc["invalidity"] = inval;
  doc["seed"] = seed;
  if (o.out.empty())
    std::cout << doc.dump(2) << '\n';
  else
    write_json_file(o.out, doc);
  return 0;
}

struct ServeOptions {
  std::string annotations;
  std::string model;
};

int cmd_serve(const ServeOptions& o) {
  const Annotation a = load_annotation(o.annotations);
  const auto model = load_model(o.model, a.schema, static_cast<int>(a.class_names.size()));
  serve_protocol(std::cin, std::cout, *model, a.schema, a.class_names);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust counterfactual explanations for black-box classifiers"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(CFX_VERSION));

  GenOptions gen;
  auto* c_gen = app.add_subcommand("gen", "Generate a synthetic annotated dataset");
  c_gen->add_option("--profile", gen.profile, "credit_like, clinic_like or grid_toy");
  c_gen->add_option("--n", gen.n, "Rows");
  c_gen->add_option("--d", gen.d, "Features (default 8; grid_toy: 2)");
  c_gen->add_option("--noise", gen.noise, "Label flip rate");
  gen.seed_opt = c_gen->add_option("--seed", gen.seed, "Seed");
  c_gen->add_option("--out", gen.out, "Output directory")->required();

  TrainOptions train;
  auto* c_train = app.add_subcommand("train", "Tune and train random forests per fold and on all data");
  add_data_options(c_train, train.data);
  c_train->add_option("--k", train.k, "Folds")->check(CLI::Range(2, 100));
  add_run_options(c_train, train.run);
  c_train->add_option("--out", train.out, "Output directory")->required();

  SearchOptions search;
  auto* c_search = app.add_subcommand("search", "Search counterfactuals for dataset rows");
  add_data_options(c_search, search.data);
  c_search->add_option("--model", search.model, "Model JSON");
  c_search->add_option("--external", search.external, "Shell command speaking the line protocol");
  c_search->add_option("--instance", search.instances, "Row index (0-based); repeatable");
  c_search->add_flag("--all-nontarget", search.all_nontarget, "Every row not classified as the target");
  add_run_options(c_search, search.run);
  c_search->add_option("--out", search.out, "Output JSON (default: stdout)");

  ExperimentOptions exp;
  auto* c_exp = app.add_subcommand("experiment", "Run experiment protocols and write CSV tables");
  c_exp->add_option("which", exp.which, "benchmark, rq1, rq2, rq3, invalidity, msweep or all");
  add_data_options(c_exp, exp.data, false);
  c_exp->add_option("--profile", exp.profile, "Generate data from a synthetic profile instead");
  c_exp->add_option("--n", exp.n, "Rows for --profile");
  c_exp->add_option("--d", exp.d, "Features for --profile");
  c_exp->add_option("--model", exp.model, "Fixed model for every fold instead of tuned forests");
  c_exp->add_option("--external", exp.external, "Fixed external model for every fold");
  c_exp->add_option("--folds", exp.folds, "Folds");
  c_exp->add_option("--instances", exp.instances, "Instances per fold");
  add_run_options(c_exp, exp.run);
  c_exp->add_option("--out", exp.out, "Output directory")->required();

  RobustnessOptions rob;
  auto* c_rob = app.add_subcommand("eval-robustness", "Setback, K-robustness and invalidity of a given z");
  add_data_options(c_rob, rob.data);
  c_rob->add_option("--model", rob.model, "Model JSON");
  c_rob->add_option("--external", rob.external, "Shell command speaking the line protocol");
  c_rob->add_option("--instance", rob.instance, "Row index of x");
  c_rob->add_option("--x", rob.x_text, "x as a CSV line");
  c_rob->add_option("--z", rob.z_text, "z as a CSV line")->required();
  c_rob->add_option("--m", rob.m, "K-neighbours for the score");
  c_rob->add_option("--n-pert", rob.n_pert, "Perturbations per invalidity estimate");
  c_rob->add_option("--sigma", rob.sigma, "Normal-mode sigma (fraction of interval width)");
  rob.seed_opt = c_rob->add_option("--seed", rob.seed, "Seed");
  c_rob->add_option("--out", rob.out, "Output JSON (default: stdout)");

  ServeOptions serve;
  auto* c_serve = app.add_subcommand("serve", "Answer the line protocol on stdin/stdout with a model file");
  c_serve->add_option("--annotations", serve.annotations, "Annotation JSON")->required();
  c_serve->add_option("--model", serve.model, "Model JSON")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (c_gen->parsed()) return cmd_gen(gen);
    if (c_train->parsed()) return cmd_train(train);
    if (c_search->parsed()) return cmd_search(search);
    if (c_exp->parsed()) return cmd_experiment(exp);
    if (c_rob->parsed()) return cmd_eval_robustness(rob);
    if (c_serve->parsed()) return cmd_serve(serve);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const PreconditionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const AlreadyTarget& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const SchemaViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const ModelSchemaMismatch& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const UnknownInstance& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const TooFewPerClass& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const DegenerateData& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
