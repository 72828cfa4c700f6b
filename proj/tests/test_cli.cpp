#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "cfx/cfx.hpp"

namespace fs = std::filesystem;
using namespace cfx;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cfx_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

Run cfx_run(const std::string& args, const std::string& env = "") {
  const auto err = fs::temp_directory_path() / "cfx_cli_stderr.txt";
  const std::string cmd = env + " " + CFX_CLI_PATH + " " + args + " 2>" + err.string();
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = pclose(p);
  r.code = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  r.err = slurp(err);
  return r;
}

void expect_same_tree(const fs::path& a, const fs::path& b) {
  std::size_t files = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    const auto other = b / e.path().filename();
    ASSERT_TRUE(fs::exists(other)) << other;
    EXPECT_EQ(slurp(e.path()), slurp(other)) << e.path().filename();
    ++files;
  }
  EXPECT_GT(files, 0u);
}

// 1-D toy: v in [0, 10], class "yes" iff v >= 5.
fs::path write_threshold_toy(const fs::path& dir) {
  std::ofstream(dir / "toy.json") << R"({"class_names": ["no", "yes"], "target_class": "yes",
    "features": [{"name": "v", "kind": "numerical", "min": 0, "max": 10, "constraint": "none",
                  "perturbation": {"max_decrease": 1, "max_increase": 1}}]})";
  std::ofstream csv(dir / "toy.csv");
  csv << "v,label\n";
  for (int i = 0; i <= 20; ++i) csv << i * 0.5 << "," << (i * 0.5 >= 5 ? "yes" : "no") << "\n";
  return dir;
}

// mawk block-buffers stdin unless told otherwise.
std::string awk_model(const std::string& body) {
  static const bool mawk = std::system("awk -W version 2>&1 | grep -q mawk") == 0;
  return std::string("--external \"awk") + (mawk ? " -W interactive" : "") +
         " -F, '{ if (\\$0 == \\\"\\\") { print \\\"\\\"; fflush() } else { print (" + body + ") } }'\"";
}

const std::string kThresholdAwk = awk_model("\\$1 >= 5 ? \\\"yes\\\" : \\\"no\\\"");
const std::string kGridToyAwk =
    awk_model("70 - 3 * \\$1 - 4 * \\$2 >= 0 ? \\\"low_risk\\\" : \\\"high_risk\\\"");

std::string small_run() { return " --population 40 --generations 10 --repeats 1 --jobs 1 --seed 9"; }

}  // namespace

TEST(Gen, SameSeedGivesIdenticalFiles) {
  const auto dir = scratch("gen");
  ASSERT_EQ(cfx_run("gen --profile credit_like --n 80 --d 12 --seed 4 --out " + (dir / "a").string()).code, 0);
  ASSERT_EQ(cfx_run("gen --profile credit_like --n 80 --d 12 --seed 4 --out " + (dir / "b").string()).code, 0);
  expect_same_tree(dir / "a", dir / "b");
  ASSERT_EQ(cfx_run("gen --profile credit_like --n 80 --d 12 --out " + (dir / "c").string(), "CFX_SEED=4").code, 0);
  expect_same_tree(dir / "a", dir / "c");
  const auto data = load_dataset((dir / "a/annotation.json").string(), (dir / "a/data.csv").string());
  EXPECT_NO_THROW(data.validate());
  EXPECT_EQ(data.size(), 80u);
}

TEST(Gen, GridToyGeometry) {
  const auto dir = scratch("gen_grid");
  ASSERT_EQ(cfx_run("gen --profile grid_toy --n 60 --seed 1 --out " + dir.string()).code, 0);
  const auto data = load_dataset((dir / "annotation.json").string(), (dir / "data.csv").string());
  const auto rule = LinearRulePredictor::from_json(read_json_file((dir / "rule.json").string()));
  EXPECT_EQ(rule.predict(Instance{14, 10}), 0);
  EXPECT_EQ(rule.predict(Instance{10, 10}), 1);
  EXPECT_EQ(rule.predict(Instance{14, 7}), 1);
  EXPECT_EQ(data.schema[0].perturbation.max_decrease, 1.0);
  EXPECT_EQ(data.schema[1].perturbation.max_decrease, 2.5);
}

TEST(Train, SeparableBlobsAndDeterminism) {
  const auto dir = scratch("train");
  std::ofstream(dir / "blobs.json") << R"({"class_names": ["a", "b"], "target_class": "b",
    "features": [{"name": "u", "kind": "numerical", "min": -10, "max": 10},
                 {"name": "w", "kind": "numerical", "min": -10, "max": 10}]})";
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0, 1);
  std::vector<Instance> pts;
  std::vector<int> labels;
  {
    std::ofstream csv(dir / "blobs.csv");
    csv << "u,w,label\n";
    for (int i = 0; i < 120; ++i) {
      const int y = i % 2;
      const double c = y ? 3 : -3;
      const Instance z{std::clamp(c + g(rng), -10.0, 10.0), std::clamp(c + g(rng), -10.0, 10.0)};
      csv << csv::format_number(z[0]) << "," << csv::format_number(z[1]) << "," << (y ? "b" : "a") << "\n";
      pts.push_back(z);
      labels.push_back(y);
    }
  }
  std::ofstream(dir / "cfg.json") << R"({"cv_k": 3, "grid": [{"n_trees": 15, "min_samples_split": 2,
    "max_features": "all_d"}, {"n_trees": 15, "min_samples_split": 8, "max_features": "sqrt_d"}]})";
  const std::string base = "train --annotations " + (dir / "blobs.json").string() + " --dataset " +
                           (dir / "blobs.csv").string() + " --k 4 --seed 2 --config " + (dir / "cfg.json").string();
  ASSERT_EQ(cfx_run(base + " --out " + (dir / "m1").string()).code, 0);
  ASSERT_EQ(cfx_run(base + " --out " + (dir / "m2").string() + " --jobs 3").code, 0);
  expect_same_tree(dir / "m1", dir / "m2");

  // Nearest-centroid oracle on the same folds.
  const auto plan = stratified_folds(labels, 4, derive_seed(2, 0xf01d5));
  std::istringstream folds(slurp(dir / "m1/folds.csv"));
  std::string line;
  std::getline(folds, line);
  int f = 0;
  while (std::getline(folds, line)) {
    const double acc = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_GE(acc, 0.9) << "fold " << f;
    double cx[2][2] = {{0, 0}, {0, 0}};
    int cn[2] = {0, 0};
    for (auto r : plan.train_indices(f)) {
      cx[labels[r]][0] += pts[r][0];
      cx[labels[r]][1] += pts[r][1];
      ++cn[labels[r]];
    }
    std::size_t ok = 0;
    const auto test = plan.test_indices(f);
    for (auto r : test) {
      double d[2];
      for (int c = 0; c < 2; ++c)
        d[c] = std::hypot(pts[r][0] - cx[c][0] / cn[c], pts[r][1] - cx[c][1] / cn[c]);
      ok += (d[1] < d[0] ? 1 : 0) == labels[r];
    }
    EXPECT_GE(static_cast<double>(ok) / static_cast<double>(test.size()), 0.9);
    ++f;
  }
  EXPECT_EQ(f, 4);
}

TEST(Train, SingleClassWarnsAndWritesConstantModel) {
  const auto dir = scratch("train_single");
  write_threshold_toy(dir);
  std::ofstream csv(dir / "one.csv");
  csv << "v,label\n";
  for (int i = 0; i < 30; ++i) csv << i * 0.1 << ",no\n";
  csv.close();
  const auto r = cfx_run("train --annotations " + (dir / "toy.json").string() + " --dataset " +
                         (dir / "one.csv").string() + " --seed 1 --out " + (dir / "m").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  const auto data = load_dataset((dir / "toy.json").string(), (dir / "one.csv").string());
  const auto model = load_model((dir / "m/model.json").string(), data.schema, data.class_count());
  for (double v : {0.0, 5.0, 10.0}) EXPECT_EQ(model->predict(Instance{v}), 0);
}

TEST(Search, OneDimToyLandsOnTheBoundary) {
  const auto dir = write_threshold_toy(scratch("search"));
  const std::string base = "search --annotations " + (dir / "toy.json").string() + " --dataset " +
                           (dir / "toy.csv").string() + " " + kThresholdAwk + " --instance 2 --seed 5";
  fs::create_directories(dir / "a");
  fs::create_directories(dir / "b");
  const auto r = cfx_run(base + " --out " + (dir / "a/r.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(slurp(dir / "a/r.json"));
  const auto& res = j.at("results").at(0);
  EXPECT_TRUE(res.at("valid").get<bool>());
  const double v = res.at("counterfactual").at("v").get<double>();
  EXPECT_GE(v, 5.0);
  EXPECT_LE(v, 5.1);
  ASSERT_EQ(res.at("explanation").size(), 1u);
  EXPECT_EQ(res.at("explanation").at(0).at("feature"), "v");
  EXPECT_FALSE(res.contains("robustified_gower"));

  ASSERT_EQ(cfx_run(base + " --out " + (dir / "b/r.json").string()).code, 0);
  EXPECT_EQ(slurp(dir / "a/r.json"), slurp(dir / "b/r.json"));
  const auto ma = nlohmann::json::parse(slurp(dir / "a/r.json.manifest.json"));
  auto mb = nlohmann::json::parse(slurp(dir / "b/r.json.manifest.json"));
  mb["outputs"] = ma["outputs"];
  EXPECT_EQ(ma, mb);
}

TEST(Search, RobustBothReportsRobustifiedGower) {
  const auto dir = write_threshold_toy(scratch("search_both"));
  const auto r = cfx_run("search --annotations " + (dir / "toy.json").string() + " --dataset " +
                         (dir / "toy.csv").string() + " " + kThresholdAwk + " --instance 2 --robust both --m 8" +
                         small_run());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("robustness_mode"), "both");
  EXPECT_TRUE(j.at("results").at(0).contains("robustified_gower"));
  EXPECT_TRUE(j.at("results").at(0).contains("k_score"));
}

TEST(Search, ExitCodes) {
  const auto dir = write_threshold_toy(scratch("search_codes"));
  const std::string data =
      "search --annotations " + (dir / "toy.json").string() + " --dataset " + (dir / "toy.csv").string() + " ";
  // already in the target class
  auto r = cfx_run(data + kThresholdAwk + " --instance 15");
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("already classified"), std::string::npos);
  EXPECT_EQ(cfx_run(data + kThresholdAwk + " --instance 99").code, 3);
  EXPECT_EQ(cfx_run(data + kThresholdAwk + " --instance 2 --robust sideways").code, 2);
  EXPECT_EQ(cfx_run(data + kThresholdAwk + " --instance 2 --bogus").code, 2);
  EXPECT_EQ(cfx_run(data + " --instance 2").code, 2);
  EXPECT_EQ(cfx_run("teleport").code, 2);
  EXPECT_EQ(cfx_run("").code, 2);
  std::ofstream(dir / "bad.json") << R"({"search": {"populaton": 3}})";
  EXPECT_EQ(cfx_run(data + kThresholdAwk + " --instance 2 --config " + (dir / "bad.json").string()).code, 2);
  std::ofstream(dir / "broken.csv") << "v,label\n11,no\n";
  EXPECT_EQ(cfx_run("search --annotations " + (dir / "toy.json").string() + " --dataset " +
                    (dir / "broken.csv").string() + " " + kThresholdAwk + " --instance 0")
                .code,
            3);
  EXPECT_EQ(cfx_run(data + "--external \"exit 1\" --instance 2").code, 4);
  EXPECT_EQ(cfx_run("--version").code, 0);
}

TEST(Experiment, Rq2TableAndDeterminism) {
  const auto dir = scratch("experiment");
  const std::string base =
      "experiment rq2 --profile credit_like --n 100 --d 6 --folds 2 --instances 2 --m 8" + small_run();
  ASSERT_EQ(cfx_run(base + " --out " + (dir / "a").string()).code, 0);
  ASSERT_EQ(cfx_run(base + " --out " + (dir / "b").string()).code, 0);
  expect_same_tree(dir / "a", dir / "b");
  std::istringstream in(slurp(dir / "a/rq2.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "mode,scope,dist,fixability,sd,instances,excluded_invalid");
  int c_rows = 0;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) cells.push_back(c);
    if (cells[1] == "C") {
      EXPECT_EQ(cells[3], "1");
      ++c_rows;
    }
  }
  EXPECT_EQ(c_rows, 8);
  const auto manifest = nlohmann::json::parse(slurp(dir / "a/manifest.json"));
  EXPECT_FALSE(manifest.contains("started_at"));
  EXPECT_EQ(manifest.at("config").at("search").at("population"), 40);
}

TEST(Experiment, MSweepOnGridToy) {
  const auto dir = scratch("experiment_msweep");
  const std::string base = "experiment msweep --profile grid_toy --n 120 --folds 2 --instances 2" + small_run() + " " +
                           kGridToyAwk;
  ASSERT_EQ(cfx_run(base + " --out " + (dir / "a").string()).code, 0);
  ASSERT_EQ(cfx_run(base + " --out " + (dir / "b").string()).code, 0);
  expect_same_tree(dir / "a", dir / "b");
  EXPECT_TRUE(fs::exists(dir / "a/msweep.csv"));
  EXPECT_TRUE(fs::exists(dir / "a/msweep.json"));
}

TEST(EvalRobustness, GridToySetbacksAndDeterminism) {
  const auto dir = scratch("eval");
  ASSERT_EQ(cfx_run("gen --profile grid_toy --n 60 --seed 1 --out " + dir.string()).code, 0);
  const std::string base = "eval-robustness --annotations " + (dir / "annotation.json").string() + " --dataset " +
                           (dir / "data.csv").string() + " " + kGridToyAwk +
                           " --x 14,10 --z 14,7 --m 500 --n-pert 50 --seed 3";
  const auto a = cfx_run(base);
  ASSERT_EQ(a.code, 0) << a.err;
  const auto b = cfx_run(base);
  EXPECT_EQ(a.out, b.out);
  const auto j = nlohmann::json::parse(a.out);
  EXPECT_TRUE(j.at("valid").get<bool>());
  EXPECT_EQ(j.at("C"), nlohmann::json::array({"vit"}));
  EXPECT_DOUBLE_EQ(j.at("max_c_setback").at("vit").get<double>(), 2.5);
  EXPECT_DOUBLE_EQ(j.at("setback_correction").at("raw_l1").get<double>(), 2.5);
  EXPECT_EQ(j.at("invalidity").at("C/uniform").get<double>(), 1.0);
  ASSERT_EQ(cfx_run(base + " --out " + (dir / "e1.json").string()).code, 0);
  ASSERT_EQ(cfx_run(base + " --out " + (dir / "e2.json").string()).code, 0);
  EXPECT_EQ(slurp(dir / "e1.json"), slurp(dir / "e2.json"));
  std::string wrong = base;
  wrong.replace(wrong.find("--z 14,7"), 8, "--z 1,2,3");
  EXPECT_EQ(cfx_run(wrong).code, 3);
}
