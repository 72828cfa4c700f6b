#pragma once

// CART random forest (Gini, unbounded depth) with stratified k-fold grid search.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfx/errors.hpp"
#include "cfx/predictor.hpp"
#include "cfx/rng.hpp"
#include "cfx/schema.hpp"

namespace cfx {

enum class MaxFeatures { sqrt_d, all_d };

inline std::string_view to_string(MaxFeatures m) { return m == MaxFeatures::sqrt_d ? "sqrt_d" : "all_d"; }

struct ForestParams {
  int n_trees = 50;
  int min_samples_split = 2;
  MaxFeatures max_features = MaxFeatures::sqrt_d;

  friend bool operator==(const ForestParams&, const ForestParams&) = default;
};

// n_trees x min_samples_split x max_features, in that nesting order.
inline std::vector<ForestParams> make_grid(std::span<const int> n_trees, std::span<const int> min_split,
                                           std::span<const MaxFeatures> max_features) {
  std::vector<ForestParams> grid;
  for (int t : n_trees)
    for (int s : min_split)
      for (auto m : max_features) grid.push_back({t, s, m});
  return grid;
}

inline std::vector<ForestParams> default_grid() {
  const int trees[] = {50, 500};
  const int split[] = {2, 8};
  const MaxFeatures mf[] = {MaxFeatures::sqrt_d, MaxFeatures::all_d};
  return make_grid(trees, split, mf);
}

// Numerical nodes send v <= threshold left; categorical nodes send v == category left.
struct TreeNode {
  int feature = -1;
  bool categorical = false;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int label = 0;

  bool is_leaf() const { return feature < 0; }
};

class DecisionTree {
 public:
  std::vector<TreeNode> nodes;
  std::vector<std::vector<int>> leaf_histograms;  // parallel to nodes; empty for inner nodes

  int predict(std::span<const double> z) const {
    int n = 0;
    for (;;) {
      const TreeNode& node = nodes[static_cast<std::size_t>(n)];
      if (node.is_leaf()) return node.label;
      const double v = z[static_cast<std::size_t>(node.feature)];
      const bool go_left = node.categorical ? std::lround(v) == std::lround(node.threshold) : v <= node.threshold;
      n = go_left ? node.left : node.right;
    }
  }
};

inline int argmax_lowest(std::span<const int> counts) {
  int best = 0;
  for (std::size_t c = 1; c < counts.size(); ++c)
    if (counts[c] > counts[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  return best;
}

class ForestModel final : public Predictor {
 public:
  std::vector<DecisionTree> trees;
  int n_classes = 2;
  ForestParams params;
  std::uint64_t bootstrap_seed = 0;
  std::size_t n_features = 0;
  // Set when training saw a single class; the model is then constant.
  bool degenerate = false;
  int constant_label = 0;

  int predict(const Instance& z) const override {
    if (degenerate) return constant_label;
    const auto k = static_cast<std::size_t>(n_classes);
    const double* v = z.values().data();
    if (k <= 16) {
      std::array<int, 16> votes{};
      for (int root : roots_) ++votes[static_cast<std::size_t>(walk(root, v))];
      return argmax_lowest(std::span<const int>(votes.data(), k));
    }
    std::vector<int> votes(k, 0);
    for (int root : roots_) ++votes[static_cast<std::size_t>(walk(root, v))];
    return argmax_lowest(votes);
  }

  // Packs every tree into one contiguous node array; call after editing `trees`.
  void finalize() {
    flat_.clear();
    roots_.clear();
    for (const auto& t : trees) {
      const int base = static_cast<int>(flat_.size());
      roots_.push_back(base);
      for (const auto& n : t.nodes) {
        FlatNode f;
        if (n.is_leaf()) {
          f.feature = -1;
          f.left = n.label;
        } else {
          f.feature = n.feature;
          f.categorical = n.categorical;
          f.threshold = n.categorical ? static_cast<double>(std::lround(n.threshold)) : n.threshold;
          f.left = base + n.left;
          f.right = base + n.right;
        }
        flat_.push_back(f);
      }
    }
  }

  std::vector<int> predict_batch(std::span<const Instance> batch) const override {
    std::vector<int> out;
    out.reserve(batch.size());
    for (const auto& z : batch) out.push_back(predict(z));
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["type"] = "forest";
    j["n_classes"] = n_classes;
    j["n_features"] = n_features;
    j["n_trees"] = params.n_trees;
    j["min_samples_split"] = params.min_samples_split;
    j["max_features"] = std::string(to_string(params.max_features));
    j["bootstrap_seed"] = bootstrap_seed;
    j["degenerate"] = degenerate;
    j["constant_label"] = constant_label;
    j["trees"] = nlohmann::json::array();
    for (const auto& t : trees) {
      nlohmann::json jt = nlohmann::json::array();
      for (std::size_t i = 0; i < t.nodes.size(); ++i) {
        const auto& n = t.nodes[i];
        if (n.is_leaf()) {
          jt.push_back({{"leaf", t.leaf_histograms[i]}});
        } else {
          jt.push_back({{"feature", n.feature},
                        {n.categorical ? "category" : "threshold", n.threshold},
                        {"left", n.left},
                        {"right", n.right}});
        }
      }
      j["trees"].push_back(std::move(jt));
    }
    return j;
  }

  static ForestModel from_json(const nlohmann::json& j) {
    try {
      if (j.at("type").get<std::string>() != "forest") throw ParseError("model: not a forest");
      ForestModel m;
      m.n_classes = j.at("n_classes").get<int>();
      m.n_features = j.at("n_features").get<std::size_t>();
      m.params.n_trees = j.at("n_trees").get<int>();
      m.params.min_samples_split = j.at("min_samples_split").get<int>();
      m.params.max_features = j.at("max_features").get<std::string>() == "all_d" ? MaxFeatures::all_d : MaxFeatures::sqrt_d;
      m.bootstrap_seed = j.at("bootstrap_seed").get<std::uint64_t>();
      m.degenerate = j.at("degenerate").get<bool>();
      m.constant_label = j.at("constant_label").get<int>();
      for (const auto& jt : j.at("trees")) {
        DecisionTree t;
        for (const auto& jn : jt) {
          TreeNode n;
          if (jn.contains("leaf")) {
            auto hist = jn.at("leaf").get<std::vector<int>>();
            if (hist.size() != static_cast<std::size_t>(m.n_classes)) throw ParseError("model: bad leaf histogram");
            n.label = argmax_lowest(hist);
            t.leaf_histograms.push_back(std::move(hist));
          } else {
            n.feature = jn.at("feature").get<int>();
            n.categorical = jn.contains("category");
            n.threshold = jn.at(n.categorical ? "category" : "threshold").get<double>();
            n.left = jn.at("left").get<int>();
            n.right = jn.at("right").get<int>();
            if (n.feature < 0 || static_cast<std::size_t>(n.feature) >= m.n_features)
              throw ParseError("model: split feature out of range");
            t.leaf_histograms.emplace_back();
          }
          t.nodes.push_back(n);
        }
        const auto count = static_cast<int>(t.nodes.size());
        for (const auto& n : t.nodes)
          if (!n.is_leaf() && (n.left <= 0 || n.left >= count || n.right <= 0 || n.right >= count))
            throw ParseError("model: child index out of range");
        if (t.nodes.empty()) throw ParseError("model: empty tree");
        m.trees.push_back(std::move(t));
      }
      m.finalize();
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("model: ") + e.what());
    }
  }

 private:
  struct FlatNode {
    double threshold = 0.0;
    int feature = -1;  // -1 marks a leaf whose label is stored in `left`
    int left = 0;
    int right = 0;
    bool categorical = false;
  };

  // Category ids are stored as exact integers, so equality is exact.
  int walk(int n, const double* v) const {
    for (;;) {
      const FlatNode& node = flat_[static_cast<std::size_t>(n)];
      if (node.feature < 0) return node.left;
      const double x = v[node.feature];
      const bool go_left = node.categorical ? x == node.threshold : x <= node.threshold;
      n = go_left ? node.left : node.right;
    }
  }

  std::vector<FlatNode> flat_;
  std::vector<int> roots_;
};

namespace detail {

struct SplitCandidate {
  double score = -1.0;  // sum over children of (sum_c count_c^2) / n_child; larger is purer
  int feature = -1;
  bool categorical = false;
  double threshold = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Dataset& data, const ForestParams& params, int n_classes, Rng& rng)
      : data_(data), params_(params), n_classes_(n_classes), rng_(rng) {
    const auto d = data.schema.size();
    features_per_split_ = params.max_features == MaxFeatures::all_d
                              ? d
                              : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(d))));
    features_per_split_ = std::clamp<std::size_t>(features_per_split_, 1, d);
  }

  DecisionTree build(std::vector<std::size_t> sample) {
    DecisionTree tree;
    struct Pending {
      int node;
      std::vector<std::size_t> rows;
    };
    std::vector<Pending> stack;
    tree.nodes.emplace_back();
    tree.leaf_histograms.emplace_back();
    stack.push_back({0, std::move(sample)});
    while (!stack.empty()) {
      Pending p = std::move(stack.back());
      stack.pop_back();
      std::vector<int> hist(static_cast<std::size_t>(n_classes_), 0);
      for (auto r : p.rows) ++hist[static_cast<std::size_t>(data_.labels[r])];
      const bool pure = std::count_if(hist.begin(), hist.end(), [](int c) { return c > 0; }) <= 1;
      SplitCandidate split;
      if (!pure && static_cast<int>(p.rows.size()) >= params_.min_samples_split) split = best_split(p.rows);
      auto& node = tree.nodes[static_cast<std::size_t>(p.node)];
      if (split.feature < 0) {
        node.label = argmax_lowest(hist);
        tree.leaf_histograms[static_cast<std::size_t>(p.node)] = std::move(hist);
        continue;
      }
      std::vector<std::size_t> left, right;
      for (auto r : p.rows) {
        const double v = data_.instances[r][static_cast<std::size_t>(split.feature)];
        const bool go_left = split.categorical ? std::lround(v) == std::lround(split.threshold) : v <= split.threshold;
        (go_left ? left : right).push_back(r);
      }
      node.feature = split.feature;
      node.categorical = split.categorical;
      node.threshold = split.threshold;
      const int l = static_cast<int>(tree.nodes.size());
      tree.nodes.emplace_back();
      tree.leaf_histograms.emplace_back();
      tree.nodes.emplace_back();
      tree.leaf_histograms.emplace_back();
      tree.nodes[static_cast<std::size_t>(p.node)].left = l;
      tree.nodes[static_cast<std::size_t>(p.node)].right = l + 1;
      stack.push_back({l + 1, std::move(right)});
      stack.push_back({l, std::move(left)});
    }
    return tree;
  }

 private:
  // Visits features in random order until `features_per_split_` non-constant
  // ones were evaluated.
  SplitCandidate best_split(const std::vector<std::size_t>& rows) {
    const auto d = data_.schema.size();
    std::vector<std::size_t> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    SplitCandidate best;
    std::size_t visited = 0;
    for (auto f : order) {
      if (visited == features_per_split_) break;
      SplitCandidate c = data_.schema[f].is_numerical() ? numeric_split(rows, f) : categorical_split(rows, f);
      if (c.feature < 0) continue;  // constant here
      ++visited;
      if (c.score > best.score) best = c;
    }
    return best;
  }

  SplitCandidate numeric_split(const std::vector<std::size_t>& rows, std::size_t f) {
    std::vector<std::pair<double, int>> vals;
    vals.reserve(rows.size());
    for (auto r : rows) vals.emplace_back(data_.instances[r][f], data_.labels[r]);
    std::sort(vals.begin(), vals.end());
    SplitCandidate best;
    if (vals.front().first == vals.back().first) return best;
    const auto k = static_cast<std::size_t>(n_classes_);
    std::vector<double> left(k, 0.0), right(k, 0.0);
    for (const auto& [v, y] : vals) right[static_cast<std::size_t>(y)] += 1;
    double left_sq = 0, right_sq = 0;
    for (double c : right) right_sq += c * c;
    const double n = static_cast<double>(vals.size());
    for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
      const auto y = static_cast<std::size_t>(vals[i].second);
      left_sq += 2 * left[y] + 1;
      left[y] += 1;
      right_sq -= 2 * right[y] - 1;
      right[y] -= 1;
      if (vals[i].first == vals[i + 1].first) continue;
      const double nl = static_cast<double>(i + 1);
      const double score = left_sq / nl + right_sq / (n - nl);
      if (score > best.score) {
        best.score = score;
        best.feature = static_cast<int>(f);
        double mid = 0.5 * (vals[i].first + vals[i + 1].first);
        if (!(mid < vals[i + 1].first)) mid = vals[i].first;
        best.threshold = mid;
      }
    }
    return best;
  }

  SplitCandidate categorical_split(const std::vector<std::size_t>& rows, std::size_t f) {
    const auto k = static_cast<std::size_t>(n_classes_);
    const auto cats = static_cast<std::size_t>(data_.schema[f].category_count());
    std::vector<std::vector<double>> counts(cats, std::vector<double>(k, 0.0));
    std::vector<double> per_cat(cats, 0.0), total(k, 0.0);
    for (auto r : rows) {
      const auto c = static_cast<std::size_t>(data_.instances[r].category(f));
      const auto y = static_cast<std::size_t>(data_.labels[r]);
      counts[c][y] += 1;
      per_cat[c] += 1;
      total[y] += 1;
    }
    SplitCandidate best;
    const double n = static_cast<double>(rows.size());
    for (std::size_t c = 0; c < cats; ++c) {
      if (per_cat[c] == 0 || per_cat[c] == n) continue;
      double lsq = 0, rsq = 0;
      for (std::size_t y = 0; y < k; ++y) {
        lsq += counts[c][y] * counts[c][y];
        const double r = total[y] - counts[c][y];
        rsq += r * r;
      }
      const double score = lsq / per_cat[c] + rsq / (n - per_cat[c]);
      if (score > best.score) {
        best.score = score;
        best.feature = static_cast<int>(f);
        best.categorical = true;
        best.threshold = static_cast<double>(c);
      }
    }
    return best;
  }

  const Dataset& data_;
  ForestParams params_;
  int n_classes_;
  Rng& rng_;
  std::size_t features_per_split_ = 1;
};

}  // namespace detail

// Draws the bootstrap sample (n draws with replacement) of one tree.
inline std::vector<std::size_t> bootstrap_indices(std::size_t n, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> out(n);
  for (auto& i : out) i = pick(rng);
  return out;
}

inline ForestModel train_forest(const Dataset& train, const ForestParams& params, std::uint64_t seed) {
  if (train.size() == 0) throw DegenerateData("train_forest: empty training set");
  if (params.n_trees < 1 || params.min_samples_split < 2) throw std::invalid_argument("train_forest: bad params");
  ForestModel model;
  model.n_classes = train.class_count();
  model.params = params;
  model.bootstrap_seed = seed;
  model.n_features = train.schema.size();
  std::vector<int> counts(static_cast<std::size_t>(model.n_classes), 0);
  for (int y : train.labels) ++counts[static_cast<std::size_t>(y)];
  if (std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }) < 2) {
    model.degenerate = true;
    model.constant_label = train.labels.front();
    return model;
  }
  model.trees.reserve(static_cast<std::size_t>(params.n_trees));
  for (int t = 0; t < params.n_trees; ++t) {
    Rng rng = make_rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
    auto sample = bootstrap_indices(train.size(), rng);
    detail::TreeBuilder builder(train, params, model.n_classes, rng);
    model.trees.push_back(builder.build(std::move(sample)));
  }
  model.finalize();
  return model;
}

struct FoldPlan {
  int k = 0;
  std::vector<int> assignments;

  std::vector<std::size_t> test_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] == fold) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> train_indices(int fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignments.size(); ++i)
      if (assignments[i] != fold) out.push_back(i);
    return out;
  }
};

// Each class is shuffled and dealt round-robin, continuing the deal where the
// previous class stopped so fold sizes also stay balanced.
inline FoldPlan stratified_folds(std::span<const int> labels, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("stratified_folds: k must be >= 2");
  int n_classes = 0;
  for (int y : labels) n_classes = std::max(n_classes, y + 1);
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(n_classes));
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
  for (std::size_t c = 0; c < by_class.size(); ++c)
    if (!by_class[c].empty() && by_class[c].size() < static_cast<std::size_t>(k))
      throw TooFewPerClass("stratified_folds: class " + std::to_string(c) + " has " +
                           std::to_string(by_class[c].size()) + " members, fewer than k=" + std::to_string(k));
  FoldPlan plan{k, std::vector<int>(labels.size(), 0)};
  Rng rng = make_rng(seed);
  std::size_t next = 0;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    for (auto i : members) {
      plan.assignments[i] = static_cast<int>(next % static_cast<std::size_t>(k));
      ++next;
    }
  }
  return plan;
}

inline double accuracy(const Predictor& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const auto pred = model.predict_batch(data.instances);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i];
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

struct GridSearchResult {
  ForestParams best;
  double cv_accuracy = 0.0;
  std::vector<double> cell_accuracy;  // parallel to the grid
};

inline GridSearchResult grid_search(const Dataset& train, std::span<const ForestParams> grid, int k,
                                    std::uint64_t seed) {
  if (grid.empty()) throw std::invalid_argument("grid_search: empty grid");
  std::vector<int> counts(static_cast<std::size_t>(train.class_count()), 0);
  for (int y : train.labels) ++counts[static_cast<std::size_t>(y)];
  if (std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }) < 2)
    throw DegenerateData("grid_search: training data holds a single class");
  const FoldPlan plan = stratified_folds(train.labels, k, derive_seed(seed, 0xf01d));
  GridSearchResult result;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double sum = 0;
    for (int f = 0; f < k; ++f) {
      const auto tr = plan.train_indices(f);
      const auto te = plan.test_indices(f);
      const auto model = train_forest(train.subset(tr), grid[g], derive_seed(seed, g, static_cast<std::uint64_t>(f)));
      sum += accuracy(model, train.subset(te));
    }
    const double acc = sum / k;
    result.cell_accuracy.push_back(acc);
    if (g == 0 || acc > result.cv_accuracy) {
      result.cv_accuracy = acc;
      result.best = grid[g];
    }
  }
  return result;
}

}  // namespace cfx
