#pragma once

// Ground-truth linear rules and loading of persisted models.

#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfx/errors.hpp"
#include "cfx/forest.hpp"
#include "cfx/predictor.hpp"
#include "cfx/schema.hpp"

namespace cfx {

// positive_class iff bias + sum_i w_i z_i (+ category_weights[i][z_i]) >= 0.
class LinearRulePredictor final : public Predictor {
 public:
  double bias = 0.0;
  std::vector<double> weights;                       // numerical features; 0 for categorical
  std::vector<std::vector<double>> category_weights;  // per feature; empty for numerical
  int positive_class = 1;
  int negative_class = 0;

  double score(const Instance& z) const {
    double s = bias;
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (i < category_weights.size() && !category_weights[i].empty()) {
        const auto c = static_cast<std::size_t>(z.category(i));
        if (c < category_weights[i].size()) s += category_weights[i][c];
      } else if (i < weights.size()) {
        s += weights[i] * z[i];
      }
    }
    return s;
  }

  int predict(const Instance& z) const override { return score(z) >= 0 ? positive_class : negative_class; }

  std::vector<int> predict_batch(std::span<const Instance> batch) const override {
    std::vector<int> out;
    out.reserve(batch.size());
    for (const auto& z : batch) out.push_back(predict(z));
    return out;
  }

  nlohmann::json to_json() const {
    return {{"type", "linear_rule"},
            {"bias", bias},
            {"weights", weights},
            {"category_weights", category_weights},
            {"positive_class", positive_class},
            {"negative_class", negative_class}};
  }

  static LinearRulePredictor from_json(const nlohmann::json& j) {
    try {
      LinearRulePredictor p;
      p.bias = j.at("bias").get<double>();
      p.weights = j.at("weights").get<std::vector<double>>();
      p.category_weights = j.value("category_weights", std::vector<std::vector<double>>{});
      p.positive_class = j.at("positive_class").get<int>();
      p.negative_class = j.at("negative_class").get<int>();
      return p;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("model: ") + e.what());
    }
  }
};

// Checks that a model can be applied to data of `schema` with `n_classes` classes.
inline void check_model_fits(const nlohmann::json& j, const Schema& schema, int n_classes) {
  const auto type = j.value("type", std::string{});
  if (type == "forest") {
    if (j.value("n_features", std::size_t{0}) != schema.size())
      throw ModelSchemaMismatch("model expects " + std::to_string(j.value("n_features", 0)) + " features, data has " +
                                std::to_string(schema.size()));
    if (j.value("n_classes", 0) != n_classes) throw ModelSchemaMismatch("model and data disagree on the class count");
  } else if (type == "linear_rule") {
    if (j.value("weights", nlohmann::json::array()).size() != schema.size())
      throw ModelSchemaMismatch("rule weights do not match the feature count");
  }
}

inline std::unique_ptr<Predictor> model_from_json(const nlohmann::json& j) {
  const auto type = j.value("type", std::string{});
  if (type == "forest") return std::make_unique<ForestModel>(ForestModel::from_json(j));
  if (type == "linear_rule") return std::make_unique<LinearRulePredictor>(LinearRulePredictor::from_json(j));
  throw ParseError("model: unknown type '" + type + "'");
}

inline std::unique_ptr<Predictor> load_model(const std::string& path, const Schema& schema, int n_classes) {
  const auto j = read_json_file(path);
  check_model_fits(j, schema, n_classes);
  return model_from_json(j);
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace cfx
