#pragma once

// Synthetic annotated datasets whose labels follow a known linear rule.
//
//   grid_toy     two decrease-only features bp, vit in [0, 20]; low_risk iff
//                70 - 3 bp - 4 vit >= 0. From x = (14, 10) the boundary points
//                (10, 10) and (14, 7) are at L1 distance 4 and 3, with maximal
//                setbacks 1 and 2.5.
//   clinic_like  blood-pressure/vitamin style health profile, up to 12 features.
//   credit_like  credit-scoring style profile, up to 12 features, including a
//                frozen but perturbable inflation feature.
//
// Numerical values are drawn uniformly in their range and rounded to 3
// decimals; categories uniformly. For the templated profiles a fraction
// `noise` of labels is flipped; grid_toy labels are noise-free.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "cfx/errors.hpp"
#include "cfx/model_io.hpp"
#include "cfx/rng.hpp"
#include "cfx/schema.hpp"

namespace cfx {

enum class Profile { credit_like, clinic_like, grid_toy };

inline std::string_view to_string(Profile p) {
  switch (p) {
    case Profile::credit_like: return "credit_like";
    case Profile::clinic_like: return "clinic_like";
    case Profile::grid_toy: return "grid_toy";
  }
  return "credit_like";
}

inline std::optional<Profile> parse_profile(std::string_view s) {
  if (s == "credit_like") return Profile::credit_like;
  if (s == "clinic_like") return Profile::clinic_like;
  if (s == "grid_toy") return Profile::grid_toy;
  return std::nullopt;
}

struct SyntheticData {
  Dataset data;
  LinearRulePredictor rule;
};

namespace detail {

// A feature plus its effect on the score: `weight` per unit of normalised
// value (numerical) or one weight per category.
struct FeatureTemplate {
  FeatureSchema feature;
  double weight = 0.0;
  std::vector<double> category_weights;
};

inline FeatureTemplate num(std::string name, double lo, double hi, Constraint c, double dec, double inc, bool rel,
                           double weight) {
  FeatureSchema f;
  f.name = std::move(name);
  f.kind = FeatureKind::numerical;
  f.min = lo;
  f.max = hi;
  f.constraint = c;
  f.perturbation = {dec, inc, rel, {}};
  return {f, weight, {}};
}

inline FeatureTemplate cat(std::string name, std::vector<std::string> cats, Constraint c, std::vector<int> reachable,
                           std::vector<double> weights) {
  FeatureSchema f;
  f.name = std::move(name);
  f.kind = FeatureKind::categorical;
  f.categories = std::move(cats);
  f.constraint = c;
  f.perturbation.reachable_categories = std::move(reachable);
  return {f, 0.0, std::move(weights)};
}

inline std::vector<FeatureTemplate> credit_templates() {
  using C = Constraint;
  return {
      num("age", 18, 80, C::increase_only, 0, 2, false, 0.8),
      num("income", 0, 200, C::none, 0.1, 0.05, true, 1.0),
      num("savings", 0, 100, C::none, 25, 2, false, 1.2),
      num("debt", 0, 100, C::decrease_only, 2, 2, false, -1.0),
      num("inflation", 0, 10, C::frozen, 0.5, 2.5, false, -1.5),
      cat("housing", {"rent", "own", "free"}, C::none, {0}, {0.0, 0.3, 0.1}),
      cat("job", {"unemployed", "unskilled", "skilled", "management"}, C::none, {0, 1}, {-0.3, 0.0, 0.2, 0.4}),
      num("duration", 4, 72, C::none, 6, 6, false, -0.5),
      num("credit_amount", 0, 20, C::none, 0.1, 0.1, true, -0.4),
      num("dependents", 0, 5, C::none, 1, 1, false, -0.2),
      cat("history", {"poor", "fair", "good"}, C::frozen, {0}, {-0.4, 0.0, 0.3}),
      num("employment_years", 0, 40, C::increase_only, 1, 0, false, 0.4),
  };
}

inline std::vector<FeatureTemplate> clinic_templates() {
  using C = Constraint;
  return {
      num("bp", 90, 200, C::decrease_only, 5, 5, false, -1.5),
      num("vit", 0, 60, C::increase_only, 3, 3, false, 1.0),
      num("age", 20, 90, C::increase_only, 0, 1, false, -0.5),
      num("weight", 40, 150, C::none, 2, 2, false, -0.4),
      cat("smoker", {"no", "yes"}, C::none, {1}, {0.0, -0.4}),
      cat("activity", {"low", "medium", "high"}, C::none, {0, 1}, {-0.2, 0.0, 0.2}),
      num("cholesterol", 100, 300, C::none, 10, 10, false, -0.5),
      num("sleep", 3, 10, C::none, 1, 1, false, 0.2),
      num("glucose", 60, 200, C::none, 8, 8, false, -0.4),
      cat("family_history", {"no", "yes"}, C::frozen, {}, {0.0, -0.3}),
      num("stress", 0, 10, C::none, 1.5, 1.5, false, -0.3),
      num("salt", 0, 15, C::decrease_only, 1, 1, false, -0.2),
  };
}

inline double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

inline SyntheticData from_templates(const std::vector<FeatureTemplate>& all, std::size_t d, std::size_t n,
                                    std::uint64_t seed, double noise, std::vector<std::string> class_names) {
  if (d < 2 || d > all.size())
    throw PreconditionError("synthetic: d must lie in [2, " + std::to_string(all.size()) + "]");
  std::vector<FeatureSchema> features;
  LinearRulePredictor rule;
  rule.positive_class = 1;
  rule.negative_class = 0;
  // Centre the rule so that a uniformly drawn instance scores 0 on average.
  double mean = 0;
  for (std::size_t i = 0; i < d; ++i) {
    const auto& t = all[i];
    features.push_back(t.feature);
    if (t.feature.is_numerical()) {
      const double w = t.weight / t.feature.range();
      rule.weights.push_back(w);
      rule.category_weights.emplace_back();
      rule.bias -= w * t.feature.min;
      mean += 0.5 * t.weight;
    } else {
      rule.weights.push_back(0.0);
      rule.category_weights.push_back(t.category_weights);
      double s = 0;
      for (double w : t.category_weights) s += w;
      mean += s / static_cast<double>(t.category_weights.size());
    }
  }
  rule.bias -= mean;
  SyntheticData out{Dataset{Schema(std::move(features)), {}, {}, std::move(class_names), 1}, rule};
  Rng rng = make_rng(derive_seed(seed, 0x5e7));
  std::bernoulli_distribution flip(noise);
  for (std::size_t r = 0; r < n; ++r) {
    std::vector<double> v(d);
    for (std::size_t i = 0; i < d; ++i) {
      const auto& f = out.data.schema[i];
      if (f.is_numerical())
        v[i] = std::clamp(round3(std::uniform_real_distribution<double>(f.min, f.max)(rng)), f.min, f.max);
      else
        v[i] = std::uniform_int_distribution<int>(0, f.category_count() - 1)(rng);
    }
    Instance z(std::move(v));
    int y = rule.predict(z);
    if (flip(rng)) y = 1 - y;
    out.data.instances.push_back(std::move(z));
    out.data.labels.push_back(y);
  }
  return out;
}

}  // namespace detail

inline Schema grid_toy_schema() {
  FeatureSchema bp{"bp", FeatureKind::numerical, 0, 20, {}, Constraint::decrease_only, {1, 1, false, {}}};
  FeatureSchema vit{"vit", FeatureKind::numerical, 0, 20, {}, Constraint::decrease_only, {2.5, 2.5, false, {}}};
  return Schema({bp, vit});
}

inline LinearRulePredictor grid_toy_rule() {
  LinearRulePredictor r;
  r.bias = 70;
  r.weights = {-3, -4};
  r.category_weights = {{}, {}};
  r.positive_class = 1;
  r.negative_class = 0;
  return r;
}

inline Instance grid_toy_query() { return Instance{14.0, 10.0}; }

inline SyntheticData generate_synthetic(Profile profile, std::size_t n, std::size_t d, std::uint64_t seed,
                                        double noise = 0.05) {
  switch (profile) {
    case Profile::credit_like:
      if (n < 50) throw PreconditionError("synthetic: n must be >= 50");
      return detail::from_templates(detail::credit_templates(), d, n, seed, noise, {"bad", "good"});
    case Profile::clinic_like:
      if (n < 50) throw PreconditionError("synthetic: n must be >= 50");
      return detail::from_templates(detail::clinic_templates(), d, n, seed, noise, {"high_risk", "low_risk"});
    case Profile::grid_toy: {
      if (d != 2) throw PreconditionError("synthetic: grid_toy has exactly 2 features");
      SyntheticData out{Dataset{grid_toy_schema(), {}, {}, {"high_risk", "low_risk"}, 1}, grid_toy_rule()};
      Rng rng = make_rng(derive_seed(seed, 0x5e7));
      std::uniform_real_distribution<double> u(0, 20);
      for (std::size_t r = 0; r < n; ++r) {
        Instance z{detail::round3(u(rng)), detail::round3(u(rng))};
        out.data.labels.push_back(out.rule.predict(z));
        out.data.instances.push_back(std::move(z));
      }
      return out;
    }
  }
  throw PreconditionError("unknown profile");
}

}  // namespace cfx
