#pragma once

// Dataset annotation model: feature kinds, bounds, plausibility constraints
// and perturbation specifications, plus loading/saving annotated datasets.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cfx/csv.hpp"
#include "cfx/errors.hpp"
#include "cfx/rng.hpp"

namespace cfx {

enum class FeatureKind { numerical, categorical };

enum class Constraint { none, increase_only, decrease_only, frozen };

inline std::string_view to_string(FeatureKind k) {
  return k == FeatureKind::numerical ? "numerical" : "categorical";
}

inline std::string_view to_string(Constraint c) {
  switch (c) {
    case Constraint::none: return "none";
    case Constraint::increase_only: return "increase_only";
    case Constraint::decrease_only: return "decrease_only";
    case Constraint::frozen: return "frozen";
  }
  return "none";
}

inline std::optional<Constraint> parse_constraint(std::string_view s) {
  if (s == "none") return Constraint::none;
  if (s == "increase_only") return Constraint::increase_only;
  if (s == "decrease_only") return Constraint::decrease_only;
  if (s == "frozen") return Constraint::frozen;
  return std::nullopt;
}

// Numerical features use max_decrease/max_increase (magnitudes, fractions of
// the counterfactual value when `relative`); categorical features use
// reachable_categories.
struct PerturbationSpec {
  double max_decrease = 0.0;
  double max_increase = 0.0;
  bool relative = false;
  std::vector<int> reachable_categories;

  friend bool operator==(const PerturbationSpec&, const PerturbationSpec&) = default;
};

struct FeatureSchema {
  std::string name;
  FeatureKind kind = FeatureKind::numerical;
  double min = 0.0;
  double max = 1.0;
  std::vector<std::string> categories;
  Constraint constraint = Constraint::none;
  PerturbationSpec perturbation;

  bool is_numerical() const { return kind == FeatureKind::numerical; }
  bool is_categorical() const { return kind == FeatureKind::categorical; }
  int category_count() const { return static_cast<int>(categories.size()); }
  double range() const { return max - min; }

  std::optional<int> category_id(std::string_view label) const {
    auto it = std::find(categories.begin(), categories.end(), label);
    if (it == categories.end()) return std::nullopt;
    return static_cast<int>(it - categories.begin());
  }

  bool reachable(int category) const {
    const auto& r = perturbation.reachable_categories;
    return std::find(r.begin(), r.end(), category) != r.end();
  }

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

// Feature values in schema order. Categorical entries hold dense category ids.
class Instance {
 public:
  Instance() = default;
  explicit Instance(std::vector<double> values) : values_(std::move(values)) {}
  Instance(std::initializer_list<double> values) : values_(values) {}

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }
  int category(std::size_t i) const { return static_cast<int>(std::lround(values_[i])); }

  std::span<const double> values() const { return values_; }
  std::vector<double>& mutable_values() { return values_; }

  friend bool operator==(const Instance&, const Instance&) = default;

 private:
  std::vector<double> values_;
};

struct InstanceHash {
  std::size_t operator()(const Instance& z) const {
    return static_cast<std::size_t>(hash_values(z.values()));
  }
};

class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<FeatureSchema> features) : features_(std::move(features)) {
    validate();
  }

  std::size_t size() const { return features_.size(); }
  const FeatureSchema& operator[](std::size_t i) const { return features_[i]; }
  auto begin() const { return features_.begin(); }
  auto end() const { return features_.end(); }
  const std::vector<FeatureSchema>& features() const { return features_; }

  std::optional<std::size_t> index_of(std::string_view name) const {
    for (std::size_t i = 0; i < features_.size(); ++i)
      if (features_[i].name == name) return i;
    return std::nullopt;
  }

  // Throws ParseError on any broken type invariant.
  void validate() const {
    if (features_.empty()) throw ParseError("schema: no features");
    for (std::size_t i = 0; i < features_.size(); ++i) {
      const auto& f = features_[i];
      const std::string where = "feature '" + f.name + "'";
      if (f.name.empty()) throw ParseError("schema: feature " + std::to_string(i) + " has no name");
      for (std::size_t j = 0; j < i; ++j)
        if (features_[j].name == f.name) throw ParseError("schema: duplicate " + where);
      const auto& p = f.perturbation;
      if (f.is_numerical()) {
        if (!std::isfinite(f.min) || !std::isfinite(f.max) || !(f.min < f.max))
          throw ParseError("schema: " + where + " needs finite min < max");
        if (!f.categories.empty()) throw ParseError("schema: numerical " + where + " lists categories");
        if (!(p.max_decrease >= 0) || !(p.max_increase >= 0))
          throw ParseError("schema: " + where + " perturbation magnitudes must be >= 0");
        if (p.relative && (p.max_decrease > 1 || p.max_increase > 1))
          throw ParseError("schema: " + where + " relative perturbation outside [0,1]");
        if (!p.reachable_categories.empty())
          throw ParseError("schema: numerical " + where + " lists reachable categories");
      } else {
        if (f.categories.empty()) throw ParseError("schema: categorical " + where + " has no categories");
        if (f.constraint == Constraint::increase_only || f.constraint == Constraint::decrease_only)
          throw ParseError("schema: categorical " + where + " admits only none/frozen constraints");
        for (int c : p.reachable_categories)
          if (c < 0 || c >= f.category_count())
            throw ParseError("schema: " + where + " reachable category out of range");
        if (p.max_decrease != 0 || p.max_increase != 0 || p.relative)
          throw ParseError("schema: categorical " + where + " has numerical perturbation bounds");
      }
    }
  }

  friend bool operator==(const Schema&, const Schema&) = default;

 private:
  std::vector<FeatureSchema> features_;
};

// Checks box membership; throws SchemaViolation naming the row and feature.
inline void check_instance(const Schema& schema, const Instance& z, std::string_view where = "instance") {
  if (z.size() != schema.size())
    throw SchemaViolation(std::string(where) + ": expected " + std::to_string(schema.size()) +
                          " values, got " + std::to_string(z.size()));
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& f = schema[i];
    const double v = z[i];
    if (f.is_numerical()) {
      if (!(v >= f.min && v <= f.max))
        throw SchemaViolation(std::string(where) + ", feature '" + f.name + "': value " +
                              csv::format_number(v) + " outside [" + csv::format_number(f.min) + ", " +
                              csv::format_number(f.max) + "]");
    } else if (v != std::floor(v) || v < 0 || v >= f.category_count()) {
      throw SchemaViolation(std::string(where) + ", feature '" + f.name + "': invalid category id");
    }
  }
}

struct Dataset {
  Schema schema;
  std::vector<Instance> instances;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  int target_class = 0;

  std::size_t size() const { return instances.size(); }
  int class_count() const { return static_cast<int>(class_names.size()); }

  std::optional<int> class_id(std::string_view name) const {
    auto it = std::find(class_names.begin(), class_names.end(), name);
    if (it == class_names.end()) return std::nullopt;
    return static_cast<int>(it - class_names.begin());
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out{schema, {}, {}, class_names, target_class};
    out.instances.reserve(rows.size());
    out.labels.reserve(rows.size());
    for (auto r : rows) {
      out.instances.push_back(instances.at(r));
      out.labels.push_back(labels.at(r));
    }
    return out;
  }

  void validate() const {
    if (instances.size() != labels.size()) throw SchemaViolation("dataset: instance/label count mismatch");
    if (class_names.empty()) throw SchemaViolation("dataset: no classes");
    if (target_class < 0 || target_class >= class_count()) throw SchemaViolation("dataset: bad target class");
    for (std::size_t r = 0; r < instances.size(); ++r) {
      check_instance(schema, instances[r], "row " + std::to_string(r + 1));
      if (labels[r] < 0 || labels[r] >= class_count())
        throw SchemaViolation("row " + std::to_string(r + 1) + ": unknown class id");
    }
  }
};

// ---------------------------------------------------------------------------
// C/K partition and plausibility

struct Partition {
  std::vector<std::size_t> change;  // C
  std::vector<std::size_t> keep;    // K
};

inline constexpr double kDefaultTolerance = 1e-9;

inline bool feature_changed(const FeatureSchema& f, double x, double z, double tol_abs = kDefaultTolerance) {
  if (f.is_categorical()) return std::lround(x) != std::lround(z);
  return std::fabs(z - x) > tol_abs;
}

inline Partition induced_partition(const Schema& schema, const Instance& x, const Instance& z,
                                   double tol_abs = kDefaultTolerance) {
  Partition p;
  for (std::size_t i = 0; i < schema.size(); ++i)
    (feature_changed(schema[i], x[i], z[i], tol_abs) ? p.change : p.keep).push_back(i);
  return p;
}

inline bool plausible_move(Constraint c, double from, double to) {
  switch (c) {
    case Constraint::none: return true;
    case Constraint::increase_only: return to - from >= 0;
    case Constraint::decrease_only: return to - from <= 0;
    case Constraint::frozen: return to == from;
  }
  return true;
}

// True iff z - x satisfies every per-feature constraint.
inline bool check_plausible(const Schema& schema, const Instance& x, const Instance& z) {
  for (std::size_t i = 0; i < schema.size(); ++i)
    if (!plausible_move(schema[i].constraint, x[i], z[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Annotation JSON

namespace detail {

inline double json_number(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ParseError(where + ": missing '" + key + "'");
  if (!j.at(key).is_number()) throw ParseError(where + ": '" + key + "' must be a number");
  return j.at(key).get<double>();
}

}  // namespace detail

struct Annotation {
  Schema schema;
  std::vector<std::string> class_names;
  int target_class = 0;
};

inline Annotation parse_annotation(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("annotation: expected a JSON object");
  Annotation a;
  try {
    a.class_names = j.at("class_names").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("annotation: class_names: ") + e.what());
  }
  if (a.class_names.size() < 2) throw ParseError("annotation: need at least two classes");
  if (!j.contains("target_class") || !j.at("target_class").is_string())
    throw ParseError("annotation: target_class must be a class name");
  const auto target = j.at("target_class").get<std::string>();
  auto it = std::find(a.class_names.begin(), a.class_names.end(), target);
  if (it == a.class_names.end()) throw ParseError("annotation: target_class not among class_names");
  a.target_class = static_cast<int>(it - a.class_names.begin());

  if (!j.contains("features") || !j.at("features").is_array()) throw ParseError("annotation: features must be an array");
  std::vector<FeatureSchema> features;
  for (const auto& jf : j.at("features")) {
    FeatureSchema f;
    if (!jf.contains("name") || !jf.at("name").is_string()) throw ParseError("annotation: feature without name");
    f.name = jf.at("name").get<std::string>();
    const std::string where = "annotation: feature '" + f.name + "'";
    const auto kind = jf.value("kind", std::string{});
    if (kind == "numerical") {
      f.kind = FeatureKind::numerical;
      f.min = detail::json_number(jf, "min", where);
      f.max = detail::json_number(jf, "max", where);
    } else if (kind == "categorical") {
      f.kind = FeatureKind::categorical;
      if (!jf.contains("categories") || !jf.at("categories").is_array())
        throw ParseError(where + ": categories must be an array");
      for (const auto& c : jf.at("categories")) {
        if (!c.is_string()) throw ParseError(where + ": category names must be strings");
        f.categories.push_back(c.get<std::string>());
      }
      if (jf.contains("min") || jf.contains("max")) throw ParseError(where + ": categorical feature with min/max");
    } else {
      throw ParseError(where + ": kind must be numerical or categorical");
    }
    const auto constraint = parse_constraint(jf.value("constraint", std::string{"none"}));
    if (!constraint) throw ParseError(where + ": unknown constraint");
    f.constraint = *constraint;
    if (jf.contains("perturbation")) {
      const auto& jp = jf.at("perturbation");
      if (!jp.is_object()) throw ParseError(where + ": perturbation must be an object");
      if (f.is_numerical()) {
        f.perturbation.max_decrease = jp.contains("max_decrease") ? detail::json_number(jp, "max_decrease", where) : 0.0;
        f.perturbation.max_increase = jp.contains("max_increase") ? detail::json_number(jp, "max_increase", where) : 0.0;
        f.perturbation.relative = jp.value("relative", false);
        if (jp.contains("reachable_categories")) throw ParseError(where + ": numerical feature with reachable_categories");
      } else {
        if (jp.contains("max_decrease") || jp.contains("max_increase") || jp.contains("relative"))
          throw ParseError(where + ": categorical feature with numerical perturbation bounds");
        for (const auto& c : jp.value("reachable_categories", nlohmann::json::array())) {
          if (!c.is_string()) throw ParseError(where + ": reachable categories must be names");
          auto id = f.category_id(c.get<std::string>());
          if (!id) throw ParseError(where + ": reachable category '" + c.get<std::string>() + "' not declared");
          f.perturbation.reachable_categories.push_back(*id);
        }
      }
    }
    features.push_back(std::move(f));
  }
  a.schema = Schema(std::move(features));
  return a;
}

inline nlohmann::json annotation_to_json(const Schema& schema, const std::vector<std::string>& class_names,
                                         int target_class) {
  nlohmann::json j;
  j["class_names"] = class_names;
  j["target_class"] = class_names.at(static_cast<std::size_t>(target_class));
  j["features"] = nlohmann::json::array();
  for (const auto& f : schema) {
    nlohmann::json jf;
    jf["name"] = f.name;
    jf["kind"] = std::string(to_string(f.kind));
    jf["constraint"] = std::string(to_string(f.constraint));
    if (f.is_numerical()) {
      jf["min"] = f.min;
      jf["max"] = f.max;
      jf["perturbation"] = {{"max_decrease", f.perturbation.max_decrease},
                            {"max_increase", f.perturbation.max_increase},
                            {"relative", f.perturbation.relative}};
    } else {
      jf["categories"] = f.categories;
      std::vector<std::string> reach;
      for (int c : f.perturbation.reachable_categories) reach.push_back(f.categories.at(static_cast<std::size_t>(c)));
      jf["perturbation"] = {{"reachable_categories", reach}};
    }
    j["features"].push_back(std::move(jf));
  }
  return j;
}

inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("'" + path + "': " + e.what());
  }
}

inline Annotation load_annotation(const std::string& path) { return parse_annotation(read_json_file(path)); }

// ---------------------------------------------------------------------------
// CSV data

inline std::string format_value(const FeatureSchema& f, double v) {
  if (f.is_categorical()) return f.categories.at(static_cast<std::size_t>(std::lround(v)));
  return csv::format_number(v);
}

inline double parse_value(const FeatureSchema& f, std::string_view text, std::string_view where) {
  if (f.is_categorical()) {
    auto id = f.category_id(text);
    if (!id) throw SchemaViolation(std::string(where) + ", feature '" + f.name + "': unknown category '" +
                                   std::string(text) + "'");
    return *id;
  }
  auto v = csv::parse_number(text);
  if (!v) throw ParseError(std::string(where) + ", feature '" + f.name + "': not a number: '" + std::string(text) + "'");
  return *v;
}

inline csv::Row format_instance(const Schema& schema, const Instance& z) {
  csv::Row row;
  for (std::size_t i = 0; i < schema.size(); ++i) row.push_back(format_value(schema[i], z[i]));
  return row;
}

inline Instance parse_instance(const Schema& schema, const csv::Row& row, std::string_view where = "instance") {
  if (row.size() < schema.size())
    throw SchemaViolation(std::string(where) + ": expected " + std::to_string(schema.size()) + " values");
  std::vector<double> values;
  for (std::size_t i = 0; i < schema.size(); ++i) values.push_back(parse_value(schema[i], row[i], where));
  return Instance(std::move(values));
}

inline Dataset parse_dataset(const Annotation& a, std::istream& data) {
  Dataset ds{a.schema, {}, {}, a.class_names, a.target_class};
  auto header = csv::read_row(data);
  if (!header) throw ParseError("data: empty file");
  const std::size_t d = a.schema.size();
  if (header->size() != d + 1) {
    for (std::size_t i = 0; i < d; ++i)
      if (std::find(header->begin(), header->end(), a.schema[i].name) == header->end())
        throw SchemaViolation("data: missing column '" + a.schema[i].name + "'");
    throw ParseError("data: expected " + std::to_string(d + 1) + " columns (features + label)");
  }
  for (std::size_t i = 0; i < d; ++i)
    if ((*header)[i] != a.schema[i].name)
      throw SchemaViolation("data: column " + std::to_string(i + 1) + " is '" + (*header)[i] + "', expected '" +
                            a.schema[i].name + "'");
  std::size_t line = 1;
  while (auto row = csv::read_row(data)) {
    ++line;
    if (row->size() == 1 && (*row)[0].empty()) continue;
    const std::string where = "row " + std::to_string(line - 1);
    if (row->size() != d + 1) throw ParseError(where + ": expected " + std::to_string(d + 1) + " fields");
    Instance z = parse_instance(a.schema, *row, where);
    check_instance(a.schema, z, where);
    auto label = ds.class_id(row->back());
    if (!label) throw SchemaViolation(where + ": unknown class '" + row->back() + "'");
    ds.instances.push_back(std::move(z));
    ds.labels.push_back(*label);
  }
  return ds;
}

inline Dataset load_dataset(const std::string& annotation_path, const std::string& data_path) {
  const Annotation a = load_annotation(annotation_path);
  std::ifstream in(data_path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + data_path + "'");
  return parse_dataset(a, in);
}

inline void write_dataset_csv(const Dataset& ds, std::ostream& out) {
  csv::Row header;
  for (const auto& f : ds.schema) header.push_back(f.name);
  header.push_back("label");
  csv::write_row(out, header);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    auto row = format_instance(ds.schema, ds.instances[r]);
    row.push_back(ds.class_names.at(static_cast<std::size_t>(ds.labels[r])));
    csv::write_row(out, row);
  }
}

inline void save_dataset(const Dataset& ds, const std::string& annotation_path, const std::string& data_path) {
  {
    std::ofstream out(annotation_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + annotation_path + "'");
    out << annotation_to_json(ds.schema, ds.class_names, ds.target_class).dump(2) << '\n';
  }
  std::ofstream out(data_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + data_path + "'");
  write_dataset_csv(ds, out);
}

}  // namespace cfx
