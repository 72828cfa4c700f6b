#pragma once

// Search loss, Gower distance, intervention cost and relative cost.

#include <cmath>
#include <cstddef>

#include "cfx/errors.hpp"
#include "cfx/predictor.hpp"
#include "cfx/schema.hpp"

namespace cfx {

struct LossWeights {
  double w_gower = 0.5;
  double w_sparsity = 0.5;
  double w_validity = 1.0;
  double lambda_generic = 1.0;
};

struct LossBreakdown {
  double gower = 0.0;
  double sparsity = 0.0;
  double validity = 0.0;
  double total = 0.0;

  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

inline LossBreakdown compose(const LossWeights& w, double gower, double sparsity, double validity) {
  return {gower, sparsity, validity, w.w_gower * gower + w.w_sparsity * sparsity + w.w_validity * validity};
}

inline double gower(const Schema& schema, const Instance& x, const Instance& z) {
  double sum = 0.0;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& f = schema[i];
    if (f.is_numerical())
      sum += std::fabs(z[i] - x[i]) / f.range();
    else
      sum += x.category(i) != z.category(i) ? 1.0 : 0.0;
  }
  return sum / static_cast<double>(schema.size());
}

inline std::size_t l0(const Schema& schema, const Instance& x, const Instance& z, double tol_abs = kDefaultTolerance) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < schema.size(); ++i) n += feature_changed(schema[i], x[i], z[i], tol_abs);
  return n;
}

inline double sparsity(const Schema& schema, const Instance& x, const Instance& z, double tol_abs = kDefaultTolerance) {
  return static_cast<double>(l0(schema, x, z, tol_abs)) / static_cast<double>(schema.size());
}

inline LossBreakdown loss(const Schema& schema, const Instance& x, const Instance& z, int predicted, int target,
                          const LossWeights& w = {}) {
  return compose(w, gower(schema, x, z), sparsity(schema, x, z), predicted == target ? 0.0 : 1.0);
}

inline LossBreakdown loss(const Schema& schema, const Instance& x, const Instance& z, const Predictor& f, int target,
                          const LossWeights& w = {}) {
  return loss(schema, x, z, f.predict(z), target, w);
}

// delta(z, x) + lambda * [f(z) != t] with delta = Gower.
inline double generic_loss(const Schema& schema, const Instance& x, const Instance& z, const Predictor& f, int target,
                           const LossWeights& w = {}) {
  return gower(schema, x, z) + w.lambda_generic * (f.predict(z) == target ? 0.0 : 1.0);
}

inline double intervention_cost(const Schema& schema, const Instance& x, const Instance& z,
                                bool count_sparsity = true, const LossWeights& w = {}) {
  return w.w_gower * gower(schema, x, z) + (count_sparsity ? w.w_sparsity * sparsity(schema, x, z) : 0.0);
}

struct RelativeCostOptions {
  // Whether the correction move also pays the L0 term.
  bool correction_counts_sparsity = true;
};

// (ideal + [z' invalid] * cost(z' -> z)) / ideal.
inline double relative_cost(const Schema& schema, double ideal_cost, const Instance& z_intended,
                            const Instance& z_perturbed, bool perturbed_valid, const RelativeCostOptions& opt = {}) {
  if (!(ideal_cost > 0)) throw ZeroIdealCost("relative_cost: ideal cost is zero");
  if (perturbed_valid) return 1.0;
  const double correction = intervention_cost(schema, z_perturbed, z_intended, opt.correction_counts_sparsity);
  return (ideal_cost + correction) / ideal_cost;
}

inline double relative_cost(const Schema& schema, const Instance& x, const Instance& z_intended,
                            const Instance& z_perturbed, const Predictor& f, int target,
                            const RelativeCostOptions& opt = {}) {
  const double ideal = intervention_cost(schema, x, z_intended);
  if (!(ideal > 0)) throw ZeroIdealCost("relative_cost: counterfactual equals the query");
  return relative_cost(schema, ideal, z_intended, z_perturbed, f.predict(z_perturbed) == target, opt);
}

}  // namespace cfx
