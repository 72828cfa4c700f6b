#pragma once

// Perturbations: resolved bounds, maximal C-setbacks, sampling, the
// K-robustness score, fixability and invalidity.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <string_view>
#include <vector>

#include "cfx/cost.hpp"
#include "cfx/errors.hpp"
#include "cfx/predictor.hpp"
#include "cfx/rng.hpp"
#include "cfx/schema.hpp"

namespace cfx {

enum class Scope { C_only, K_only, both };

inline std::string_view to_string(Scope s) {
  switch (s) {
    case Scope::C_only: return "C";
    case Scope::K_only: return "K";
    case Scope::both: return "both";
  }
  return "both";
}

struct Distribution {
  enum class Kind { uniform, normal } kind = Kind::uniform;
  double sigma = 0.1;  // fraction of the interval width

  static Distribution uniform() { return {}; }
  static Distribution normal(double sigma) { return {Kind::normal, sigma}; }
  std::string name() const { return kind == Kind::uniform ? "uniform" : "normal"; }
};

struct Interval {
  double lo = 0.0;  // <= 0
  double hi = 0.0;  // >= 0
  double width() const { return hi - lo; }
};

inline Interval resolve_bounds(const FeatureSchema& f, double z_value) {
  const auto& p = f.perturbation;
  const double scale = p.relative ? std::fabs(z_value) : 1.0;
  return {-p.max_decrease * scale, p.max_increase * scale};
}

inline constexpr int kNoChange = -1;

// Numerical offsets in `delta`; categorical replacements in `category`
// (kNoChange where untouched). Also used for setback vectors.
struct Perturbation {
  std::vector<double> delta;
  std::vector<int> category;
  Scope scope = Scope::both;

  static Perturbation zero(std::size_t d, Scope scope = Scope::both) {
    return {std::vector<double>(d, 0.0), std::vector<int>(d, kNoChange), scope};
  }

  Instance apply(const Instance& z) const {
    Instance out = z;
    for (std::size_t i = 0; i < z.size(); ++i) {
      if (category[i] != kNoChange)
        out[i] = category[i];
      else
        out[i] = z[i] + delta[i];
    }
    return out;
  }

  bool is_zero() const {
    return std::all_of(delta.begin(), delta.end(), [](double v) { return v == 0.0; }) &&
           std::all_of(category.begin(), category.end(), [](int c) { return c == kNoChange; });
  }
};

using SetbackVector = Perturbation;

// Each numerical C element takes the opposite-sign bound, capped by |z_i - x_i|.
inline SetbackVector max_c_setback(const Schema& schema, const Instance& x, const Instance& z,
                                   double tol_abs = kDefaultTolerance) {
  SetbackVector w = Perturbation::zero(schema.size(), Scope::C_only);
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& f = schema[i];
    if (!feature_changed(f, x[i], z[i], tol_abs)) continue;
    if (f.is_categorical()) {
      if (f.reachable(x.category(i))) w.category[i] = x.category(i);
      continue;
    }
    const Interval b = resolve_bounds(f, z[i]);
    const double move = z[i] - x[i];
    w.delta[i] = move > 0 ? std::max(b.lo, -move) : std::min(b.hi, -move);
  }
  return w;
}

struct CorrectionCost {
  double raw = 0.0;      // L1 in feature units; a categorical revert counts 1
  double modeled = 0.0;  // intervention cost of moving from z + w back to z
};

inline CorrectionCost setback_correction_cost(const Schema& schema, const Instance& z, const SetbackVector& w) {
  CorrectionCost c;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (schema[i].is_numerical())
      c.raw += std::fabs(w.delta[i]);
    else if (w.category[i] != kNoChange && w.category[i] != z.category(i))
      c.raw += 1.0;
  }
  c.modeled = intervention_cost(schema, w.apply(z), z);
  return c;
}

// Gower distance with the maximal C-setback added to the intervention: a
// numerical feature pays (|z_i - x_i| + |w_i|) / range, a reverted categorical
// feature pays 2.
inline double robustified_gower(const Schema& schema, const Instance& x, const Instance& z,
                                double tol_abs = kDefaultTolerance) {
  const SetbackVector w = max_c_setback(schema, x, z, tol_abs);
  double sum = 0.0;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& f = schema[i];
    if (f.is_numerical()) {
      sum += (std::fabs(z[i] - x[i]) + std::fabs(w.delta[i])) / f.range();
    } else if (x.category(i) != z.category(i)) {
      sum += w.category[i] != kNoChange ? 2.0 : 1.0;
    }
  }
  return sum / static_cast<double>(schema.size());
}

namespace detail {

// Draw from [lo, hi]; normal mode is N(0, sd) truncated to the interval by
// rejection against a uniform proposal.
inline double draw_in(double lo, double hi, double sd, const Distribution& dist, Rng& rng) {
  if (!(hi > lo)) return lo;
  std::uniform_real_distribution<double> u(lo, hi);
  if (dist.kind == Distribution::Kind::uniform || !(sd > 0)) return u(rng);
  const double nearest = std::clamp(0.0, lo, hi);
  std::uniform_real_distribution<double> accept(0.0, 1.0);
  for (;;) {
    const double v = u(rng);
    const double ratio = std::exp((nearest * nearest - v * v) / (2 * sd * sd));
    if (accept(rng) < ratio) return v;
  }
}

inline int draw_category(const FeatureSchema& f, int current, Rng& rng) {
  std::vector<int> options{current};
  for (int c : f.perturbation.reachable_categories)
    if (c != current) options.push_back(c);
  std::uniform_int_distribution<std::size_t> pick(0, options.size() - 1);
  return options[pick(rng)];
}

}  // namespace detail

// In-scope C features receive a random C-setback (opposite sign to the
// intervention, capped by its magnitude; categorical: stay or revert to x_i when
// reachable). In-scope K features draw from the full resolved interval
// (categorical: uniform over reachable categories and the current one).
inline Perturbation sample_perturbation(const Schema& schema, const Instance& x, const Instance& z, Scope scope,
                                        const Distribution& dist, Rng& rng, double tol_abs = kDefaultTolerance) {
  if (dist.kind == Distribution::Kind::normal && !(dist.sigma > 0))
    throw PreconditionError("sample_perturbation: sigma must be > 0");
  Perturbation p = Perturbation::zero(schema.size(), scope);
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& f = schema[i];
    const bool in_c = feature_changed(f, x[i], z[i], tol_abs);
    if (in_c ? scope == Scope::K_only : scope == Scope::C_only) continue;
    if (f.is_categorical()) {
      if (in_c) {
        const int back = x.category(i);
        if (f.reachable(back) && std::bernoulli_distribution(0.5)(rng)) p.category[i] = back;
      } else {
        const int c = detail::draw_category(f, z.category(i), rng);
        if (c != z.category(i)) p.category[i] = c;
      }
      continue;
    }
    const Interval b = resolve_bounds(f, z[i]);
    const double sd = dist.sigma * b.width();
    if (in_c) {
      const double move = z[i] - x[i];
      p.delta[i] = move > 0 ? detail::draw_in(std::max(b.lo, -move), 0.0, sd, dist, rng)
                            : detail::draw_in(0.0, std::min(b.hi, -move), sd, dist, rng);
    } else {
      p.delta[i] = detail::draw_in(b.lo, b.hi, sd, dist, rng);
    }
  }
  return p;
}

// Uniform K-neighbours of z. Continuous draws never return an exact zero
// offset; categorical draws stay with probability 1/(|reachable|+1).
inline std::vector<Instance> k_neighbors(const Schema& schema, const Instance& x, const Instance& z, std::size_t m,
                                         Rng& rng, double tol_abs = kDefaultTolerance) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < schema.size(); ++i)
    if (!feature_changed(schema[i], x[i], z[i], tol_abs)) keep.push_back(i);
  std::vector<Instance> out;
  out.reserve(m);
  for (std::size_t s = 0; s < m; ++s) {
    Instance n = z;
    for (auto i : keep) {
      const auto& f = schema[i];
      if (f.is_categorical()) {
        n[i] = detail::draw_category(f, z.category(i), rng);
        continue;
      }
      const Interval b = resolve_bounds(f, z[i]);
      if (!(b.width() > 0)) continue;
      std::uniform_real_distribution<double> u(b.lo, b.hi);
      double v = u(rng);
      while (v == 0.0) v = u(rng);
      n[i] = z[i] + v;
    }
    out.push_back(std::move(n));
  }
  return out;
}

inline double k_score_from(std::span<const int> neighbor_labels, int label_z) {
  if (neighbor_labels.empty()) return 1.0;
  std::size_t same = 0;
  for (int y : neighbor_labels) same += y == label_z;
  return static_cast<double>(same) / static_cast<double>(neighbor_labels.size());
}

inline double k_robustness_score(const Schema& schema, const Instance& x, const Instance& z, const Predictor& f,
                                 std::size_t m, Rng& rng, double tol_abs = kDefaultTolerance) {
  if (m < 1) throw PreconditionError("k_robustness_score: m must be >= 1");
  const auto neighbors = k_neighbors(schema, x, z, m, rng, tol_abs);
  return k_score_from(f.predict_batch(neighbors), f.predict(z));
}

inline bool is_vulnerable(const Schema& schema, const Instance& x, const Instance& z, const Predictor& f,
                          std::size_t m_probe, Rng& rng, double tol_abs = kDefaultTolerance) {
  if (m_probe < 1) throw PreconditionError("is_vulnerable: m_probe must be >= 1");
  return k_robustness_score(schema, x, z, f, m_probe, rng, tol_abs) < 1.0;
}

// True iff moving from z_perturbed back to z_intended is a plausible intervention.
inline bool fixability(const Schema& schema, const Instance& /*x*/, const Instance& z_intended,
                       const Instance& z_perturbed) {
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& f = schema[i];
    if (f.is_categorical()) {
      if (f.constraint == Constraint::frozen && z_perturbed.category(i) != z_intended.category(i)) return false;
      continue;
    }
    if (!plausible_move(f.constraint, z_perturbed[i], z_intended[i])) return false;
  }
  return true;
}

inline double invalidity_rate(const Schema& schema, const Instance& x, const Instance& z, const Predictor& f,
                              int target, Scope scope, const Distribution& dist, std::size_t n_samples, Rng& rng,
                              double tol_abs = kDefaultTolerance) {
  if (n_samples < 1) throw PreconditionError("invalidity_rate: n_samples must be >= 1");
  std::vector<Instance> points;
  points.reserve(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s)
    points.push_back(sample_perturbation(schema, x, z, scope, dist, rng, tol_abs).apply(z));
  const auto labels = f.predict_batch(points);
  const auto bad = std::count_if(labels.begin(), labels.end(), [&](int y) { return y != target; });
  return static_cast<double>(bad) / static_cast<double>(n_samples);
}

}  // namespace cfx
