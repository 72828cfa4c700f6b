#pragma once

// Counterfactual search: CoGS (genetic), Growing Spheres, Nelder-Mead and a
// random-search floor, all minimising the same (optionally robustified) loss.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cfx/cost.hpp"
#include "cfx/errors.hpp"
#include "cfx/parallel.hpp"
#include "cfx/perturb.hpp"
#include "cfx/predictor.hpp"
#include "cfx/rng.hpp"
#include "cfx/schema.hpp"

namespace cfx {

enum class Algorithm { cogs, growing_spheres, nelder_mead, random };
enum class RobustnessMode { none, C, K, both };

inline std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::cogs: return "cogs";
    case Algorithm::growing_spheres: return "growing_spheres";
    case Algorithm::nelder_mead: return "nelder_mead";
    case Algorithm::random: return "random";
  }
  return "cogs";
}

inline std::string_view to_string(RobustnessMode m) {
  switch (m) {
    case RobustnessMode::none: return "none";
    case RobustnessMode::C: return "C";
    case RobustnessMode::K: return "K";
    case RobustnessMode::both: return "both";
  }
  return "none";
}

inline std::optional<Algorithm> parse_algorithm(std::string_view s) {
  if (s == "cogs") return Algorithm::cogs;
  if (s == "growing_spheres" || s == "grsp") return Algorithm::growing_spheres;
  if (s == "nelder_mead" || s == "neme") return Algorithm::nelder_mead;
  if (s == "random") return Algorithm::random;
  return std::nullopt;
}

inline std::optional<RobustnessMode> parse_mode(std::string_view s) {
  if (s == "none") return RobustnessMode::none;
  if (s == "C" || s == "c") return RobustnessMode::C;
  if (s == "K" || s == "k") return RobustnessMode::K;
  if (s == "both") return RobustnessMode::both;
  return std::nullopt;
}

inline bool uses_c(RobustnessMode m) { return m == RobustnessMode::C || m == RobustnessMode::both; }
inline bool uses_k(RobustnessMode m) { return m == RobustnessMode::K || m == RobustnessMode::both; }

struct SearchConfig {
  Algorithm algorithm = Algorithm::cogs;
  RobustnessMode robustness_mode = RobustnessMode::none;
  std::size_t m_k_samples = 64;
  int population = 1000;
  int generations = 100;
  int tournament = 2;
  double s_mut = 0.25;
  double copy_prob_scale = 2.0;
  std::uint64_t seed = 0;
  bool honor_constraints = true;

  LossWeights weights;
  double k_weight = 0.5;
  double tol_abs = kDefaultTolerance;
  // K-neighbours of a candidate are drawn from a stream keyed by this seed and
  // the candidate itself, so the robust loss is a function of z alone.
  std::uint64_t k_sample_seed = 0x6b5c0de;

  int gs_layer_points = 2000;
  double gs_first_radius = 0.1;
  double gs_decrease_radius = 10.0;

  int nm_maxiter = 100;
  double nm_xatol = 1e-4;
  double nm_fatol = 1e-4;

  unsigned jobs = 1;
  // Throws if any evaluated candidate leaves the box or, when honouring
  // constraints, the plausible set.
  bool debug_checks = false;

  void validate() const {
    if (population < 2 || population % 2 != 0) throw PreconditionError("config: population must be even and >= 2");
    if (generations < 0) throw PreconditionError("config: generations must be >= 0");
    if (tournament < 2) throw PreconditionError("config: tournament must be >= 2");
    if (!(s_mut > 0 && s_mut <= 1)) throw PreconditionError("config: s_mut must lie in (0, 1]");
    if (!(copy_prob_scale >= 0)) throw PreconditionError("config: copy_prob_scale must be >= 0");
    if (gs_layer_points < 1 || !(gs_first_radius > 0) || !(gs_decrease_radius > 1))
      throw PreconditionError("config: bad growing-spheres settings");
    if (nm_maxiter < 1) throw PreconditionError("config: nm_maxiter must be >= 1");
  }
};

struct Evaluation {
  LossBreakdown plain;
  double gower_term = 0.0;  // robustified under C/both
  std::optional<double> k_score;
  double total = 0.0;

  bool valid() const { return plain.validity == 0.0; }
};

struct SearchResult {
  Instance best;
  LossBreakdown breakdown;
  bool valid = false;
  double objective = 0.0;
  std::size_t evaluations = 0;
  std::size_t model_queries = 0;
  double wall_time = 0.0;  // seconds
  std::optional<double> robustified_gower;
  std::optional<double> k_score;
  std::vector<double> best_history;
  std::uint64_t seed = 0;
};

// Per-feature plausible interval around x (numerical) or allowed categories.
struct FeasibleSet {
  std::vector<double> lo, hi;
  std::vector<std::vector<int>> categories;

  FeasibleSet(const Schema& schema, const Instance& x, bool honor) {
    for (std::size_t i = 0; i < schema.size(); ++i) {
      const auto& f = schema[i];
      double a = f.min, b = f.max;
      std::vector<int> cats;
      if (f.is_numerical() && honor) {
        if (f.constraint == Constraint::increase_only) a = x[i];
        if (f.constraint == Constraint::decrease_only) b = x[i];
        if (f.constraint == Constraint::frozen) a = b = x[i];
      }
      if (f.is_categorical()) {
        if (honor && f.constraint == Constraint::frozen) {
          cats.push_back(x.category(i));
        } else {
          cats.resize(static_cast<std::size_t>(f.category_count()));
          std::iota(cats.begin(), cats.end(), 0);
        }
      }
      lo.push_back(a);
      hi.push_back(b);
      categories.push_back(std::move(cats));
    }
  }

  double clamp(std::size_t i, double v) const { return std::clamp(v, lo[i], hi[i]); }
};

class Objective {
 public:
  Objective(const Schema& schema, const Instance& x, const Predictor& f, int target, const SearchConfig& cfg)
      : schema_(schema), x_(x), counter_(f), target_(target), cfg_(cfg), feasible_(schema, x, cfg.honor_constraints) {}

  const Schema& schema() const { return schema_; }
  const Instance& query() const { return x_; }
  const FeasibleSet& feasible() const { return feasible_; }
  const SearchConfig& config() const { return cfg_; }
  int target() const { return target_; }

  std::size_t evaluations() const { return evaluations_; }
  std::size_t model_queries() const { return counter_.queries(); }

  std::vector<int> predict(std::span<const Instance> batch) const {
    std::vector<int> out(batch.size());
    constexpr std::size_t chunk = 256;
    const std::size_t chunks = (batch.size() + chunk - 1) / chunk;
    parallel_for(chunks, cfg_.jobs, [&](std::size_t c) {
      const std::size_t b = c * chunk, e = std::min(batch.size(), b + chunk);
      const auto labels = counter_.predict_batch(batch.subspan(b, e - b));
      std::copy(labels.begin(), labels.end(), out.begin() + static_cast<std::ptrdiff_t>(b));
    });
    return out;
  }

  Evaluation evaluate(const Instance& z) { return evaluate(std::span<const Instance>(&z, 1)).front(); }

  std::vector<Evaluation> evaluate(std::span<const Instance> batch) {
    std::vector<Instance> todo;
    std::unordered_map<Instance, std::size_t, InstanceHash> pending;
    for (const auto& z : batch) {
      if (cache_.count(z) || pending.count(z)) continue;
      if (cfg_.debug_checks) check_feasible(z);
      pending.emplace(z, todo.size());
      todo.push_back(z);
    }
    if (!todo.empty()) {
      const auto labels = predict(todo);
      std::vector<std::optional<double>> scores(todo.size());
      if (uses_k(cfg_.robustness_mode) && cfg_.m_k_samples > 0) {
        std::vector<Instance> neighbors;
        std::vector<std::size_t> owner;
        for (std::size_t j = 0; j < todo.size(); ++j) {
          if (labels[j] != target_) continue;
          Rng rng = make_rng(derive_seed(cfg_.k_sample_seed, hash_values(todo[j].values())));
          auto ns = k_neighbors(schema_, x_, todo[j], cfg_.m_k_samples, rng, cfg_.tol_abs);
          for (auto& n : ns) {
            neighbors.push_back(std::move(n));
            owner.push_back(j);
          }
        }
        const auto nl = predict(neighbors);
        std::vector<std::size_t> same(todo.size(), 0);
        for (std::size_t k = 0; k < nl.size(); ++k) same[owner[k]] += nl[k] == labels[owner[k]];
        for (std::size_t j = 0; j < todo.size(); ++j)
          if (labels[j] == target_)
            scores[j] = static_cast<double>(same[j]) / static_cast<double>(cfg_.m_k_samples);
      }
      for (std::size_t j = 0; j < todo.size(); ++j) {
        cache_.emplace(todo[j], compose_eval(todo[j], labels[j], scores[j]));
        ++evaluations_;
      }
    }
    std::vector<Evaluation> out;
    out.reserve(batch.size());
    for (const auto& z : batch) out.push_back(cache_.at(z));
    return out;
  }

  // Robust loss for a known prediction and K-score; invalid candidates take
  // the maximal K penalty.
  Evaluation compose_eval(const Instance& z, int label, std::optional<double> k_score) const {
    Evaluation e;
    e.plain = loss(schema_, x_, z, label, target_, cfg_.weights);
    e.gower_term = uses_c(cfg_.robustness_mode) ? robustified_gower(schema_, x_, z, cfg_.tol_abs) : e.plain.gower;
    e.total = cfg_.weights.w_gower * e.gower_term + cfg_.weights.w_sparsity * e.plain.sparsity +
              cfg_.weights.w_validity * e.plain.validity;
    if (uses_k(cfg_.robustness_mode) && cfg_.m_k_samples > 0) {
      e.k_score = k_score;
      e.total += cfg_.k_weight * (1.0 - k_score.value_or(0.0));
    }
    return e;
  }

 private:
  void check_feasible(const Instance& z) const {
    check_instance(schema_, z, "candidate");
    if (cfg_.honor_constraints && !check_plausible(schema_, x_, z))
      throw PreconditionError("candidate violates plausibility constraints");
  }

  const Schema& schema_;
  Instance x_;
  CountingPredictor counter_;
  int target_;
  SearchConfig cfg_;
  FeasibleSet feasible_;
  std::unordered_map<Instance, Evaluation, InstanceHash> cache_;
  std::size_t evaluations_ = 0;
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline void check_query(const Schema& schema, const Instance& x, const Predictor& f, int target) {
  check_instance(schema, x, "query");
  if (f.predict(x) == target) throw PreconditionError("query is already classified as the target class");
}

inline SearchResult finish(Objective& obj, const Instance& best, const Evaluation& e, Clock::time_point start,
                           std::vector<double> history) {
  SearchResult r;
  r.best = best;
  r.breakdown = e.plain;
  r.valid = e.valid();
  r.objective = e.total;
  r.evaluations = obj.evaluations();
  r.model_queries = obj.model_queries();
  r.wall_time = std::chrono::duration<double>(Clock::now() - start).count();
  if (uses_c(obj.config().robustness_mode)) r.robustified_gower = e.gower_term;
  r.k_score = e.k_score;
  r.best_history = std::move(history);
  r.seed = obj.config().seed;
  return r;
}

struct Archive {
  Instance best;
  Evaluation eval;
  bool empty = true;

  void offer(const Instance& z, const Evaluation& e) {
    if (empty || e.total < eval.total) {
      best = z;
      eval = e;
      empty = false;
    }
  }
};

inline double uniform_in(double lo, double hi, Rng& rng) {
  if (!(hi > lo)) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

inline Instance random_feasible(const Schema& schema, const FeasibleSet& fs, Rng& rng) {
  std::vector<double> v(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i)
    v[i] = schema[i].is_numerical() ? uniform_in(fs.lo[i], fs.hi[i], rng) : pick(fs.categories[i], rng);
  return Instance(std::move(v));
}

}  // namespace detail

inline SearchResult cogs_search(const Schema& schema, const Instance& x, const Predictor& f, int target,
                                const SearchConfig& cfg) {
  cfg.validate();
  detail::check_query(schema, x, f, target);
  const auto start = detail::Clock::now();
  Objective obj(schema, x, f, target, cfg);
  const auto& fs = obj.feasible();
  const std::size_t d = schema.size();
  const auto pop_size = static_cast<std::size_t>(cfg.population);
  const double p_copy = std::min(0.5, cfg.copy_prob_scale / static_cast<double>(d));
  const double p_mut = 1.0 / static_cast<double>(d);

  std::vector<Instance> pop;
  {
    Rng rng = make_rng(derive_seed(cfg.seed, 0));
    std::bernoulli_distribution copy(p_copy);
    for (std::size_t k = 0; k < pop_size; ++k) {
      Instance z = detail::random_feasible(schema, fs, rng);
      for (std::size_t i = 0; i < d; ++i)
        if (copy(rng)) z[i] = x[i];
      pop.push_back(std::move(z));
    }
  }
  std::vector<Evaluation> fit = obj.evaluate(pop);
  detail::Archive archive;
  for (std::size_t k = 0; k < pop_size; ++k) archive.offer(pop[k], fit[k]);
  std::vector<double> history{archive.eval.total};

  for (int g = 0; g < cfg.generations; ++g) {
    Rng rng = make_rng(derive_seed(cfg.seed, 1, static_cast<std::uint64_t>(g)));
    std::vector<std::size_t> order(pop_size);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<Instance> kids;
    kids.reserve(pop_size);
    std::bernoulli_distribution coin(0.5), mutate(p_mut);
    std::uniform_real_distribution<double> step(-cfg.s_mut / 2, cfg.s_mut / 2);
    for (std::size_t k = 0; k + 1 < pop_size; k += 2) {
      Instance a = pop[order[k]], b = pop[order[k + 1]];
      for (std::size_t i = 0; i < d; ++i)
        if (coin(rng)) std::swap(a[i], b[i]);
      for (Instance* child : {&a, &b}) {
        for (std::size_t i = 0; i < d; ++i) {
          if (!mutate(rng)) continue;
          if (schema[i].is_numerical()) {
            (*child)[i] = fs.clamp(i, (*child)[i] + step(rng) * schema[i].range());
          } else {
            const auto& cats = fs.categories[i];
            if (cats.size() < 2) continue;
            const int current = child->category(i);
            int c = current;
            while (c == current) c = detail::pick(cats, rng);
            (*child)[i] = c;
          }
        }
        kids.push_back(std::move(*child));
      }
    }
    const auto kid_fit = obj.evaluate(kids);
    for (std::size_t k = 0; k < kids.size(); ++k) archive.offer(kids[k], kid_fit[k]);

    // Tournament survival over parents followed by offspring.
    const std::size_t pool = pop_size + kids.size();
    auto total_at = [&](std::size_t j) { return j < pop_size ? fit[j].total : kid_fit[j - pop_size].total; };
    std::uniform_int_distribution<std::size_t> draw(0, pool - 1);
    std::vector<Instance> next;
    std::vector<Evaluation> next_fit;
    next.reserve(pop_size);
    next_fit.reserve(pop_size);
    for (std::size_t s = 0; s < pop_size; ++s) {
      std::size_t winner = draw(rng);
      for (int t = 1; t < cfg.tournament; ++t) {
        const std::size_t c = draw(rng);
        if (total_at(c) < total_at(winner) || (total_at(c) == total_at(winner) && c < winner)) winner = c;
      }
      next.push_back(winner < pop_size ? pop[winner] : kids[winner - pop_size]);
      next_fit.push_back(winner < pop_size ? fit[winner] : kid_fit[winner - pop_size]);
    }
    pop = std::move(next);
    fit = std::move(next_fit);
    history.push_back(archive.eval.total);
  }
  return detail::finish(obj, archive.best, archive.eval, start, std::move(history));
}

inline SearchResult random_search(const Schema& schema, const Instance& x, const Predictor& f, int target,
                                  const SearchConfig& cfg) {
  detail::check_query(schema, x, f, target);
  const auto start = detail::Clock::now();
  Objective obj(schema, x, f, target, cfg);
  Rng rng = make_rng(derive_seed(cfg.seed, 2));
  const auto budget = static_cast<std::size_t>(std::max(1, cfg.population)) *
                      static_cast<std::size_t>(std::max(1, cfg.generations));
  detail::Archive archive;
  std::vector<double> history;
  constexpr std::size_t batch = 1024;
  for (std::size_t done = 0; done < budget;) {
    std::vector<Instance> draws;
    for (; draws.size() < batch && done < budget; ++done)
      draws.push_back(detail::random_feasible(schema, obj.feasible(), rng));
    const auto ev = obj.evaluate(draws);
    for (std::size_t k = 0; k < draws.size(); ++k) archive.offer(draws[k], ev[k]);
    history.push_back(archive.eval.total);
  }
  return detail::finish(obj, archive.best, archive.eval, start, std::move(history));
}

// Range-normalised coordinates: numerical features map to [0, 1], categorical
// ids are relaxed to the real interval [0, k-1].
class NormalizedSpace {
 public:
  NormalizedSpace(const Schema& schema, const FeasibleSet& fs) : schema_(schema), fs_(fs) {}

  std::vector<double> encode(const Instance& z) const {
    std::vector<double> u(schema_.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
      const auto& f = schema_[i];
      u[i] = f.is_numerical() ? (z[i] - f.min) / f.range() : z[i];
    }
    return u;
  }

  Instance decode(std::span<const double> u) const {
    std::vector<double> v(schema_.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      const auto& f = schema_[i];
      if (f.is_numerical()) {
        v[i] = fs_.clamp(i, f.min + std::clamp(u[i], 0.0, 1.0) * f.range());
      } else {
        const double r = std::round(std::clamp(u[i], 0.0, static_cast<double>(f.category_count() - 1)));
        const auto& cats = fs_.categories[i];
        v[i] = std::find(cats.begin(), cats.end(), static_cast<int>(r)) != cats.end() ? r : cats.front();
      }
    }
    return Instance(std::move(v));
  }

  double extent(std::size_t i) const {
    return schema_[i].is_numerical() ? 1.0 : static_cast<double>(schema_[i].category_count() - 1);
  }

 private:
  const Schema& schema_;
  const FeasibleSet& fs_;
};

namespace detail {

// Uniform draw from the annulus a <= |v| <= b in R^d.
inline std::vector<double> annulus_point(std::size_t d, double a, double b, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(d);
  double norm = 0;
  do {
    norm = 0;
    for (auto& e : v) {
      e = g(rng);
      norm += e * e;
    }
  } while (norm == 0);
  norm = std::sqrt(norm);
  const double dd = static_cast<double>(d);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const double r = std::pow(std::pow(a, dd) + u * (std::pow(b, dd) - std::pow(a, dd)), 1.0 / dd);
  for (auto& e : v) e *= r / norm;
  return v;
}

}  // namespace detail

inline SearchResult growing_spheres_search(const Schema& schema, const Instance& x, const Predictor& f, int target,
                                           const SearchConfig& cfg) {
  cfg.validate();
  detail::check_query(schema, x, f, target);
  const auto start = detail::Clock::now();
  Objective obj(schema, x, f, target, cfg);
  const NormalizedSpace space(schema, obj.feasible());
  const std::size_t d = schema.size();
  const auto u0 = space.encode(x);
  double max_radius = 0;
  for (std::size_t i = 0; i < d; ++i) max_radius += space.extent(i) * space.extent(i);
  max_radius = std::sqrt(max_radius);
  Rng rng = make_rng(derive_seed(cfg.seed, 3));

  auto layer = [&](double a, double b) {
    std::vector<Instance> pts;
    pts.reserve(static_cast<std::size_t>(cfg.gs_layer_points));
    for (int k = 0; k < cfg.gs_layer_points; ++k) {
      auto v = detail::annulus_point(d, a, b, rng);
      for (std::size_t i = 0; i < d; ++i) v[i] += u0[i];
      pts.push_back(space.decode(v));
    }
    const auto labels = obj.predict(pts);
    std::vector<Instance> hits;
    for (std::size_t k = 0; k < pts.size(); ++k)
      if (labels[k] == target) hits.push_back(std::move(pts[k]));
    return hits;
  };

  std::vector<double> history;
  double radius = cfg.gs_first_radius;
  auto hits = layer(0.0, radius);
  for (int shrink = 0; !hits.empty() && shrink < 30; ++shrink) {
    radius /= cfg.gs_decrease_radius;
    auto inner = layer(0.0, radius);
    if (inner.empty()) break;
    hits = std::move(inner);
  }
  if (hits.empty()) {
    const double step = (cfg.gs_decrease_radius - 1.0) * radius / 5.0;
    for (double a = radius; hits.empty() && a < max_radius; a += step) hits = layer(a, a + step);
  }
  if (hits.empty()) {
    const auto e = obj.evaluate(x);
    return detail::finish(obj, x, e, start, {e.total});
  }

  const auto ev = obj.evaluate(hits);
  detail::Archive archive;
  for (std::size_t k = 0; k < hits.size(); ++k) archive.offer(hits[k], ev[k]);
  history.push_back(archive.eval.total);

  // Sparsity step: revert features to x, smallest Gower contribution first,
  // while the point stays valid.
  Instance z = archive.best;
  std::vector<std::pair<double, std::size_t>> contrib;
  for (std::size_t i = 0; i < d; ++i) {
    if (!feature_changed(schema[i], x[i], z[i], cfg.tol_abs)) continue;
    const double c = schema[i].is_numerical() ? std::fabs(z[i] - x[i]) / schema[i].range() : 1.0;
    contrib.emplace_back(c, i);
  }
  std::sort(contrib.begin(), contrib.end());
  for (const auto& [c, i] : contrib) {
    Instance candidate = z;
    candidate[i] = x[i];
    if (obj.evaluate(candidate).valid()) z = std::move(candidate);
  }
  const auto e = obj.evaluate(z);
  history.push_back(e.total);
  return detail::finish(obj, z, e, start, std::move(history));
}

// Nelder-Mead simplex with the customary coefficients (1, 2, 0.5, 0.5) and the
// 5% / 0.00025 initial simplex, minimising the loss of the decoded point.
inline SearchResult nelder_mead_search(const Schema& schema, const Instance& x, const Predictor& f, int target,
                                       const SearchConfig& cfg) {
  cfg.validate();
  detail::check_query(schema, x, f, target);
  const auto start = detail::Clock::now();
  Objective obj(schema, x, f, target, cfg);
  const NormalizedSpace space(schema, obj.feasible());
  const std::size_t n = schema.size();
  using Point = std::vector<double>;
  detail::Archive archive;
  std::vector<double> history;

  auto fn = [&](const Point& u) {
    const Instance z = space.decode(u);
    const auto e = obj.evaluate(z);
    archive.offer(z, e);
    return e.total;
  };

  std::vector<Point> sim(n + 1, space.encode(x));
  for (std::size_t k = 0; k < n; ++k) sim[k + 1][k] = sim[k + 1][k] != 0 ? 1.05 * sim[k + 1][k] : 0.00025;
  std::vector<double> fsim(n + 1);
  for (std::size_t k = 0; k <= n; ++k) fsim[k] = fn(sim[k]);

  auto sort_simplex = [&] {
    std::vector<std::size_t> idx(n + 1);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return fsim[a] < fsim[b]; });
    std::vector<Point> s2;
    std::vector<double> f2;
    for (auto i : idx) {
      s2.push_back(sim[i]);
      f2.push_back(fsim[i]);
    }
    sim = std::move(s2);
    fsim = std::move(f2);
  };
  auto affine = [&](const Point& a, double wa, const Point& b, double wb) {
    Point out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = wa * a[i] + wb * b[i];
    return out;
  };

  sort_simplex();
  history.push_back(archive.eval.total);
  for (int iter = 1; iter < cfg.nm_maxiter; ++iter) {
    double xspread = 0, fspread = 0;
    for (std::size_t k = 1; k <= n; ++k) {
      fspread = std::max(fspread, std::fabs(fsim[0] - fsim[k]));
      for (std::size_t i = 0; i < n; ++i) xspread = std::max(xspread, std::fabs(sim[k][i] - sim[0][i]));
    }
    if (xspread <= cfg.nm_xatol && fspread <= cfg.nm_fatol) break;

    Point xbar(n, 0.0);
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < n; ++i) xbar[i] += sim[k][i] / static_cast<double>(n);
    const Point xr = affine(xbar, 2.0, sim[n], -1.0);
    const double fxr = fn(xr);
    bool shrink = false;
    if (fxr < fsim[0]) {
      const Point xe = affine(xbar, 3.0, sim[n], -2.0);
      const double fxe = fn(xe);
      if (fxe < fxr) {
        sim[n] = xe;
        fsim[n] = fxe;
      } else {
        sim[n] = xr;
        fsim[n] = fxr;
      }
    } else if (fxr < fsim[n - 1]) {
      sim[n] = xr;
      fsim[n] = fxr;
    } else if (fxr < fsim[n]) {
      const Point xc = affine(xbar, 1.5, sim[n], -0.5);
      const double fxc = fn(xc);
      if (fxc <= fxr) {
        sim[n] = xc;
        fsim[n] = fxc;
      } else {
        shrink = true;
      }
    } else {
      const Point xcc = affine(xbar, 0.5, sim[n], 0.5);
      const double fxcc = fn(xcc);
      if (fxcc < fsim[n]) {
        sim[n] = xcc;
        fsim[n] = fxcc;
      } else {
        shrink = true;
      }
    }
    if (shrink) {
      for (std::size_t k = 1; k <= n; ++k) {
        sim[k] = affine(sim[0], 0.5, sim[k], 0.5);
        fsim[k] = fn(sim[k]);
      }
    }
    sort_simplex();
    history.push_back(archive.eval.total);
  }
  return detail::finish(obj, archive.best, archive.eval, start, std::move(history));
}

inline SearchResult run_search(const Schema& schema, const Instance& x, const Predictor& f, int target,
                               const SearchConfig& cfg) {
  switch (cfg.algorithm) {
    case Algorithm::cogs: return cogs_search(schema, x, f, target, cfg);
    case Algorithm::growing_spheres: return growing_spheres_search(schema, x, f, target, cfg);
    case Algorithm::nelder_mead: return nelder_mead_search(schema, x, f, target, cfg);
    case Algorithm::random: return random_search(schema, x, f, target, cfg);
  }
  throw PreconditionError("unknown algorithm");
}

// Runs seeds seed..seed+repeats-1 and keeps the lowest objective (ties: lowest
// seed). Evaluation counts and wall time are summed over all runs.
inline SearchResult repeat_best(const Schema& schema, const Instance& x, const Predictor& f, int target,
                                const SearchConfig& cfg, int repeats) {
  if (repeats < 1) throw PreconditionError("repeat_best: repeats must be >= 1");
  std::optional<SearchResult> best;
  std::size_t evals = 0, queries = 0;
  double wall = 0;
  for (int r = 0; r < repeats; ++r) {
    SearchConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(r);
    SearchResult res = run_search(schema, x, f, target, c);
    evals += res.evaluations;
    queries += res.model_queries;
    wall += res.wall_time;
    if (!best || res.objective < best->objective) best = std::move(res);
  }
  best->evaluations = evals;
  best->model_queries = queries;
  best->wall_time = wall;
  return *best;
}

}  // namespace cfx
