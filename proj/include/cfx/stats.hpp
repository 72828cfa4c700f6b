#pragma once

// Two-sided Mann-Whitney U with Holm step-down adjustment.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cfx/errors.hpp"

namespace cfx {

struct MannWhitney {
  double u = 0.0;  // U of the first sample
  double p = 1.0;
  bool exact = false;
};

// Midranks (1-based) of the pooled sample, doubled so they stay integral.
inline std::vector<long> doubled_midranks(std::span<const double> pooled) {
  std::vector<std::size_t> idx(pooled.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<long> r(pooled.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && pooled[idx[j + 1]] == pooled[idx[i]]) ++j;
    const long twice = static_cast<long>(i + 1 + j + 1);  // 2 * mean of ranks i+1..j+1
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = twice;
    i = j + 1;
  }
  return r;
}

inline constexpr std::size_t kExactLimit = 25;

// Exact p-value (conditional on ties) for sizes up to kExactLimit per group;
// normal approximation with tie and continuity corrections beyond.
inline MannWhitney mann_whitney_u(std::span<const double> a, std::span<const double> b) {
  const std::size_t n1 = a.size(), n2 = b.size(), n = n1 + n2;
  if (n1 < 1 || n2 < 1) throw PreconditionError("mann_whitney_u: empty sample");
  std::vector<double> pooled(a.begin(), a.end());
  pooled.insert(pooled.end(), b.begin(), b.end());
  const auto r2 = doubled_midranks(pooled);
  long sum2 = 0;
  for (std::size_t i = 0; i < n1; ++i) sum2 += r2[i];
  MannWhitney out;
  out.u = static_cast<double>(sum2) / 2.0 - static_cast<double>(n1 * (n1 + 1)) / 2.0;
  const long mu2 = static_cast<long>(n1 * (n + 1));  // doubled expected rank sum
  const long observed = std::labs(sum2 - mu2);

  if (n1 <= kExactLimit && n2 <= kExactLimit) {
    out.exact = true;
    const long max_sum = std::accumulate(r2.begin(), r2.end(), 0L);
    // ways[k][s]: subsets of size k with doubled rank sum s.
    std::vector<std::vector<double>> ways(n1 + 1, std::vector<double>(static_cast<std::size_t>(max_sum) + 1, 0.0));
    ways[0][0] = 1.0;
    for (std::size_t item = 0; item < n; ++item) {
      const auto w = static_cast<std::size_t>(r2[item]);
      for (std::size_t k = std::min(item + 1, n1); k >= 1; --k)
        for (std::size_t s = static_cast<std::size_t>(max_sum); s >= w; --s) ways[k][s] += ways[k - 1][s - w];
    }
    double extreme = 0, total = 0;
    for (std::size_t s = 0; s < ways[n1].size(); ++s) {
      total += ways[n1][s];
      if (std::labs(static_cast<long>(s) - mu2) >= observed) extreme += ways[n1][s];
    }
    out.p = std::min(1.0, extreme / total);
    return out;
  }

  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && sorted[j] == sorted[i]) ++j;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double dn1 = static_cast<double>(n1), dn2 = static_cast<double>(n2), dn = static_cast<double>(n);
  const double var = dn1 * dn2 / 12.0 * ((dn + 1) - tie_term / (dn * (dn - 1)));
  if (!(var > 0)) return out;
  const double dev = std::max(0.0, std::fabs(out.u - dn1 * dn2 / 2.0) - 0.5);
  out.p = std::min(1.0, std::erfc(dev / std::sqrt(var) / std::sqrt(2.0)));
  return out;
}

// Holm step-down adjusted p-values, in the input order.
inline std::vector<double> holm_adjust(std::span<const double> p) {
  const std::size_t m = p.size();
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> out(m);
  double running = 0;
  for (std::size_t k = 0; k < m; ++k) {
    running = std::max(running, std::min(1.0, static_cast<double>(m - k) * p[idx[k]]));
    out[idx[k]] = running;
  }
  return out;
}

struct PValueMatrix {
  std::vector<std::string> names;
  std::vector<std::vector<double>> raw;
  std::vector<std::vector<double>> adjusted;
};

inline PValueMatrix mann_whitney_holm(const std::vector<std::pair<std::string, std::vector<double>>>& groups) {
  const std::size_t g = groups.size();
  PValueMatrix out;
  out.raw.assign(g, std::vector<double>(g, 1.0));
  out.adjusted = out.raw;
  for (const auto& [name, values] : groups) {
    if (values.size() < 2) throw PreconditionError("mann_whitney_holm: group '" + name + "' has fewer than 2 values");
    out.names.push_back(name);
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  std::vector<double> raw;
  for (std::size_t i = 0; i < g; ++i)
    for (std::size_t j = i + 1; j < g; ++j) {
      pairs.emplace_back(i, j);
      raw.push_back(mann_whitney_u(groups[i].second, groups[j].second).p);
    }
  const auto adj = holm_adjust(raw);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto [i, j] = pairs[k];
    out.raw[i][j] = out.raw[j][i] = raw[k];
    out.adjusted[i][j] = out.adjusted[j][i] = adj[k];
  }
  return out;
}

}  // namespace cfx
