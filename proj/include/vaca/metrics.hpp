#pragma once

// Pearson, Spearman and Kendall correlation between predicted and
// ground-truth congestion, at grid level (per-bin values) and cell level
// (each cell inherits the value of the bin containing it).
//
// Kendall is tau-a, the plain pairwise form; with ties it stays below 1 even
// for identical orderings. A tau-b variant is available for diagnostics.
// The fast path counts discordant pairs with a merge sort and is exactly
// equal to the O(n^2) evaluation (both divide the same integer numerator).

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "vaca/features.hpp"

namespace vaca {

struct PairedSeries {
  std::vector<double> x;  // predictions
  std::vector<double> y;  // ground truth
  std::size_t n() const { return x.size(); }
};

namespace detail {

inline void validate_series(const PairedSeries& s, const char* op) {
  if (s.x.size() != s.y.size())
    throw std::invalid_argument(std::string(op) + ": series lengths differ");
  if (s.x.size() < 2)
    throw std::invalid_argument(std::string(op) + ": need at least 2 pairs");
  for (std::size_t i = 0; i < s.x.size(); ++i)
    if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]))
      throw std::invalid_argument(std::string(op) + ": non-finite entry");
}

inline bool is_constant(const std::vector<double>& v) {
  for (double x : v)
    if (x != v.front()) return false;
  return true;
}

}  // namespace detail

// Average (fractional) ranks; ties share the mean of their rank range.
inline std::vector<double> fractional_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

inline double pearson(const PairedSeries& s) {
  detail::validate_series(s, "pearson");
  if (detail::is_constant(s.x) || detail::is_constant(s.y))
    throw std::invalid_argument("pearson: correlation undefined for a constant series");
  const std::size_t n = s.n();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += s.x[i];
    my += s.y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = s.x[i] - mx, dy = s.y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return sxy / (std::sqrt(sxx) * std::sqrt(syy));
}

inline double spearman(const PairedSeries& s) {
  detail::validate_series(s, "spearman");
  if (detail::is_constant(s.x) || detail::is_constant(s.y))
    throw std::invalid_argument("spearman: correlation undefined for a constant series");
  return pearson({fractional_ranks(s.x), fractional_ranks(s.y)});
}

// O(n^2) reference: tau_a = 2/(n(n-1)) * sum_{i<j} sgn(xi-xj) sgn(yi-yj).
inline double kendall_brute(const PairedSeries& s) {
  detail::validate_series(s, "kendall");
  const std::size_t n = s.n();
  long long num = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = s.x[i] - s.x[j];
      const double dy = s.y[i] - s.y[j];
      const int sx = dx > 0 ? 1 : (dx < 0 ? -1 : 0);
      const int sy = dy > 0 ? 1 : (dy < 0 ? -1 : 0);
      num += sx * sy;
    }
  const double n0 = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  return static_cast<double>(num) / n0;
}

namespace detail {

// Inversions (strict descents) of v, by merge sort.
inline long long count_inversions(std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<double> tmp(n);
  long long inv = 0;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo + width < n; lo += 2 * width) {
      const std::size_t mid = lo + width;
      const std::size_t hi = std::min(lo + 2 * width, n);
      std::size_t i = lo, j = mid, k = lo;
      while (i < mid && j < hi) {
        if (v[j] < v[i]) {
          inv += static_cast<long long>(mid - i);
          tmp[k++] = v[j++];
        } else {
          tmp[k++] = v[i++];
        }
      }
      while (i < mid) tmp[k++] = v[i++];
      while (j < hi) tmp[k++] = v[j++];
      std::copy(tmp.begin() + lo, tmp.begin() + hi, v.begin() + lo);
    }
  }
  return inv;
}

struct KendallCounts {
  long long n0 = 0, xtie = 0, ytie = 0, bothtie = 0, discordant = 0;
  long long concordant_minus_discordant() const {
    return n0 - xtie - ytie + bothtie - 2 * discordant;
  }
};

inline KendallCounts kendall_counts(const PairedSeries& s) {
  const std::size_t n = s.n();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (s.x[a] != s.x[b]) return s.x[a] < s.x[b];
    return s.y[a] < s.y[b];
  });

  KendallCounts c;
  c.n0 = static_cast<long long>(n) * static_cast<long long>(n - 1) / 2;

  // tie runs in x, and joint ties within them
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && s.x[order[j + 1]] == s.x[order[i]]) ++j;
    const long long t = static_cast<long long>(j - i + 1);
    c.xtie += t * (t - 1) / 2;
    std::size_t k = i;
    while (k <= j) {
      std::size_t m = k;
      while (m + 1 <= j && s.y[order[m + 1]] == s.y[order[k]]) ++m;
      const long long u = static_cast<long long>(m - k + 1);
      c.bothtie += u * (u - 1) / 2;
      k = m + 1;
    }
    i = j + 1;
  }

  // tie runs in y
  {
    std::vector<double> ys = s.y;
    std::sort(ys.begin(), ys.end());
    std::size_t k = 0;
    while (k < n) {
      std::size_t m = k;
      while (m + 1 < n && ys[m + 1] == ys[k]) ++m;
      const long long u = static_cast<long long>(m - k + 1);
      c.ytie += u * (u - 1) / 2;
      k = m + 1;
    }
  }

  std::vector<double> yseq(n);
  for (std::size_t t = 0; t < n; ++t) yseq[t] = s.y[order[t]];
  c.discordant = count_inversions(yseq);
  return c;
}

}  // namespace detail

// O(n log n) evaluation of tau-a; exactly equals kendall_brute.
inline double kendall_fast(const PairedSeries& s) {
  detail::validate_series(s, "kendall");
  const auto c = detail::kendall_counts(s);
  return static_cast<double>(c.concordant_minus_discordant()) / static_cast<double>(c.n0);
}

inline double kendall(const PairedSeries& s) {
  detail::validate_series(s, "kendall");
  return s.n() < 64 ? kendall_brute(s) : kendall_fast(s);
}

// Tie-corrected variant, for diagnostics only.
inline double kendall_tau_b(const PairedSeries& s) {
  detail::validate_series(s, "kendall_tau_b");
  const auto c = detail::kendall_counts(s);
  const double denom = std::sqrt(static_cast<double>(c.n0 - c.xtie)) *
                       std::sqrt(static_cast<double>(c.n0 - c.ytie));
  if (denom == 0.0)
    throw std::invalid_argument("kendall_tau_b: correlation undefined for a constant series");
  return static_cast<double>(c.concordant_minus_discordant()) / denom;
}

// Row-major flatten of both maps.
inline PairedSeries grid_level(const CongestionMap& pred, const CongestionMap& truth) {
  if (pred.H != truth.H || pred.W != truth.W)
    throw std::invalid_argument("grid_level: map dimensions differ");
  return {pred.v, truth.v};
}

// One pair per cell, both values taken from the cell's containing bin.
inline PairedSeries cell_level(const CongestionMap& pred, const CongestionMap& truth,
                               const std::vector<int>& cell_bin) {
  if (pred.H != truth.H || pred.W != truth.W)
    throw std::invalid_argument("cell_level: map dimensions differ");
  PairedSeries s;
  s.x.reserve(cell_bin.size());
  s.y.reserve(cell_bin.size());
  for (int b : cell_bin) {
    if (b < 0 || b >= static_cast<int>(pred.v.size()))
      throw std::invalid_argument("cell_level: cell bin out of range");
    s.x.push_back(pred.v[b]);
    s.y.push_back(truth.v[b]);
  }
  return s;
}

inline std::vector<int> cell_bins(const Netlist& nl, const Placement& pl,
                                  const GridSpec& grid) {
  return cell_bins_from_placement(nl, pl, grid);
}

}  // namespace vaca
