#pragma once

#include <cmath>
#include <numbers>
#include <numeric>
#include <vector>

#include "chainmeld/builtin.hpp"
#include "chainmeld/diagnostics.hpp"
#include "chainmeld/samplers.hpp"

namespace test {

using namespace chainmeld;

inline double log_std_normal(double x) { return -0.5 * (std::log(2.0 * std::numbers::pi) + x * x); }

inline double log_normal(double x, double m, double v) {
  return -0.5 * (std::log(2.0 * std::numbers::pi * v) + (x - m) * (x - m) / v);
}

// Hand-entered 2-state chain: every phi and psi coordinate is binary.
inline DiscreteChainTables two_state_tables() {
  DiscreteChainTables t;
  t.joint1 = {{0.30, 0.10, 0.20, 0.40}};
  t.marg1 = {{0.45, 0.55}};
  t.joint2 = {0.05, 0.15, 0.20, 0.10, 0.12, 0.08, 0.25, 0.05};
  t.marg2 = {0.10, 0.30, 0.40, 0.20};
  t.joint3 = {{0.25, 0.25, 0.35, 0.15}};
  t.marg3 = {{0.60, 0.40}};
  return t;
}

inline DiscreteChainParams two_state_params() {
  DiscreteChainParams p;
  p.mode = DiscreteTableMode::explicit_tables;
  p.tables = two_state_tables();
  return p;
}

inline double mean(const std::vector<double>& x) { return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size()); }

inline double variance(const std::vector<double>& x) {
  const double m = mean(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

inline std::vector<double> flatten(const Traces& t) {
  std::vector<double> out;
  for (const auto& c : t) out.insert(out.end(), c.begin(), c.end());
  return out;
}

// Monte Carlo standard error of the mean, sd / sqrt(ESS).
inline double mcse_mean(const Traces& t) {
  return std::sqrt(variance(flatten(t)) / ess(t).value);
}

// Standard error of the variance estimate, via the squared-deviation trace.
inline double mcse_variance(const Traces& t) {
  const double m = mean(flatten(t));
  Traces sq = t;
  for (auto& c : sq)
    for (auto& v : c) v = (v - m) * (v - m);
  return std::sqrt(variance(flatten(sq)) / ess(sq).value);
}

// Marginal of sampler rows over the listed columns on the table's space.
inline std::vector<double> empirical_marginal(const MeldedChainOutput& out, const EnumerationTable& table,
                                              const std::vector<std::size_t>& keep) {
  std::size_t n = 1;
  for (auto k : keep) n *= table.cardinality[k];
  std::vector<double> p(n, 0.0);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    const auto row = out.row(r);
    std::size_t c = 0;
    for (auto k : keep) c = c * table.cardinality[k] + static_cast<std::size_t>(row[k]);
    p[c] += 1.0;
  }
  for (auto& v : p) v /= static_cast<double>(out.rows());
  return p;
}

}  // namespace test
