#include "chainmeld/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include <boost/math/distributions/normal.hpp>

#include "chainmeld/errors.hpp"

namespace chainmeld {

namespace {

std::size_t common_length(const Traces& chains) {
  std::size_t n = chains.empty() ? 0 : chains.front().size();
  for (const auto& c : chains) n = std::min(n, c.size());
  return n;
}

double mean_of(const std::vector<double>& x, std::size_t n) {
  return std::accumulate(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(n), 0.0) / static_cast<double>(n);
}

// Biased autocovariance at one lag.
double autocov(const std::vector<double>& x, std::size_t n, double mean, std::size_t lag) {
  double s = 0.0;
  for (std::size_t i = 0; i + lag < n; ++i) s += (x[i] - mean) * (x[i + lag] - mean);
  return s / static_cast<double>(n);
}

}  // namespace

Traces split_chains(const Traces& chains) {
  Traces out;
  for (const auto& c : chains) {
    const auto half = c.size() / 2;
    out.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(half));
    out.emplace_back(c.end() - static_cast<std::ptrdiff_t>(half), c.end());
  }
  return out;
}

Traces rank_normalize(const Traces& chains) {
  std::vector<std::pair<double, std::size_t>> all;
  std::size_t total = 0;
  for (const auto& c : chains) total += c.size();
  all.reserve(total);
  for (std::size_t k = 0, flat = 0; k < chains.size(); ++k) {
    for (double v : chains[k]) all.emplace_back(v, flat++);
  }
  std::sort(all.begin(), all.end());
  std::vector<double> rank(total);
  for (std::size_t i = 0; i < total;) {
    std::size_t j = i;
    while (j < total && all[j].first == all[i].first) ++j;
    const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) rank[all[k].second] = avg;
    i = j;
  }
  const boost::math::normal_distribution<double> std_normal;
  const double s = static_cast<double>(total);
  Traces out(chains.size());
  for (std::size_t k = 0, flat = 0; k < chains.size(); ++k) {
    for (std::size_t i = 0; i < chains[k].size(); ++i, ++flat) {
      out[k].push_back(boost::math::quantile(std_normal, (rank[flat] - 0.375) / (s + 0.25)));
    }
  }
  return out;
}

RhatResult split_rhat(const Traces& chains) {
  if (chains.size() < 2) throw DomainError("split R-hat needs at least two chains");
  if (common_length(chains) < 4) throw DomainError("split R-hat needs at least four draws per chain");
  Traces trimmed;
  const auto len = common_length(chains);
  for (const auto& c : chains) trimmed.emplace_back(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(len));
  const auto halves = split_chains(trimmed);
  const auto z = rank_normalize(halves);

  const auto n = common_length(z);
  const auto m = z.size();
  std::vector<double> means(m), vars(m);
  RhatResult out;
  // Constancy is checked on raw values; rounding in the normal scores can leave tiny variances.
  bool all_constant = true;
  for (const auto& h : halves) {
    const bool constant = std::adjacent_find(h.begin(), h.end(), std::not_equal_to<>()) == h.end();
    out.zero_variance = out.zero_variance || constant;
    all_constant = all_constant && constant;
  }
  for (std::size_t k = 0; k < m; ++k) {
    means[k] = mean_of(z[k], n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) ss += (z[k][i] - means[k]) * (z[k][i] - means[k]);
    vars[k] = ss / static_cast<double>(n - 1);
  }
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(m);
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= static_cast<double>(n) / static_cast<double>(m - 1);
  const double w = std::accumulate(vars.begin(), vars.end(), 0.0) / static_cast<double>(m);
  if (w == 0.0 || all_constant) {
    out.zero_variance = true;
    b = b < 1e-12 ? 0.0 : b;
    out.value = b == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
    return out;
  }
  const double nd = static_cast<double>(n);
  const double var_plus = (nd - 1.0) / nd * w + b / nd;
  out.value = std::max(0.99, std::sqrt(var_plus / w));
  return out;
}

EssResult ess(const Traces& chains) {
  const auto m = chains.size();
  const auto n = common_length(chains);
  if (m == 0 || n * m < 8 || n < 4) throw DomainError("ESS needs at least eight draws");
  const double total = static_cast<double>(n * m);

  std::vector<double> means(m), acov0(m);
  for (std::size_t k = 0; k < m; ++k) {
    means[k] = mean_of(chains[k], n);
    acov0[k] = autocov(chains[k], n, means[k], 0);
  }
  const double nd = static_cast<double>(n);
  double mean_var = 0.0;
  for (double a : acov0) mean_var += a * nd / (nd - 1.0);
  mean_var /= static_cast<double>(m);
  double var_plus = mean_var * (nd - 1.0) / nd;
  if (m > 1) {
    const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(m);
    double b = 0.0;
    for (double mu : means) b += (mu - grand) * (mu - grand);
    var_plus += b / static_cast<double>(m - 1);
  }
  EssResult out;
  if (var_plus == 0.0) {
    out.value = total;
    out.zero_variance = true;
    return out;
  }

  auto rho = [&](std::size_t lag) {
    double a = 0.0;
    for (std::size_t k = 0; k < m; ++k) a += autocov(chains[k], n, means[k], lag);
    return 1.0 - (mean_var - a / static_cast<double>(m)) / var_plus;
  };

  // Paired sums P_k = rho_2k + rho_2k+1; the first pair is always kept.
  std::vector<double> pairs{1.0 + rho(1)};
  for (std::size_t t = 2; t + 1 < n; t += 2) {
    const double p = rho(t) + rho(t + 1);
    if (p < 0.0) break;
    pairs.push_back(std::min(p, pairs.back()));  // initial monotone sequence
  }
  double tau = -1.0 + 2.0 * std::accumulate(pairs.begin(), pairs.end(), 0.0);
  tau = std::max(tau, 1.0 / std::log10(total));
  out.value = total / tau;
  out.antithetic = out.value > total;
  return out;
}

EssResult ess(const std::vector<double>& trace) { return ess(Traces{trace}); }

EssResult ess_bulk(const Traces& chains) { return ess(rank_normalize(split_chains(chains))); }

EssResult ess_tail(const Traces& chains) {
  const auto split = split_chains(chains);
  std::vector<double> pooled;
  for (const auto& c : split) pooled.insert(pooled.end(), c.begin(), c.end());
  if (pooled.empty()) throw DomainError("ESS needs at least eight draws");
  std::sort(pooled.begin(), pooled.end());
  auto quantile = [&](double p) {
    const double h = p * static_cast<double>(pooled.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, pooled.size() - 1);
    return pooled[lo] + (h - static_cast<double>(lo)) * (pooled[hi] - pooled[lo]);
  };
  EssResult best;
  bool first = true;
  for (double p : {0.05, 0.95}) {
    const double q = quantile(p);
    Traces ind(split.size());
    for (std::size_t k = 0; k < split.size(); ++k) {
      for (double v : split[k]) ind[k].push_back(v <= q ? 1.0 : 0.0);
    }
    const auto e = ess(ind);
    if (first || e.value < best.value) best = e;
    first = false;
  }
  return best;
}

}  // namespace chainmeld
