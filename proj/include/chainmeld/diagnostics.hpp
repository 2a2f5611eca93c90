#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

namespace chainmeld {

using Traces = std::vector<std::vector<double>>;

struct RhatResult {
  double value = 1.0;
  bool zero_variance = false;  // some within-chain variance was exactly zero
};

/// Rank-normalized split R-hat. Needs >= 2 chains with >= 4 draws each;
/// chains are truncated to the shortest. Floored at 0.99.
RhatResult split_rhat(const Traces& chains);

struct EssResult {
  double value = 0.0;
  bool antithetic = false;     // estimate exceeds the number of draws
  bool zero_variance = false;  // constant input; value is the draw count
};

/// Multi-chain autocorrelation ESS (Geyer initial monotone sequence,
/// truncated at the first negative paired sum). Needs >= 8 draws in total.
EssResult ess(const Traces& chains);
EssResult ess(const std::vector<double>& trace);

/// ESS of the rank-normalized split chains.
EssResult ess_bulk(const Traces& chains);

/// Minimum ESS of the 5% and 95% quantile indicators over split chains.
EssResult ess_tail(const Traces& chains);

/// Normal scores of pooled average ranks, (r - 3/8) / (S + 1/4), in the
/// input layout.
Traces rank_normalize(const Traces& chains);

/// Each chain cut into halves (dropping the middle draw of odd lengths).
Traces split_chains(const Traces& chains);

struct DiagnosticRow {
  std::string parameter;
  double rhat = 0.0;  // NaN with a single chain
  double ess_bulk = 0.0;
  double ess_tail = 0.0;
  double acceptance_rate = 0.0;
};

}  // namespace chainmeld
