#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "chainmeld/chain.hpp"
#include "chainmeld/gaussian.hpp"
#include "chainmeld/samplers.hpp"

namespace chainmeld {

/// Columns [first, first + count) of a SampleStore row. `support` describes
/// those columns; when empty they are assumed continuous.
struct BlockSelector {
  std::size_t first = 0;
  std::size_t count = 0;
  Support support;

  static BlockSelector phi_of(const SampleStore& store, Support support = {}) {
    return {0, store.phi_dim, std::move(support)};
  }
};

/// Sample mean and unbiased covariance. Needs at least count+1 distinct rows
/// and a covariance whose smallest eigenvalue exceeds 1e-10.
GaussianDensity fit_gaussian_moments(const SampleStore& samples, const BlockSelector& block);

/// Per-coordinate shape of the fitted block; large values suggest the
/// Gaussian summary is poor. Reported only.
struct MarginalShape {
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
};
std::vector<MarginalShape> marginal_shape(const SampleStore& samples, const BlockSelector& block);

enum class NormalApproxMode { ratio, poe_flat_prior };

std::string to_string(NormalApproxMode mode);
NormalApproxMode normal_approx_mode_from_string(const std::string& name);

/// Approximate melded target over x = (phi12, phi23, psi2).
struct NormalApproxTarget {
  GaussianDensity factor;  // Gaussian standing in for submodels 1 and 3
  LogTargetFn log_density;
  std::size_t phi12_dim = 0;
  std::size_t phi23_dim = 0;
  std::size_t psi2_dim = 0;
};

/// log N(phi; mu, Sigma) + log p2(phi, psi2, Y2), where (mu, Sigma) is the
/// ratio of the stacked posterior summaries to the stacked prior summaries
/// (ratio mode) or just the stacked posterior summaries (poe_flat_prior).
/// An improper ratio raises DomainError naming the block.
NormalApproxTarget build_normal_approx_target(const ChainModel& model, const GaussianDensity& g1_post,
                                              const GaussianDensity& g1_prior, const GaussianDensity& g3_post,
                                              const GaussianDensity& g3_prior, NormalApproxMode mode);

/// MH on the approximate target. Output has empty psi1/psi3 columns.
MeldedChainOutput run_normal_approx(const ChainModel& model, const NormalApproxTarget& target,
                                    const MHKernelConfig& kernel, const RunSettings& settings);

}  // namespace chainmeld
