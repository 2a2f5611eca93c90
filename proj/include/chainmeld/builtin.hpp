#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "chainmeld/chain.hpp"
#include "chainmeld/gaussian.hpp"
#include "chainmeld/pooling.hpp"
#include "chainmeld/samplers.hpp"

namespace chainmeld {

// ----- Gaussian chain ------------------------------------------------------------

/// p1: phi12 ~ N(mu1, sigma2), y1_i ~ N(phi12, noise_var1).
/// p2: (phi12, phi23) ~ N(mu2, sigma2 [[1, rho], [rho, 1]]), psi2 ~ N(psi2_mean, psi2_var),
///     y2_i ~ N(psi2 + (phi12 + phi23) / 2, noise_var2).
/// p3: phi23 ~ N(mu3, sigma2), y3_i ~ N(phi23, noise_var3).
/// psi1 and psi3 are empty.
struct GaussianChainParams {
  double mu1 = -2.5;
  double mu3 = 2.5;
  std::vector<double> mu2{0.0, 0.0};
  double sigma2 = 1.0;
  double rho = 0.8;
  double psi2_mean = 0.0;
  double psi2_var = 1.0;
  double noise_var1 = 1.0;
  double noise_var2 = 1.0;
  double noise_var3 = 1.0;
  std::vector<double> y1, y2, y3;
};

ChainModel builtin_gaussian_chain(const GaussianChainParams& params);

/// Single-block marginals of p2, N(mu2_i, sigma2), keyed for PoolSpec.
std::map<BlockMarginalKey, LogMarginalFn> gaussian_block_marginals(const GaussianChainParams& params);

/// Prior marginals as Gaussians: p1(phi12), p2(phi12, phi23), p3(phi23).
GaussianDensity gaussian_prior_marginal(const GaussianChainParams& params, std::size_t submodel);

/// Posterior of a conjugate end submodel (0 or 2) given its own data.
GaussianDensity gaussian_end_posterior(const GaussianChainParams& params, std::size_t submodel);

/// The pooled prior in information form over (phi12, phi23). Supports
/// logarithmic, poe and dictatorial pools; linear pools are not Gaussian.
GaussianInformation gaussian_pool_information(const GaussianChainParams& params, const PoolSpec& pool);

/// Exact melded posterior over (phi12, phi23, psi2).
GaussianDensity gaussian_melded_posterior(const GaussianChainParams& params, const PoolSpec& pool);

// ----- discrete chain ------------------------------------------------------------

enum class DiscreteTableMode { random, uniform, split_joint, prior_only, explicit_tables };

std::string to_string(DiscreteTableMode mode);
DiscreteTableMode discrete_mode_from_string(const std::string& name);

/// Probability tables (not logs) of a discrete chain. Submodel 1 has
/// `units1` independent units, each owning one phi12 coordinate and one psi1
/// coordinate (psi1 absent when kpsi1 == 0); submodel 3 likewise. Submodel 2
/// sees the whole phi12 and phi23 vectors.
///
/// joint1[u][a * max(kpsi1, 1) + s], marg1[u][a]: unit u of submodel 1.
/// joint2[(i12 * n23 + i23) * max(kpsi2, 1) + s], marg2[i12 * n23 + i23], where
/// i12 and i23 are row-major codes of the whole phi vectors.
struct DiscreteChainTables {
  std::vector<std::vector<double>> joint1, marg1, joint3, marg3;
  std::vector<double> joint2, marg2;
};

struct DiscreteChainParams {
  std::size_t k12 = 2;   // cardinality of each phi12 coordinate
  std::size_t k23 = 2;
  std::size_t kpsi1 = 2;  // 0 means psi1 is empty
  std::size_t kpsi2 = 2;
  std::size_t kpsi3 = 2;
  std::size_t units1 = 1;
  std::size_t units3 = 1;
  DiscreteTableMode mode = DiscreteTableMode::random;
  std::uint64_t table_seed = 1;
  bool normalized = true;  // marginal tables must sum to 1 within 1e-9
  std::optional<DiscreteChainTables> tables;  // used by explicit_tables
};

/// Tables implied by the parameters (generated, or the explicit ones checked).
DiscreteChainTables discrete_chain_tables(const DiscreteChainParams& params);

ChainModel builtin_discrete_chain(const DiscreteChainParams& params);
ChainModel discrete_chain_from_tables(const DiscreteChainParams& params, const DiscreteChainTables& tables);

/// Single-block marginals of submodel 2 (summing out the other block).
std::map<BlockMarginalKey, LogMarginalFn> discrete_block_marginals(const DiscreteChainParams& params,
                                                                   const DiscreteChainTables& tables);

/// Split-joint mode: the normalized posterior of the joint model the chain
/// was split from, in enumeration order.
std::vector<double> split_joint_posterior(const DiscreteChainParams& params, const DiscreteChainTables& tables);

// ----- enumeration oracle ----------------------------------------------------------

/// Exact table over every coordinate of (phi12, phi23, psi1, psi2, psi3),
/// row-major with the last coordinate fastest.
struct EnumerationTable {
  std::vector<std::string> columns;
  std::vector<std::size_t> cardinality;
  std::vector<double> probability;

  std::size_t size() const { return probability.size(); }
  std::vector<std::size_t> decode(std::size_t flat) const;
  std::size_t encode(std::span<const double> state) const;
  /// Marginal over the listed columns, row-major in the listed order.
  std::vector<double> marginal(const std::vector<std::size_t>& keep) const;
};

inline constexpr std::size_t kMaxEnumerationStates = 1'000'000;

/// Normalized exp(log_melded_density) over all states; OpenMP over states.
EnumerationTable enumerate_melded_posterior(const ChainModel& model, const PooledPrior& pool);

namespace serial {
EnumerationTable enumerate_melded_posterior(const ChainModel& model, const PooledPrior& pool);
}  // namespace serial

/// Normalized pooled prior over (phi12, phi23) codes, row-major.
std::vector<double> enumerate_pooled_prior(const ChainModel& model, const PooledPrior& pool);

/// Empirical distribution of sampler rows on the table's state space.
std::vector<double> empirical_table(const MeldedChainOutput& out, const EnumerationTable& table);

double tv_distance(const std::vector<double>& p, const std::vector<double>& q);

}  // namespace chainmeld
