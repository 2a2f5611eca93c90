#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "chainmeld/chain.hpp"
#include "chainmeld/pooling.hpp"
#include "chainmeld/rng.hpp"

namespace chainmeld {

using LogTargetFn = std::function<double(ConstValues)>;

enum class ProposalKind { random_walk, discrete_flip, empirical_resample };

/// Proposal for a block of coordinates.
///
/// random_walk moves every continuous coordinate (additive Gaussian step on
/// real coordinates, multiplicative log-normal step on positive ones) and, if
/// the block has discrete coordinates, also resamples one of them uniformly
/// among its other values. discrete_flip only does the latter.
/// empirical_resample marks blocks proposed from a stage-one SampleStore; the
/// stage-two samplers implement it directly.
struct MHKernelConfig {
  ProposalKind proposal = ProposalKind::random_walk;
  std::vector<double> scales;   // per coordinate; empty means default_scale everywhere
  double default_scale = 0.1;
  std::vector<double> init;     // optional starting values for the block

  double scale(std::size_t i) const { return scales.empty() ? default_scale : scales.at(i); }
};

struct AcceptanceCount {
  long long proposed = 0;
  long long accepted = 0;
  double rate() const { return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed); }
  AcceptanceCount& operator+=(const AcceptanceCount& o) {
    proposed += o.proposed;
    accepted += o.accepted;
    return *this;
  }
  friend bool operator==(const AcceptanceCount&, const AcceptanceCount&) = default;
};

/// Iteration budget of one sampling stage.
struct RunSettings {
  std::size_t iterations = 1000;      // per chain, including warmup
  std::optional<std::size_t> warmup;  // default: iterations / 10
  std::size_t thin = 1;
  std::size_t chains = 1;
  std::uint64_t seed = 0;

  std::size_t warmup_count() const { return warmup.value_or(iterations / 10); }
};

/// Post-warmup draws of (phi block, psi block) with cached log target values
/// and provenance. Written once, then shared read-only.
struct SampleStore {
  std::size_t phi_dim = 0;
  std::size_t psi_dim = 0;
  std::vector<std::string> labels;      // phi labels then psi labels
  std::vector<double> draws;            // row-major, size() x width()
  std::vector<double> log_density;      // cached log target per row
  std::vector<std::size_t> chain;
  std::vector<std::size_t> iteration;
  std::vector<std::size_t> source;      // optional: index into an earlier store
  AcceptanceCount acceptance;

  std::size_t width() const { return phi_dim + psi_dim; }
  std::size_t size() const { return log_density.size(); }
  std::span<const double> row(std::size_t i) const { return {draws.data() + i * width(), width()}; }
  std::span<const double> phi(std::size_t i) const { return row(i).first(phi_dim); }
  std::span<const double> psi(std::size_t i) const { return row(i).subspan(phi_dim, psi_dim); }

  void append(std::span<const double> row_values, double log_target, std::size_t chain_id, std::size_t iter);
};

/// Stage-two store indices accepted at each recorded iteration. Row-major:
/// iteration r, unit u lives at r * units + u.
struct IndexTrace {
  std::size_t units1 = 1;
  std::size_t units3 = 1;
  std::vector<std::size_t> store1;
  std::vector<std::size_t> store3;
  std::vector<std::size_t> intermediate;  // sequential sampler: stage-two row used in stage three

  bool operator==(const IndexTrace&) const = default;
};

/// Melded draws for a three-submodel chain. Columns are phi12..., phi23...,
/// psi1..., psi2..., psi3...; rows are grouped by chain then iteration.
struct MeldedChainOutput {
  std::vector<std::string> columns;
  std::size_t phi12_dim = 0, phi23_dim = 0, psi1_dim = 0, psi2_dim = 0, psi3_dim = 0;
  std::vector<double> values;
  std::vector<std::size_t> chain;
  std::vector<std::size_t> iteration;
  std::map<std::string, AcceptanceCount> acceptance;
  IndexTrace trace;
  std::uint64_t seed = 0;
  std::size_t num_chains = 0;

  std::size_t width() const { return columns.size(); }
  std::size_t rows() const { return chain.size(); }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * width(), width()}; }
  PhiVector phi_at(std::size_t r) const;
  PsiVector psi_at(std::size_t r) const;
  /// Per-chain traces of one column.
  std::vector<std::vector<double>> column_by_chain(std::size_t col) const;
  std::size_t column_index(const std::string& name) const;
  /// Acceptance rate of the update that moves the given column.
  std::map<std::string, std::string> column_update;  // column -> acceptance key

  bool operator==(const MeldedChainOutput&) const = default;
};

/// One Metropolis-Hastings step on `state`. `current` must hold the finite
/// log target at `state` and is updated on acceptance. Proposals with -inf
/// target are rejected without consuming a uniform draw.
bool mh_step(std::vector<double>& state, double& current, const LogTargetFn& log_target, const MHKernelConfig& kernel,
             const Support& support, Rng& rng);

/// Runs independent MH chains on an arbitrary target; chains run concurrently
/// with streams stream_base + chain.
SampleStore run_mh(const LogTargetFn& log_target, const Support& support, std::vector<std::string> labels,
                   std::size_t phi_dim, const MHKernelConfig& kernel, const RunSettings& settings,
                   std::uint64_t stream_base);

enum class StageOneTarget { first, last };

/// Stage one: MH targeting pool_k(phi) p_k(phi, psi, Y) / p_k(phi) for the
/// first or last submodel of a three-submodel chain.
SampleStore run_stage_one(const ChainModel& model, StageOneTarget target, const PoolFactorization& factors,
                          const MHKernelConfig& kernel, const RunSettings& settings);

/// Both stage-one runs with all of their chains executed concurrently.
std::pair<SampleStore, SampleStore> run_stage_one_pair(const ChainModel& model, const PoolFactorization& factors,
                                                       const MHKernelConfig& kernel1, const MHKernelConfig& kernel3,
                                                       const RunSettings& settings1, const RunSettings& settings3);

/// Stage two of the parallel sampler: Metropolis-within-Gibbs that proposes
/// (phi12, psi1) and (phi23, psi3) from the stage-one stores and updates psi2
/// with `psi2_kernel`. Only submodel 2 and pool2 enter the acceptance ratios.
MeldedChainOutput run_parallel_stage_two(const ChainModel& model, const PoolFactorization& factors,
                                         const SampleStore& store1, const SampleStore& store3,
                                         const MHKernelConfig& psi2_kernel, const RunSettings& settings);

/// As run_parallel_stage_two, but each unit of the end submodels' declared
/// unit factorizations is proposed separately, in a fresh random order every
/// iteration.
MeldedChainOutput run_parallel_stage_two_unitwise(const ChainModel& model, const PoolFactorization& factors,
                                                  const SampleStore& store1, const SampleStore& store3,
                                                  const MHKernelConfig& psi2_kernel, const RunSettings& settings);

struct SequentialKernels {
  MHKernelConfig stage1;       // (phi12, psi1)
  MHKernelConfig stage2;       // (phi23, psi2)
  MHKernelConfig stage3_psi3;  // psi3
};

struct SequentialSettings {
  RunSettings stage1;
  RunSettings stage2;
  RunSettings stage3;
};

struct SequentialStores {
  SampleStore stage1;
  SampleStore stage2;
};

/// Three-stage sampler: submodel 1, then submodel 2 reusing stage-one draws,
/// then submodel 3 reusing stage-two draws. pool3 must depend only on phi23.
MeldedChainOutput run_sequential(const ChainModel& model, const PoolFactorization& factors,
                                 const SequentialKernels& kernels, const SequentialSettings& settings,
                                 SequentialStores* stores = nullptr);

/// Sequential stage two: proposes (phi12, psi1) from the stage-one store and
/// moves (phi23, psi2) with `kernel`. Rows hold (phi12, phi23 | psi1, psi2)
/// with `source` pointing into `stage1`.
SampleStore run_sequential_stage_two(const ChainModel& model, const PoolFactorization& factors,
                                     const SampleStore& stage1, const MHKernelConfig& kernel,
                                     const RunSettings& settings);

/// Sequential stage three: proposes (phi12, phi23, psi1, psi2) from the
/// stage-two store and moves psi3 with `psi3_kernel`.
MeldedChainOutput run_sequential_stage_three(const ChainModel& model, const PoolFactorization& factors,
                                             const SampleStore& stage2, const MHKernelConfig& psi3_kernel,
                                             const RunSettings& settings);

/// Rebuilds psi1 (or psi3) for recorded row r from the index trace.
Values reconstruct_psi_from_trace(const SampleStore& store, const IndexTrace& trace, std::size_t r, bool first,
                                  std::size_t units);

}  // namespace chainmeld
