#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "chainmeld/chain.hpp"

namespace chainmeld {

enum class PoolingMethod { logarithmic, poe, linear, dictatorial_partial, dictatorial_complete };

std::string to_string(PoolingMethod method);
PoolingMethod pooling_method_from_string(const std::string& name);

/// Which neighbour's prior is authoritative for a shared block under complete
/// dictatorial pooling: the submodel on its left (m) or on its right (m+1).
enum class BoundaryChoice { left, right };

/// Pooling weights. `per_submodel` (length M) is used by logarithmic pooling;
/// `per_boundary` (length M-1, pairs for the left and right neighbour) by
/// linear pooling. Sub-pools of partial dictatorial pooling use whichever
/// matches `sub_method`.
struct PoolingWeights {
  std::vector<double> per_submodel;
  std::vector<std::pair<double, double>> per_boundary;
};

/// Key of a user-supplied single-block marginal: p_submodel(phi_block).
struct BlockMarginalKey {
  std::size_t submodel;
  std::size_t block;
  friend auto operator<=>(const BlockMarginalKey&, const BlockMarginalKey&) = default;
};

struct PoolSpec {
  PoolingMethod method = PoolingMethod::poe;
  PoolingWeights weights;
  /// Partial dictatorial: 0-based index of the authoritative submodel.
  std::size_t authority = 0;
  /// Partial dictatorial: rule pooling the blocks the authority does not touch.
  PoolingMethod sub_method = PoolingMethod::logarithmic;
  /// Complete dictatorial: one choice per boundary.
  std::vector<BoundaryChoice> choices;
  /// Single-block marginals p_m(phi_b) for submodels touching two blocks.
  /// Needed by linear pooling and by dictatorial choices that split a
  /// submodel's pair of blocks.
  std::map<BlockMarginalKey, LogMarginalFn> block_marginals;
  /// Known log normalizing constant; subtracted when present.
  std::optional<double> log_norm;
};

/// A pooled prior over every shared block. Immutable after construction and
/// safe to evaluate concurrently.
class PooledPrior {
 public:
  /// Validates the spec against the model; throws ConfigurationError on
  /// missing marginals, wrong weight lengths, negative or all-zero weights.
  PooledPrior(const ChainModel& model, PoolSpec spec);

  const PoolSpec& spec() const { return spec_; }
  PoolingMethod method() const { return spec_.method; }
  std::size_t num_blocks() const { return blocks_.size(); }

  /// Unnormalized log p_pool(phi); -inf off support, never NaN.
  double log_density(const PhiVector& phi) const;

  /// Log marginal of submodel m over the single block b (b must be touched by m).
  double log_block_marginal(std::size_t m, std::size_t b, ConstValues value) const;

 private:
  double log_pool_logarithmic(const PhiVector& phi, std::size_t first_block, std::size_t last_block,
                              const std::vector<double>& lambda) const;
  double log_pool_linear(const PhiVector& phi, std::size_t first_block, std::size_t last_block) const;
  double log_pool_partial(const PhiVector& phi) const;
  double log_pool_complete(const PhiVector& phi) const;
  double submodel_marginal(std::size_t m, const PhiVector& phi) const;
  void require_block_marginal(std::size_t m, std::size_t b) const;

  PoolSpec spec_;
  std::vector<SubmodelSpec> submodels_;
  std::vector<PhiBlock> blocks_;
};

/// Convenience: log p_pool evaluated through the generic pooled prior.
double log_pool_eval(const PooledPrior& pool, const PhiVector& phi);

enum class FactorizationMode { flat_ends, subprior_ends, custom };

/// p_pool(phi12, phi23) = pool1(phi12) pool2(phi12, phi23) pool3(phi23), up to
/// a constant, for three-submodel chains.
struct PoolFactorization {
  FactorizationMode mode = FactorizationMode::flat_ends;
  std::function<double(ConstValues phi12)> pool1;
  std::function<double(ConstValues phi12, ConstValues phi23)> pool2;
  std::function<double(ConstValues phi23)> pool3;
};

/// Builds the sampler factorization. flat_ends puts everything in pool2;
/// subprior_ends uses the end submodels' own priors for pool1/pool3 and the
/// remainder for pool2. Requires M == 3.
PoolFactorization factorize_for_sampler(const ChainModel& model, const PooledPrior& pool, FactorizationMode mode);

/// Axis-aligned midpoint grid over every shared coordinate (continuous only).
struct GridSpec {
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<std::size_t> points;

  std::size_t total_points() const;
  double cell_volume() const;
  double coordinate(std::size_t axis, std::size_t i) const;
};

/// Density table normalized so that sum(density) * cell_volume == 1.
/// Points are stored row-major with the last axis fastest.
struct GridTable {
  GridSpec grid;
  std::vector<double> density;
  double log_mass = 0.0;  // log of the unnormalized mass (sum * volume)

  std::vector<double> point(std::size_t flat_index) const;
  std::vector<double> mean() const;
  std::vector<std::vector<double>> covariance() const;
  /// Correlation of axes a and b.
  double correlation(std::size_t a, std::size_t b) const;
};

/// Normalizes an arbitrary log density over the grid; OpenMP across grid rows.
GridTable grid_normalize_log_density(const std::function<double(ConstValues)>& log_density, const GridSpec& grid);

/// Normalizes the pooled prior over the grid. Every shared coordinate must be
/// continuous and the grid must have <= 1e7 points.
GridTable grid_normalize(const PooledPrior& pool, const std::vector<PhiBlock>& blocks, const GridSpec& grid);

namespace serial {
/// Single-threaded reference for grid_normalize_log_density.
GridTable grid_normalize_log_density(const std::function<double(ConstValues)>& log_density, const GridSpec& grid);
}  // namespace serial

/// Splits a flat coordinate vector into blocks with the given dims.
PhiVector split_blocks(ConstValues flat, const std::vector<PhiBlock>& blocks);

}  // namespace chainmeld
