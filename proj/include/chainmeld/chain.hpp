#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "chainmeld/types.hpp"

namespace chainmeld {

/// log p_m(phi_m, psi_m, Y_m). phi_m is the concatenation of the left and
/// right shared blocks the submodel touches (left first). Data is bound
/// inside the callable.
using LogJointFn = std::function<double(ConstValues phi, ConstValues psi)>;

/// log p_m(phi_m), the prior marginal of the submodel's shared quantities.
using LogMarginalFn = std::function<double(ConstValues phi)>;

/// Per-unit evaluators for a submodel whose joint and marginal are sums of
/// independent per-unit terms.
using UnitLogJointFn = std::function<double(std::size_t unit, ConstValues phi, ConstValues psi)>;
using UnitLogMarginalFn = std::function<double(std::size_t unit, ConstValues phi)>;

/// Declares that (phi_m, psi_m) splits into `units` contiguous, equally sized
/// slices: unit i owns phi[i*phi_per_unit, (i+1)*phi_per_unit) and the
/// matching psi slice.
struct UnitFactorization {
  std::size_t units = 1;
  std::size_t phi_per_unit = 0;
  std::size_t psi_per_unit = 0;
  UnitLogJointFn log_joint_unit;         // optional, used for consistency checks
  UnitLogMarginalFn log_marginal_unit;   // optional
};

/// Evaluation counters; shared by copies of a SubmodelSpec.
struct EvalCounters {
  std::atomic<long long> log_joint{0};
  std::atomic<long long> log_prior_marginal{0};
};

struct SubmodelSpec {
  std::string name;
  std::optional<std::size_t> left_dim;   // absent for the first submodel
  std::optional<std::size_t> right_dim;  // absent for the last submodel
  std::size_t psi_dim = 0;
  Support psi_support;
  std::vector<std::string> psi_labels;   // optional; defaults derived from name
  LogJointFn log_joint;
  LogMarginalFn log_prior_marginal;
  std::optional<UnitFactorization> unit_factorization;
  std::shared_ptr<EvalCounters> counters = std::make_shared<EvalCounters>();

  std::size_t phi_dim() const { return left_dim.value_or(0) + right_dim.value_or(0); }

  // Counted evaluation entry points; use these rather than the raw callables.
  double eval_log_joint(ConstValues phi, ConstValues psi) const;
  double eval_log_prior_marginal(ConstValues phi) const;

  long long joint_calls() const { return counters->log_joint.load(); }
  long long marginal_calls() const { return counters->log_prior_marginal.load(); }
  void reset_counters() const;
};

/// M submodels joined in a chain by M-1 shared blocks. Submodel m touches
/// block m-1 (left) and block m (right) where they exist.
struct ChainModel {
  std::vector<SubmodelSpec> submodels;
  std::vector<PhiBlock> phi_blocks;

  std::size_t size() const { return submodels.size(); }

  /// Shared quantities of submodel m: its left block followed by its right block.
  Values phi_of(std::size_t m, const PhiVector& phi) const;

  /// Labels of psi_m's coordinates.
  std::vector<std::string> psi_labels(std::size_t m) const;

  void reset_counters() const;
};

/// Lists every problem that makes the model unusable; empty iff usable.
std::vector<std::string> validate_chain(const ChainModel& model);

/// Throws StructuralError carrying the first violation, if any.
void require_valid(const ChainModel& model);

/// Throws StructuralError unless phi and psi have the layout the model declares.
void check_state(const ChainModel& model, const PhiVector& phi, const PsiVector& psi);

/// Contribution of one marginally replaced submodel, log_joint - log_marginal,
/// with the -inf policy: a -inf joint gives -inf; a -inf marginal under a
/// finite joint raises ModelInconsistencyError; NaN raises NumericalError.
double replaced_term(double log_joint, double log_marginal, const std::string& who);

class PooledPrior;

/// Unnormalized log density of the chained melded model:
/// log p_pool(phi) + sum_m [log p_m(phi_m, psi_m, Y_m) - log p_m(phi_m)].
double log_melded_density(const ChainModel& model, const PooledPrior& pool, const PhiVector& phi,
                          const PsiVector& psi);

/// Markov combination of the submodels when every block has one agreed prior:
/// sum_m log p_m(phi_m, psi_m, Y_m) - sum_b log p_b(phi_b).
double markov_combination_density(const ChainModel& model, const std::vector<LogMarginalFn>& shared_priors,
                                  const PhiVector& phi, const PsiVector& psi);

/// Largest |full - sum of per-unit terms| over the joint and the marginal at
/// the given point. Requires a declared unit factorization with per-unit
/// evaluators.
double unit_factorization_gap(const SubmodelSpec& spec, ConstValues phi, ConstValues psi);

}  // namespace chainmeld
