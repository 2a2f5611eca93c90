#include "chainmeld/chain.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "chainmeld/errors.hpp"
#include "chainmeld/pooling.hpp"

namespace chainmeld {

double SubmodelSpec::eval_log_joint(ConstValues phi, ConstValues psi) const {
  counters->log_joint.fetch_add(1, std::memory_order_relaxed);
  return log_joint(phi, psi);
}

double SubmodelSpec::eval_log_prior_marginal(ConstValues phi) const {
  counters->log_prior_marginal.fetch_add(1, std::memory_order_relaxed);
  return log_prior_marginal(phi);
}

void SubmodelSpec::reset_counters() const {
  counters->log_joint.store(0);
  counters->log_prior_marginal.store(0);
}

Values ChainModel::phi_of(std::size_t m, const PhiVector& phi) const {
  Values out;
  const auto& s = submodels.at(m);
  if (s.left_dim) {
    const auto& b = phi.blocks.at(m - 1);
    out.insert(out.end(), b.begin(), b.end());
  }
  if (s.right_dim) {
    const auto& b = phi.blocks.at(m);
    out.insert(out.end(), b.begin(), b.end());
  }
  return out;
}

std::vector<std::string> ChainModel::psi_labels(std::size_t m) const {
  const auto& s = submodels.at(m);
  if (s.psi_labels.size() == s.psi_dim) return s.psi_labels;
  return coordinate_labels("psi" + std::to_string(m + 1), s.psi_dim);
}

void ChainModel::reset_counters() const {
  for (const auto& s : submodels) s.reset_counters();
}

std::vector<std::string> validate_chain(const ChainModel& model) {
  std::vector<std::string> report;
  const auto m_count = model.submodels.size();
  if (m_count < 2) {
    report.emplace_back("chain requires M >= 2");
    return report;
  }
  if (model.phi_blocks.size() != m_count - 1) {
    std::ostringstream os;
    os << "expected " << m_count - 1 << " shared blocks, found " << model.phi_blocks.size();
    report.push_back(os.str());
    return report;
  }

  std::set<std::string> labels;
  for (std::size_t b = 0; b < model.phi_blocks.size(); ++b) {
    const auto& block = model.phi_blocks[b];
    const auto where = "block " + std::to_string(b + 1) + " (" + block.label + ")";
    if (!labels.insert(block.label).second) report.push_back("duplicate block label '" + block.label + "'");
    if (block.dim < 1) report.push_back(where + " has dim 0");
    if (block.support.size() != block.dim) report.push_back(where + " support length does not match dim");
    for (const auto& c : block.support) {
      if (c.is_discrete() && c.cardinality < 2) report.push_back(where + " has a discrete coordinate with cardinality < 2");
    }
  }

  for (std::size_t m = 0; m < m_count; ++m) {
    const auto& s = model.submodels[m];
    const auto who = "submodel " + std::to_string(m + 1);
    if (!s.log_joint) report.push_back(who + " missing log_joint evaluator");
    if (!s.log_prior_marginal) report.push_back(who + " missing log_prior_marginal evaluator");
    if (m == 0 && s.left_dim) report.push_back(who + " must not touch a left block");
    if (m > 0 && !s.left_dim) report.push_back(who + " must touch its left block");
    if (m + 1 == m_count && s.right_dim) report.push_back(who + " must not touch a right block");
    if (m + 1 < m_count && !s.right_dim) report.push_back(who + " must touch its right block");
    if (s.psi_support.size() != s.psi_dim) report.push_back(who + " psi support length does not match psi_dim");
    for (const auto& c : s.psi_support) {
      if (c.is_discrete() && c.cardinality < 2) report.push_back(who + " has a discrete psi coordinate with cardinality < 2");
    }
    if (s.unit_factorization) {
      const auto& u = *s.unit_factorization;
      if (u.units < 1 || u.units * u.phi_per_unit != s.phi_dim() || u.units * u.psi_per_unit != s.psi_dim) {
        report.push_back(who + " unit factorization does not tile (phi, psi)");
      }
    }
  }

  // Both neighbours must agree with the block's declared dim.
  for (std::size_t b = 0; b + 1 < m_count; ++b) {
    const auto& left = model.submodels[b];
    const auto& right = model.submodels[b + 1];
    const auto dim = model.phi_blocks[b].dim;
    if (!left.right_dim || !right.left_dim) continue;
    if (*left.right_dim != *right.left_dim || *left.right_dim != dim) {
      report.push_back("block dim mismatch at boundary " + std::to_string(b + 1));
    }
  }
  return report;
}

void require_valid(const ChainModel& model) {
  auto report = validate_chain(model);
  if (!report.empty()) throw StructuralError("invalid chain: " + report.front());
}

void check_state(const ChainModel& model, const PhiVector& phi, const PsiVector& psi) {
  if (phi.blocks.size() != model.phi_blocks.size()) throw StructuralError("phi has the wrong number of blocks");
  for (std::size_t b = 0; b < phi.blocks.size(); ++b) {
    if (phi.blocks[b].size() != model.phi_blocks[b].dim) {
      throw StructuralError("phi block '" + model.phi_blocks[b].label + "' has the wrong dimension");
    }
  }
  if (psi.parts.size() != model.submodels.size()) throw StructuralError("psi has the wrong number of parts");
  for (std::size_t m = 0; m < psi.parts.size(); ++m) {
    if (psi.parts[m].size() != model.submodels[m].psi_dim) {
      throw StructuralError("psi part of submodel " + std::to_string(m + 1) + " has the wrong dimension");
    }
  }
}

double replaced_term(double log_joint, double log_marginal, const std::string& who) {
  if (std::isnan(log_joint) || std::isnan(log_marginal)) throw NumericalError(who + ": evaluator returned NaN");
  if (log_joint == kNegInf) return kNegInf;
  if (log_marginal == kNegInf) {
    throw ModelInconsistencyError(who + ": joint density is positive where its prior marginal is zero");
  }
  return log_joint - log_marginal;
}

double log_melded_density(const ChainModel& model, const PooledPrior& pool, const PhiVector& phi,
                          const PsiVector& psi) {
  check_state(model, phi, psi);
  double total = pool.log_density(phi);
  for (std::size_t m = 0; m < model.size(); ++m) {
    const auto& s = model.submodels[m];
    const auto phi_m = model.phi_of(m, phi);
    const double joint = s.eval_log_joint(phi_m, psi.parts[m]);
    const double marginal = s.eval_log_prior_marginal(phi_m);
    total += replaced_term(joint, marginal, "submodel " + std::to_string(m + 1));
  }
  return std::isnan(total) ? kNegInf : total;
}

double markov_combination_density(const ChainModel& model, const std::vector<LogMarginalFn>& shared_priors,
                                  const PhiVector& phi, const PsiVector& psi) {
  check_state(model, phi, psi);
  if (shared_priors.size() != model.phi_blocks.size()) {
    throw StructuralError("markov combination needs one shared prior per block");
  }
  double joints = 0.0;
  for (std::size_t m = 0; m < model.size(); ++m) {
    const double j = model.submodels[m].eval_log_joint(model.phi_of(m, phi), psi.parts[m]);
    if (std::isnan(j)) throw NumericalError("submodel " + std::to_string(m + 1) + ": evaluator returned NaN");
    if (j == kNegInf) return kNegInf;
    joints += j;
  }
  double priors = 0.0;
  for (std::size_t b = 0; b < shared_priors.size(); ++b) {
    const double p = shared_priors[b](phi.blocks[b]);
    if (p == kNegInf || std::isnan(p)) {
      throw ModelInconsistencyError("shared prior of block " + std::to_string(b + 1) + " is zero where the joints are not");
    }
    priors += p;
  }
  return joints - priors;
}

double unit_factorization_gap(const SubmodelSpec& spec, ConstValues phi, ConstValues psi) {
  if (!spec.unit_factorization || !spec.unit_factorization->log_joint_unit ||
      !spec.unit_factorization->log_marginal_unit) {
    throw ConfigurationError(spec.name + ": no per-unit evaluators declared");
  }
  const auto& u = *spec.unit_factorization;
  double joint = 0.0;
  double marginal = 0.0;
  for (std::size_t i = 0; i < u.units; ++i) {
    auto phi_i = phi.subspan(i * u.phi_per_unit, u.phi_per_unit);
    auto psi_i = psi.subspan(i * u.psi_per_unit, u.psi_per_unit);
    joint += u.log_joint_unit(i, phi_i, psi_i);
    marginal += u.log_marginal_unit(i, phi_i);
  }
  return std::max(std::abs(spec.log_joint(phi, psi) - joint), std::abs(spec.log_prior_marginal(phi) - marginal));
}

}  // namespace chainmeld
