#include "chainmeld/normal_approx.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "chainmeld/errors.hpp"

namespace chainmeld {

namespace {

void check_block(const SampleStore& samples, const BlockSelector& block) {
  if (block.count == 0 || block.first + block.count > samples.width()) {
    throw StructuralError("block selector outside the sample row");
  }
  if (!block.support.empty() && block.support.size() != block.count) {
    throw StructuralError("block selector support has the wrong length");
  }
  for (const auto& s : block.support) {
    if (s.is_discrete()) throw UnsupportedError("normal approximation is unavailable for discrete coordinates");
  }
}

Eigen::MatrixXd block_matrix(const SampleStore& samples, const BlockSelector& block) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(block.count));
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const auto row = samples.row(r);
    for (std::size_t j = 0; j < block.count; ++j) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = row[block.first + j];
  }
  return x;
}

}  // namespace

GaussianDensity fit_gaussian_moments(const SampleStore& samples, const BlockSelector& block) {
  check_block(samples, block);
  std::set<std::vector<double>> distinct;
  for (std::size_t r = 0; r < samples.size() && distinct.size() <= block.count; ++r) {
    const auto row = samples.row(r).subspan(block.first, block.count);
    distinct.emplace(row.begin(), row.end());
  }
  if (distinct.size() < block.count + 1) throw SingularError("degenerate covariance: too few distinct samples");

  const Eigen::MatrixXd x = block_matrix(samples, block);
  const Eigen::VectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - mean.transpose();
  const Eigen::MatrixXd cov = centred.transpose() * centred / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
  if (!(eig.eigenvalues().minCoeff() > 1e-10)) throw SingularError("sample covariance is degenerate");
  return {mean, cov};
}

std::vector<MarginalShape> marginal_shape(const SampleStore& samples, const BlockSelector& block) {
  check_block(samples, block);
  const Eigen::MatrixXd x = block_matrix(samples, block);
  std::vector<MarginalShape> out(block.count);
  const double n = static_cast<double>(x.rows());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Eigen::ArrayXd c = x.col(j).array() - x.col(j).mean();
    const double m2 = c.square().sum() / n;
    if (m2 <= 0.0) continue;
    out[static_cast<std::size_t>(j)].skewness = (c.cube().sum() / n) / std::pow(m2, 1.5);
    out[static_cast<std::size_t>(j)].excess_kurtosis = (c.square().square().sum() / n) / (m2 * m2) - 3.0;
  }
  return out;
}

std::string to_string(NormalApproxMode mode) { return mode == NormalApproxMode::ratio ? "ratio" : "poe-flat-prior"; }

NormalApproxMode normal_approx_mode_from_string(const std::string& name) {
  if (name == "ratio") return NormalApproxMode::ratio;
  if (name == "poe-flat-prior") return NormalApproxMode::poe_flat_prior;
  throw ConfigurationError("unknown normal-approximation mode '" + name + "'");
}

NormalApproxTarget build_normal_approx_target(const ChainModel& model, const GaussianDensity& g1_post,
                                              const GaussianDensity& g1_prior, const GaussianDensity& g3_post,
                                              const GaussianDensity& g3_prior, NormalApproxMode mode) {
  require_valid(model);
  if (model.size() != 3) throw UnsupportedError("normal approximation requires exactly three submodels");
  const auto d12 = model.phi_blocks[0].dim;
  const auto d23 = model.phi_blocks[1].dim;
  for (const auto& b : model.phi_blocks) {
    for (const auto& s : b.support) {
      if (s.is_discrete()) throw UnsupportedError("normal approximation is unavailable for discrete block " + b.label);
    }
  }
  auto require_dim = [](const GaussianDensity& g, std::size_t d, const std::string& what) {
    if (static_cast<std::size_t>(g.dim()) != d) throw StructuralError(what + " has the wrong dimension");
  };
  require_dim(g1_post, d12, "phi12 posterior summary");
  require_dim(g3_post, d23, "phi23 posterior summary");

  NormalApproxTarget t;
  t.phi12_dim = d12;
  t.phi23_dim = d23;
  t.psi2_dim = model.submodels[1].psi_dim;
  const auto nu = block_diag_stack({g1_post, g3_post});
  if (mode == NormalApproxMode::ratio) {
    require_dim(g1_prior, d12, "phi12 prior summary");
    require_dim(g3_prior, d23, "phi23 prior summary");
    // Per-block checks first so the error can name the block.
    if (!gaussian_ratio_product(g1_post, g1_prior).proper()) {
      throw DomainError("improper posterior/prior ratio for block " + model.phi_blocks[0].label);
    }
    if (!gaussian_ratio_product(g3_post, g3_prior).proper()) {
      throw DomainError("improper posterior/prior ratio for block " + model.phi_blocks[1].label);
    }
    auto r = gaussian_ratio_product(nu, block_diag_stack({g1_prior, g3_prior}));
    if (!r.proper()) throw DomainError("improper posterior/prior ratio");
    t.factor = *r.density;
  } else {
    t.factor = nu;
  }

  const auto s2 = model.submodels[1];
  const auto factor = t.factor;
  const auto d = d12 + d23;
  t.log_density = [s2, factor, d](ConstValues x) {
    const auto phi = x.first(d);
    const double g = factor.log_density(Eigen::Map<const Eigen::VectorXd>(phi.data(), static_cast<Eigen::Index>(d)));
    const double j = s2.eval_log_joint(phi, x.subspan(d));
    if (std::isnan(j)) throw NumericalError("submodel 2 log joint is NaN");
    return g + j;
  };
  return t;
}

MeldedChainOutput run_normal_approx(const ChainModel& model, const NormalApproxTarget& target,
                                    const MHKernelConfig& kernel, const RunSettings& settings) {
  Support support = model.phi_blocks[0].support;
  support.insert(support.end(), model.phi_blocks[1].support.begin(), model.phi_blocks[1].support.end());
  support.insert(support.end(), model.submodels[1].psi_support.begin(), model.submodels[1].psi_support.end());
  MeldedChainOutput out;
  out.phi12_dim = target.phi12_dim;
  out.phi23_dim = target.phi23_dim;
  out.psi2_dim = target.psi2_dim;
  for (std::size_t b = 0; b < 2; ++b) {
    for (auto& l : coordinate_labels(model.phi_blocks[b].label, model.phi_blocks[b].dim)) out.columns.push_back(l);
  }
  for (auto& l : model.psi_labels(1)) out.columns.push_back(l);
  const auto store = run_mh(target.log_density, support, out.columns, out.phi12_dim + out.phi23_dim, kernel, settings,
                            streams::generic);
  out.values = store.draws;
  out.chain = store.chain;
  out.iteration = store.iteration;
  out.acceptance["normal_approx"] = store.acceptance;
  out.seed = settings.seed;
  out.num_chains = settings.chains;
  for (const auto& c : out.columns) out.column_update[c] = "normal_approx";
  return out;
}

}  // namespace chainmeld
