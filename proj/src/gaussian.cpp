#include "chainmeld/gaussian.hpp"

#include <cmath>
#include <numbers>

#include "chainmeld/errors.hpp"

namespace chainmeld {

namespace {

constexpr double kPdTolerance = 1e-10;
constexpr double kMaxCondition = 1e12;

void require_same_dim(const GaussianDensity& a, const GaussianDensity& b) {
  if (a.dim() != b.dim() || a.cov.rows() != a.dim() || b.cov.rows() != b.dim()) {
    throw StructuralError("gaussian dimension mismatch");
  }
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

GaussianDensity GaussianDensity::scalar(double mean, double variance) {
  return GaussianDensity{Eigen::VectorXd::Constant(1, mean), Eigen::MatrixXd::Constant(1, 1, variance)};
}

double GaussianDensity::log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw SingularError("covariance is not positive definite");
  const Eigen::VectorXd z = llt.matrixL().solve(x - mean);
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi) + log_det + z.squaredNorm());
}

Eigen::MatrixXd precision_of(const Eigen::MatrixXd& cov) {
  if (cov.rows() != cov.cols()) throw StructuralError("covariance must be square");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(cov), Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxCondition) throw SingularError("covariance is singular or ill-conditioned");
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) throw SingularError("covariance is not positive definite");
  return symmetrize(llt.solve(Eigen::MatrixXd::Identity(cov.rows(), cov.cols())));
}

GaussianInformation GaussianInformation::zero(Eigen::Index dim) {
  return {Eigen::MatrixXd::Zero(dim, dim), Eigen::VectorXd::Zero(dim)};
}

GaussianInformation GaussianInformation::from_density(const GaussianDensity& g) {
  Eigen::MatrixXd j = precision_of(g.cov);
  Eigen::VectorXd h = j * g.mean;
  return {std::move(j), std::move(h)};
}

double GaussianInformation::log_kernel(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return -0.5 * x.dot(precision * x) + potential.dot(x);
}

bool GaussianInformation::is_proper() const {
  if (precision.rows() == 0) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(symmetrize(precision), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff() > kPdTolerance;
}

GaussianDensity GaussianInformation::to_density() const {
  if (!is_proper()) throw DomainError("precision is not positive definite");
  Eigen::LLT<Eigen::MatrixXd> llt(symmetrize(precision));
  Eigen::MatrixXd cov = symmetrize(llt.solve(Eigen::MatrixXd::Identity(precision.rows(), precision.cols())));
  Eigen::VectorXd mean = llt.solve(potential);
  return GaussianDensity{std::move(mean), std::move(cov)};
}

void GaussianInformation::accumulate(const GaussianInformation& other, const std::vector<Eigen::Index>& index) {
  if (static_cast<Eigen::Index>(index.size()) != other.potential.size()) throw StructuralError("index map has the wrong length");
  for (std::size_t a = 0; a < index.size(); ++a) {
    potential(index[a]) += other.potential(static_cast<Eigen::Index>(a));
    for (std::size_t b = 0; b < index.size(); ++b) {
      precision(index[a], index[b]) += other.precision(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
  }
}

GaussianDensity gaussian_power(const GaussianDensity& g, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("gaussian power requires lambda > 0");
  return GaussianDensity{g.mean, g.cov / lambda};
}

GaussianDensity gaussian_product(const GaussianDensity& a, const GaussianDensity& b) {
  require_same_dim(a, b);
  auto ia = GaussianInformation::from_density(a);
  const auto ib = GaussianInformation::from_density(b);
  ia.precision += ib.precision;
  ia.potential += ib.potential;
  return ia.to_density();
}

GaussianRatio gaussian_ratio_product(const GaussianDensity& nu, const GaussianDensity& de) {
  require_same_dim(nu, de);
  auto info = GaussianInformation::from_density(nu);
  const auto den = GaussianInformation::from_density(de);
  info.precision -= den.precision;
  info.potential -= den.potential;
  GaussianRatio out{std::nullopt, info};
  if (info.is_proper()) out.density = info.to_density();
  return out;
}

GaussianDensity block_diag_stack(const std::vector<GaussianDensity>& parts) {
  if (parts.empty()) throw StructuralError("block_diag_stack needs at least one part");
  Eigen::Index d = 0;
  for (const auto& p : parts) d += p.dim();
  GaussianDensity out{Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Zero(d, d)};
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.mean.segment(at, p.dim()) = p.mean;
    out.cov.block(at, at, p.dim(), p.dim()) = p.cov;
    at += p.dim();
  }
  return out;
}

}  // namespace chainmeld
