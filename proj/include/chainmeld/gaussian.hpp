#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

namespace chainmeld {

/// Multivariate normal density N(mean, cov).
struct GaussianDensity {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  GaussianDensity() = default;
  GaussianDensity(Eigen::VectorXd m, Eigen::MatrixXd c) : mean(std::move(m)), cov(std::move(c)) {}
  static GaussianDensity scalar(double mean, double variance);

  Eigen::Index dim() const { return mean.size(); }

  /// Normalized log density. Throws SingularError for a non-PD covariance.
  double log_density(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  double correlation(Eigen::Index i, Eigen::Index j) const { return cov(i, j) / std::sqrt(cov(i, i) * cov(j, j)); }
};

/// Canonical (information) form: log density = -x'Jx/2 + h'x + const. J may be
/// singular or indefinite, which is how improper Gaussian factors are carried.
struct GaussianInformation {
  Eigen::MatrixXd precision;
  Eigen::VectorXd potential;

  static GaussianInformation zero(Eigen::Index dim);
  static GaussianInformation from_density(const GaussianDensity& g);

  /// Unnormalized log density (no constant).
  double log_kernel(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// True when the precision's smallest eigenvalue exceeds 1e-10.
  bool is_proper() const;
  /// Throws DomainError if improper.
  GaussianDensity to_density() const;

  /// Adds `other`, whose coordinates map to `index[k]` in this form.
  void accumulate(const GaussianInformation& other, const std::vector<Eigen::Index>& index);
};

/// N(x; mu, S)^lambda is proportional to N(x; mu, S / lambda).
GaussianDensity gaussian_power(const GaussianDensity& g, double lambda);

/// Normalized product of two densities over the same variables.
GaussianDensity gaussian_product(const GaussianDensity& a, const GaussianDensity& b);

/// Result of dividing one Gaussian by another. When the precision
/// difference is not positive definite `density` is empty and the
/// information form carries the indefinite precision.
struct GaussianRatio {
  std::optional<GaussianDensity> density;
  GaussianInformation information;
  bool proper() const { return density.has_value(); }
};

/// nu / de: Sigma = (Sigma_nu^-1 - Sigma_de^-1)^-1,
/// mu = Sigma (Sigma_nu^-1 mu_nu - Sigma_de^-1 mu_de).
GaussianRatio gaussian_ratio_product(const GaussianDensity& nu, const GaussianDensity& de);

/// Independent blocks: concatenated mean, block-diagonal covariance.
GaussianDensity block_diag_stack(const std::vector<GaussianDensity>& parts);

/// Precision (inverse covariance) via a Cholesky factorization. Throws
/// SingularError when the condition number exceeds 1e12 or the matrix is not PD.
Eigen::MatrixXd precision_of(const Eigen::MatrixXd& cov);

}  // namespace chainmeld
