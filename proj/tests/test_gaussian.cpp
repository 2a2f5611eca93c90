#include <cmath>

#include "doctest.h"
#include "support.hpp"

#include "chainmeld/errors.hpp"
#include "chainmeld/gaussian.hpp"

using namespace chainmeld;

namespace {

GaussianDensity g1(double m, double v) { return GaussianDensity::scalar(m, v); }

GaussianDensity g2(double m0, double m1, double v0, double v1, double c) {
  Eigen::Matrix2d cov;
  cov << v0, c, c, v1;
  return GaussianDensity(Eigen::Vector2d(m0, m1), cov);
}

void check_same(const GaussianDensity& a, const GaussianDensity& b, double tol) {
  REQUIRE(a.dim() == b.dim());
  CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() <= tol);
  CHECK((a.cov - b.cov).cwiseAbs().maxCoeff() <= tol);
}

}  // namespace

TEST_CASE("gaussian_power") {
  check_same(gaussian_power(g1(0, 1), 1.0), g1(0, 1), 1e-15);
  check_same(gaussian_power(g1(-2.5, 1), 0.5), g1(-2.5, 2), 1e-15);
  CHECK_THROWS_AS(gaussian_power(g1(0, 1), 0.0), DomainError);
  CHECK_THROWS_AS(gaussian_power(g1(0, 1), -1.0), DomainError);
}

TEST_CASE("gaussian_power matches a grid of the powered density") {
  const auto g = g1(-2.5, 1.0);
  const auto p = gaussian_power(g, 0.5);
  // exp(0.5 log N(x)) renormalized on a fine grid has the powered variance.
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < 40000; ++i) {
    const double x = -20.0 + (i + 0.5) * 1e-3;
    const double w = std::exp(0.5 * g.log_density(Eigen::VectorXd::Constant(1, x)));
    s0 += w;
    s1 += w * x;
    s2 += w * x * x;
  }
  CHECK(s1 / s0 == doctest::Approx(p.mean(0)).epsilon(1e-9));
  CHECK(s2 / s0 - (s1 / s0) * (s1 / s0) == doctest::Approx(p.cov(0, 0)).epsilon(1e-6));
}

TEST_CASE("gaussian_product") {
  check_same(gaussian_product(g1(0, 1), g1(0, 1)), g1(0, 0.5), 1e-15);
  // Pooling with lambda (0,1,0) is p2's bivariate normal unchanged.
  const auto p = GaussianChainParams{};
  PoolSpec spec;
  spec.method = PoolingMethod::logarithmic;
  spec.weights.per_submodel = {0.0, 1.0, 0.0};
  check_same(gaussian_pool_information(p, spec).to_density(), gaussian_prior_marginal(p, 1), 1e-12);
}

TEST_CASE("pooled correlation at lambda1=0.25 lies strictly inside (0, 0.8)") {
  PoolSpec spec;
  spec.method = PoolingMethod::logarithmic;
  spec.weights.per_submodel = {0.25, 0.5, 0.25};
  const auto d = gaussian_pool_information(GaussianChainParams{}, spec).to_density();
  CHECK(d.correlation(0, 1) > 0.0);
  CHECK(d.correlation(0, 1) < 0.8);
}

TEST_CASE("pooled correlation falls monotonically from 0.8 to 0") {
  double prev = 2.0;
  for (int k = 0; k <= 50; ++k) {
    const double l1 = 0.01 * k;
    PoolSpec spec;
    spec.method = PoolingMethod::logarithmic;
    spec.weights.per_submodel = {l1, 1.0 - 2.0 * l1, l1};
    const double r = gaussian_pool_information(GaussianChainParams{}, spec).to_density().correlation(0, 1);
    CHECK(r < prev);
    prev = r;
    if (k == 0) CHECK(r == doctest::Approx(0.8).epsilon(1e-12));
  }
  CHECK(std::abs(prev) < 1e-12);
}

TEST_CASE("gaussian_product is commutative and associative") {
  const auto a = g2(1.0, -1.0, 2.0, 1.0, 0.3);
  const auto b = g2(0.0, 0.5, 1.0, 3.0, -0.8);
  const auto c = g2(-2.0, 2.0, 0.5, 0.7, 0.1);
  check_same(gaussian_product(a, b), gaussian_product(b, a), 1e-12);
  check_same(gaussian_product(gaussian_product(a, b), c), gaussian_product(a, gaussian_product(b, c)), 1e-12);
}

TEST_CASE("gaussian_ratio_product") {
  const auto r = gaussian_ratio_product(g1(1, 0.5), g1(0, 1));
  REQUIRE(r.proper());
  check_same(*r.density, g1(2, 1), 1e-14);
  CHECK_FALSE(gaussian_ratio_product(g1(0, 1), g1(0, 1)).proper());
  CHECK_FALSE(gaussian_ratio_product(g1(0, 2), g1(0, 1)).proper());
  CHECK(gaussian_ratio_product(g1(0, 2), g1(0, 1)).information.precision(0, 0) == doctest::Approx(-0.5));
}

TEST_CASE("ratio matches a grid ratio fitted by moments") {
  const auto nu = g1(1, 0.5), de = g1(0, 1);
  double s0 = 0.0, s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < 40000; ++i) {
    const double x = -18.0 + (i + 0.5) * 1e-3;
    const Eigen::VectorXd v = Eigen::VectorXd::Constant(1, x);
    const double w = std::exp(nu.log_density(v) - de.log_density(v));
    s0 += w;
    s1 += w * x;
    s2 += w * x * x;
  }
  CHECK(s1 / s0 == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(s2 / s0 - 4.0 == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("block_diag_stack") {
  const auto s = block_diag_stack({g1(1, 1), g1(2, 4)});
  CHECK(s.mean == Eigen::Vector2d(1, 2));
  CHECK(s.cov == Eigen::Vector2d(1, 4).asDiagonal().toDenseMatrix());
  check_same(block_diag_stack({g2(1, 2, 1, 1, 0.2)}), g2(1, 2, 1, 1, 0.2), 0.0);
  CHECK_THROWS_AS(block_diag_stack({}), StructuralError);
}

TEST_CASE("stack then ratio equals ratio then stack") {
  const auto n1 = g1(1, 0.5), d1 = g1(0, 1), n2 = g1(-1, 0.2), d2 = g1(0.5, 3);
  const auto whole = gaussian_ratio_product(block_diag_stack({n1, n2}), block_diag_stack({d1, d2}));
  const auto parts = block_diag_stack({*gaussian_ratio_product(n1, d1).density, *gaussian_ratio_product(n2, d2).density});
  REQUIRE(whole.proper());
  check_same(*whole.density, parts, 1e-12);
}

TEST_CASE("log pooled gaussian via power and product matches the information form") {
  const auto p = GaussianChainParams{};
  for (double l1 : {0.125, 0.25, 0.375}) {
    const double l2 = 1.0 - 2.0 * l1;
    const auto left = gaussian_power(gaussian_prior_marginal(p, 0), l1);
    const auto right = gaussian_power(gaussian_prior_marginal(p, 2), l1);
    const auto ends = block_diag_stack({left, right});
    const auto pooled = gaussian_product(ends, gaussian_power(gaussian_prior_marginal(p, 1), l2));
    PoolSpec spec;
    spec.method = PoolingMethod::logarithmic;
    spec.weights.per_submodel = {l1, l2, l1};
    check_same(pooled, gaussian_pool_information(p, spec).to_density(), 1e-12);
  }
}

TEST_CASE("log_density and singular covariances") {
  CHECK(g1(0, 1).log_density(Eigen::VectorXd::Zero(1)) == doctest::Approx(test::log_std_normal(0.0)).epsilon(1e-15));
  CHECK(g2(0, 0, 1, 1, 0).log_density(Eigen::Vector2d(1.0, -1.0)) == doctest::Approx(2 * test::log_std_normal(1.0)));
  CHECK_THROWS_AS(g2(0, 0, 1, 1, 1).log_density(Eigen::Vector2d::Zero()), SingularError);
  Eigen::Matrix2d ill;
  ill << 1.0, 0.0, 0.0, 1e-13;
  CHECK_THROWS_AS(precision_of(ill), SingularError);
  Eigen::Matrix2d ok;
  ok << 2.0, 0.5, 0.5, 1.0;
  CHECK((precision_of(ok) * ok - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("information form") {
  const auto d = g2(1, -1, 2, 1, 0.3);
  const auto info = GaussianInformation::from_density(d);
  CHECK(info.is_proper());
  check_same(info.to_density(), d, 1e-12);
  const Eigen::Vector2d x(0.3, 0.7), y(-1.0, 2.0);
  CHECK(info.log_kernel(x) - info.log_kernel(y) == doctest::Approx(d.log_density(x) - d.log_density(y)).epsilon(1e-12));
  CHECK_THROWS_AS(GaussianInformation::zero(2).to_density(), DomainError);
  auto acc = GaussianInformation::zero(2);
  acc.accumulate(GaussianInformation::from_density(g1(0, 1)), {1});
  CHECK(acc.precision(1, 1) == 1.0);
  CHECK_FALSE(acc.is_proper());
}
