#include <cmath>
#include <random>

#include "doctest.h"
#include "support.hpp"

#include "chainmeld/errors.hpp"
#include "chainmeld/normal_approx.hpp"

using namespace chainmeld;

namespace {

SampleStore store_from(const std::vector<Values>& rows) {
  SampleStore s{rows.front().size(), 0};
  for (std::size_t i = 0; i < rows.size(); ++i) s.append(rows[i], 0.0, 0, i);
  return s;
}

GaussianChainParams with_data() {
  GaussianChainParams p;
  p.y1 = {-2.0, -1.4, -3.1};
  p.y2 = {0.5, -0.2};
  p.y3 = {2.2, 3.0};
  return p;
}

PoolSpec p2_dictator() {
  PoolSpec s;
  s.method = PoolingMethod::dictatorial_partial;
  s.authority = 1;
  return s;
}

NormalApproxTarget exact_summaries(const GaussianChainParams& p, NormalApproxMode mode) {
  return build_normal_approx_target(builtin_gaussian_chain(p), gaussian_end_posterior(p, 0), gaussian_prior_marginal(p, 0),
                                    gaussian_end_posterior(p, 2), gaussian_prior_marginal(p, 2), mode);
}

// Max |(a - b) - c| over a 3-D grid, with c the difference at the first point.
double spread_on_grid(const std::function<double(ConstValues)>& a, const std::function<double(ConstValues)>& b) {
  double c0 = NAN, worst = 0.0;
  for (int i = 0; i < 30; ++i)
    for (int j = 0; j < 30; ++j)
      for (int k = 0; k < 30; ++k) {
        const Values x{-6.0 + 0.4 * i, -6.0 + 0.4 * j, -4.0 + 0.27 * k};
        const double d = a(x) - b(x);
        if (std::isnan(c0)) c0 = d;
        worst = std::max(worst, std::abs(d - c0));
      }
  return worst;
}

}  // namespace

TEST_CASE("moment fit of identical samples is degenerate") {
  const auto s = store_from(std::vector<Values>(50, Values{1.0, 2.0}));
  CHECK_THROWS_AS(fit_gaussian_moments(s, BlockSelector::phi_of(s)), SingularError);
}

TEST_CASE("moment fit of collinear samples is degenerate") {
  std::vector<Values> rows;
  for (int i = 0; i < 100; ++i) rows.push_back({0.1 * i, 0.2 * i});
  const auto s = store_from(rows);
  CHECK_THROWS_AS(fit_gaussian_moments(s, BlockSelector::phi_of(s)), SingularError);
}

TEST_CASE("moment fit of N(2, 3) draws") {
  auto rng = make_stream(1, 0);
  std::normal_distribution<double> z(2.0, std::sqrt(3.0));
  std::vector<Values> rows;
  for (int i = 0; i < 100000; ++i) rows.push_back({z(rng)});
  const auto s = store_from(rows);
  const auto g = fit_gaussian_moments(s, BlockSelector::phi_of(s));
  CHECK(std::abs(g.mean(0) - 2.0) < 0.05);
  CHECK(std::abs(g.cov(0, 0) - 3.0) < 0.1);
  const auto shape = marginal_shape(s, BlockSelector::phi_of(s));
  REQUIRE(shape.size() == 1);
  CHECK(std::abs(shape[0].skewness) < 0.05);
  CHECK(std::abs(shape[0].excess_kurtosis) < 0.1);
}

TEST_CASE("moment fit of p2 draws recovers the 0.8 correlation") {
  const auto p2 = gaussian_prior_marginal(GaussianChainParams{}, 1);
  const Eigen::MatrixXd l = p2.cov.llt().matrixL();
  auto rng = make_stream(2, 0);
  std::normal_distribution<double> z;
  std::vector<Values> rows;
  for (int i = 0; i < 20000; ++i) {
    const Eigen::Vector2d x = p2.mean + l * Eigen::Vector2d(z(rng), z(rng));
    rows.push_back({x(0), x(1)});
  }
  const auto s = store_from(rows);
  CHECK(std::abs(fit_gaussian_moments(s, BlockSelector::phi_of(s)).correlation(0, 1) - 0.8) < 0.02);
}

TEST_CASE("moment fit rejects discrete coordinates and bad selectors") {
  const auto s = store_from({{0.0}, {1.0}, {0.0}});
  CHECK_THROWS_AS(fit_gaussian_moments(s, BlockSelector{0, 1, {CoordinateSupport::discrete(2)}}), UnsupportedError);
  CHECK_THROWS_AS(fit_gaussian_moments(s, BlockSelector{0, 2, {}}), StructuralError);
}

TEST_CASE("approximate target equals the exact melded density on a gaussian chain") {
  const auto p = with_data();
  const auto m = builtin_gaussian_chain(p);
  const PooledPrior pool(m, p2_dictator());
  const auto t = exact_summaries(p, NormalApproxMode::ratio);
  auto exact = [&](ConstValues x) { return log_melded_density(m, pool, PhiVector{{{x[0]}, {x[1]}}}, PsiVector{{{}, {x[2]}, {}}}); };
  CHECK(spread_on_grid(t.log_density, exact) < 1e-8);
}

TEST_CASE("posterior equal to prior: ratio mode is improper, poe-flat-prior keeps the prior") {
  const GaussianChainParams p;  // no data
  const auto m = builtin_gaussian_chain(p);
  try {
    exact_summaries(p, NormalApproxMode::ratio);
    FAIL("expected an improper-ratio error");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()).find("phi12") != std::string::npos);
  }
  const auto t = exact_summaries(p, NormalApproxMode::poe_flat_prior);
  const auto prior = block_diag_stack({gaussian_prior_marginal(p, 0), gaussian_prior_marginal(p, 2)});
  auto expected = [&](ConstValues x) {
    return prior.log_density(Eigen::Vector2d(x[0], x[1])) + m.submodels[1].log_joint(x.first(2), x.subspan(2));
  };
  CHECK(spread_on_grid(t.log_density, expected) < 1e-10);
}

TEST_CASE("posterior wider than prior names the offending block") {
  const auto m = builtin_gaussian_chain({});
  const auto narrow = GaussianDensity::scalar(0, 1), wide = GaussianDensity::scalar(0, 2);
  try {
    build_normal_approx_target(m, GaussianDensity::scalar(0, 0.5), narrow, wide, narrow, NormalApproxMode::ratio);
    FAIL("expected an improper-ratio error");
  } catch (const DomainError& e) {
    CHECK(std::string(e.what()) == "improper posterior/prior ratio for block phi23");
  }
}

TEST_CASE("scalar worked case: factor N(2, 1) for phi12") {
  const auto m = builtin_gaussian_chain({});
  // A proper g3 ratio N(0,0.5)/N(0,1) = N(0,1); identical g3 terms would be flagged improper.
  const auto t = build_normal_approx_target(m, GaussianDensity::scalar(1, 0.5), GaussianDensity::scalar(0, 1),
                                            GaussianDensity::scalar(0, 0.5), GaussianDensity::scalar(0, 1), NormalApproxMode::ratio);
  CHECK(t.factor.mean(0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(t.factor.cov(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(t.factor.cov(0, 1) == 0.0);
  // grid cross-check of the phi12 factor: the target's phi12 profile minus log p2
  auto profile = [&](double x) {
    const Values v{x, 0.0, 0.0};
    return t.log_density(v) - m.submodels[1].log_joint(ConstValues(v).first(2), ConstValues(v).subspan(2));
  };
  for (double x : {-1.0, 0.5, 3.0}) CHECK(profile(x) - profile(2.0) == doctest::Approx(-0.5 * (x - 2.0) * (x - 2.0)).epsilon(1e-12));
}

TEST_CASE("ratio mode with a very diffuse prior approaches poe-flat-prior") {
  const auto p = with_data();
  const auto m = builtin_gaussian_chain(p);
  auto diffuse = [](GaussianDensity g) {
    g.cov *= 1e6;
    return g;
  };
  const auto ratio = build_normal_approx_target(m, gaussian_end_posterior(p, 0), diffuse(gaussian_prior_marginal(p, 0)),
                                                gaussian_end_posterior(p, 2), diffuse(gaussian_prior_marginal(p, 2)),
                                                NormalApproxMode::ratio);
  const auto flat = exact_summaries(p, NormalApproxMode::poe_flat_prior);
  CHECK((ratio.factor.mean - flat.factor.mean).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("sampling the approximate and exact targets gives the same means") {
  const auto p = with_data();
  const auto m = builtin_gaussian_chain(p);
  const PooledPrior pool(m, p2_dictator());
  const auto t = exact_summaries(p, NormalApproxMode::ratio);
  MHKernelConfig k;
  k.default_scale = 0.5;
  RunSettings s;
  s.iterations = 22000;
  s.chains = 4;
  s.seed = 5;
  const auto approx = run_normal_approx(m, t, k, s);
  CHECK(approx.columns == std::vector<std::string>{"phi12", "phi23", "psi2"});
  CHECK(approx.acceptance.contains("normal_approx"));
  auto exact_target = [&](ConstValues x) {
    return log_melded_density(m, pool, PhiVector{{{x[0]}, {x[1]}}}, PsiVector{{{}, {x[2]}, {}}});
  };
  Support sup(3, CoordinateSupport::real());
  const auto exact = run_mh(exact_target, sup, {"phi12", "phi23", "psi2"}, 2, k, s, streams::generic + 100);
  for (std::size_t c = 0; c < 3; ++c) {
    CAPTURE(c);
    Traces e(4);
    for (std::size_t i = 0; i < exact.size(); ++i) e[exact.chain[i]].push_back(exact.row(i)[c]);
    const auto a = approx.column_by_chain(c);
    const double se = std::hypot(test::mcse_mean(a), test::mcse_mean(e));
    CHECK(std::abs(test::mean(test::flatten(a)) - test::mean(test::flatten(e))) < 3.0 * se);
  }
}

TEST_CASE("normal approximation rejects discrete chains and unknown modes") {
  const auto d = builtin_discrete_chain({});
  const auto g = GaussianDensity::scalar(0, 1);
  CHECK_THROWS_AS(build_normal_approx_target(d, g, g, g, g, NormalApproxMode::poe_flat_prior), UnsupportedError);
  CHECK_THROWS_AS(normal_approx_mode_from_string("laplace"), ConfigurationError);
  CHECK(normal_approx_mode_from_string("poe-flat-prior") == NormalApproxMode::poe_flat_prior);
  CHECK(to_string(NormalApproxMode::ratio) == "ratio");
}
