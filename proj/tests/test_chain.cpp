#include <cmath>
#include <limits>

#include "doctest.h"
#include "support.hpp"

#include "chainmeld/chain.hpp"
#include "chainmeld/errors.hpp"
#include "chainmeld/pooling.hpp"

using namespace chainmeld;

namespace {

PooledPrior poe(const ChainModel& m) { return PooledPrior(m, PoolSpec{PoolingMethod::poe}); }

PooledPrior log_pool(const ChainModel& m, std::vector<double> lambda) {
  PoolSpec spec;
  spec.method = PoolingMethod::logarithmic;
  spec.weights.per_submodel = std::move(lambda);
  return PooledPrior(m, spec);
}

PhiVector phi2(double a, double b) { return PhiVector{{{a}, {b}}}; }
PsiVector psi3(double a, double b, double c) { return PsiVector{{{a}, {b}, {c}}}; }

}  // namespace

TEST_CASE("validate_chain accepts a wired gaussian chain") {
  CHECK(validate_chain(builtin_gaussian_chain({})).empty());
}

TEST_CASE("validate_chain reports a dim mismatch at boundary 2") {
  auto m = builtin_gaussian_chain({});
  m.submodels[1].right_dim = 2;
  const auto report = validate_chain(m);
  REQUIRE_FALSE(report.empty());
  bool found = false;
  for (const auto& r : report) found = found || r.find("block dim mismatch at boundary 2") != std::string::npos;
  CHECK(found);
}

TEST_CASE("validate_chain rejects a single submodel") {
  auto m = builtin_gaussian_chain({});
  m.submodels.resize(1);
  m.phi_blocks.clear();
  const auto report = validate_chain(m);
  REQUIRE(report.size() == 1);
  CHECK(report[0] == "chain requires M >= 2");
}

TEST_CASE("validate_chain reports missing evaluators and bad supports") {
  auto m = builtin_gaussian_chain({});
  m.submodels[1].log_prior_marginal = nullptr;
  m.phi_blocks[0].support = {CoordinateSupport::discrete(1)};
  m.phi_blocks[1].label = "phi12";
  const auto report = validate_chain(m);
  CHECK(report.size() >= 3);
  CHECK_THROWS_AS(require_valid(m), StructuralError);
}

TEST_CASE("uniform discrete chain gives a constant melded density") {
  DiscreteChainParams p;
  p.mode = DiscreteTableMode::uniform;
  const auto m = builtin_discrete_chain(p);
  const auto pool = log_pool(m, {0.5, 0.5, 0.5});
  const double ref = log_melded_density(m, pool, phi2(0, 0), psi3(0, 0, 0));
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int s = 0; s < 2; ++s) CHECK(log_melded_density(m, pool, phi2(a, b), psi3(s, 1 - s, s)) == doctest::Approx(ref).epsilon(1e-14));
}

TEST_CASE("PoE melded density equals the sum of submodel joints") {
  const auto m = builtin_discrete_chain(test::two_state_params());
  const auto pool = poe(m);
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int s = 0; s < 8; ++s) {
        const auto phi = phi2(a, b);
        const auto psi = psi3(s & 1, (s >> 1) & 1, (s >> 2) & 1);
        double sum = 0.0;
        for (std::size_t k = 0; k < 3; ++k) sum += m.submodels[k].log_joint(m.phi_of(k, phi), psi.parts[k]);
        CHECK(std::abs(log_melded_density(m, pool, phi, psi) - sum) < 1e-12);
      }
}

TEST_CASE("hand-entered 2-state chain matches the direct table formula") {
  const auto t = test::two_state_tables();
  const auto m = builtin_discrete_chain(test::two_state_params());
  const auto pool = log_pool(m, {0.5, 0.5, 0.5});
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int s1 = 0; s1 < 2; ++s1)
        for (int s2 = 0; s2 < 2; ++s2)
          for (int s3 = 0; s3 < 2; ++s3) {
            const double lp = 0.5 * (std::log(t.marg1[0][a]) + std::log(t.marg2[a * 2 + b]) + std::log(t.marg3[0][b]));
            const double direct = lp + std::log(t.joint1[0][a * 2 + s1]) - std::log(t.marg1[0][a]) +
                                  std::log(t.joint2[(a * 2 + b) * 2 + s2]) - std::log(t.marg2[a * 2 + b]) +
                                  std::log(t.joint3[0][b * 2 + s3]) - std::log(t.marg3[0][b]);
            CHECK(std::abs(log_melded_density(m, pool, phi2(a, b), psi3(s1, s2, s3)) - direct) < 1e-12);
          }
}

TEST_CASE("-inf policy") {
  auto t = test::two_state_tables();
  SUBCASE("a zero joint gives -inf") {
    t.joint1[0][0] = 0.0;
    auto p = test::two_state_params();
    p.tables = t;
    const auto m = builtin_discrete_chain(p);
    CHECK(log_melded_density(m, poe(m), phi2(0, 0), psi3(0, 0, 0)) == -std::numeric_limits<double>::infinity());
  }
  SUBCASE("a zero marginal under a positive joint is an inconsistency") {
    t.marg2 = {0.0, 0.3, 0.5, 0.2};
    auto p = test::two_state_params();
    p.tables = t;
    const auto m = builtin_discrete_chain(p);
    CHECK_THROWS_AS(log_melded_density(m, log_pool(m, {1, 0, 1}), phi2(0, 0), psi3(0, 0, 0)), ModelInconsistencyError);
  }
  SUBCASE("NaN is a numerical error") {
    auto m = builtin_gaussian_chain({});
    m.submodels[2].log_joint = [](ConstValues, ConstValues) { return std::nan(""); };
    CHECK_THROWS_AS(log_melded_density(m, poe(builtin_gaussian_chain({})), phi2(0, 0), PsiVector{{{}, {0.0}, {}}}),
                    NumericalError);
  }
  SUBCASE("wrong dimensions are structural errors") {
    const auto m = builtin_gaussian_chain({});
    CHECK_THROWS_AS(log_melded_density(m, poe(m), PhiVector{{{0.0, 1.0}, {0.0}}}, PsiVector{{{}, {0.0}, {}}}),
                    StructuralError);
    CHECK_THROWS_AS(log_melded_density(m, poe(m), phi2(0, 0), PsiVector{{{}, {}, {}}}), StructuralError);
  }
}

TEST_CASE("Markov combination equals complete dictatorial melding up to a constant") {
  // Identical shared priors: p2's block marginals equal p1's and p3's priors.
  GaussianChainParams g;
  g.mu1 = 0.3;
  g.mu3 = -0.7;
  g.mu2 = {0.3, -0.7};
  g.rho = 0.0;
  g.y1 = {0.5};
  g.y2 = {1.0, -0.2};
  g.y3 = {-1.1};
  const auto m = builtin_gaussian_chain(g);
  PoolSpec spec;
  spec.method = PoolingMethod::dictatorial_complete;
  spec.choices = {BoundaryChoice::left, BoundaryChoice::right};
  const PooledPrior pool(m, spec);
  const std::vector<LogMarginalFn> shared{[&](ConstValues x) { return test::log_normal(x[0], g.mu1, g.sigma2); },
                                          [&](ConstValues x) { return test::log_normal(x[0], g.mu3, g.sigma2); }};
  const PsiVector psi{{{}, {0.4}, {}}};
  const double c0 = log_melded_density(m, pool, phi2(0, 0), psi) - markov_combination_density(m, shared, phi2(0, 0), psi);
  for (double a : {-2.0, -0.5, 1.5})
    for (double b : {-1.0, 0.25, 2.0}) {
      const PsiVector s{{{}, {a * b}, {}}};
      const double d = log_melded_density(m, pool, phi2(a, b), s) - markov_combination_density(m, shared, phi2(a, b), s);
      CHECK(std::abs(d - c0) < 1e-10);
    }
}

TEST_CASE("Markov combination on a two-submodel slice with a flat prior") {
  auto g = builtin_gaussian_chain({});
  ChainModel m;
  m.phi_blocks = {g.phi_blocks[0]};
  auto s1 = g.submodels[0];
  auto s2 = g.submodels[2];
  s2.left_dim = 1;
  m.submodels = {s1, s2};
  const std::vector<LogMarginalFn> flat{[](ConstValues) { return 0.0; }};
  const PhiVector phi{{{0.7}}};
  const PsiVector psi{{{}, {}}};
  CHECK(markov_combination_density(m, flat, phi, psi) ==
        doctest::Approx(s1.log_joint(phi.blocks[0], {}) + s2.log_joint(phi.blocks[0], {})).epsilon(1e-14));
}

TEST_CASE("Markov combination on the discrete toy matches direct tables") {
  const auto t = test::two_state_tables();
  const auto m = builtin_discrete_chain(test::two_state_params());
  const std::vector<LogMarginalFn> shared{[](ConstValues x) { return std::log(x[0] == 0 ? 0.4 : 0.6); },
                                          [](ConstValues x) { return std::log(x[0] == 0 ? 0.7 : 0.3); }};
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const double direct = std::log(t.joint1[0][a * 2 + 1]) + std::log(t.joint2[(a * 2 + b) * 2]) +
                            std::log(t.joint3[0][b * 2 + 1]) - std::log(a == 0 ? 0.4 : 0.6) - std::log(b == 0 ? 0.7 : 0.3);
      CHECK(std::abs(markov_combination_density(m, shared, phi2(a, b), psi3(1, 0, 1)) - direct) < 1e-12);
    }
}

TEST_CASE("melded conditional of psi_m depends only on phi_m") {
  DiscreteChainParams p;
  p.k23 = 3;
  p.table_seed = 5;
  const auto m = builtin_discrete_chain(p);
  const auto table = enumerate_melded_posterior(m, log_pool(m, {0.5, 0.5, 0.5}));
  // Columns: phi12, phi23, psi1, psi2, psi3.
  const auto joint = table.marginal({0, 1, 2});  // (phi12, phi23, psi1)
  for (std::size_t a = 0; a < 2; ++a) {
    const auto cond = [&](std::size_t b) {
      const double z = joint[(a * 3 + b) * 2] + joint[(a * 3 + b) * 2 + 1];
      return joint[(a * 3 + b) * 2] / z;
    };
    CHECK(std::abs(cond(0) - cond(1)) < 1e-12);
    CHECK(std::abs(cond(0) - cond(2)) < 1e-12);
  }
}

TEST_CASE("unit factorization matches full evaluation") {
  DiscreteChainParams p;
  p.units1 = 3;
  p.units3 = 2;
  const auto m = builtin_discrete_chain(p);
  const Values phi1{1, 0, 1}, psi1{0, 1, 1};
  CHECK(unit_factorization_gap(m.submodels[0], phi1, psi1) < 1e-12);
  CHECK(unit_factorization_gap(m.submodels[2], Values{0, 1}, Values{1, 0}) < 1e-12);
}

TEST_CASE("evaluation counters count only counted entry points") {
  const auto m = builtin_gaussian_chain({});
  m.reset_counters();
  const double v = 0.0;
  m.submodels[0].eval_log_joint(ConstValues(&v, 1), {});
  m.submodels[0].eval_log_prior_marginal(ConstValues(&v, 1));
  auto copy = m;  // copies share counters
  copy.submodels[0].eval_log_joint(ConstValues(&v, 1), {});
  CHECK(m.submodels[0].joint_calls() == 2);
  CHECK(m.submodels[0].marginal_calls() == 1);
  CHECK(m.submodels[1].joint_calls() == 0);
}
