#include <algorithm>
#include <cmath>
#include <numeric>

#include <omp.h>

#include "doctest.h"
#include "support.hpp"

#include "chainmeld/builtin.hpp"
#include "chainmeld/errors.hpp"
#include "chainmeld/samplers.hpp"

using namespace chainmeld;

namespace {

PoolSpec log_half() {
  PoolSpec s;
  s.method = PoolingMethod::logarithmic;
  s.weights.per_submodel = {0.5, 0.5, 0.5};
  return s;
}

RunSettings settings(std::size_t iterations, std::size_t chains, std::uint64_t seed) {
  RunSettings s;
  s.iterations = iterations;
  s.chains = chains;
  s.seed = seed;
  return s;
}

struct Parallel {
  SampleStore s1, s3;
  MeldedChainOutput out;
};

// Stage one with `stage_one_iters` per chain (4 chains), then stage two.
Parallel run_parallel(const ChainModel& m, const PoolFactorization& f, std::size_t stage_one_iters,
                      std::size_t stage_two_iters, std::size_t chains, std::uint64_t seed, bool unitwise = false) {
  Parallel p;
  const MHKernelConfig flip{ProposalKind::random_walk};
  std::tie(p.s1, p.s3) = run_stage_one_pair(m, f, flip, flip, settings(stage_one_iters, 4, seed), settings(stage_one_iters, 4, seed));
  const auto s2 = settings(stage_two_iters, chains, seed);
  p.out = unitwise ? run_parallel_stage_two_unitwise(m, f, p.s1, p.s3, flip, s2)
                   : run_parallel_stage_two(m, f, p.s1, p.s3, flip, s2);
  return p;
}

// Subposterior of (phi12, psi1) of a single-unit discrete submodel 1, from its joint table.
std::vector<double> first_subposterior(const DiscreteChainTables& t) {
  auto p = t.joint1[0];
  const double z = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= z;
  return p;
}

std::vector<double> store_table(const SampleStore& s, std::size_t cardinality) {
  std::vector<double> p(cardinality * cardinality, 0.0);
  for (std::size_t i = 0; i < s.size(); ++i) p[static_cast<std::size_t>(s.row(i)[0]) * cardinality + static_cast<std::size_t>(s.row(i)[1])] += 1.0;
  for (auto& v : p) v /= static_cast<double>(s.size());
  return p;
}

// Makes submodel 2 flat: joint and marginal identically zero in log space.
void flatten_submodel(ChainModel& m, std::size_t k) {
  m.submodels[k].log_joint = [](ConstValues, ConstValues) { return 0.0; };
  m.submodels[k].log_prior_marginal = [](ConstValues) { return 0.0; };
  m.submodels[k].unit_factorization.reset();
}

double ks_normal(std::vector<double> x, double mean, double sd) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = 0.5 * std::erfc(-(x[i] - mean) / (sd * std::sqrt(2.0)));
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

}  // namespace

TEST_CASE("zero-scale random walk always accepts and stays put") {
  Rng rng = make_stream(1, 0);
  std::vector<double> x{0.3, 1.5};
  const Support sup{CoordinateSupport::real(), CoordinateSupport::positive()};
  auto target = [](ConstValues v) { return -v[0] * v[0] - v[1]; };
  double cur = target(x);
  MHKernelConfig k;
  k.default_scale = 0.0;
  for (int i = 0; i < 100; ++i) CHECK(mh_step(x, cur, target, k, sup, rng));
  CHECK(x == std::vector<double>{0.3, 1.5});
}

TEST_CASE("symmetric flip on a 2-state target reaches (2/3, 1/3)") {
  Rng rng = make_stream(2, 0);
  std::vector<double> x{0.0};
  const Support sup{CoordinateSupport::discrete(2)};
  auto target = [](ConstValues v) { return v[0] == 0.0 ? std::log(2.0 / 3.0) : std::log(1.0 / 3.0); };
  double cur = target(x);
  const MHKernelConfig k{ProposalKind::discrete_flip};
  std::vector<double> freq(2, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    mh_step(x, cur, target, k, sup, rng);
    freq[static_cast<std::size_t>(x[0])] += 1.0 / n;
  }
  CHECK(tv_distance(freq, {2.0 / 3.0, 1.0 / 3.0}) < 0.02);
}

TEST_CASE("-inf proposals are always rejected") {
  Rng rng = make_stream(3, 0);
  std::vector<double> x{0.0};
  auto target = [](ConstValues v) { return v[0] == 0.0 ? 0.0 : kNegInf; };
  double cur = 0.0;
  MHKernelConfig k;
  k.default_scale = 1.0;
  for (int i = 0; i < 1000; ++i) CHECK_FALSE(mh_step(x, cur, target, k, {CoordinateSupport::real()}, rng));
  CHECK(x[0] == 0.0);
}

TEST_CASE("positive coordinates stay positive") {
  Rng rng = make_stream(4, 0);
  std::vector<double> x{1.0};
  auto target = [](ConstValues v) { return -v[0]; };  // Exp(1)
  double cur = target(x);
  MHKernelConfig k;
  k.default_scale = 1.0;
  double sum = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    mh_step(x, cur, target, k, {CoordinateSupport::positive()}, rng);
    REQUIRE(x[0] > 0.0);
    sum += x[0];
  }
  CHECK(sum / n == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("mh_step argument errors") {
  Rng rng = make_stream(5, 0);
  std::vector<double> x{0.0};
  double cur = 0.0;
  auto target = [](ConstValues) { return 0.0; };
  CHECK_THROWS_AS(mh_step(x, cur, target, MHKernelConfig{ProposalKind::empirical_resample}, {CoordinateSupport::real()}, rng),
                  UnsupportedError);
  CHECK_THROWS_AS(mh_step(x, cur, target, MHKernelConfig{ProposalKind::discrete_flip}, {CoordinateSupport::real()}, rng),
                  ConfigurationError);
  CHECK_THROWS_AS(mh_step(x, cur, target, MHKernelConfig{}, {}, rng), StructuralError);
}

TEST_CASE("run_mh init failure and settings errors") {
  auto nowhere = [](ConstValues) { return kNegInf; };
  CHECK_THROWS_AS(run_mh(nowhere, {CoordinateSupport::real()}, {"x"}, 1, {}, settings(200, 1, 1), streams::generic),
                  InitializationError);
  auto flat = [](ConstValues) { return 0.0; };
  auto s = settings(100, 1, 1);
  s.warmup = 100;
  CHECK_THROWS_AS(run_mh(flat, {CoordinateSupport::real()}, {"x"}, 1, {}, s, streams::generic), ConfigurationError);
  s = settings(100, 0, 1);
  CHECK_THROWS_AS(run_mh(flat, {CoordinateSupport::real()}, {"x"}, 1, {}, s, streams::generic), ConfigurationError);
}

TEST_CASE("stage one on a conjugate gaussian submodel matches the conjugate posterior") {
  GaussianChainParams g;
  g.y1 = {-1.0, -0.4, 0.3, -2.2};
  const auto m = builtin_gaussian_chain(g);
  const PooledPrior pool(m, PoolSpec{PoolingMethod::poe});
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  MHKernelConfig k;
  k.default_scale = 1.0;
  const auto s = run_stage_one(m, StageOneTarget::first, f, k, settings(22000, 4, 11));
  const auto post = gaussian_end_posterior(g, 0);
  Traces t(4);
  for (std::size_t i = 0; i < s.size(); ++i) t[s.chain[i]].push_back(s.row(i)[0]);
  CHECK(std::abs(test::mean(test::flatten(t)) - post.mean(0)) < 3.0 * test::mcse_mean(t));
  CHECK(std::abs(test::variance(test::flatten(t)) - post.cov(0, 0)) < 3.0 * test::mcse_variance(t));
  CHECK(s.labels == std::vector<std::string>{"phi12"});
  CHECK(s.size() == 4 * (22000 - 2200));
  // Cached target values are reproducible.
  for (std::size_t i = 0; i < s.size(); i += 997) {
    const Values x{s.row(i)[0]};
    CHECK(s.log_density[i] == m.submodels[0].log_joint(x, {}));
  }
}

TEST_CASE("stage one with a flat likelihood draws from the prior") {
  const auto m = builtin_gaussian_chain({});  // no data: joint is the prior
  const PooledPrior pool(m, PoolSpec{PoolingMethod::poe});
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  MHKernelConfig k;
  k.default_scale = 2.4;
  auto s = settings(25000 * 10 + 1000, 1, 5);
  s.warmup = 1000;
  s.thin = 25;
  const auto store = run_stage_one(m, StageOneTarget::last, f, k, s);
  REQUIRE(store.size() == 10000);
  std::vector<double> x(store.draws.begin(), store.draws.end());
  CHECK(ks_normal(x, 2.5, 1.0) < 1.36 / std::sqrt(10000.0));
}

TEST_CASE("stage one on a discrete submodel matches its subposterior") {
  DiscreteChainParams p;
  p.table_seed = 8;
  const auto tables = discrete_chain_tables(p);
  const auto m = discrete_chain_from_tables(p, tables);
  const PooledPrior pool(m, log_half());
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  const auto s = run_stage_one(m, StageOneTarget::first, f, MHKernelConfig{ProposalKind::random_walk}, settings(55000, 4, 3));
  CHECK(tv_distance(store_table(s, 2), first_subposterior(tables)) < 0.02);
  CHECK(s.acceptance.proposed == 4 * 55000);
}

TEST_CASE("flat p2 and flat pool2: every end proposal is accepted") {
  DiscreteChainParams p;
  p.table_seed = 21;
  const auto tables = discrete_chain_tables(p);
  auto m = discrete_chain_from_tables(p, tables);
  flatten_submodel(m, 1);
  PoolFactorization f;
  f.mode = FactorizationMode::custom;
  f.pool1 = [s = m.submodels[0]](ConstValues x) { return s.eval_log_prior_marginal(x); };
  f.pool3 = [s = m.submodels[2]](ConstValues x) { return s.eval_log_prior_marginal(x); };
  f.pool2 = [](ConstValues, ConstValues) { return 0.0; };
  const auto r = run_parallel(m, f, 30000, 60000, 2, 17);
  CHECK(r.out.acceptance.at("phi12_psi1").rate() == 1.0);
  CHECK(r.out.acceptance.at("phi23_psi3").rate() == 1.0);
  // phi12 marginal of the output against the stage-one store's
  std::vector<double> out12(2, 0.0), st12(2, 0.0);
  for (std::size_t i = 0; i < r.out.rows(); ++i) out12[static_cast<std::size_t>(r.out.row(i)[0])] += 1.0 / r.out.rows();
  for (std::size_t i = 0; i < r.s1.size(); ++i) st12[static_cast<std::size_t>(r.s1.row(i)[0])] += 1.0 / r.s1.size();
  CHECK(tv_distance(out12, st12) < 0.02);
}

TEST_CASE("parallel sampler on the discrete toy matches enumeration") {
  DiscreteChainParams p;
  p.table_seed = 4;
  const auto m = builtin_discrete_chain(p);
  const PooledPrior pool(m, log_half());
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  const auto r = run_parallel(m, f, 55000, 55000, 4, 9);  // 4 x 49500 post-warmup
  REQUIRE(r.out.rows() >= 198000);
  const auto table = enumerate_melded_posterior(m, pool);
  CHECK(tv_distance(empirical_table(r.out, table), table.probability) < 0.02);
  for (const auto& [key, acc] : r.out.acceptance) {
    CHECK(acc.rate() >= 0.0);
    CHECK(acc.rate() <= 1.0);
  }
}

TEST_CASE("flat-ends factorization gives the same law") {
  DiscreteChainParams p;
  p.table_seed = 4;
  const auto m = builtin_discrete_chain(p);
  const PooledPrior pool(m, log_half());
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::flat_ends);
  const auto r = run_parallel(m, f, 55000, 55000, 4, 10);
  const auto table = enumerate_melded_posterior(m, pool);
  CHECK(tv_distance(empirical_table(r.out, table), table.probability) < 0.02);
}

TEST_CASE("unitwise with a single unit reproduces the blocked chain") {
  const auto m = builtin_discrete_chain({});
  const PooledPrior pool(m, log_half());
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  const auto a = run_parallel(m, f, 3000, 3000, 2, 12, false);
  const auto b = run_parallel(m, f, 3000, 3000, 2, 12, true);
  CHECK(a.out == b.out);
}

TEST_CASE("three-unit toy: unitwise matches enumeration and blocked") {
  DiscreteChainParams p;
  p.units1 = 3;
  p.kpsi1 = 0;
  p.kpsi2 = 0;
  p.table_seed = 6;
  const auto m = builtin_discrete_chain(p);
  const PooledPrior pool(m, log_half());
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  const auto table = enumerate_melded_posterior(m, pool);
  REQUIRE(table.size() == 32);
  const auto u = run_parallel(m, f, 110000, 110000, 4, 14, true);
  const auto b = run_parallel(m, f, 110000, 110000, 4, 15, false);
  CHECK(tv_distance(empirical_table(u.out, table), table.probability) < 0.02);
  CHECK(u.out.trace.units1 == 3);
  CHECK(u.out.trace.store1.size() == 3 * u.out.rows());
  for (std::size_t k = 0; k < 4; ++k) {
    CAPTURE(k);
    CHECK(tv_distance(test::empirical_marginal(u.out, table, {k}), test::empirical_marginal(b.out, table, {k})) < 0.03);
  }
}

TEST_CASE("unitwise needs a declared unit factorization") {
  const auto m = builtin_gaussian_chain({});
  const PooledPrior pool(m, PoolSpec{PoolingMethod::poe});
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  const auto s1 = run_stage_one(m, StageOneTarget::first, f, {}, settings(200, 1, 1));
  const auto s3 = run_stage_one(m, StageOneTarget::last, f, {}, settings(200, 1, 1));
  CHECK_THROWS_AS(run_parallel_stage_two_unitwise(m, f, s1, s3, {}, settings(200, 1, 1)), ConfigurationError);
  CHECK_THROWS_AS(run_parallel_stage_two(m, f, SampleStore{1, 0}, s3, {}, settings(200, 1, 1)), ConfigurationError);
  SampleStore wide{2, 0};
  wide.append(std::vector<double>{0.0, 0.0}, 0.0, 0, 0);
  CHECK_THROWS_AS(run_parallel_stage_two(m, f, wide, s3, {}, settings(200, 1, 1)), StructuralError);
}

TEST_CASE("index trace reconstructs the tracked psi") {
  DiscreteChainParams p;
  p.units1 = 2;
  p.units3 = 2;
  p.table_seed = 2;
  const auto m = builtin_discrete_chain(p);
  const PooledPrior pool(m, log_half());
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  for (bool unitwise : {false, true}) {
    const auto r = run_parallel(m, f, 4000, 4000, 2, 31, unitwise);
    const auto units1 = r.out.trace.units1, units3 = r.out.trace.units3;
    for (std::size_t row = 0; row < r.out.rows(); ++row) {
      const auto psi = r.out.psi_at(row);
      REQUIRE(reconstruct_psi_from_trace(r.s1, r.out.trace, row, true, units1) == psi.parts[0]);
      REQUIRE(reconstruct_psi_from_trace(r.s3, r.out.trace, row, false, units3) == psi.parts[2]);
    }
  }
}

TEST_CASE("sampler output does not depend on the thread count") {
  const auto m = builtin_discrete_chain({});
  const PooledPrior pool(m, log_half());
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  const auto a = run_parallel(m, f, 3000, 3000, 4, 77);
  omp_set_num_threads(4);
  const auto b = run_parallel(m, f, 3000, 3000, 4, 77);
  const auto c = run_parallel(m, f, 3000, 3000, 4, 78);
  omp_set_num_threads(saved);
  CHECK(a.out == b.out);
  CHECK(a.s1.draws == b.s1.draws);
  CHECK_FALSE(a.out.values == c.out.values);
}

TEST_CASE("parallel stage two never evaluates the end submodels' joints") {
  DiscreteChainParams p;
  p.units1 = 2;
  const auto m = builtin_discrete_chain(p);
  const PooledPrior pool(m, log_half());
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  const MHKernelConfig k;
  const auto [s1, s3] = run_stage_one_pair(m, f, k, k, settings(2000, 2, 1), settings(2000, 2, 1));
  CHECK(m.submodels[0].joint_calls() > 0);
  for (bool unitwise : {false, true}) {
    m.reset_counters();
    const auto out = unitwise ? run_parallel_stage_two_unitwise(m, f, s1, s3, k, settings(2000, 2, 1))
                              : run_parallel_stage_two(m, f, s1, s3, k, settings(2000, 2, 1));
    CHECK(m.submodels[0].joint_calls() == 0);
    CHECK(m.submodels[2].joint_calls() == 0);
    CHECK(m.submodels[1].joint_calls() > 0);
  }
}

TEST_CASE("sequential stages two and three never evaluate submodel 1's joint") {
  const auto m = builtin_discrete_chain({});
  const PooledPrior pool(m, log_half());
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  const MHKernelConfig k;
  const auto s1 = run_stage_one(m, StageOneTarget::first, f, k, settings(2000, 2, 1));
  m.reset_counters();
  const auto s2 = run_sequential_stage_two(m, f, s1, k, settings(2000, 2, 1));
  CHECK(m.submodels[0].joint_calls() == 0);
  CHECK(m.submodels[2].joint_calls() == 0);
  CHECK(m.submodels[1].joint_calls() > 0);
  const auto out = run_sequential_stage_three(m, f, s2, k, settings(2000, 2, 1));
  CHECK(m.submodels[0].joint_calls() == 0);
  CHECK(m.submodels[2].joint_calls() > 0);
  CHECK(s2.labels == std::vector<std::string>{"phi12", "phi23", "psi1", "psi2"});
  CHECK(s2.source.size() == s2.size());
}

TEST_CASE("sequential sampler matches enumeration and the parallel sampler") {
  DiscreteChainParams p;
  p.table_seed = 4;
  const auto m = builtin_discrete_chain(p);
  const PooledPrior pool(m, log_half());
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  const MHKernelConfig k;
  SequentialSettings s{settings(55000, 4, 19), settings(55000, 4, 19), settings(55000, 4, 19)};
  SequentialStores stores;
  const auto seq = run_sequential(m, f, {k, k, k}, s, &stores);
  const auto table = enumerate_melded_posterior(m, pool);
  CHECK(tv_distance(empirical_table(seq, table), table.probability) < 0.02);
  for (const auto* key : {"stage1", "stage2", "stage3_phi_psi12", "stage3_psi3"}) CHECK(seq.acceptance.contains(key));

  const auto par = run_parallel(m, f, 55000, 55000, 4, 20);
  for (std::size_t col = 0; col < seq.width(); ++col) {
    CAPTURE(col);
    const auto a = seq.column_by_chain(col), b = par.out.column_by_chain(col);
    const double se = std::hypot(test::mcse_mean(a), test::mcse_mean(b));
    CHECK(std::abs(test::mean(test::flatten(a)) - test::mean(test::flatten(b))) < 3.0 * se);
  }

  // psi1 of each row comes from the stage-one store via the recorded indices.
  for (std::size_t r = 0; r < seq.rows(); r += 101) {
    CHECK(reconstruct_psi_from_trace(stores.stage1, seq.trace, r, true, 1) == seq.psi_at(r).parts[0]);
    CHECK(stores.stage2.psi(seq.trace.intermediate[r])[0] == seq.psi_at(r).parts[0][0]);
  }
}

TEST_CASE("sequential with flat p2 and p3 returns the stage-one subposterior") {
  DiscreteChainParams p;
  p.table_seed = 30;
  const auto tables = discrete_chain_tables(p);
  auto m = discrete_chain_from_tables(p, tables);
  flatten_submodel(m, 1);
  flatten_submodel(m, 2);
  PoolFactorization f;
  f.mode = FactorizationMode::custom;
  f.pool1 = [s = m.submodels[0]](ConstValues x) { return s.eval_log_prior_marginal(x); };
  f.pool2 = [](ConstValues, ConstValues) { return 0.0; };
  f.pool3 = [](ConstValues) { return 0.0; };
  const MHKernelConfig k;
  SequentialSettings s{settings(55000, 4, 23), settings(55000, 4, 23), settings(55000, 4, 23)};
  const auto out = run_sequential(m, f, {k, k, k}, s);
  std::vector<double> emp(4, 0.0);
  const auto c12 = out.column_index("phi12"), c1 = out.column_index("psi1");
  for (std::size_t r = 0; r < out.rows(); ++r)
    emp[static_cast<std::size_t>(out.row(r)[c12]) * 2 + static_cast<std::size_t>(out.row(r)[c1])] += 1.0 / out.rows();
  CHECK(tv_distance(emp, first_subposterior(tables)) < 0.02);
}

TEST_CASE("sampler argument errors") {
  const auto m = builtin_discrete_chain({});
  const PooledPrior pool(m, log_half());
  const auto f = factorize_for_sampler(m, pool, FactorizationMode::subprior_ends);
  const auto s1 = run_stage_one(m, StageOneTarget::first, f, {}, settings(200, 1, 1));
  CHECK_THROWS_AS(run_sequential_stage_two(m, f, SampleStore{1, 1}, {}, settings(200, 1, 1)), ConfigurationError);
  CHECK_THROWS_AS(run_stage_one(m, StageOneTarget::first, f, MHKernelConfig{ProposalKind::empirical_resample}, settings(200, 1, 1)),
                  ConfigurationError);
  CHECK_THROWS_AS(run_parallel_stage_two(m, f, s1, s1, MHKernelConfig{ProposalKind::empirical_resample}, settings(200, 1, 1)),
                  ConfigurationError);
  PoolFactorization broken = f;
  broken.pool2 = nullptr;
  CHECK_THROWS_AS(run_parallel_stage_two(m, broken, s1, s1, {}, settings(200, 1, 1)), ConfigurationError);
}
