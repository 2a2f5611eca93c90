#include "chainmeld/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chainmeld/errors.hpp"
#include "chainmeld/parallel.hpp"

namespace chainmeld {

namespace {

constexpr int kInitAttempts = 1000;

double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

std::size_t pick_index(std::size_t n, Rng& rng) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); }

bool accept(double log_alpha, Rng& rng) { return log_alpha >= 0.0 || std::log(uniform01(rng)) < log_alpha; }

double default_value(const CoordinateSupport& c) { return c.kind == SupportKind::positive ? 1.0 : 0.0; }

Values default_init(const Support& support, const std::vector<double>& init) {
  if (!init.empty()) {
    if (init.size() != support.size()) throw ConfigurationError("kernel init has the wrong length");
    return init;
  }
  Values x(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) x[i] = default_value(support[i]);
  return x;
}

Values random_init(const Support& support, Rng& rng) {
  Values x(support.size());
  std::normal_distribution<double> normal(0.0, 2.0);
  for (std::size_t i = 0; i < support.size(); ++i) {
    switch (support[i].kind) {
      case SupportKind::real: x[i] = normal(rng); break;
      case SupportKind::positive: x[i] = std::exp(0.5 * normal(rng)); break;
      case SupportKind::discrete: x[i] = static_cast<double>(pick_index(support[i].cardinality, rng)); break;
    }
  }
  return x;
}

Support concat(const Support& a, const Support& b) {
  Support out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

Values concat(ConstValues a, ConstValues b) {
  Values out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void check_finite_or_neg_inf(double v, const char* what) {
  if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
    throw NumericalError(std::string(what) + " is NaN or +inf");
  }
}

void require_three(const ChainModel& model) {
  require_valid(model);
  if (model.size() != 3) throw UnsupportedError("multi-stage samplers require exactly three submodels");
}

bool recorded(std::size_t it, const RunSettings& s) {
  const auto w = s.warmup_count();
  return it >= w && (it - w) % std::max<std::size_t>(s.thin, 1) == 0;
}

void check_settings(const RunSettings& s) {
  if (s.chains == 0) throw ConfigurationError("at least one chain is required");
  if (s.warmup_count() >= s.iterations) throw ConfigurationError("warmup consumes every iteration");
}

SampleStore merge(std::vector<SampleStore>& parts) {
  SampleStore out;
  out.phi_dim = parts.front().phi_dim;
  out.psi_dim = parts.front().psi_dim;
  out.labels = parts.front().labels;
  for (auto& p : parts) {
    out.draws.insert(out.draws.end(), p.draws.begin(), p.draws.end());
    out.log_density.insert(out.log_density.end(), p.log_density.begin(), p.log_density.end());
    out.chain.insert(out.chain.end(), p.chain.begin(), p.chain.end());
    out.iteration.insert(out.iteration.end(), p.iteration.begin(), p.iteration.end());
    out.source.insert(out.source.end(), p.source.begin(), p.source.end());
    out.acceptance += p.acceptance;
  }
  return out;
}

// One MH chain on a generic target.
SampleStore run_mh_chain(const LogTargetFn& log_target, const Support& support, const std::vector<std::string>& labels,
                         std::size_t phi_dim, const MHKernelConfig& kernel, const RunSettings& settings,
                         std::size_t chain_id, Rng rng) {
  SampleStore store;
  store.phi_dim = phi_dim;
  store.psi_dim = support.size() - phi_dim;
  store.labels = labels;

  Values state = default_init(support, kernel.init);
  double current = log_target(state);
  check_finite_or_neg_inf(current, "log target");
  for (int attempt = 0; current == kNegInf; ++attempt) {
    if (attempt == kInitAttempts) throw InitializationError("no initial state with positive target density found");
    state = random_init(support, rng);
    current = log_target(state);
    check_finite_or_neg_inf(current, "log target");
  }

  for (std::size_t it = 0; it < settings.iterations; ++it) {
    const bool moved = mh_step(state, current, log_target, kernel, support, rng);
    store.acceptance.proposed += 1;
    store.acceptance.accepted += moved ? 1 : 0;
    if (recorded(it, settings)) store.append(state, current, chain_id, it);
  }
  return store;
}

struct StageOneJob {
  LogTargetFn target;
  Support support;
  std::vector<std::string> labels;
  std::size_t phi_dim;
};

StageOneJob stage_one_job(const ChainModel& model, StageOneTarget which, const PoolFactorization& factors) {
  require_three(model);
  const bool first = which == StageOneTarget::first;
  const std::size_t m = first ? 0 : 2;
  const auto& block = model.phi_blocks[first ? 0 : 1];
  const auto& spec = model.submodels[m];
  const auto pool = first ? factors.pool1 : factors.pool3;
  if (!pool) throw ConfigurationError("pool factorization is missing an end factor");

  StageOneJob job;
  job.phi_dim = block.dim;
  job.support = concat(block.support, spec.psi_support);
  job.labels = coordinate_labels(block.label, block.dim);
  const auto psi_labels = model.psi_labels(m);
  job.labels.insert(job.labels.end(), psi_labels.begin(), psi_labels.end());
  const std::size_t d = block.dim;
  const std::string who = "submodel " + std::to_string(m + 1);
  job.target = [spec, pool, d, who](ConstValues x) {
    const auto phi = x.first(d);
    const auto psi = x.subspan(d);
    const double p = pool(phi);
    check_finite_or_neg_inf(p, "pool factor");
    if (p == kNegInf) return kNegInf;
    const double term = replaced_term(spec.eval_log_joint(phi, psi), spec.eval_log_prior_marginal(phi), who);
    return term == kNegInf ? kNegInf : p + term;
  };
  return job;
}

void check_stage_one_kernel(const MHKernelConfig& kernel) {
  if (kernel.proposal == ProposalKind::empirical_resample) {
    throw ConfigurationError("stage one needs a random-walk or discrete-flip kernel");
  }
}

// ----- stage two (parallel sampler) -----------------------------------------

struct UnitLayout {
  std::size_t units = 1;
  std::size_t phi_per_unit = 0;
  std::size_t psi_per_unit = 0;
};

UnitLayout unit_layout(const SubmodelSpec& spec, std::size_t phi_dim, bool unitwise) {
  if (!unitwise) return {1, phi_dim, spec.psi_dim};
  if (!spec.unit_factorization) throw ConfigurationError(spec.name + ": unit factorization undeclared");
  const auto& u = *spec.unit_factorization;
  if (u.units == 0 || u.units * u.phi_per_unit != phi_dim || u.units * u.psi_per_unit != spec.psi_dim) {
    throw ConfigurationError(spec.name + ": unit factorization does not tile the block");
  }
  return {u.units, u.phi_per_unit, u.psi_per_unit};
}

MeldedChainOutput empty_output(const ChainModel& model) {
  MeldedChainOutput out;
  out.phi12_dim = model.phi_blocks[0].dim;
  out.phi23_dim = model.phi_blocks[1].dim;
  out.psi1_dim = model.submodels[0].psi_dim;
  out.psi2_dim = model.submodels[1].psi_dim;
  out.psi3_dim = model.submodels[2].psi_dim;
  for (std::size_t b = 0; b < 2; ++b) {
    for (auto& l : coordinate_labels(model.phi_blocks[b].label, model.phi_blocks[b].dim)) out.columns.push_back(l);
  }
  for (std::size_t m = 0; m < 3; ++m) {
    for (auto& l : model.psi_labels(m)) out.columns.push_back(l);
  }
  return out;
}

void set_column_updates(MeldedChainOutput& out, const std::string& phi12_psi1, const std::string& phi23,
                        const std::string& psi2, const std::string& psi3) {
  std::size_t c = 0;
  auto assign = [&](std::size_t n, const std::string& key) {
    for (std::size_t i = 0; i < n; ++i) out.column_update[out.columns[c++]] = key;
  };
  assign(out.phi12_dim, phi12_psi1);
  assign(out.phi23_dim, phi23);
  assign(out.psi1_dim, phi12_psi1);
  assign(out.psi2_dim, psi2);
  assign(out.psi3_dim, psi3);
}

void merge_outputs(MeldedChainOutput& out, std::vector<MeldedChainOutput>& parts) {
  for (auto& p : parts) {
    out.values.insert(out.values.end(), p.values.begin(), p.values.end());
    out.chain.insert(out.chain.end(), p.chain.begin(), p.chain.end());
    out.iteration.insert(out.iteration.end(), p.iteration.begin(), p.iteration.end());
    out.trace.store1.insert(out.trace.store1.end(), p.trace.store1.begin(), p.trace.store1.end());
    out.trace.store3.insert(out.trace.store3.end(), p.trace.store3.begin(), p.trace.store3.end());
    out.trace.intermediate.insert(out.trace.intermediate.end(), p.trace.intermediate.begin(), p.trace.intermediate.end());
    for (const auto& [k, v] : p.acceptance) out.acceptance[k] += v;
  }
}

void append_row(MeldedChainOutput& out, std::initializer_list<ConstValues> parts, std::size_t chain, std::size_t it) {
  for (auto p : parts) out.values.insert(out.values.end(), p.begin(), p.end());
  out.chain.push_back(chain);
  out.iteration.push_back(it);
}

// Cached pieces of the submodel-2 contribution at the current state.
struct MiddleTerms {
  double pool2 = kNegInf;
  double joint = kNegInf;
  double marginal = kNegInf;
  double term = kNegInf;
  bool finite() const { return pool2 != kNegInf && term != kNegInf; }
};

MiddleTerms eval_middle(const SubmodelSpec& s2, const PoolFactorization& f, const Values& phi12, const Values& phi23,
                        ConstValues psi2) {
  MiddleTerms t;
  t.pool2 = f.pool2(phi12, phi23);
  check_finite_or_neg_inf(t.pool2, "pool2");
  if (t.pool2 == kNegInf) return t;
  const auto phi2 = concat(phi12, phi23);
  t.joint = s2.eval_log_joint(phi2, psi2);
  t.marginal = s2.eval_log_prior_marginal(phi2);
  t.term = replaced_term(t.joint, t.marginal, "submodel 2");
  return t;
}

MeldedChainOutput stage_two_chain(const ChainModel& model, const PoolFactorization& f, const SampleStore& s1,
                                  const SampleStore& s3, const MHKernelConfig& psi2_kernel, const RunSettings& settings,
                                  const UnitLayout& l1, const UnitLayout& l3, std::size_t chain_id) {
  Rng rng = make_stream(settings.seed, streams::stage_two + chain_id);
  const auto& s2 = model.submodels[1];
  MeldedChainOutput out;
  auto& acc1 = out.acceptance["phi12_psi1"];
  auto& acc3 = out.acceptance["phi23_psi3"];
  auto& acc2 = out.acceptance["psi2"];

  std::vector<std::size_t> idx1(l1.units), idx3(l3.units);
  Values phi12, psi1, phi23, psi3, psi2;
  MiddleTerms cur;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kInitAttempts) throw InitializationError("stage two: no initial state with positive melded density");
    const auto k1 = pick_index(s1.size(), rng);
    const auto k3 = pick_index(s3.size(), rng);
    std::fill(idx1.begin(), idx1.end(), k1);
    std::fill(idx3.begin(), idx3.end(), k3);
    phi12.assign(s1.phi(k1).begin(), s1.phi(k1).end());
    psi1.assign(s1.psi(k1).begin(), s1.psi(k1).end());
    phi23.assign(s3.phi(k3).begin(), s3.phi(k3).end());
    psi3.assign(s3.psi(k3).begin(), s3.psi(k3).end());
    psi2 = attempt == 0 ? default_init(s2.psi_support, psi2_kernel.init) : random_init(s2.psi_support, rng);
    cur = eval_middle(s2, f, phi12, phi23, psi2);
    if (cur.finite()) break;
  }

  std::vector<std::size_t> order1(l1.units), order3(l3.units);
  auto update_end = [&](bool first) {
    const auto& store = first ? s1 : s3;
    const auto& layout = first ? l1 : l3;
    auto& order = first ? order1 : order3;
    auto& acc = first ? acc1 : acc3;
    auto& phi = first ? phi12 : phi23;
    auto& psi = first ? psi1 : psi3;
    auto& idx = first ? idx1 : idx3;
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (layout.units > 1) std::shuffle(order.begin(), order.end(), rng);
    for (const auto u : order) {
      const auto k = pick_index(store.size(), rng);
      Values proposal = phi;
      const auto src = store.phi(k).subspan(u * layout.phi_per_unit, layout.phi_per_unit);
      std::copy(src.begin(), src.end(), proposal.begin() + static_cast<std::ptrdiff_t>(u * layout.phi_per_unit));
      acc.proposed += 1;
      const auto next = first ? eval_middle(s2, f, proposal, phi23, psi2) : eval_middle(s2, f, phi12, proposal, psi2);
      if (!next.finite()) continue;
      const double log_alpha = (next.pool2 - cur.pool2) + (next.term - cur.term);
      if (!accept(log_alpha, rng)) continue;
      acc.accepted += 1;
      phi = std::move(proposal);
      const auto psi_src = store.psi(k).subspan(u * layout.psi_per_unit, layout.psi_per_unit);
      std::copy(psi_src.begin(), psi_src.end(), psi.begin() + static_cast<std::ptrdiff_t>(u * layout.psi_per_unit));
      idx[u] = k;
      cur = next;
    }
  };

  for (std::size_t it = 0; it < settings.iterations; ++it) {
    update_end(true);
    update_end(false);
    if (s2.psi_dim > 0) {
      const auto phi2 = concat(phi12, phi23);
      auto target = [&](ConstValues x) { return s2.eval_log_joint(phi2, x); };
      acc2.proposed += 1;
      if (mh_step(psi2, cur.joint, target, psi2_kernel, s2.psi_support, rng)) {
        acc2.accepted += 1;
        cur.term = replaced_term(cur.joint, cur.marginal, "submodel 2");
      }
    }
    if (recorded(it, settings)) {
      append_row(out, {phi12, phi23, psi1, psi2, psi3}, chain_id, it);
      out.trace.store1.insert(out.trace.store1.end(), idx1.begin(), idx1.end());
      out.trace.store3.insert(out.trace.store3.end(), idx3.begin(), idx3.end());
    }
  }
  return out;
}

MeldedChainOutput stage_two(const ChainModel& model, const PoolFactorization& factors, const SampleStore& s1,
                            const SampleStore& s3, const MHKernelConfig& psi2_kernel, const RunSettings& settings,
                            bool unitwise) {
  require_three(model);
  check_settings(settings);
  if (!factors.pool2) throw ConfigurationError("pool factorization is missing pool2");
  if (s1.size() == 0 || s3.size() == 0) throw ConfigurationError("stage-one store is empty");
  if (s1.phi_dim != model.phi_blocks[0].dim || s1.psi_dim != model.submodels[0].psi_dim ||
      s3.phi_dim != model.phi_blocks[1].dim || s3.psi_dim != model.submodels[2].psi_dim) {
    throw StructuralError("stage-one store layout does not match the chain");
  }
  if (psi2_kernel.proposal == ProposalKind::empirical_resample) {
    throw ConfigurationError("psi2 needs a random-walk or discrete-flip kernel");
  }
  const auto l1 = unit_layout(model.submodels[0], s1.phi_dim, unitwise);
  const auto l3 = unit_layout(model.submodels[2], s3.phi_dim, unitwise);

  auto out = empty_output(model);
  out.seed = settings.seed;
  out.num_chains = settings.chains;
  out.trace.units1 = l1.units;
  out.trace.units3 = l3.units;
  set_column_updates(out, "phi12_psi1", "phi23_psi3", "psi2", "phi23_psi3");
  out.acceptance = {{"phi12_psi1", {}}, {"phi23_psi3", {}}, {"psi2", {}}};

  std::vector<MeldedChainOutput> parts(settings.chains);
  FirstException errors;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t c = 0; c < settings.chains; ++c) {
    errors.run([&] { parts[c] = stage_two_chain(model, factors, s1, s3, psi2_kernel, settings, l1, l3, c); });
  }
  errors.rethrow();
  merge_outputs(out, parts);
  return out;
}

}  // namespace

void SampleStore::append(std::span<const double> row_values, double log_target, std::size_t chain_id, std::size_t iter) {
  if (row_values.size() != width()) throw StructuralError("sample row has the wrong width");
  draws.insert(draws.end(), row_values.begin(), row_values.end());
  log_density.push_back(log_target);
  chain.push_back(chain_id);
  iteration.push_back(iter);
}

PhiVector MeldedChainOutput::phi_at(std::size_t r) const {
  const auto x = row(r);
  return PhiVector{{Values(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(phi12_dim)),
                    Values(x.begin() + static_cast<std::ptrdiff_t>(phi12_dim),
                           x.begin() + static_cast<std::ptrdiff_t>(phi12_dim + phi23_dim))}};
}

PsiVector MeldedChainOutput::psi_at(std::size_t r) const {
  const auto x = row(r);
  auto at = phi12_dim + phi23_dim;
  PsiVector psi;
  for (auto d : {psi1_dim, psi2_dim, psi3_dim}) {
    psi.parts.emplace_back(x.begin() + static_cast<std::ptrdiff_t>(at), x.begin() + static_cast<std::ptrdiff_t>(at + d));
    at += d;
  }
  return psi;
}

std::vector<std::vector<double>> MeldedChainOutput::column_by_chain(std::size_t col) const {
  std::vector<std::vector<double>> out(num_chains);
  for (std::size_t r = 0; r < rows(); ++r) out.at(chain[r]).push_back(values[r * width() + col]);
  return out;
}

std::size_t MeldedChainOutput::column_index(const std::string& name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw StructuralError("no column named '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

bool mh_step(std::vector<double>& state, double& current, const LogTargetFn& log_target, const MHKernelConfig& kernel,
             const Support& support, Rng& rng) {
  if (kernel.proposal == ProposalKind::empirical_resample) {
    throw UnsupportedError("empirical-resample proposals are handled by the stage-two samplers");
  }
  if (support.size() != state.size()) throw StructuralError("state and support lengths differ");
  Values proposal = state;
  double log_q_ratio = 0.0;
  std::vector<std::size_t> discrete;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (support[i].is_discrete()) {
      discrete.push_back(i);
      continue;
    }
    if (kernel.proposal != ProposalKind::random_walk) continue;
    const double s = kernel.scale(i);
    if (!(s >= 0.0)) throw ConfigurationError("random-walk scales must be >= 0");
    if (support[i].kind == SupportKind::real) {
      proposal[i] += s * normal(rng);
    } else {
      proposal[i] *= std::exp(s * normal(rng));
      log_q_ratio += std::log(proposal[i] / state[i]);
    }
  }
  if (!discrete.empty()) {
    const auto j = discrete[pick_index(discrete.size(), rng)];
    const auto k = support[j].cardinality;
    auto v = pick_index(k - 1, rng);
    if (static_cast<double>(v) >= state[j]) ++v;
    proposal[j] = static_cast<double>(v);
  } else if (kernel.proposal == ProposalKind::discrete_flip) {
    throw ConfigurationError("discrete-flip kernel on a block without discrete coordinates");
  }

  const double next = log_target(proposal);
  check_finite_or_neg_inf(next, "log target");
  if (next == kNegInf) return false;
  if (!accept(next - current + log_q_ratio, rng)) return false;
  state = std::move(proposal);
  current = next;
  return true;
}

SampleStore run_mh(const LogTargetFn& log_target, const Support& support, std::vector<std::string> labels,
                   std::size_t phi_dim, const MHKernelConfig& kernel, const RunSettings& settings,
                   std::uint64_t stream_base) {
  check_settings(settings);
  if (labels.size() != support.size()) labels = coordinate_labels("x", support.size());
  std::vector<SampleStore> parts(settings.chains);
  FirstException errors;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t c = 0; c < settings.chains; ++c) {
    errors.run([&] {
      parts[c] = run_mh_chain(log_target, support, labels, phi_dim, kernel, settings, c,
                              make_stream(settings.seed, stream_base + c));
    });
  }
  errors.rethrow();
  return merge(parts);
}

SampleStore run_stage_one(const ChainModel& model, StageOneTarget target, const PoolFactorization& factors,
                          const MHKernelConfig& kernel, const RunSettings& settings) {
  check_stage_one_kernel(kernel);
  const auto job = stage_one_job(model, target, factors);
  const auto base = target == StageOneTarget::first ? streams::stage_one_first : streams::stage_one_last;
  return run_mh(job.target, job.support, job.labels, job.phi_dim, kernel, settings, base);
}

std::pair<SampleStore, SampleStore> run_stage_one_pair(const ChainModel& model, const PoolFactorization& factors,
                                                       const MHKernelConfig& kernel1, const MHKernelConfig& kernel3,
                                                       const RunSettings& settings1, const RunSettings& settings3) {
  check_stage_one_kernel(kernel1);
  check_stage_one_kernel(kernel3);
  check_settings(settings1);
  check_settings(settings3);
  const auto job1 = stage_one_job(model, StageOneTarget::first, factors);
  const auto job3 = stage_one_job(model, StageOneTarget::last, factors);
  const std::size_t n1 = settings1.chains;
  const std::size_t total = n1 + settings3.chains;
  std::vector<SampleStore> parts(total);
  FirstException errors;
  // One flat job list so both submodels' chains share the thread pool.
#pragma omp parallel for schedule(dynamic)
  for (std::size_t j = 0; j < total; ++j) {
    errors.run([&] {
      if (j < n1) {
        parts[j] = run_mh_chain(job1.target, job1.support, job1.labels, job1.phi_dim, kernel1, settings1, j,
                                make_stream(settings1.seed, streams::stage_one_first + j));
      } else {
        const auto c = j - n1;
        parts[j] = run_mh_chain(job3.target, job3.support, job3.labels, job3.phi_dim, kernel3, settings3, c,
                                make_stream(settings3.seed, streams::stage_one_last + c));
      }
    });
  }
  errors.rethrow();
  std::vector<SampleStore> first(std::make_move_iterator(parts.begin()),
                                 std::make_move_iterator(parts.begin() + static_cast<std::ptrdiff_t>(n1)));
  std::vector<SampleStore> last(std::make_move_iterator(parts.begin() + static_cast<std::ptrdiff_t>(n1)),
                                std::make_move_iterator(parts.end()));
  return {merge(first), merge(last)};
}

MeldedChainOutput run_parallel_stage_two(const ChainModel& model, const PoolFactorization& factors,
                                         const SampleStore& store1, const SampleStore& store3,
                                         const MHKernelConfig& psi2_kernel, const RunSettings& settings) {
  return stage_two(model, factors, store1, store3, psi2_kernel, settings, false);
}

MeldedChainOutput run_parallel_stage_two_unitwise(const ChainModel& model, const PoolFactorization& factors,
                                                  const SampleStore& store1, const SampleStore& store3,
                                                  const MHKernelConfig& psi2_kernel, const RunSettings& settings) {
  return stage_two(model, factors, store1, store3, psi2_kernel, settings, true);
}

// ----- sequential sampler -------------------------------------------------------

namespace {

SampleStore sequential_stage_two_chain(const ChainModel& model, const PoolFactorization& f, const SampleStore& s1,
                                       const MHKernelConfig& kernel, const RunSettings& settings, std::size_t chain_id) {
  Rng rng = make_stream(settings.seed, streams::sequential_two + chain_id);
  const auto& s2 = model.submodels[1];
  const auto d12 = model.phi_blocks[0].dim;
  const auto d23 = model.phi_blocks[1].dim;
  const auto support = concat(model.phi_blocks[1].support, s2.psi_support);

  SampleStore out;
  out.phi_dim = d12 + d23;
  out.psi_dim = s1.psi_dim + s2.psi_dim;
  AcceptanceCount acc_a, acc_b;

  std::size_t k1 = 0;
  Values phi12, psi1, x;  // x = (phi23, psi2)
  MiddleTerms cur;
  auto split = [&](ConstValues v) { return std::pair{Values(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(d23)), v.subspan(d23)}; };
  for (int attempt = 0;; ++attempt) {
    if (attempt == kInitAttempts) throw InitializationError("sequential stage two: no initial state with positive density");
    k1 = pick_index(s1.size(), rng);
    phi12.assign(s1.phi(k1).begin(), s1.phi(k1).end());
    psi1.assign(s1.psi(k1).begin(), s1.psi(k1).end());
    x = attempt == 0 ? default_init(support, kernel.init) : random_init(support, rng);
    auto [phi23, psi2] = split(x);
    cur = eval_middle(s2, f, phi12, phi23, psi2);
    if (cur.finite()) break;
  }

  for (std::size_t it = 0; it < settings.iterations; ++it) {
    // (phi12, psi1) from stage one; submodel 1 terms cancel.
    {
      const auto k = pick_index(s1.size(), rng);
      Values proposal(s1.phi(k).begin(), s1.phi(k).end());
      auto [phi23, psi2] = split(x);
      acc_a.proposed += 1;
      const auto next = eval_middle(s2, f, proposal, phi23, psi2);
      if (next.finite() && accept((next.pool2 - cur.pool2) + (next.term - cur.term), rng)) {
        acc_a.accepted += 1;
        phi12 = std::move(proposal);
        psi1.assign(s1.psi(k).begin(), s1.psi(k).end());
        k1 = k;
        cur = next;
      }
    }
    // (phi23, psi2) with the generic kernel.
    {
      MiddleTerms last;
      auto target = [&](ConstValues v) {
        auto [phi23, psi2] = split(v);
        last = eval_middle(s2, f, phi12, phi23, psi2);
        return last.finite() ? last.pool2 + last.term : kNegInf;
      };
      double current = cur.pool2 + cur.term;
      acc_b.proposed += 1;
      if (mh_step(x, current, target, kernel, support, rng)) {
        acc_b.accepted += 1;
        cur = last;
      }
    }
    if (recorded(it, settings)) {
      auto [phi23, psi2] = split(x);
      Values row = concat(phi12, phi23);
      row.insert(row.end(), psi1.begin(), psi1.end());
      row.insert(row.end(), psi2.begin(), psi2.end());
      out.append(row, cur.pool2 + cur.term, chain_id, it);
      out.source.push_back(k1);
    }
  }
  out.acceptance = acc_a;
  out.acceptance += acc_b;
  return out;
}

MeldedChainOutput sequential_stage_three_chain(const ChainModel& model, const PoolFactorization& f,
                                               const SampleStore& s2store, const MHKernelConfig& kernel,
                                               const RunSettings& settings, std::size_t chain_id, std::size_t d12,
                                               std::size_t d23, std::size_t dpsi1) {
  Rng rng = make_stream(settings.seed, streams::sequential_three + chain_id);
  const auto& s3 = model.submodels[2];
  MeldedChainOutput out;
  auto& acc_a = out.acceptance["stage3_phi_psi12"];
  auto& acc_b = out.acceptance["stage3_psi3"];

  auto phi23_of = [&](std::size_t j) { return s2store.phi(j).subspan(d12, d23); };
  struct EndTerms {
    double pool3 = kNegInf, joint = kNegInf, marginal = kNegInf, term = kNegInf;
    bool finite() const { return pool3 != kNegInf && term != kNegInf; }
  };
  auto eval_end = [&](ConstValues phi23, ConstValues psi3) {
    EndTerms t;
    t.pool3 = f.pool3(phi23);
    check_finite_or_neg_inf(t.pool3, "pool3");
    if (t.pool3 == kNegInf) return t;
    t.joint = s3.eval_log_joint(phi23, psi3);
    t.marginal = s3.eval_log_prior_marginal(phi23);
    t.term = replaced_term(t.joint, t.marginal, "submodel 3");
    return t;
  };

  std::size_t j = 0;
  Values psi3;
  EndTerms cur;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kInitAttempts) throw InitializationError("sequential stage three: no initial state with positive density");
    j = pick_index(s2store.size(), rng);
    psi3 = attempt == 0 ? default_init(s3.psi_support, kernel.init) : random_init(s3.psi_support, rng);
    cur = eval_end(phi23_of(j), psi3);
    if (cur.finite()) break;
  }

  for (std::size_t it = 0; it < settings.iterations; ++it) {
    {
      const auto k = pick_index(s2store.size(), rng);
      acc_a.proposed += 1;
      const auto next = eval_end(phi23_of(k), psi3);
      if (next.finite() && accept((next.pool3 - cur.pool3) + (next.term - cur.term), rng)) {
        acc_a.accepted += 1;
        j = k;
        cur = next;
      }
    }
    if (s3.psi_dim > 0) {
      const auto phi23 = phi23_of(j);
      auto target = [&](ConstValues v) { return s3.eval_log_joint(phi23, v); };
      acc_b.proposed += 1;
      if (mh_step(psi3, cur.joint, target, kernel, s3.psi_support, rng)) {
        acc_b.accepted += 1;
        cur.term = replaced_term(cur.joint, cur.marginal, "submodel 3");
      }
    }
    if (recorded(it, settings)) {
      const auto phi = s2store.phi(j);
      const auto psi = s2store.psi(j);
      append_row(out, {phi.first(d12), phi.subspan(d12), psi.first(dpsi1), psi.subspan(dpsi1), psi3}, chain_id, it);
      out.trace.store1.push_back(s2store.source[j]);
      out.trace.intermediate.push_back(j);
    }
  }
  return out;
}

}  // namespace

namespace {

void check_sequential(const ChainModel& model, const PoolFactorization& factors, const MHKernelConfig& kernel,
                      const RunSettings& settings) {
  require_three(model);
  check_settings(settings);
  if (!factors.pool2 || !factors.pool3) throw ConfigurationError("pool factorization is incomplete");
  if (kernel.proposal == ProposalKind::empirical_resample) {
    throw ConfigurationError("sequential generic updates need random-walk or discrete-flip kernels");
  }
}

}  // namespace

SampleStore run_sequential_stage_two(const ChainModel& model, const PoolFactorization& factors,
                                     const SampleStore& stage1, const MHKernelConfig& kernel,
                                     const RunSettings& settings) {
  check_sequential(model, factors, kernel, settings);
  if (stage1.size() == 0) throw ConfigurationError("stage-one store is empty");
  if (stage1.phi_dim != model.phi_blocks[0].dim || stage1.psi_dim != model.submodels[0].psi_dim) {
    throw StructuralError("stage-one store layout does not match the chain");
  }
  std::vector<SampleStore> parts(settings.chains);
  FirstException errors;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t c = 0; c < settings.chains; ++c) {
    errors.run([&] { parts[c] = sequential_stage_two_chain(model, factors, stage1, kernel, settings, c); });
  }
  errors.rethrow();
  auto s2 = merge(parts);
  auto labels = coordinate_labels(model.phi_blocks[0].label, model.phi_blocks[0].dim);
  for (auto& l : coordinate_labels(model.phi_blocks[1].label, model.phi_blocks[1].dim)) labels.push_back(l);
  for (auto m : {0u, 1u})
    for (auto& l : model.psi_labels(m)) labels.push_back(l);
  s2.labels = std::move(labels);
  return s2;
}

MeldedChainOutput run_sequential_stage_three(const ChainModel& model, const PoolFactorization& factors,
                                             const SampleStore& stage2, const MHKernelConfig& psi3_kernel,
                                             const RunSettings& settings) {
  check_sequential(model, factors, psi3_kernel, settings);
  const auto d12 = model.phi_blocks[0].dim;
  const auto d23 = model.phi_blocks[1].dim;
  const auto dpsi1 = model.submodels[0].psi_dim;
  if (stage2.size() == 0) throw ConfigurationError("stage-two store is empty");
  if (stage2.phi_dim != d12 + d23 || stage2.psi_dim != dpsi1 + model.submodels[1].psi_dim ||
      stage2.source.size() != stage2.size()) {
    throw StructuralError("stage-two store layout does not match the chain");
  }
  auto out = empty_output(model);
  out.seed = settings.seed;
  out.num_chains = settings.chains;
  set_column_updates(out, "stage3_phi_psi12", "stage3_phi_psi12", "stage3_phi_psi12", "stage3_psi3");
  out.acceptance = {{"stage3_phi_psi12", {}}, {"stage3_psi3", {}}};
  std::vector<MeldedChainOutput> finals(settings.chains);
  FirstException errors;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t c = 0; c < settings.chains; ++c) {
    errors.run([&] {
      finals[c] = sequential_stage_three_chain(model, factors, stage2, psi3_kernel, settings, c, d12, d23, dpsi1);
    });
  }
  errors.rethrow();
  merge_outputs(out, finals);
  return out;
}

MeldedChainOutput run_sequential(const ChainModel& model, const PoolFactorization& factors,
                                 const SequentialKernels& kernels, const SequentialSettings& settings,
                                 SequentialStores* stores) {
  check_sequential(model, factors, kernels.stage2, settings.stage2);
  check_sequential(model, factors, kernels.stage3_psi3, settings.stage3);
  auto s1 = run_stage_one(model, StageOneTarget::first, factors, kernels.stage1, settings.stage1);
  auto s2 = run_sequential_stage_two(model, factors, s1, kernels.stage2, settings.stage2);
  auto out = run_sequential_stage_three(model, factors, s2, kernels.stage3_psi3, settings.stage3);
  out.acceptance["stage1"] = s1.acceptance;
  out.acceptance["stage2"] = s2.acceptance;
  if (stores) {
    stores->stage1 = std::move(s1);
    stores->stage2 = std::move(s2);
  }
  return out;
}

Values reconstruct_psi_from_trace(const SampleStore& store, const IndexTrace& trace, std::size_t r, bool first,
                                  std::size_t units) {
  const auto& idx = first ? trace.store1 : trace.store3;
  if (units == 0 || store.psi_dim % units != 0) throw StructuralError("psi does not split into the given units");
  const auto per = store.psi_dim / units;
  Values psi;
  for (std::size_t u = 0; u < units; ++u) {
    const auto k = idx.at(r * units + u);
    const auto part = store.psi(k).subspan(u * per, per);
    psi.insert(psi.end(), part.begin(), part.end());
  }
  return psi;
}

}  // namespace chainmeld
