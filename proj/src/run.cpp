#include "chainmeld/run.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "chainmeld/csv.hpp"
#include "chainmeld/errors.hpp"

namespace chainmeld {

using nlohmann::json;

namespace {

// ----- config reading ----------------------------------------------------------------

// A JSON value plus its pointer, so errors can name the offending key.
class Node {
 public:
  Node(const json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigurationError((path_.empty() ? "/" : path_) + ": " + msg); }

  const std::string& path() const { return path_; }
  const json& raw() const { return *j_; }

  bool has(const std::string& key) const { return j_->is_object() && j_->contains(key); }
  Node at(const std::string& key) const {
    if (!j_->is_object()) fail("expected an object");
    if (!j_->contains(key)) Node(*j_, path_ + "/" + key).fail("required key is missing");
    return Node((*j_)[key], path_ + "/" + key);
  }
  std::optional<Node> find(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return Node((*j_)[key], path_ + "/" + key);
  }
  Node item(std::size_t i) const { return Node((*j_)[i], path_ + "/" + std::to_string(i)); }

  void allow(std::initializer_list<const char*> keys) const {
    if (!j_->is_object()) fail("expected an object");
    std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = j_->begin(); it != j_->end(); ++it) {
      if (!ok.contains(it.key())) Node(it.value(), path_ + "/" + it.key()).fail("unknown key");
    }
  }

  double number() const {
    if (!j_->is_number()) fail("expected a number");
    const double v = j_->get<double>();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
  }
  std::uint64_t uint() const {
    if (!j_->is_number_unsigned() && !(j_->is_number_integer() && j_->get<std::int64_t>() >= 0)) {
      fail("expected a non-negative integer");
    }
    return j_->get<std::uint64_t>();
  }
  std::string str() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }
  bool boolean() const {
    if (!j_->is_boolean()) fail("expected true or false");
    return j_->get<bool>();
  }
  std::size_t size() const {
    if (!j_->is_array()) fail("expected an array");
    return j_->size();
  }
  std::vector<double> numbers() const {
    std::vector<double> v;
    for (std::size_t i = 0; i < size(); ++i) v.push_back(item(i).number());
    return v;
  }
  std::vector<std::vector<double>> number_rows() const {
    std::vector<std::vector<double>> v;
    for (std::size_t i = 0; i < size(); ++i) v.push_back(item(i).numbers());
    return v;
  }

 private:
  const json* j_;
  std::string path_;
};

void parse_gaussian(const Node& n, GaussianChainParams& p) {
  n.allow({"mu1", "mu3", "mu2", "sigma2", "rho", "psi2_mean", "psi2_var", "noise_var1", "noise_var2", "noise_var3", "y1",
           "y2", "y3"});
  if (auto v = n.find("mu1")) p.mu1 = v->number();
  if (auto v = n.find("mu3")) p.mu3 = v->number();
  if (auto v = n.find("mu2")) {
    p.mu2 = v->numbers();
    if (p.mu2.size() != 2) v->fail("expected two entries");
  }
  auto positive = [&](const char* key, double& out) {
    if (auto v = n.find(key)) {
      out = v->number();
      if (!(out > 0.0)) v->fail("must be > 0");
    }
  };
  positive("sigma2", p.sigma2);
  positive("psi2_var", p.psi2_var);
  positive("noise_var1", p.noise_var1);
  positive("noise_var2", p.noise_var2);
  positive("noise_var3", p.noise_var3);
  if (auto v = n.find("rho")) {
    p.rho = v->number();
    if (!(std::abs(p.rho) < 1.0)) v->fail("must satisfy |rho| < 1");
  }
  if (auto v = n.find("psi2_mean")) p.psi2_mean = v->number();
  if (auto v = n.find("y1")) p.y1 = v->numbers();
  if (auto v = n.find("y2")) p.y2 = v->numbers();
  if (auto v = n.find("y3")) p.y3 = v->numbers();
}

void parse_discrete(const Node& n, DiscreteChainParams& p) {
  n.allow({"k12", "k23", "kpsi1", "kpsi2", "kpsi3", "units1", "units3", "mode", "table_seed", "normalized", "tables"});
  auto count = [&](const char* key, std::size_t& out) {
    if (auto v = n.find(key)) out = static_cast<std::size_t>(v->uint());
  };
  count("k12", p.k12);
  count("k23", p.k23);
  count("kpsi1", p.kpsi1);
  count("kpsi2", p.kpsi2);
  count("kpsi3", p.kpsi3);
  count("units1", p.units1);
  count("units3", p.units3);
  if (auto v = n.find("mode")) {
    try {
      p.mode = discrete_mode_from_string(v->str());
    } catch (const ConfigurationError& e) {
      v->fail(e.what());
    }
  }
  if (auto v = n.find("table_seed")) p.table_seed = v->uint();
  if (auto v = n.find("normalized")) p.normalized = v->boolean();
  if (auto v = n.find("tables")) {
    v->allow({"joint1", "marg1", "joint2", "marg2", "joint3", "marg3"});
    DiscreteChainTables t;
    t.joint1 = v->at("joint1").number_rows();
    t.marg1 = v->at("marg1").number_rows();
    t.joint2 = v->at("joint2").numbers();
    t.marg2 = v->at("marg2").numbers();
    t.joint3 = v->at("joint3").number_rows();
    t.marg3 = v->at("marg3").number_rows();
    p.tables = std::move(t);
    if (!n.has("mode")) p.mode = DiscreteTableMode::explicit_tables;
  }
  try {
    discrete_chain_tables(p);
  } catch (const ConfigurationError& e) {
    n.fail(e.what());
  }
}

void parse_pooling(const Node& n, PoolSpec& spec) {
  n.allow({"method", "lambda", "lambda_pairs", "authority", "sub_method", "choices", "log_norm"});
  auto method = [](const Node& v) {
    try {
      return pooling_method_from_string(v.str());
    } catch (const ConfigurationError& e) {
      v.fail(e.what());
    }
  };
  spec.method = method(n.at("method"));
  if (auto v = n.find("lambda")) {
    spec.weights.per_submodel = v->numbers();
    for (std::size_t i = 0; i < spec.weights.per_submodel.size(); ++i) {
      if (spec.weights.per_submodel[i] < 0.0) v->item(i).fail("weights must be >= 0");
    }
  }
  if (auto v = n.find("lambda_pairs")) {
    for (std::size_t i = 0; i < v->size(); ++i) {
      const auto pair = v->item(i).numbers();
      if (pair.size() != 2) v->item(i).fail("expected a pair");
      if (pair[0] < 0.0 || pair[1] < 0.0) v->item(i).fail("weights must be >= 0");
      spec.weights.per_boundary.emplace_back(pair[0], pair[1]);
    }
  }
  if (auto v = n.find("authority")) {
    const auto a = v->uint();
    if (a < 1 || a > 3) v->fail("authority is a submodel number in 1..3");
    spec.authority = static_cast<std::size_t>(a - 1);
  }
  if (auto v = n.find("sub_method")) spec.sub_method = method(*v);
  if (auto v = n.find("choices")) {
    for (std::size_t i = 0; i < v->size(); ++i) {
      const auto s = v->item(i).str();
      if (s == "left") spec.choices.push_back(BoundaryChoice::left);
      else if (s == "right") spec.choices.push_back(BoundaryChoice::right);
      else v->item(i).fail("expected \"left\" or \"right\"");
    }
  }
  if (auto v = n.find("log_norm")) spec.log_norm = v->number();
}

MHKernelConfig parse_kernel(const Node& n) {
  n.allow({"proposal", "scales", "default_scale", "init"});
  MHKernelConfig k;
  if (auto v = n.find("proposal")) {
    const auto s = v->str();
    if (s == "random-walk") k.proposal = ProposalKind::random_walk;
    else if (s == "discrete-flip") k.proposal = ProposalKind::discrete_flip;
    else v->fail("expected \"random-walk\" or \"discrete-flip\"");
  }
  if (auto v = n.find("scales")) {
    k.scales = v->numbers();
    for (std::size_t i = 0; i < k.scales.size(); ++i) {
      if (!(k.scales[i] > 0.0)) v->item(i).fail("scales must be > 0");
    }
  }
  if (auto v = n.find("default_scale")) {
    k.default_scale = v->number();
    if (!(k.default_scale > 0.0)) v->fail("scales must be > 0");
  }
  if (auto v = n.find("init")) k.init = v->numbers();
  return k;
}

RunSettings parse_settings(const Node& n, const RunSettings* base) {
  RunSettings s = base ? *base : RunSettings{};
  if (!base || n.has("iterations")) {
    const auto it = n.at("iterations");
    s.iterations = static_cast<std::size_t>(it.uint());
    if (s.iterations < 100) it.fail("iteration counts must be >= 100");
  }
  if (!n.has("warmup") && base && n.has("iterations")) s.warmup.reset();
  if (auto v = n.find("warmup")) s.warmup = static_cast<std::size_t>(v->uint());
  if (auto v = n.find("thin")) {
    s.thin = static_cast<std::size_t>(v->uint());
    if (s.thin == 0) v->fail("thin must be >= 1");
  }
  if (auto v = n.find("chains")) {
    s.chains = static_cast<std::size_t>(v->uint());
    if (s.chains == 0) v->fail("chains must be >= 1");
  } else if (!base) {
    s.chains = 4;
  }
  if (s.warmup_count() >= s.iterations) n.fail("warmup must be smaller than iterations");
  return s;
}

SamplerConfig parse_sampler(const Node& n) {
  n.allow({"kind", "iterations", "warmup", "thin", "chains", "stage_one", "factorization", "kernels",
           "normal_approx_mode"});
  SamplerConfig c;
  const auto kind = n.at("kind");
  const auto k = kind.str();
  if (k == "parallel") c.kind = SamplerKind::parallel;
  else if (k == "parallel-unitwise") c.kind = SamplerKind::parallel_unitwise;
  else if (k == "sequential") c.kind = SamplerKind::sequential;
  else if (k == "normal-approx") c.kind = SamplerKind::normal_approx;
  else kind.fail("expected parallel, parallel-unitwise, sequential or normal-approx");
  c.settings = parse_settings(n, nullptr);
  c.stage_one = c.settings;
  if (auto v = n.find("stage_one")) {
    v->allow({"iterations", "warmup", "thin", "chains"});
    c.stage_one = parse_settings(*v, &c.settings);
  }
  if (auto v = n.find("factorization")) {
    const auto f = v->str();
    if (f == "subprior-ends") c.factorization = FactorizationMode::subprior_ends;
    else if (f == "flat-ends") c.factorization = FactorizationMode::flat_ends;
    else v->fail("expected \"subprior-ends\" or \"flat-ends\"");
  }
  if (auto v = n.find("kernels")) {
    v->allow({"stage_one_first", "stage_one_last", "psi2", "stage_two", "psi3", "normal_approx", "prior"});
    auto get = [&](const char* key, std::optional<MHKernelConfig>& out) {
      if (auto kn = v->find(key)) out = parse_kernel(*kn);
    };
    get("stage_one_first", c.kernels.stage_one_first);
    get("stage_one_last", c.kernels.stage_one_last);
    get("psi2", c.kernels.psi2);
    get("stage_two", c.kernels.stage_two);
    get("psi3", c.kernels.psi3);
    get("normal_approx", c.kernels.normal_approx);
    get("prior", c.kernels.prior);
  }
  if (auto v = n.find("normal_approx_mode")) {
    try {
      c.normal_approx_mode = normal_approx_mode_from_string(v->str());
    } catch (const ConfigurationError& e) {
      v->fail(e.what());
    }
  }
  return c;
}

GridConfig parse_grid(const Node& n) {
  n.allow({"lower", "upper", "points", "lambda1_sweep"});
  GridConfig g;
  g.spec.lower = n.at("lower").numbers();
  g.spec.upper = n.at("upper").numbers();
  const auto pts = n.at("points");
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto p = pts.item(i).uint();
    if (p == 0) pts.item(i).fail("grid points must be >= 1");
    g.spec.points.push_back(static_cast<std::size_t>(p));
  }
  if (g.spec.lower.size() != g.spec.points.size() || g.spec.upper.size() != g.spec.points.size()) {
    n.fail("lower, upper and points must have equal lengths");
  }
  for (std::size_t i = 0; i < g.spec.points.size(); ++i) {
    if (!(g.spec.upper[i] > g.spec.lower[i])) n.at("upper").item(i).fail("upper must exceed lower");
  }
  if (auto v = n.find("lambda1_sweep")) {
    g.lambda1_sweep = v->numbers();
    for (std::size_t i = 0; i < g.lambda1_sweep.size(); ++i) {
      if (g.lambda1_sweep[i] < 0.0 || g.lambda1_sweep[i] > 0.5) v->item(i).fail("lambda1 must lie in [0, 0.5]");
    }
  }
  return g;
}

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("SHA-256 failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

}  // namespace

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::parallel: return "parallel";
    case SamplerKind::parallel_unitwise: return "parallel-unitwise";
    case SamplerKind::sequential: return "sequential";
    case SamplerKind::normal_approx: return "normal-approx";
  }
  return "?";
}

std::string RunConfig::digest() const { return sha256_hex(document.dump()); }

RunConfig parse_run_config(const json& document) {
  RunConfig c;
  c.document = document;
  const Node root(c.document, "");
  root.allow({"description", "seed", "model", "pooling", "sampler", "grid", "outputs"});
  c.seed = root.at("seed").uint();

  const auto model = root.at("model");
  model.allow({"builtin", "params"});
  const auto builtin = model.at("builtin");
  c.model.builtin = builtin.str();
  const auto params = model.find("params");
  if (c.model.builtin == "gaussian-chain") {
    if (params) parse_gaussian(*params, c.model.gaussian);
  } else if (c.model.builtin == "discrete-chain") {
    if (params) parse_discrete(*params, c.model.discrete);
    else parse_discrete(Node(json::object(), "/model/params"), c.model.discrete);
  } else {
    builtin.fail("expected \"gaussian-chain\" or \"discrete-chain\"");
  }

  const auto pooling = root.at("pooling");
  parse_pooling(pooling, c.pool);
  if (auto v = root.find("sampler")) {
    c.sampler = parse_sampler(*v);
    c.sampler->settings.seed = c.seed;
    c.sampler->stage_one.seed = c.seed;
  }
  if (auto v = root.find("grid")) c.grid = parse_grid(*v);
  if (auto v = root.find("outputs")) {
    v->allow({"dir"});
    if (auto d = v->find("dir")) c.out_dir = d->str();
  }

  // Cross-checks that need the built model.
  BuiltModel built;
  try {
    built = build_model(c);
  } catch (const ConfigurationError& e) {
    model.fail(e.what());
  }
  try {
    build_pool(c, built);
  } catch (const ConfigurationError& e) {
    pooling.fail(e.what());
  }
  if (c.grid) {
    std::size_t coords = 0;
    for (const auto& b : built.model.phi_blocks) coords += b.dim;
    if (c.grid->spec.points.size() != coords) {
      root.at("grid").fail("grid needs one axis per shared coordinate (" + std::to_string(coords) + ")");
    }
  }
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed,
                          std::optional<std::string> out_dir) {
  std::ifstream is(path);
  if (!is) throw ConfigurationError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigurationError(path.string() + ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigurationError("/: expected an object");
  if (seed) doc["seed"] = *seed;
  if (out_dir) doc["outputs"]["dir"] = *out_dir;
  return parse_run_config(doc);
}

BuiltModel build_model(const RunConfig& config) {
  BuiltModel b;
  if (config.model.builtin == "gaussian-chain") {
    b.model = builtin_gaussian_chain(config.model.gaussian);
    b.block_marginals = gaussian_block_marginals(config.model.gaussian);
  } else if (config.model.builtin == "discrete-chain") {
    b.tables = discrete_chain_tables(config.model.discrete);
    b.model = discrete_chain_from_tables(config.model.discrete, *b.tables);
    b.block_marginals = discrete_block_marginals(config.model.discrete, *b.tables);
  } else {
    throw ConfigurationError("unknown builtin model '" + config.model.builtin + "'");
  }
  return b;
}

PooledPrior build_pool(const RunConfig& config, const BuiltModel& built) {
  PoolSpec spec = config.pool;
  spec.block_marginals = built.block_marginals;
  return PooledPrior(built.model, std::move(spec));
}

// ----- sampling ------------------------------------------------------------------------

namespace {

bool is_gaussian(const RunConfig& c) { return c.model.builtin == "gaussian-chain"; }

// 0.1 x prior SD per coordinate when a Gaussian summary exists, else 0.1.
MHKernelConfig kernel_or_default(const std::optional<MHKernelConfig>& given, const RunConfig& c,
                                 std::initializer_list<char> coords) {
  if (given) return *given;
  MHKernelConfig k;
  if (is_gaussian(c)) {
    const auto& p = c.model.gaussian;
    for (char x : coords) k.scales.push_back(0.1 * std::sqrt(x == 's' ? p.psi2_var : p.sigma2));
  }
  return k;
}

NormalApproxMode derive_normal_approx_mode(const RunConfig& c) {
  const auto& pool = c.pool;
  std::optional<NormalApproxMode> mode;
  if (pool.method == PoolingMethod::poe) mode = NormalApproxMode::poe_flat_prior;
  if (pool.method == PoolingMethod::dictatorial_partial && pool.authority == 1) mode = NormalApproxMode::ratio;
  if (pool.method == PoolingMethod::dictatorial_complete && pool.choices.size() == 2 &&
      pool.choices[0] == BoundaryChoice::right && pool.choices[1] == BoundaryChoice::left) {
    mode = NormalApproxMode::ratio;
  }
  if (!mode) throw ConfigurationError("/pooling: normal-approx needs poe pooling or submodel 2 as dictator");
  if (c.sampler->normal_approx_mode && *c.sampler->normal_approx_mode != *mode) {
    throw ConfigurationError("/sampler/normal_approx_mode: does not match the pooling method");
  }
  return *mode;
}

SamplerRun run_normal_approx_pipeline(const RunConfig& c, const BuiltModel& built, const PooledPrior& pool) {
  const auto& s = *c.sampler;
  const auto& model = built.model;
  const auto mode = derive_normal_approx_mode(c);
  SamplerRun run;
  // Stage one always targets the subposteriors here.
  const auto factors = factorize_for_sampler(model, pool, FactorizationMode::subprior_ends);
  auto [s1, s3] = run_stage_one_pair(model, factors, kernel_or_default(s.kernels.stage_one_first, c, {'p'}),
                                     kernel_or_default(s.kernels.stage_one_last, c, {'p'}), s.stage_one, s.stage_one);
  const auto& b12 = model.phi_blocks[0];
  const auto& b23 = model.phi_blocks[1];
  const auto g1_post = fit_gaussian_moments(s1, BlockSelector::phi_of(s1, b12.support));
  const auto g3_post = fit_gaussian_moments(s3, BlockSelector::phi_of(s3, b23.support));
  run.shapes.emplace_back(b12.label + " posterior", marginal_shape(s1, BlockSelector::phi_of(s1, b12.support)));
  run.shapes.emplace_back(b23.label + " posterior", marginal_shape(s3, BlockSelector::phi_of(s3, b23.support)));
  run.stage_acceptance["stage_one_first"] = s1.acceptance;
  run.stage_acceptance["stage_one_last"] = s3.acceptance;

  GaussianDensity g1_prior = g1_post, g3_prior = g3_post;
  if (mode == NormalApproxMode::ratio) {
    const auto prior_kernel = kernel_or_default(s.kernels.prior, c, {'p'});
    auto prior_store = [&](std::size_t m, const PhiBlock& block, std::uint64_t stream) {
      const auto spec = model.submodels[m];
      return run_mh([spec](ConstValues x) { return spec.eval_log_prior_marginal(x); }, block.support,
                    coordinate_labels(block.label, block.dim), block.dim, prior_kernel, s.stage_one, stream);
    };
    const auto p1 = prior_store(0, b12, streams::prior_first);
    const auto p3 = prior_store(2, b23, streams::prior_last);
    g1_prior = fit_gaussian_moments(p1, BlockSelector::phi_of(p1, b12.support));
    g3_prior = fit_gaussian_moments(p3, BlockSelector::phi_of(p3, b23.support));
    run.stage_acceptance["prior_first"] = p1.acceptance;
    run.stage_acceptance["prior_last"] = p3.acceptance;
  }
  run.normal_approx = build_normal_approx_target(model, g1_post, g1_prior, g3_post, g3_prior, mode);
  run.output = run_normal_approx(model, *run.normal_approx, kernel_or_default(s.kernels.normal_approx, c, {'p', 'p', 's'}),
                                 s.settings);
  run.stores.emplace_back("stage_one_first", std::move(s1));
  run.stores.emplace_back("stage_one_last", std::move(s3));
  return run;
}

}  // namespace

SamplerRun run_sampler(const RunConfig& c, const BuiltModel& built, const PooledPrior& pool) {
  if (!c.sampler) throw ConfigurationError("/sampler: required key is missing");
  const auto& s = *c.sampler;
  const auto& model = built.model;
  if (s.kind == SamplerKind::normal_approx) return run_normal_approx_pipeline(c, built, pool);

  SamplerRun run;
  const auto factors = factorize_for_sampler(model, pool, s.factorization);
  const auto k1 = kernel_or_default(s.kernels.stage_one_first, c, {'p'});
  if (s.kind == SamplerKind::sequential) {
    SequentialKernels kernels{k1, kernel_or_default(s.kernels.stage_two, c, {'p', 's'}),
                              kernel_or_default(s.kernels.psi3, c, {})};
    SequentialStores stores;
    run.output = run_sequential(model, factors, kernels, {s.stage_one, s.settings, s.settings}, &stores);
    run.stage_acceptance["stage1"] = run.output.acceptance.at("stage1");
    run.stage_acceptance["stage2"] = run.output.acceptance.at("stage2");
    run.output.acceptance.erase("stage1");
    run.output.acceptance.erase("stage2");
    run.stores.emplace_back("stage_one", std::move(stores.stage1));
    run.stores.emplace_back("stage_two", std::move(stores.stage2));
    return run;
  }
  auto [s1, s3] = run_stage_one_pair(model, factors, k1, kernel_or_default(s.kernels.stage_one_last, c, {'p'}),
                                     s.stage_one, s.stage_one);
  const auto k2 = kernel_or_default(s.kernels.psi2, c, {'s'});
  run.output = s.kind == SamplerKind::parallel ? run_parallel_stage_two(model, factors, s1, s3, k2, s.settings)
                                               : run_parallel_stage_two_unitwise(model, factors, s1, s3, k2, s.settings);
  run.stage_acceptance["stage_one_first"] = s1.acceptance;
  run.stage_acceptance["stage_one_last"] = s3.acceptance;
  run.stores.emplace_back("stage_one_first", std::move(s1));
  run.stores.emplace_back("stage_one_last", std::move(s3));
  return run;
}

std::vector<DiagnosticRow> diagnose(const MeldedChainOutput& out, bool empirical_acceptance) {
  const double nan = std::nan("");
  std::vector<DiagnosticRow> rows;
  for (std::size_t col = 0; col < out.width(); ++col) {
    DiagnosticRow r{out.columns[col], nan, nan, nan, nan};
    Traces traces;
    for (auto& t : out.column_by_chain(col)) {
      if (!t.empty()) traces.push_back(std::move(t));
    }
    std::size_t shortest = traces.empty() ? 0 : traces.front().size();
    for (const auto& t : traces) shortest = std::min(shortest, t.size());
    if (traces.size() >= 2 && shortest >= 4) r.rhat = split_rhat(traces).value;
    if (shortest >= 8) {
      r.ess_bulk = ess_bulk(traces).value;
      r.ess_tail = ess_tail(traces).value;
    }
    if (empirical_acceptance) {
      long long moves = 0, steps = 0;
      for (const auto& t : traces) {
        for (std::size_t i = 1; i < t.size(); ++i, ++steps) moves += t[i] != t[i - 1] ? 1 : 0;
      }
      if (steps > 0) r.acceptance_rate = static_cast<double>(moves) / static_cast<double>(steps);
    } else if (auto it = out.column_update.find(out.columns[col]); it != out.column_update.end()) {
      if (auto a = out.acceptance.find(it->second); a != out.acceptance.end()) r.acceptance_rate = a->second.rate();
    }
    rows.push_back(r);
  }
  return rows;
}

// ----- commands ------------------------------------------------------------------------

Command command_from_string(const std::string& name) {
  if (name == "validate") return Command::validate;
  if (name == "pool-grid") return Command::pool_grid;
  if (name == "sample") return Command::sample;
  if (name == "oracle") return Command::oracle;
  if (name == "diag") return Command::diag;
  throw ConfigurationError("unknown command '" + name + "'");
}

namespace {

const char* command_name(Command c) {
  switch (c) {
    case Command::validate: return "validate";
    case Command::pool_grid: return "pool-grid";
    case Command::sample: return "sample";
    case Command::oracle: return "oracle";
    case Command::diag: return "diag";
  }
  return "?";
}

void write_manifest(const std::filesystem::path& path, Command command, const RunConfig& c,
                    const std::map<std::string, AcceptanceCount>& acceptance,
                    const std::vector<std::pair<std::string, std::string>>& extra) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  os << "chainmeld " << kVersion << '\n';
  os << "command: " << command_name(command) << '\n';
  os << "seed: " << c.seed << '\n';
  os << "config-sha256: " << c.digest() << '\n';
  os << "eigen: " << EIGEN_WORLD_VERSION << '.' << EIGEN_MAJOR_VERSION << '.' << EIGEN_MINOR_VERSION << '\n';
  os << "model: " << c.model.builtin << '\n';
  os << "pooling: " << to_string(c.pool.method) << '\n';
  if (c.sampler) os << "sampler: " << to_string(c.sampler->kind) << '\n';
  for (const auto& [k, v] : extra) os << k << ": " << v << '\n';
  for (const auto& [k, a] : acceptance) {
    os << "acceptance." << k << ": " << format_number(a.rate()) << " (" << a.accepted << '/' << a.proposed << ")\n";
  }
}

std::vector<std::string> grid_labels(const ChainModel& model) {
  std::vector<std::string> out;
  for (const auto& b : model.phi_blocks) {
    for (auto& l : coordinate_labels(b.label, b.dim)) out.push_back(l);
  }
  return out;
}

void require_continuous(const ChainModel& model, const char* what) {
  for (const auto& b : model.phi_blocks) {
    for (const auto& s : b.support) {
      if (s.is_discrete()) throw ConfigurationError(std::string(what) + " needs continuous shared blocks");
    }
  }
}

std::string lambda_tag(double x) { return format_number(x); }

}  // namespace

CommandResult run_from_config(Command command, const RunConfig& c) {
  CommandResult result;
  const std::filesystem::path dir(c.out_dir);
  auto built = build_model(c);
  const auto pool = build_pool(c, built);
  std::map<std::string, AcceptanceCount> acceptance;
  std::vector<std::pair<std::string, std::string>> extra;
  auto out_file = [&](const std::string& name) {
    const auto p = dir / name;
    result.files.push_back(p);
    return p;
  };
  if (command != Command::validate) std::filesystem::create_directories(dir);

  switch (command) {
    case Command::validate: {
      const auto report = validate_chain(built.model);
      for (const auto& r : report) result.messages.push_back("violation: " + r);
      result.messages.push_back("ok: " + std::to_string(built.model.size()) + " submodels, pooling " +
                                to_string(c.pool.method) + (c.sampler ? ", sampler " + to_string(c.sampler->kind) : ""));
      return result;
    }
    case Command::pool_grid: {
      if (!c.grid) throw ConfigurationError("/grid: required key is missing");
      require_continuous(built.model, "pool-grid");
      const auto labels = grid_labels(built.model);
      const auto table = grid_normalize(pool, built.model.phi_blocks, c.grid->spec);
      write_grid(out_file("pool_grid.csv"), table, labels);
      if (table.grid.points.size() >= 2) {
        result.messages.push_back("grid correlation " + format_number(table.correlation(0, 1)));
        extra.emplace_back("grid-correlation", format_number(table.correlation(0, 1)));
      }
      if (!c.grid->lambda1_sweep.empty()) {
        std::vector<std::vector<std::string>> summary;
        for (double l1 : c.grid->lambda1_sweep) {
          PoolSpec spec;
          spec.method = PoolingMethod::logarithmic;
          spec.weights.per_submodel = {l1, 1.0 - 2.0 * l1, l1};
          spec.block_marginals = built.block_marginals;
          const PooledPrior swept(built.model, spec);
          const auto t = grid_normalize(swept, built.model.phi_blocks, c.grid->spec);
          write_grid(out_file("pool_grid_lambda1_" + lambda_tag(l1) + ".csv"), t, labels);
          std::string closed = "nan";
          if (is_gaussian(c)) {
            closed = format_number(gaussian_pool_information(c.model.gaussian, spec).to_density().correlation(0, 1));
          }
          summary.push_back({format_number(l1), format_number(t.correlation(0, 1)), closed});
        }
        write_table(out_file("pool_grid_summary.csv"), {"lambda1", "grid_correlation", "closed_form_correlation"},
                    summary);
      }
      break;
    }
    case Command::sample: {
      auto run = run_sampler(c, built, pool);
      write_melded_samples(out_file("melded_samples.csv"), run.output);
      for (const auto& [stem, store] : run.stores) write_sample_store(out_file(stem + ".csv"), store);
      if (c.sampler->kind != SamplerKind::normal_approx) write_index_trace(out_file("index_trace.csv"), run.output);
      write_diagnostics(out_file("diagnostics.csv"), diagnose(run.output, false));
      if (run.normal_approx) {
        const auto& g = run.normal_approx->factor;
        std::vector<std::vector<std::string>> rows;
        const auto labels = grid_labels(built.model);
        for (Eigen::Index i = 0; i < g.dim(); ++i) {
          std::vector<std::string> row{labels[static_cast<std::size_t>(i)], format_number(g.mean(i))};
          for (Eigen::Index j = 0; j < g.dim(); ++j) row.push_back(format_number(g.cov(i, j)));
          rows.push_back(std::move(row));
        }
        std::vector<std::string> header{"parameter", "mean"};
        for (const auto& l : labels) header.push_back("cov_" + l);
        write_table(out_file("normal_approx_factor.csv"), header, rows);
        std::vector<std::vector<std::string>> shape_rows;
        for (const auto& [name, shapes] : run.shapes) {
          for (std::size_t i = 0; i < shapes.size(); ++i) {
            shape_rows.push_back({name, std::to_string(i), format_number(shapes[i].skewness),
                                  format_number(shapes[i].excess_kurtosis)});
          }
        }
        write_table(out_file("normal_approx_shape.csv"), {"block", "coordinate", "skewness", "excess_kurtosis"},
                    shape_rows);
      }
      acceptance = run.output.acceptance;
      for (const auto& [k, v] : run.stage_acceptance) acceptance[k] = v;
      break;
    }
    case Command::oracle: {
      const auto table = enumerate_melded_posterior(built.model, pool);
      std::vector<std::vector<std::string>> rows;
      for (std::size_t i = 0; i < table.size(); ++i) {
        std::vector<std::string> row;
        for (auto d : table.decode(i)) row.push_back(std::to_string(d));
        row.push_back(format_number(table.probability[i]));
        rows.push_back(std::move(row));
      }
      auto header = table.columns;
      header.emplace_back("probability");
      write_table(out_file("oracle_posterior.csv"), header, rows);
      result.messages.push_back("states " + std::to_string(table.size()));
      if (c.sampler) {
        auto run = run_sampler(c, built, pool);
        write_melded_samples(out_file("melded_samples.csv"), run.output);
        const double tv = tv_distance(empirical_table(run.output, table), table.probability);
        result.messages.push_back("sampler " + to_string(c.sampler->kind) + " tv " + format_number(tv));
        extra.emplace_back("sampler-tv", format_number(tv));
        acceptance = run.output.acceptance;
        for (const auto& [k, v] : run.stage_acceptance) acceptance[k] = v;
      }
      break;
    }
    case Command::diag: {
      const auto samples = read_melded_samples(dir / "melded_samples.csv");
      write_diagnostics(out_file("diagnostics.csv"), diagnose(samples, true));
      break;
    }
  }
  write_manifest(out_file("manifest.txt"), command, c, acceptance, extra);
  return result;
}

}  // namespace chainmeld
