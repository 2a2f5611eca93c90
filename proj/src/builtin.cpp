#include "chainmeld/builtin.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "chainmeld/errors.hpp"
#include "chainmeld/parallel.hpp"

namespace chainmeld {

namespace {

double log_normal(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

double sum_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

// ----- Gaussian chain ------------------------------------------------------------

namespace {

void check_gaussian(const GaussianChainParams& p) {
  if (!(p.sigma2 > 0.0) || !std::isfinite(p.sigma2)) throw ConfigurationError("sigma2 must be > 0");
  if (!(std::abs(p.rho) < 1.0)) throw ConfigurationError("rho must satisfy |rho| < 1");
  if (p.mu2.size() != 2) throw ConfigurationError("mu2 must have two entries");
  for (double v : {p.psi2_var, p.noise_var1, p.noise_var2, p.noise_var3}) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigurationError("variances must be > 0");
  }
}

// Gaussian likelihood of independent observations with unknown mean m, as a
// function of m: precision n/v, potential sum(y)/v.
std::pair<double, double> mean_likelihood(const std::vector<double>& y, double var) {
  return {static_cast<double>(y.size()) / var, sum_of(y) / var};
}

GaussianInformation scaled(GaussianInformation g, double lambda) {
  g.precision *= lambda;
  g.potential *= lambda;
  return g;
}

}  // namespace

GaussianDensity gaussian_prior_marginal(const GaussianChainParams& p, std::size_t submodel) {
  check_gaussian(p);
  switch (submodel) {
    case 0: return GaussianDensity::scalar(p.mu1, p.sigma2);
    case 2: return GaussianDensity::scalar(p.mu3, p.sigma2);
    case 1: {
      Eigen::Matrix2d cov;
      cov << 1.0, p.rho, p.rho, 1.0;
      return GaussianDensity{Eigen::Vector2d(p.mu2[0], p.mu2[1]), p.sigma2 * cov};
    }
    default: throw StructuralError("the gaussian chain has three submodels");
  }
}

GaussianDensity gaussian_end_posterior(const GaussianChainParams& p, std::size_t submodel) {
  if (submodel != 0 && submodel != 2) throw StructuralError("end posteriors exist for submodels 1 and 3 only");
  const auto prior = gaussian_prior_marginal(p, submodel);
  const auto [lp, lh] = submodel == 0 ? mean_likelihood(p.y1, p.noise_var1) : mean_likelihood(p.y3, p.noise_var3);
  const double prec = 1.0 / prior.cov(0, 0) + lp;
  const double mean = (prior.mean(0) / prior.cov(0, 0) + lh) / prec;
  return GaussianDensity::scalar(mean, 1.0 / prec);
}

ChainModel builtin_gaussian_chain(const GaussianChainParams& p) {
  check_gaussian(p);
  ChainModel model;
  model.phi_blocks = {PhiBlock::real("phi12"), PhiBlock::real("phi23")};

  const auto prior2 = gaussian_prior_marginal(p, 1);
  auto lik = [](const std::vector<double>& y, double mean, double var) {
    double s = 0.0;
    for (double v : y) s += log_normal(v, mean, var);
    return s;
  };

  SubmodelSpec s1;
  s1.name = "submodel1";
  s1.right_dim = 1;
  s1.log_prior_marginal = [p](ConstValues phi) { return log_normal(phi[0], p.mu1, p.sigma2); };
  s1.log_joint = [p, lik](ConstValues phi, ConstValues) {
    return log_normal(phi[0], p.mu1, p.sigma2) + lik(p.y1, phi[0], p.noise_var1);
  };

  SubmodelSpec s2;
  s2.name = "submodel2";
  s2.left_dim = 1;
  s2.right_dim = 1;
  s2.psi_dim = 1;
  s2.psi_support = {CoordinateSupport::real()};
  s2.psi_labels = {"psi2"};
  s2.log_prior_marginal = [prior2](ConstValues phi) {
    return prior2.log_density(Eigen::Vector2d(phi[0], phi[1]));
  };
  s2.log_joint = [p, prior2, lik](ConstValues phi, ConstValues psi) {
    return prior2.log_density(Eigen::Vector2d(phi[0], phi[1])) + log_normal(psi[0], p.psi2_mean, p.psi2_var) +
           lik(p.y2, psi[0] + 0.5 * (phi[0] + phi[1]), p.noise_var2);
  };

  SubmodelSpec s3;
  s3.name = "submodel3";
  s3.left_dim = 1;
  s3.log_prior_marginal = [p](ConstValues phi) { return log_normal(phi[0], p.mu3, p.sigma2); };
  s3.log_joint = [p, lik](ConstValues phi, ConstValues) {
    return log_normal(phi[0], p.mu3, p.sigma2) + lik(p.y3, phi[0], p.noise_var3);
  };

  model.submodels = {s1, s2, s3};
  return model;
}

std::map<BlockMarginalKey, LogMarginalFn> gaussian_block_marginals(const GaussianChainParams& p) {
  check_gaussian(p);
  return {
      {BlockMarginalKey{1, 0}, [p](ConstValues x) { return log_normal(x[0], p.mu2[0], p.sigma2); }},
      {BlockMarginalKey{1, 1}, [p](ConstValues x) { return log_normal(x[0], p.mu2[1], p.sigma2); }},
  };
}

GaussianInformation gaussian_pool_information(const GaussianChainParams& p, const PoolSpec& pool) {
  const auto info1 = GaussianInformation::from_density(gaussian_prior_marginal(p, 0));
  const auto info2 = GaussianInformation::from_density(gaussian_prior_marginal(p, 1));
  const auto info3 = GaussianInformation::from_density(gaussian_prior_marginal(p, 2));
  const auto info2a = GaussianInformation::from_density(GaussianDensity::scalar(p.mu2[0], p.sigma2));
  const auto info2b = GaussianInformation::from_density(GaussianDensity::scalar(p.mu2[1], p.sigma2));
  const std::vector<Eigen::Index> at0{0}, at1{1}, both{0, 1};

  auto out = GaussianInformation::zero(2);
  auto weights = [&](std::size_t n) {
    if (pool.weights.per_submodel.size() != n) throw ConfigurationError("logarithmic pooling needs 3 weights");
    return pool.weights.per_submodel;
  };
  switch (pool.method) {
    case PoolingMethod::poe:
    case PoolingMethod::logarithmic: {
      const auto l = pool.method == PoolingMethod::poe ? std::vector<double>{1, 1, 1} : weights(3);
      out.accumulate(scaled(info1, l[0]), at0);
      out.accumulate(scaled(info2, l[1]), both);
      out.accumulate(scaled(info3, l[2]), at1);
      break;
    }
    case PoolingMethod::dictatorial_partial: {
      if (pool.authority == 1) {
        out.accumulate(info2, both);
        break;
      }
      if (pool.sub_method == PoolingMethod::linear) throw UnsupportedError("linear sub-pools are not Gaussian");
      const auto l = pool.sub_method == PoolingMethod::poe ? std::vector<double>{1, 1, 1} : weights(3);
      if (pool.authority == 0) {
        out.accumulate(info1, at0);
        out.accumulate(scaled(info2b, l[1]), at1);
        out.accumulate(scaled(info3, l[2]), at1);
      } else {
        out.accumulate(info3, at1);
        out.accumulate(scaled(info1, l[0]), at0);
        out.accumulate(scaled(info2a, l[1]), at0);
      }
      break;
    }
    case PoolingMethod::dictatorial_complete: {
      if (pool.choices.size() != 2) throw ConfigurationError("complete dictatorial pooling needs two choices");
      if (pool.choices[0] == BoundaryChoice::right && pool.choices[1] == BoundaryChoice::left) {
        out.accumulate(info2, both);
      } else {
        out.accumulate(pool.choices[0] == BoundaryChoice::left ? info1 : info2a, at0);
        out.accumulate(pool.choices[1] == BoundaryChoice::left ? info2b : info3, at1);
      }
      break;
    }
    case PoolingMethod::linear:
      throw UnsupportedError("linear pools of Gaussians are mixtures, not Gaussians");
  }
  return out;
}

GaussianDensity gaussian_melded_posterior(const GaussianChainParams& p, const PoolSpec& pool) {
  auto info = GaussianInformation::zero(3);
  info.accumulate(gaussian_pool_information(p, pool), {0, 1});
  const auto [p1, h1] = mean_likelihood(p.y1, p.noise_var1);
  const auto [p3, h3] = mean_likelihood(p.y3, p.noise_var3);
  info.precision(0, 0) += p1;
  info.potential(0) += h1;
  info.precision(1, 1) += p3;
  info.potential(1) += h3;
  info.precision(2, 2) += 1.0 / p.psi2_var;
  info.potential(2) += p.psi2_mean / p.psi2_var;
  // y2 depends on a'x with a = (1/2, 1/2, 1).
  const Eigen::Vector3d a(0.5, 0.5, 1.0);
  const auto [p2, h2] = mean_likelihood(p.y2, p.noise_var2);
  info.precision += p2 * a * a.transpose();
  info.potential += h2 * a;
  return info.to_density();
}

// ----- discrete chain ------------------------------------------------------------

std::string to_string(DiscreteTableMode mode) {
  switch (mode) {
    case DiscreteTableMode::random: return "random";
    case DiscreteTableMode::uniform: return "uniform";
    case DiscreteTableMode::split_joint: return "split-joint";
    case DiscreteTableMode::prior_only: return "prior-only";
    case DiscreteTableMode::explicit_tables: return "explicit";
  }
  return "?";
}

DiscreteTableMode discrete_mode_from_string(const std::string& name) {
  for (auto m : {DiscreteTableMode::random, DiscreteTableMode::uniform, DiscreteTableMode::split_joint,
                 DiscreteTableMode::prior_only, DiscreteTableMode::explicit_tables}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigurationError("unknown discrete table mode '" + name + "'");
}

namespace {

struct DiscreteLayout {
  std::size_t k12, k23, s1, s2, s3, u1, u3, n12, n23;
};

std::size_t ipow(std::size_t b, std::size_t e) {
  std::size_t r = 1;
  for (std::size_t i = 0; i < e; ++i) r *= b;
  return r;
}

DiscreteLayout layout_of(const DiscreteChainParams& p) {
  auto card_ok = [](std::size_t k, bool allow_empty) { return (allow_empty && k == 0) || (k >= 2 && k <= 6); };
  if (!card_ok(p.k12, false) || !card_ok(p.k23, false)) {
    throw ConfigurationError("phi cardinalities must lie in [2, 6]");
  }
  if (!card_ok(p.kpsi1, true) || !card_ok(p.kpsi2, true) || !card_ok(p.kpsi3, true)) {
    throw ConfigurationError("psi cardinalities must be 0 (absent) or lie in [2, 6]");
  }
  if (p.units1 == 0 || p.units3 == 0) throw ConfigurationError("unit counts must be >= 1");
  const auto n12 = ipow(p.k12, p.units1);
  const auto n23 = ipow(p.k23, p.units3);
  if (n12 * n23 * std::max<std::size_t>(p.kpsi2, 1) > kMaxEnumerationStates) {
    throw ConfigurationError("submodel 2 table is too large");
  }
  return {p.k12, p.k23, std::max<std::size_t>(p.kpsi1, 1), std::max<std::size_t>(p.kpsi2, 1),
          std::max<std::size_t>(p.kpsi3, 1), p.units1, p.units3, n12, n23};
}

// Row-major code of a vector of discrete coordinates; npos when off support.
constexpr std::size_t npos = static_cast<std::size_t>(-1);

std::size_t code_of(ConstValues x, std::size_t k) {
  std::size_t c = 0;
  for (double v : x) {
    if (!(v >= 0.0) || v >= static_cast<double>(k) || v != std::floor(v)) return npos;
    c = c * k + static_cast<std::size_t>(v);
  }
  return c;
}

std::size_t code_one(double v, std::size_t k) { return code_of(ConstValues(&v, 1), k); }

double log_of(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

class TableRng {
 public:
  explicit TableRng(std::uint64_t seed) : rng_(seed) {}
  std::vector<double> positive(std::size_t n) {
    std::uniform_real_distribution<double> u(0.05, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng_);
    return v;
  }
  std::vector<double> simplex(std::size_t n) { return normalized(positive(n)); }
  // n rows of k entries, each row summing to 1.
  std::vector<double> conditional(std::size_t n, std::size_t k) {
    std::vector<double> v;
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = simplex(k);
      v.insert(v.end(), row.begin(), row.end());
    }
    return v;
  }
  static std::vector<double> normalized(std::vector<double> v) {
    const double s = sum_of(v);
    for (auto& x : v) x /= s;
    return v;
  }

 private:
  std::mt19937_64 rng_;
};

// Factors of the joint model a split-joint chain is cut from:
// prod_u pi12_u(a_u) prod_u pi23_u(b_u) prod_u c1_u(a_u, s_u) c2(a, b, t) prod_u c3_u(b_u, r_u).
struct SplitFactors {
  std::vector<std::vector<double>> pi12, pi23, c1, c3;
  std::vector<double> c2;
};

SplitFactors split_factors(const DiscreteChainParams& p, const DiscreteLayout& l) {
  TableRng rng(p.table_seed);
  SplitFactors f;
  for (std::size_t u = 0; u < l.u1; ++u) f.pi12.push_back(rng.simplex(l.k12));
  for (std::size_t u = 0; u < l.u3; ++u) f.pi23.push_back(rng.simplex(l.k23));
  for (std::size_t u = 0; u < l.u1; ++u) f.c1.push_back(rng.positive(l.k12 * l.s1));
  f.c2 = rng.positive(l.n12 * l.n23 * l.s2);
  for (std::size_t u = 0; u < l.u3; ++u) f.c3.push_back(rng.positive(l.k23 * l.s3));
  return f;
}

std::vector<std::size_t> digits(std::size_t code, std::size_t k, std::size_t n) {
  std::vector<std::size_t> d(n);
  for (std::size_t i = n; i-- > 0;) {
    d[i] = code % k;
    code /= k;
  }
  return d;
}

double prod_units(const std::vector<std::vector<double>>& t, std::size_t code, std::size_t k, std::size_t units) {
  const auto d = digits(code, k, units);
  double v = 1.0;
  for (std::size_t u = 0; u < units; ++u) v *= t[u][d[u]];
  return v;
}

void check_sizes(const DiscreteChainTables& t, const DiscreteLayout& l) {
  auto bad = [](const std::string& what) { throw ConfigurationError("table " + what + " has the wrong shape"); };
  if (t.joint1.size() != l.u1 || t.marg1.size() != l.u1) bad("joint1/marg1");
  if (t.joint3.size() != l.u3 || t.marg3.size() != l.u3) bad("joint3/marg3");
  for (const auto& v : t.joint1) if (v.size() != l.k12 * l.s1) bad("joint1");
  for (const auto& v : t.marg1) if (v.size() != l.k12) bad("marg1");
  for (const auto& v : t.joint3) if (v.size() != l.k23 * l.s3) bad("joint3");
  for (const auto& v : t.marg3) if (v.size() != l.k23) bad("marg3");
  if (t.joint2.size() != l.n12 * l.n23 * l.s2) bad("joint2");
  if (t.marg2.size() != l.n12 * l.n23) bad("marg2");
  auto all_ok = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0 && std::isfinite(x); });
  };
  for (const auto* group : {&t.joint1, &t.marg1, &t.joint3, &t.marg3}) {
    for (const auto& v : *group) if (!all_ok(v)) throw ConfigurationError("table entries must be finite and >= 0");
  }
  if (!all_ok(t.joint2) || !all_ok(t.marg2)) throw ConfigurationError("table entries must be finite and >= 0");
}

void check_normalized(const DiscreteChainTables& t) {
  auto check = [](const std::vector<double>& v, const std::string& what) {
    if (std::abs(sum_of(v) - 1.0) > 1e-9) throw ConfigurationError("table " + what + " does not sum to 1");
  };
  for (const auto& v : t.marg1) check(v, "marg1");
  for (const auto& v : t.marg3) check(v, "marg3");
  check(t.marg2, "marg2");
}

}  // namespace

DiscreteChainTables discrete_chain_tables(const DiscreteChainParams& p) {
  const auto l = layout_of(p);
  DiscreteChainTables t;
  TableRng rng(p.table_seed);
  switch (p.mode) {
    case DiscreteTableMode::random:
      for (std::size_t u = 0; u < l.u1; ++u) {
        t.joint1.push_back(rng.positive(l.k12 * l.s1));
        t.marg1.push_back(rng.simplex(l.k12));
      }
      t.joint2 = rng.positive(l.n12 * l.n23 * l.s2);
      t.marg2 = rng.simplex(l.n12 * l.n23);
      for (std::size_t u = 0; u < l.u3; ++u) {
        t.joint3.push_back(rng.positive(l.k23 * l.s3));
        t.marg3.push_back(rng.simplex(l.k23));
      }
      break;
    case DiscreteTableMode::uniform:
      t.joint1.assign(l.u1, std::vector<double>(l.k12 * l.s1, 1.0));
      t.marg1.assign(l.u1, std::vector<double>(l.k12, 1.0 / static_cast<double>(l.k12)));
      t.joint2.assign(l.n12 * l.n23 * l.s2, 1.0);
      t.marg2.assign(l.n12 * l.n23, 1.0 / static_cast<double>(l.n12 * l.n23));
      t.joint3.assign(l.u3, std::vector<double>(l.k23 * l.s3, 1.0));
      t.marg3.assign(l.u3, std::vector<double>(l.k23, 1.0 / static_cast<double>(l.k23)));
      break;
    case DiscreteTableMode::prior_only: {
      auto joint_of = [](const std::vector<double>& marg, const std::vector<double>& cond, std::size_t k) {
        std::vector<double> j(cond.size());
        for (std::size_t i = 0; i < cond.size(); ++i) j[i] = marg[i / k] * cond[i];
        return j;
      };
      for (std::size_t u = 0; u < l.u1; ++u) {
        t.marg1.push_back(rng.simplex(l.k12));
        t.joint1.push_back(joint_of(t.marg1.back(), rng.conditional(l.k12, l.s1), l.s1));
      }
      t.marg2 = rng.simplex(l.n12 * l.n23);
      t.joint2 = joint_of(t.marg2, rng.conditional(l.n12 * l.n23, l.s2), l.s2);
      for (std::size_t u = 0; u < l.u3; ++u) {
        t.marg3.push_back(rng.simplex(l.k23));
        t.joint3.push_back(joint_of(t.marg3.back(), rng.conditional(l.k23, l.s3), l.s3));
      }
      break;
    }
    case DiscreteTableMode::split_joint: {
      const auto f = split_factors(p, l);
      for (std::size_t u = 0; u < l.u1; ++u) {
        t.marg1.push_back(f.pi12[u]);
        std::vector<double> j(l.k12 * l.s1);
        for (std::size_t i = 0; i < j.size(); ++i) j[i] = f.pi12[u][i / l.s1] * f.c1[u][i];
        t.joint1.push_back(std::move(j));
      }
      for (std::size_t u = 0; u < l.u3; ++u) {
        t.marg3.push_back(f.pi23[u]);
        std::vector<double> j(l.k23 * l.s3);
        for (std::size_t i = 0; i < j.size(); ++i) j[i] = f.pi23[u][i / l.s3] * f.c3[u][i];
        t.joint3.push_back(std::move(j));
      }
      t.marg2.resize(l.n12 * l.n23);
      t.joint2.resize(l.n12 * l.n23 * l.s2);
      for (std::size_t a = 0; a < l.n12; ++a) {
        for (std::size_t b = 0; b < l.n23; ++b) {
          const double prior = prod_units(f.pi12, a, l.k12, l.u1) * prod_units(f.pi23, b, l.k23, l.u3);
          t.marg2[a * l.n23 + b] = prior;
          for (std::size_t s = 0; s < l.s2; ++s) {
            const auto i = (a * l.n23 + b) * l.s2 + s;
            t.joint2[i] = prior * f.c2[i];
          }
        }
      }
      break;
    }
    case DiscreteTableMode::explicit_tables:
      if (!p.tables) throw ConfigurationError("explicit mode needs tables");
      t = *p.tables;
      break;
  }
  check_sizes(t, l);
  if (p.normalized) check_normalized(t);
  return t;
}

ChainModel builtin_discrete_chain(const DiscreteChainParams& params) {
  return discrete_chain_from_tables(params, discrete_chain_tables(params));
}

ChainModel discrete_chain_from_tables(const DiscreteChainParams& p, const DiscreteChainTables& tables) {
  const auto l = layout_of(p);
  check_sizes(tables, l);
  auto t = std::make_shared<const DiscreteChainTables>(tables);

  ChainModel model;
  model.phi_blocks = {PhiBlock::discrete("phi12", l.k12, l.u1), PhiBlock::discrete("phi23", l.k23, l.u3)};

  auto end_submodel = [&](bool first) {
    SubmodelSpec s;
    const auto units = first ? l.u1 : l.u3;
    const auto k = first ? l.k12 : l.k23;
    const auto kpsi = first ? p.kpsi1 : p.kpsi3;
    const auto sw = first ? l.s1 : l.s3;
    s.name = first ? "submodel1" : "submodel3";
    if (first) s.right_dim = units; else s.left_dim = units;
    s.psi_dim = kpsi > 0 ? units : 0;
    if (kpsi > 0) s.psi_support.assign(units, CoordinateSupport::discrete(kpsi));
    s.psi_labels = kpsi > 0 ? coordinate_labels(first ? "psi1" : "psi3", units) : std::vector<std::string>{};
    const auto* joint = first ? &t->joint1 : &t->joint3;
    const auto* marg = first ? &t->marg1 : &t->marg3;
    auto unit_joint = [t, joint, k, kpsi, sw](std::size_t u, ConstValues phi, ConstValues psi) {
      const auto a = code_one(phi[0], k);
      const auto b = kpsi > 0 ? code_one(psi[0], kpsi) : 0;
      if (a == npos || b == npos) return kNegInf;
      return log_of((*joint)[u][a * sw + b]);
    };
    auto unit_marg = [t, marg, k](std::size_t u, ConstValues phi) {
      const auto a = code_one(phi[0], k);
      return a == npos ? kNegInf : log_of((*marg)[u][a]);
    };
    const std::size_t psi_per = kpsi > 0 ? 1 : 0;
    s.log_joint = [unit_joint, units, psi_per](ConstValues phi, ConstValues psi) {
      double v = 0.0;
      for (std::size_t u = 0; u < units; ++u) v += unit_joint(u, phi.subspan(u, 1), psi.subspan(u * psi_per, psi_per));
      return v;
    };
    s.log_prior_marginal = [unit_marg, units](ConstValues phi) {
      double v = 0.0;
      for (std::size_t u = 0; u < units; ++u) v += unit_marg(u, phi.subspan(u, 1));
      return v;
    };
    s.unit_factorization = UnitFactorization{units, 1, psi_per, unit_joint, unit_marg};
    return s;
  };

  SubmodelSpec s2;
  s2.name = "submodel2";
  s2.left_dim = l.u1;
  s2.right_dim = l.u3;
  s2.psi_dim = p.kpsi2 > 0 ? 1 : 0;
  if (p.kpsi2 > 0) s2.psi_support = {CoordinateSupport::discrete(p.kpsi2)};
  if (p.kpsi2 > 0) s2.psi_labels = {"psi2"};
  auto index2 = [l](ConstValues phi) {
    const auto a = code_of(phi.first(l.u1), l.k12);
    const auto b = code_of(phi.subspan(l.u1), l.k23);
    return a == npos || b == npos ? npos : a * l.n23 + b;
  };
  const auto kpsi2 = p.kpsi2;
  s2.log_joint = [t, index2, kpsi2, l](ConstValues phi, ConstValues psi) {
    const auto i = index2(phi);
    const auto s = kpsi2 > 0 ? code_one(psi[0], kpsi2) : 0;
    if (i == npos || s == npos) return kNegInf;
    return log_of(t->joint2[i * l.s2 + s]);
  };
  s2.log_prior_marginal = [t, index2](ConstValues phi) {
    const auto i = index2(phi);
    return i == npos ? kNegInf : log_of(t->marg2[i]);
  };

  model.submodels = {end_submodel(true), s2, end_submodel(false)};
  return model;
}

std::map<BlockMarginalKey, LogMarginalFn> discrete_block_marginals(const DiscreteChainParams& p,
                                                                   const DiscreteChainTables& tables) {
  const auto l = layout_of(p);
  std::vector<double> m12(l.n12, 0.0), m23(l.n23, 0.0);
  for (std::size_t a = 0; a < l.n12; ++a) {
    for (std::size_t b = 0; b < l.n23; ++b) {
      m12[a] += tables.marg2[a * l.n23 + b];
      m23[b] += tables.marg2[a * l.n23 + b];
    }
  }
  auto eval = [](std::vector<double> m, std::size_t k) {
    return LogMarginalFn([m = std::move(m), k](ConstValues x) {
      const auto c = code_of(x, k);
      return c == npos ? kNegInf : log_of(m[c]);
    });
  };
  return {{BlockMarginalKey{1, 0}, eval(m12, l.k12)}, {BlockMarginalKey{1, 1}, eval(m23, l.k23)}};
}

std::vector<double> split_joint_posterior(const DiscreteChainParams& p, const DiscreteChainTables&) {
  if (p.mode != DiscreteTableMode::split_joint) throw ConfigurationError("model was not built in split-joint mode");
  const auto l = layout_of(p);
  const auto f = split_factors(p, l);
  const auto psi1 = ipow(l.s1, p.kpsi1 > 0 ? l.u1 : 0);
  const auto psi3 = ipow(l.s3, p.kpsi3 > 0 ? l.u3 : 0);
  // Enumeration order: phi12, phi23, psi1, psi2, psi3 (last fastest).
  std::vector<double> out;
  out.reserve(l.n12 * l.n23 * psi1 * l.s2 * psi3);
  for (std::size_t a = 0; a < l.n12; ++a) {
    const auto da = digits(a, l.k12, l.u1);
    for (std::size_t b = 0; b < l.n23; ++b) {
      const auto db = digits(b, l.k23, l.u3);
      double prior = 1.0;
      for (std::size_t u = 0; u < l.u1; ++u) prior *= f.pi12[u][da[u]];
      for (std::size_t u = 0; u < l.u3; ++u) prior *= f.pi23[u][db[u]];
      for (std::size_t i1 = 0; i1 < psi1; ++i1) {
        const auto s1 = p.kpsi1 > 0 ? digits(i1, l.s1, l.u1) : std::vector<std::size_t>(l.u1, 0);
        double v1 = prior;
        for (std::size_t u = 0; u < l.u1; ++u) v1 *= f.c1[u][da[u] * l.s1 + s1[u]];
        for (std::size_t i2 = 0; i2 < l.s2; ++i2) {
          const double v2 = v1 * f.c2[(a * l.n23 + b) * l.s2 + i2];
          for (std::size_t i3 = 0; i3 < psi3; ++i3) {
            const auto s3 = p.kpsi3 > 0 ? digits(i3, l.s3, l.u3) : std::vector<std::size_t>(l.u3, 0);
            double v3 = v2;
            for (std::size_t u = 0; u < l.u3; ++u) v3 *= f.c3[u][db[u] * l.s3 + s3[u]];
            out.push_back(v3);
          }
        }
      }
    }
  }
  return TableRng::normalized(std::move(out));
}

// ----- enumeration oracle ----------------------------------------------------------

std::vector<std::size_t> EnumerationTable::decode(std::size_t flat) const {
  std::vector<std::size_t> d(cardinality.size());
  for (std::size_t i = cardinality.size(); i-- > 0;) {
    d[i] = flat % cardinality[i];
    flat /= cardinality[i];
  }
  return d;
}

std::size_t EnumerationTable::encode(std::span<const double> state) const {
  if (state.size() != cardinality.size()) throw StructuralError("state has the wrong length");
  std::size_t c = 0;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto v = static_cast<std::size_t>(state[i]);
    if (state[i] < 0.0 || v >= cardinality[i]) throw StructuralError("state outside the enumerated space");
    c = c * cardinality[i] + v;
  }
  return c;
}

std::vector<double> EnumerationTable::marginal(const std::vector<std::size_t>& keep) const {
  std::size_t n = 1;
  for (auto k : keep) n *= cardinality.at(k);
  std::vector<double> out(n, 0.0);
  for (std::size_t flat = 0; flat < size(); ++flat) {
    const auto d = decode(flat);
    std::size_t c = 0;
    for (auto k : keep) c = c * cardinality[k] + d[k];
    out[c] += probability[flat];
  }
  return out;
}

namespace {

EnumerationTable enumeration_layout(const ChainModel& model) {
  require_valid(model);
  EnumerationTable t;
  auto add = [&](const std::vector<std::string>& labels, const Support& support) {
    for (std::size_t i = 0; i < support.size(); ++i) {
      if (!support[i].is_discrete()) throw UnsupportedError("enumeration needs discrete coordinates only");
      t.columns.push_back(labels[i]);
      t.cardinality.push_back(support[i].cardinality);
    }
  };
  for (const auto& b : model.phi_blocks) add(coordinate_labels(b.label, b.dim), b.support);
  for (std::size_t m = 0; m < model.size(); ++m) add(model.psi_labels(m), model.submodels[m].psi_support);
  double total = 1.0;
  for (auto k : t.cardinality) total *= static_cast<double>(k);
  if (total > static_cast<double>(kMaxEnumerationStates)) throw ConfigurationError("state space too large to enumerate");
  t.probability.assign(static_cast<std::size_t>(total), 0.0);
  return t;
}

double state_log_density(const ChainModel& model, const PooledPrior& pool, const EnumerationTable& t, std::size_t flat) {
  const auto d = t.decode(flat);
  std::size_t at = 0;
  PhiVector phi;
  for (const auto& b : model.phi_blocks) {
    Values v;
    for (std::size_t i = 0; i < b.dim; ++i) v.push_back(static_cast<double>(d[at++]));
    phi.blocks.push_back(std::move(v));
  }
  PsiVector psi;
  for (const auto& s : model.submodels) {
    Values v;
    for (std::size_t i = 0; i < s.psi_dim; ++i) v.push_back(static_cast<double>(d[at++]));
    psi.parts.push_back(std::move(v));
  }
  return log_melded_density(model, pool, phi, psi);
}

void normalize_logs(EnumerationTable& t, const std::vector<double>& logs) {
  const double hi = *std::max_element(logs.begin(), logs.end());
  if (hi == kNegInf) throw NumericalError("melded density is zero everywhere");
  double sum = 0.0;
  for (std::size_t i = 0; i < logs.size(); ++i) {
    t.probability[i] = std::exp(logs[i] - hi);
    sum += t.probability[i];
  }
  for (auto& p : t.probability) p /= sum;
}

}  // namespace

EnumerationTable enumerate_melded_posterior(const ChainModel& model, const PooledPrior& pool) {
  auto t = enumeration_layout(model);
  std::vector<double> logs(t.size());
  FirstException errors;
  const auto n = static_cast<std::ptrdiff_t>(t.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    errors.run([&] { logs[static_cast<std::size_t>(i)] = state_log_density(model, pool, t, static_cast<std::size_t>(i)); });
  }
  errors.rethrow();
  normalize_logs(t, logs);
  return t;
}

namespace serial {
EnumerationTable enumerate_melded_posterior(const ChainModel& model, const PooledPrior& pool) {
  auto t = enumeration_layout(model);
  std::vector<double> logs(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) logs[i] = state_log_density(model, pool, t, i);
  normalize_logs(t, logs);
  return t;
}
}  // namespace serial

std::vector<double> enumerate_pooled_prior(const ChainModel& model, const PooledPrior& pool) {
  EnumerationTable t;
  for (const auto& b : model.phi_blocks) {
    for (const auto& s : b.support) {
      if (!s.is_discrete()) throw UnsupportedError("enumeration needs discrete coordinates only");
      t.cardinality.push_back(s.cardinality);
    }
  }
  std::size_t n = 1;
  for (auto k : t.cardinality) n *= k;
  t.probability.assign(n, 0.0);
  std::vector<double> logs(n);
  for (std::size_t flat = 0; flat < n; ++flat) {
    const auto d = t.decode(flat);
    std::vector<double> x(d.begin(), d.end());
    logs[flat] = pool.log_density(split_blocks(x, model.phi_blocks));
  }
  normalize_logs(t, logs);
  return t.probability;
}

std::vector<double> empirical_table(const MeldedChainOutput& out, const EnumerationTable& table) {
  if (out.width() != table.cardinality.size()) throw StructuralError("sampler columns do not match the table");
  std::vector<double> p(table.size(), 0.0);
  for (std::size_t r = 0; r < out.rows(); ++r) p[table.encode(out.row(r))] += 1.0;
  for (auto& v : p) v /= static_cast<double>(out.rows());
  return p;
}

double tv_distance(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw StructuralError("tables have different sizes");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

}  // namespace chainmeld
