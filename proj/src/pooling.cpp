#include "chainmeld/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "chainmeld/errors.hpp"
#include "chainmeld/parallel.hpp"

namespace chainmeld {

namespace {

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(std::min(a, b) - hi));
}

void check_value(double v, const char* what) {
  if (std::isnan(v)) throw NumericalError(std::string(what) + " returned NaN");
}

bool touches(const SubmodelSpec& s, std::size_t m, std::size_t b) {
  return (s.left_dim && b + 1 == m) || (s.right_dim && b == m);
}

}  // namespace

std::string to_string(PoolingMethod method) {
  switch (method) {
    case PoolingMethod::logarithmic: return "logarithmic";
    case PoolingMethod::poe: return "poe";
    case PoolingMethod::linear: return "linear";
    case PoolingMethod::dictatorial_partial: return "dictatorial-partial";
    case PoolingMethod::dictatorial_complete: return "dictatorial-complete";
  }
  return "unknown";
}

PoolingMethod pooling_method_from_string(const std::string& name) {
  for (auto m : {PoolingMethod::logarithmic, PoolingMethod::poe, PoolingMethod::linear,
                 PoolingMethod::dictatorial_partial, PoolingMethod::dictatorial_complete}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigurationError("unknown pooling method '" + name + "'");
}

PooledPrior::PooledPrior(const ChainModel& model, PoolSpec spec)
    : spec_(std::move(spec)), submodels_(model.submodels), blocks_(model.phi_blocks) {
  require_valid(model);
  const auto m_count = submodels_.size();
  const auto b_count = blocks_.size();

  auto check_log_weights = [&](const std::vector<double>& lambda, std::size_t lo, std::size_t hi) {
    if (lambda.size() != m_count) {
      throw ConfigurationError("logarithmic pooling needs " + std::to_string(m_count) + " weights");
    }
    bool any = false;
    for (std::size_t m = lo; m <= hi; ++m) {
      if (!(lambda[m] >= 0.0) || !std::isfinite(lambda[m])) throw ConfigurationError("pooling weights must be >= 0");
      any = any || lambda[m] > 0.0;
    }
    if (!any) throw ConfigurationError("pooling weights are all zero");
  };
  auto check_linear_weights = [&](std::size_t first, std::size_t last) {
    if (spec_.weights.per_boundary.size() != b_count) {
      throw ConfigurationError("linear pooling needs " + std::to_string(b_count) + " weight pairs");
    }
    for (std::size_t b = first; b <= last; ++b) {
      const auto [w1, w2] = spec_.weights.per_boundary[b];
      if (!(w1 >= 0.0) || !(w2 >= 0.0) || !std::isfinite(w1) || !std::isfinite(w2)) {
        throw ConfigurationError("pooling weights must be >= 0");
      }
      if (w1 == 0.0 && w2 == 0.0) {
        throw ConfigurationError("pooling weights are all zero at boundary " + std::to_string(b + 1));
      }
      if (w1 > 0.0) require_block_marginal(b, b);
      if (w2 > 0.0) require_block_marginal(b + 1, b);
    }
  };
  // Marginals a logarithmic pool over blocks [first, last] needs.
  auto check_log_marginals = [&](const std::vector<double>& lambda, std::size_t first, std::size_t last) {
    for (std::size_t m = 0; m < m_count; ++m) {
      if (lambda[m] == 0.0) continue;
      const bool left_in = submodels_[m].left_dim && m - 1 >= first && m - 1 <= last;
      const bool right_in = submodels_[m].right_dim && m >= first && m <= last;
      const bool left_exists = submodels_[m].left_dim.has_value();
      const bool right_exists = submodels_[m].right_dim.has_value();
      if (left_in && !(right_in || !right_exists)) require_block_marginal(m, m - 1);
      if (right_in && !(left_in || !left_exists)) require_block_marginal(m, m);
    }
  };

  switch (spec_.method) {
    case PoolingMethod::poe:
      spec_.weights.per_submodel.assign(m_count, 1.0);
      break;
    case PoolingMethod::logarithmic:
      check_log_weights(spec_.weights.per_submodel, 0, m_count - 1);
      break;
    case PoolingMethod::linear:
      check_linear_weights(0, b_count - 1);
      break;
    case PoolingMethod::dictatorial_partial: {
      const auto a = spec_.authority;
      if (a >= m_count) throw ConfigurationError("authoritative submodel index out of range");
      const bool has_left = a >= 2;             // blocks 0 .. a-2
      const bool has_right = a + 2 < m_count;   // blocks a+1 .. M-2
      if (spec_.sub_method != PoolingMethod::logarithmic && spec_.sub_method != PoolingMethod::linear &&
          spec_.sub_method != PoolingMethod::poe) {
        throw ConfigurationError("partial dictatorial sub-pools must be logarithmic, poe or linear");
      }
      if (spec_.sub_method == PoolingMethod::poe) {
        spec_.weights.per_submodel.assign(m_count, 1.0);
        spec_.sub_method = PoolingMethod::logarithmic;
      }
      if (spec_.sub_method == PoolingMethod::logarithmic) {
        if ((has_left || has_right) && spec_.weights.per_submodel.size() != m_count) {
          throw ConfigurationError("logarithmic sub-pool needs " + std::to_string(m_count) + " weights");
        }
        if (has_left) {
          check_log_weights(spec_.weights.per_submodel, 0, a - 1);
          check_log_marginals(spec_.weights.per_submodel, 0, a - 2);
        }
        if (has_right) {
          check_log_weights(spec_.weights.per_submodel, a + 1, m_count - 1);
          check_log_marginals(spec_.weights.per_submodel, a + 1, b_count - 1);
        }
      } else {
        if (has_left) check_linear_weights(0, a - 2);
        if (has_right) check_linear_weights(a + 1, b_count - 1);
      }
      break;
    }
    case PoolingMethod::dictatorial_complete: {
      if (spec_.choices.size() != b_count) {
        throw ConfigurationError("complete dictatorial pooling needs one choice per shared block");
      }
      for (std::size_t b = 0; b < b_count; ++b) {
        const std::size_t owner = spec_.choices[b] == BoundaryChoice::left ? b : b + 1;
        const bool paired_prev = b > 0 && spec_.choices[b] == BoundaryChoice::left &&
                                 spec_.choices[b - 1] == BoundaryChoice::right;
        const bool paired_next = b + 1 < b_count && spec_.choices[b] == BoundaryChoice::right &&
                                 spec_.choices[b + 1] == BoundaryChoice::left;
        if (!paired_prev && !paired_next) require_block_marginal(owner, b);
      }
      break;
    }
  }
}

void PooledPrior::require_block_marginal(std::size_t m, std::size_t b) const {
  const auto& s = submodels_.at(m);
  if (!touches(s, m, b)) throw ConfigurationError("submodel does not touch the requested block");
  const bool single = !(s.left_dim && s.right_dim);
  if (single) return;
  if (!spec_.block_marginals.contains(BlockMarginalKey{m, b})) {
    throw ConfigurationError("missing single-block marginal p_" + std::to_string(m + 1) + "(" + blocks_[b].label + ")");
  }
}

double PooledPrior::log_block_marginal(std::size_t m, std::size_t b, ConstValues value) const {
  const auto& s = submodels_.at(m);
  if (!touches(s, m, b)) throw StructuralError("submodel does not touch the requested block");
  double v;
  if (!(s.left_dim && s.right_dim)) {
    v = s.eval_log_prior_marginal(value);
  } else {
    auto it = spec_.block_marginals.find(BlockMarginalKey{m, b});
    if (it == spec_.block_marginals.end()) {
      throw ConfigurationError("missing single-block marginal p_" + std::to_string(m + 1) + "(" + blocks_[b].label + ")");
    }
    v = it->second(value);
  }
  check_value(v, "block marginal");
  return v;
}

double PooledPrior::submodel_marginal(std::size_t m, const PhiVector& phi) const {
  const auto& s = submodels_[m];
  Values phi_m;
  if (s.left_dim) phi_m.insert(phi_m.end(), phi.blocks[m - 1].begin(), phi.blocks[m - 1].end());
  if (s.right_dim) phi_m.insert(phi_m.end(), phi.blocks[m].begin(), phi.blocks[m].end());
  const double v = s.eval_log_prior_marginal(phi_m);
  check_value(v, "prior marginal");
  return v;
}

double PooledPrior::log_pool_logarithmic(const PhiVector& phi, std::size_t first, std::size_t last,
                                         const std::vector<double>& lambda) const {
  double total = 0.0;
  for (std::size_t m = 0; m < submodels_.size(); ++m) {
    if (lambda[m] == 0.0) continue;  // p^0 is flat, including where p vanishes
    const auto& s = submodels_[m];
    const bool left_in = s.left_dim && m - 1 >= first && m - 1 <= last;
    const bool right_in = s.right_dim && m >= first && m <= last;
    if (!left_in && !right_in) continue;
    const bool whole = (left_in || !s.left_dim) && (right_in || !s.right_dim);
    double v;
    if (whole) {
      v = submodel_marginal(m, phi);
    } else {
      const std::size_t b = left_in ? m - 1 : m;
      v = log_block_marginal(m, b, phi.blocks[b]);
    }
    if (v == kNegInf) return kNegInf;
    total += lambda[m] * v;
  }
  return total;
}

double PooledPrior::log_pool_linear(const PhiVector& phi, std::size_t first, std::size_t last) const {
  double total = 0.0;
  for (std::size_t b = first; b <= last; ++b) {
    const auto [w1, w2] = spec_.weights.per_boundary[b];
    double mix = kNegInf;
    if (w1 > 0.0) mix = log_add(mix, std::log(w1) + log_block_marginal(b, b, phi.blocks[b]));
    if (w2 > 0.0) mix = log_add(mix, std::log(w2) + log_block_marginal(b + 1, b, phi.blocks[b]));
    if (mix == kNegInf) return kNegInf;
    total += mix;
  }
  return total;
}

double PooledPrior::log_pool_partial(const PhiVector& phi) const {
  const auto a = spec_.authority;
  const auto m_count = submodels_.size();
  double total = submodel_marginal(a, phi);
  if (total == kNegInf) return kNegInf;
  auto sub_pool = [&](std::size_t first, std::size_t last) {
    return spec_.sub_method == PoolingMethod::linear
               ? log_pool_linear(phi, first, last)
               : log_pool_logarithmic(phi, first, last, spec_.weights.per_submodel);
  };
  if (a >= 2) {
    const double g1 = sub_pool(0, a - 2);
    if (g1 == kNegInf) return kNegInf;
    total += g1;
  }
  if (a + 2 < m_count) {
    const double g2 = sub_pool(a + 1, blocks_.size() - 1);
    if (g2 == kNegInf) return kNegInf;
    total += g2;
  }
  return total;
}

double PooledPrior::log_pool_complete(const PhiVector& phi) const {
  const auto& choices = spec_.choices;
  double total = 0.0;
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    double v;
    if (b + 1 < blocks_.size() && choices[b] == BoundaryChoice::right && choices[b + 1] == BoundaryChoice::left) {
      // Both blocks of submodel b+1: keep its joint two-block marginal.
      v = submodel_marginal(b + 1, phi);
      ++b;
    } else {
      const std::size_t owner = choices[b] == BoundaryChoice::left ? b : b + 1;
      v = log_block_marginal(owner, b, phi.blocks[b]);
    }
    if (v == kNegInf) return kNegInf;
    total += v;
  }
  return total;
}

double PooledPrior::log_density(const PhiVector& phi) const {
  if (phi.blocks.size() != blocks_.size()) throw StructuralError("phi has the wrong number of blocks");
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    if (phi.blocks[b].size() != blocks_[b].dim) throw StructuralError("phi block '" + blocks_[b].label + "' has the wrong dimension");
  }
  double v = 0.0;
  switch (spec_.method) {
    case PoolingMethod::poe:
    case PoolingMethod::logarithmic:
      v = log_pool_logarithmic(phi, 0, blocks_.size() - 1, spec_.weights.per_submodel);
      break;
    case PoolingMethod::linear:
      v = log_pool_linear(phi, 0, blocks_.size() - 1);
      break;
    case PoolingMethod::dictatorial_partial:
      v = log_pool_partial(phi);
      break;
    case PoolingMethod::dictatorial_complete:
      v = log_pool_complete(phi);
      break;
  }
  if (v == kNegInf) return kNegInf;
  if (spec_.log_norm) v -= *spec_.log_norm;
  return v;
}

double log_pool_eval(const PooledPrior& pool, const PhiVector& phi) { return pool.log_density(phi); }

PoolFactorization factorize_for_sampler(const ChainModel& model, const PooledPrior& pool, FactorizationMode mode) {
  if (model.size() != 3) throw UnsupportedError("sampler factorization requires exactly three submodels");
  const auto blocks = model.phi_blocks;
  auto joint_pool = [&pool](ConstValues a, ConstValues b) {
    PhiVector phi{{Values(a.begin(), a.end()), Values(b.begin(), b.end())}};
    return pool.log_density(phi);
  };

  PoolFactorization f;
  f.mode = mode;
  switch (mode) {
    case FactorizationMode::flat_ends:
      f.pool1 = [](ConstValues) { return 0.0; };
      f.pool3 = [](ConstValues) { return 0.0; };
      f.pool2 = joint_pool;
      break;
    case FactorizationMode::subprior_ends: {
      const auto& s1 = model.submodels[0];
      const auto& s3 = model.submodels[2];
      f.pool1 = [s1](ConstValues a) { return s1.eval_log_prior_marginal(a); };
      f.pool3 = [s3](ConstValues b) { return s3.eval_log_prior_marginal(b); };
      f.pool2 = [joint_pool, s1, s3](ConstValues a, ConstValues b) {
        const double full = joint_pool(a, b);
        if (full == kNegInf) return kNegInf;
        const double end1 = s1.eval_log_prior_marginal(a);
        const double end3 = s3.eval_log_prior_marginal(b);
        if (std::isnan(end1) || std::isnan(end3)) throw NumericalError("end prior marginal returned NaN");
        if (end1 == kNegInf || end3 == kNegInf) {
          throw ModelInconsistencyError("an end submodel's prior is zero where the pooled prior is positive");
        }
        return full - end1 - end3;
      };
      break;
    }
    case FactorizationMode::custom:
      throw ConfigurationError("custom factorizations are built directly, not derived");
  }
  return f;
}

std::size_t GridSpec::total_points() const {
  std::size_t n = 1;
  for (auto p : points) n *= p;
  return n;
}

double GridSpec::cell_volume() const {
  double v = 1.0;
  for (std::size_t a = 0; a < points.size(); ++a) v *= (upper[a] - lower[a]) / static_cast<double>(points[a]);
  return v;
}

double GridSpec::coordinate(std::size_t axis, std::size_t i) const {
  const double h = (upper[axis] - lower[axis]) / static_cast<double>(points[axis]);
  return lower[axis] + (static_cast<double>(i) + 0.5) * h;
}

std::vector<double> GridTable::point(std::size_t flat) const {
  std::vector<double> x(grid.points.size());
  for (std::size_t a = grid.points.size(); a-- > 0;) {
    x[a] = grid.coordinate(a, flat % grid.points[a]);
    flat /= grid.points[a];
  }
  return x;
}

std::vector<double> GridTable::mean() const {
  const auto d = grid.points.size();
  const double vol = grid.cell_volume();
  std::vector<double> mu(d, 0.0);
  for (std::size_t i = 0; i < density.size(); ++i) {
    const auto x = point(i);
    for (std::size_t a = 0; a < d; ++a) mu[a] += density[i] * vol * x[a];
  }
  return mu;
}

std::vector<std::vector<double>> GridTable::covariance() const {
  const auto d = grid.points.size();
  const double vol = grid.cell_volume();
  const auto mu = mean();
  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < density.size(); ++i) {
    const auto x = point(i);
    const double w = density[i] * vol;
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a][b] += w * (x[a] - mu[a]) * (x[b] - mu[b]);
  }
  return cov;
}

double GridTable::correlation(std::size_t a, std::size_t b) const {
  const auto cov = covariance();
  return cov[a][b] / std::sqrt(cov[a][a] * cov[b][b]);
}

namespace {

void check_grid(const GridSpec& grid) {
  const auto d = grid.points.size();
  if (d == 0 || grid.lower.size() != d || grid.upper.size() != d) throw ConfigurationError("grid axes are inconsistent");
  double total = 1.0;
  for (std::size_t a = 0; a < d; ++a) {
    if (grid.points[a] == 0 || !(grid.upper[a] > grid.lower[a])) throw ConfigurationError("grid axis is empty");
    total *= static_cast<double>(grid.points[a]);
  }
  if (total > 1e7) throw ConfigurationError("grid exceeds 1e7 points");
}

GridTable finish_grid(const GridSpec& grid, std::vector<double> logs, double max_log, double row_sum) {
  if (!std::isfinite(max_log)) throw NumericalError("density is zero or non-finite everywhere on the grid");
  const double vol = grid.cell_volume();
  const double mass = row_sum * vol;
  if (!std::isfinite(mass) || mass <= 0.0) throw NumericalError("non-finite mass on grid");
  GridTable table{grid, std::move(logs), max_log + std::log(mass)};
  for (auto& v : table.density) v = v / mass;
  return table;
}

}  // namespace

GridTable grid_normalize_log_density(const std::function<double(ConstValues)>& log_density, const GridSpec& grid) {
  check_grid(grid);
  const auto n = grid.total_points();
  const auto rows = grid.points[0];
  const auto row_len = n / rows;
  std::vector<double> values(n);
  std::vector<double> row_max(rows, kNegInf);
  FirstException errors;

  // Rows are independent; per-row partials are combined in a fixed order so
  // the result does not depend on the thread count.
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    errors.run([&] {
      std::vector<double> x(grid.points.size());
      for (std::size_t j = 0; j < row_len; ++j) {
        std::size_t flat = r * row_len + j;
        std::size_t rem = flat;
        for (std::size_t a = grid.points.size(); a-- > 0;) {
          x[a] = grid.coordinate(a, rem % grid.points[a]);
          rem /= grid.points[a];
        }
        const double v = log_density(x);
        if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
          throw NumericalError("non-finite mass on grid");
        }
        values[flat] = v;
        row_max[r] = std::max(row_max[r], v);
      }
    });
  }
  errors.rethrow();
  const double max_log = *std::max_element(row_max.begin(), row_max.end());
  if (!std::isfinite(max_log)) throw NumericalError("density is zero or non-finite everywhere on the grid");

  std::vector<double> row_sum(rows, 0.0);
#pragma omp parallel for schedule(static)
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < row_len; ++j) {
      auto& v = values[r * row_len + j];
      v = std::exp(v - max_log);
      s += v;
    }
    row_sum[r] = s;
  }
  const double total = std::accumulate(row_sum.begin(), row_sum.end(), 0.0);
  return finish_grid(grid, std::move(values), max_log, total);
}

namespace serial {

GridTable grid_normalize_log_density(const std::function<double(ConstValues)>& log_density, const GridSpec& grid) {
  check_grid(grid);
  const auto n = grid.total_points();
  std::vector<double> values(n);
  double max_log = kNegInf;
  std::vector<double> x(grid.points.size());
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t rem = flat;
    for (std::size_t a = grid.points.size(); a-- > 0;) {
      x[a] = grid.coordinate(a, rem % grid.points[a]);
      rem /= grid.points[a];
    }
    const double v = log_density(x);
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) throw NumericalError("non-finite mass on grid");
    values[flat] = v;
    max_log = std::max(max_log, v);
  }
  if (!std::isfinite(max_log)) throw NumericalError("density is zero or non-finite everywhere on the grid");
  double total = 0.0;
  for (auto& v : values) {
    v = std::exp(v - max_log);
    total += v;
  }
  return finish_grid(grid, std::move(values), max_log, total);
}

}  // namespace serial

PhiVector split_blocks(ConstValues flat, const std::vector<PhiBlock>& blocks) {
  PhiVector phi;
  std::size_t at = 0;
  for (const auto& b : blocks) {
    if (at + b.dim > flat.size()) throw StructuralError("flat coordinate vector too short for the block layout");
    phi.blocks.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(at), flat.begin() + static_cast<std::ptrdiff_t>(at + b.dim));
    at += b.dim;
  }
  if (at != flat.size()) throw StructuralError("flat coordinate vector too long for the block layout");
  return phi;
}

GridTable grid_normalize(const PooledPrior& pool, const std::vector<PhiBlock>& blocks, const GridSpec& grid) {
  std::size_t dims = 0;
  for (const auto& b : blocks) {
    for (const auto& c : b.support) {
      if (c.is_discrete()) throw UnsupportedError("grid normalization supports continuous blocks only");
    }
    dims += b.dim;
  }
  if (dims != grid.points.size()) throw StructuralError("grid dimension does not match the shared blocks");
  return grid_normalize_log_density([&](ConstValues x) { return pool.log_density(split_blocks(x, blocks)); }, grid);
}

}  // namespace chainmeld
