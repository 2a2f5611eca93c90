#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "chainmeld/builtin.hpp"
#include "chainmeld/diagnostics.hpp"
#include "chainmeld/normal_approx.hpp"
#include "chainmeld/pooling.hpp"
#include "chainmeld/samplers.hpp"

namespace chainmeld {

inline constexpr const char* kVersion = "0.1.0";

enum class SamplerKind { parallel, parallel_unitwise, sequential, normal_approx };

std::string to_string(SamplerKind kind);

/// Kernels by role. Unset kernels get model-derived defaults.
struct KernelConfigs {
  std::optional<MHKernelConfig> stage_one_first;  // (phi12, psi1)
  std::optional<MHKernelConfig> stage_one_last;   // (phi23, psi3)
  std::optional<MHKernelConfig> psi2;             // parallel stage two
  std::optional<MHKernelConfig> stage_two;        // sequential (phi23, psi2)
  std::optional<MHKernelConfig> psi3;             // sequential stage three
  std::optional<MHKernelConfig> normal_approx;    // (phi12, phi23, psi2)
  std::optional<MHKernelConfig> prior;            // prior summaries for normal-approx
};

struct SamplerConfig {
  SamplerKind kind = SamplerKind::parallel;
  RunSettings settings;            // stage two / three / normal-approx run
  RunSettings stage_one;           // stage-one runs (and prior runs)
  FactorizationMode factorization = FactorizationMode::subprior_ends;
  KernelConfigs kernels;
  std::optional<NormalApproxMode> normal_approx_mode;
};

struct ModelConfig {
  std::string builtin;  // "gaussian-chain" or "discrete-chain"
  GaussianChainParams gaussian;
  DiscreteChainParams discrete;
};

struct GridConfig {
  GridSpec spec;
  std::vector<double> lambda1_sweep;
};

/// Parsed and validated run configuration.
struct RunConfig {
  nlohmann::json document;  // effective document, after overrides
  std::uint64_t seed = 0;
  ModelConfig model;
  PoolSpec pool;  // block marginals are filled from the model
  std::optional<SamplerConfig> sampler;
  std::optional<GridConfig> grid;
  std::string out_dir = "out";

  /// SHA-256 of document.dump().
  std::string digest() const;
};

/// Validates the document; errors are ConfigurationError starting with the
/// JSON pointer of the offending key, e.g. "/sampler/iterations: ...".
RunConfig parse_run_config(const nlohmann::json& document);

/// Reads a JSON file and applies --seed / --out-dir overrides.
RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed = std::nullopt,
                          std::optional<std::string> out_dir = std::nullopt);

struct BuiltModel {
  ChainModel model;
  std::map<BlockMarginalKey, LogMarginalFn> block_marginals;
  std::optional<DiscreteChainTables> tables;
};

BuiltModel build_model(const RunConfig& config);
PooledPrior build_pool(const RunConfig& config, const BuiltModel& built);

struct SamplerRun {
  MeldedChainOutput output;
  std::vector<std::pair<std::string, SampleStore>> stores;  // file stem -> store
  std::map<std::string, AcceptanceCount> stage_acceptance;  // earlier stages
  std::optional<NormalApproxTarget> normal_approx;
  std::vector<std::pair<std::string, std::vector<MarginalShape>>> shapes;
};

SamplerRun run_sampler(const RunConfig& config, const BuiltModel& built, const PooledPrior& pool);

/// Per-column R-hat, bulk/tail ESS and acceptance rate. With
/// `empirical_acceptance` the rate is the fraction of iterations on which the
/// column's value changed (used when only the CSV is available).
std::vector<DiagnosticRow> diagnose(const MeldedChainOutput& out, bool empirical_acceptance);

enum class Command { validate, pool_grid, sample, oracle, diag };

Command command_from_string(const std::string& name);

struct CommandResult {
  std::vector<std::filesystem::path> files;  // artifacts written
  std::vector<std::string> messages;         // lines for stdout
};

/// Executes one subcommand and writes its artifacts under config.out_dir.
CommandResult run_from_config(Command command, const RunConfig& config);

}  // namespace chainmeld
