#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "chainmeld/diagnostics.hpp"
#include "chainmeld/pooling.hpp"
#include "chainmeld/samplers.hpp"

namespace chainmeld {

/// Shortest decimal that round-trips; "inf", "-inf" and "nan" otherwise.
std::string format_number(double x);
double parse_number(const std::string& s);

/// chain,iteration,<columns...>
void write_melded_samples(const std::filesystem::path& path, const MeldedChainOutput& out);
/// Reads the columns, chain and iteration back; acceptance and trace are empty.
MeldedChainOutput read_melded_samples(const std::filesystem::path& path);

/// chain,iteration,source,<labels...>,log_density. `source` is blank when the
/// store carries none. This is also the ingestion format for stage-one draws
/// produced elsewhere.
void write_sample_store(const std::filesystem::path& path, const SampleStore& store);
SampleStore read_sample_store(const std::filesystem::path& path, std::size_t phi_dim);

/// chain,iteration,store1[u]...,store3[u]... (or store1,intermediate for the
/// sequential sampler).
void write_index_trace(const std::filesystem::path& path, const MeldedChainOutput& out);

/// <labels...>,density
void write_grid(const std::filesystem::path& path, const GridTable& table, const std::vector<std::string>& labels);

/// parameter,rhat,ess_bulk,ess_tail,acceptance_rate
void write_diagnostics(const std::filesystem::path& path, const std::vector<DiagnosticRow>& rows);

/// Generic writer; rows must match the header width.
void write_table(const std::filesystem::path& path, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows);

}  // namespace chainmeld
