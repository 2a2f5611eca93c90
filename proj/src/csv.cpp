#include "chainmeld/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "chainmeld/errors.hpp"

namespace chainmeld {

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  return os;
}

void write_line(std::ostream& os, const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) os << ',';
    os << cells[i];
  }
  os << '\n';
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path, std::vector<std::string>& header) {
  std::ifstream is(path);
  if (!is) throw ConfigurationError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw ConfigurationError(path.string() + " is empty");
  header = split(line);
  std::vector<std::vector<std::string>> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != header.size()) throw ConfigurationError(path.string() + ": ragged row");
    rows.push_back(std::move(cells));
  }
  return rows;
}

std::size_t parse_index(const std::string& s) {
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigurationError("bad integer '" + s + "'");
  return v;
}

}  // namespace

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

double parse_number(const std::string& s) {
  if (s == "nan") return std::nan("");
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigurationError("bad number '" + s + "'");
  return v;
}

void write_table(const std::filesystem::path& path, const std::vector<std::string>& header,
                 const std::vector<std::vector<std::string>>& rows) {
  auto os = open_out(path);
  write_line(os, header);
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw StructuralError("row width does not match the header");
    write_line(os, r);
  }
}

void write_melded_samples(const std::filesystem::path& path, const MeldedChainOutput& out) {
  auto os = open_out(path);
  std::vector<std::string> header{"chain", "iteration"};
  header.insert(header.end(), out.columns.begin(), out.columns.end());
  write_line(os, header);
  std::vector<std::string> cells;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    cells = {std::to_string(out.chain[r]), std::to_string(out.iteration[r])};
    for (double v : out.row(r)) cells.push_back(format_number(v));
    write_line(os, cells);
  }
}

MeldedChainOutput read_melded_samples(const std::filesystem::path& path) {
  std::vector<std::string> header;
  const auto rows = read_rows(path, header);
  if (header.size() < 2 || header[0] != "chain" || header[1] != "iteration") {
    throw ConfigurationError(path.string() + ": expected chain,iteration,... header");
  }
  MeldedChainOutput out;
  out.columns.assign(header.begin() + 2, header.end());
  std::size_t chains = 0;
  for (const auto& r : rows) {
    out.chain.push_back(parse_index(r[0]));
    out.iteration.push_back(parse_index(r[1]));
    chains = std::max(chains, out.chain.back() + 1);
    for (std::size_t i = 2; i < r.size(); ++i) out.values.push_back(parse_number(r[i]));
  }
  out.num_chains = chains;
  return out;
}

void write_sample_store(const std::filesystem::path& path, const SampleStore& store) {
  auto os = open_out(path);
  std::vector<std::string> header{"chain", "iteration", "source"};
  header.insert(header.end(), store.labels.begin(), store.labels.end());
  header.emplace_back("log_density");
  write_line(os, header);
  std::vector<std::string> cells;
  for (std::size_t r = 0; r < store.size(); ++r) {
    cells = {std::to_string(store.chain[r]), std::to_string(store.iteration[r]),
             store.source.empty() ? std::string() : std::to_string(store.source[r])};
    for (double v : store.row(r)) cells.push_back(format_number(v));
    cells.push_back(format_number(store.log_density[r]));
    write_line(os, cells);
  }
}

SampleStore read_sample_store(const std::filesystem::path& path, std::size_t phi_dim) {
  std::vector<std::string> header;
  const auto rows = read_rows(path, header);
  if (header.size() < 4 || header[0] != "chain" || header[1] != "iteration" || header[2] != "source" ||
      header.back() != "log_density") {
    throw ConfigurationError(path.string() + ": expected chain,iteration,source,...,log_density header");
  }
  SampleStore s;
  const auto width = header.size() - 4;
  if (phi_dim > width) throw ConfigurationError(path.string() + ": fewer columns than the phi block");
  s.phi_dim = phi_dim;
  s.psi_dim = width - phi_dim;
  s.labels.assign(header.begin() + 3, header.end() - 1);
  for (const auto& r : rows) {
    std::vector<double> row;
    for (std::size_t i = 3; i + 1 < r.size(); ++i) row.push_back(parse_number(r[i]));
    s.append(row, parse_number(r.back()), parse_index(r[0]), parse_index(r[1]));
    if (!r[2].empty()) s.source.push_back(parse_index(r[2]));
  }
  if (!s.source.empty() && s.source.size() != s.size()) throw ConfigurationError(path.string() + ": partial source column");
  return s;
}

void write_index_trace(const std::filesystem::path& path, const MeldedChainOutput& out) {
  auto os = open_out(path);
  const auto& t = out.trace;
  const bool sequential = !t.intermediate.empty();
  std::vector<std::string> header{"chain", "iteration"};
  if (sequential) {
    header.insert(header.end(), {"store1", "intermediate"});
  } else {
    for (auto& l : coordinate_labels("store1", t.units1)) header.push_back(l);
    for (auto& l : coordinate_labels("store3", t.units3)) header.push_back(l);
  }
  write_line(os, header);
  std::vector<std::string> cells;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    cells = {std::to_string(out.chain[r]), std::to_string(out.iteration[r])};
    if (sequential) {
      cells.push_back(std::to_string(t.store1[r]));
      cells.push_back(std::to_string(t.intermediate[r]));
    } else {
      for (std::size_t u = 0; u < t.units1; ++u) cells.push_back(std::to_string(t.store1[r * t.units1 + u]));
      for (std::size_t u = 0; u < t.units3; ++u) cells.push_back(std::to_string(t.store3[r * t.units3 + u]));
    }
    write_line(os, cells);
  }
}

void write_grid(const std::filesystem::path& path, const GridTable& table, const std::vector<std::string>& labels) {
  auto os = open_out(path);
  auto header = labels;
  header.emplace_back("density");
  write_line(os, header);
  std::vector<std::string> cells;
  for (std::size_t i = 0; i < table.density.size(); ++i) {
    cells.clear();
    for (double x : table.point(i)) cells.push_back(format_number(x));
    cells.push_back(format_number(table.density[i]));
    write_line(os, cells);
  }
}

void write_diagnostics(const std::filesystem::path& path, const std::vector<DiagnosticRow>& rows) {
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows) {
    cells.push_back({r.parameter, format_number(r.rhat), format_number(r.ess_bulk), format_number(r.ess_tail),
                     format_number(r.acceptance_rate)});
  }
  write_table(path, {"parameter", "rhat", "ess_bulk", "ess_tail", "acceptance_rate"}, cells);
}

}  // namespace chainmeld
