#ifndef BNMVR_IO_HPP
#define BNMVR_IO_HPP

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bnmvr/posterior.hpp"
#include "bnmvr/sampler.hpp"
#include "bnmvr/simharness.hpp"

namespace bnmvr {

/// Invalid configuration; the message starts with the path of the offending key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file; the message names the file, row and column.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TermConfig {
  std::string column;
  TermKind kind = TermKind::parametric;
  std::size_t basis_count = 1;
  InclusionPrior inclusion;
};

struct SimulateConfig {
  std::vector<std::size_t> n{50, 150};
  std::vector<double> rho{0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<std::size_t> dims{1, 2, 4, 6, 10};
  int mean_model = 1;
  std::size_t replicates = 40;
  InclusionPrior inclusion;
};

struct RunConfig {
  std::string subcommand;
  std::string data_path;
  std::vector<std::string> responses;
  std::vector<TermConfig> mean_terms;
  std::vector<TermConfig> variance_terms;
  bool standardize_covariates = true;
  bool standardize_responses = true;
  CorrelationModelSpec correlation;
  PriorConfig priors;
  ChainSchedule schedule;
  std::size_t grid_points = 50;
  std::vector<double> precision_thresholds{0.1};
  SimulateConfig simulate;
  std::string source;  // normalised JSON echo of the parsed config
};

/// Parses a JSON config and fills every omitted prior with the defaults
/// (c_beta ~ IG(1/2, np/2), Beta(1,1) inclusion, c_alpha ~ IG(1.1,1.1),
/// sigma_j ~ HN(2), mu_R ~ N(0,1), sigma_R ~ HN(1), alpha* ~ Gamma(5,2)).
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Resolves column names against the data header into a ModelSpec.
ModelSpec resolve_model(const RunConfig& config, const Dataset& data);

Dataset ingest_csv(const std::filesystem::path& path);
Dataset parse_csv(const std::string& text, const std::string& origin = "<memory>");

/// Shortest text that round-trips a double (17 significant digits).
std::string format_double(double v);

/// Column names of draws.csv for a model, in file order.
std::vector<std::string> draw_columns(const DesignMatrices& designs, const ModelSpec& spec);

void write_draws(const std::filesystem::path& path, const ChainSamples& samples);
/// Reads draws.csv back into a ChainSamples bound to `designs`/`spec`.
ChainSamples read_draws(const std::filesystem::path& path, const DesignMatrices& designs, const ModelSpec& spec);

/// Writes curves.csv, inclusion.csv, correlations.csv and precision.csv.
void write_summaries(const std::filesystem::path& dir, const ChainSamples& samples, const RunConfig& config);

/// draws.csv, the summary tables and manifest.json for a completed fit.
void emit_outputs(const std::filesystem::path& dir, const ChainSamples& samples, const RunConfig& config);

/// simulation.csv (long form), bias_table.csv / variance_table.csv (paper layout),
/// replicates.csv and manifest.json for a set of simulation cells.
void emit_simulation(const std::filesystem::path& dir, const std::vector<SimMetrics>& cells, const RunConfig& config);

}  // namespace bnmvr

#endif
