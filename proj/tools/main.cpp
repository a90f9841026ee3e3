#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bnmvr/io.hpp"

namespace fs = std::filesystem;
using namespace bnmvr;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "bnmvr-out";
  std::string draws;
  bool desk = false;
  bool full = false;
};

void apply_scale(ChainSchedule& schedule, const Options& opt) {
  const ChainSchedule base = schedule;
  if (opt.desk) schedule = desk_schedule();
  if (opt.full) schedule = full_schedule();
  schedule.seed = base.seed;
  schedule.adapt = base.adapt;
  schedule.batch_size = base.batch_size;
  if (opt.seed) schedule.seed = *opt.seed;
}

// Data paths in a config are relative to the config file.
fs::path data_path(const RunConfig& config, const Options& opt) {
  if (config.data_path.empty()) throw ConfigError("config.data: required for this subcommand");
  fs::path p(config.data_path);
  if (p.is_relative()) p = fs::path(opt.config).parent_path() / p;
  return p;
}

RunConfig load(const Options& opt, const std::string& subcommand) {
  RunConfig config = opt.config.empty() ? parse_config("{}") : load_config(opt.config);
  config.subcommand = subcommand;
  apply_scale(config.schedule, opt);
  return config;
}

int run_fit(const Options& opt) {
  const RunConfig config = load(opt, "fit");
  const Dataset data = ingest_csv(data_path(config, opt));
  const ModelSpec spec = resolve_model(config, data);
  std::cerr << "fit: n=" << data.values.rows() << ", p=" << spec.design.responses.size() << ", "
            << config.schedule.sweeps << " sweeps (burn-in " << config.schedule.burn_in << ", thin "
            << config.schedule.thin << "), seed " << config.schedule.seed << "\n";
  const ChainSamples samples = run_chain(spec, data, config.schedule);
  emit_outputs(opt.out, samples, config);
  std::cerr << "fit: " << samples.draws.size() << " draws in " << samples.seconds << " s, "
            << samples.health.numerical_failures() << " numerical failures; wrote " << opt.out << "\n";
  return 0;
}

int run_summarize(const Options& opt) {
  const RunConfig config = load(opt, "summarize");
  const Dataset data = ingest_csv(data_path(config, opt));
  const ModelSpec spec = resolve_model(config, data);
  const DesignMatrices designs = build_designs(data, spec.design);
  const fs::path draws = opt.draws.empty() ? fs::path(opt.out) / "draws.csv" : fs::path(opt.draws);
  ChainSamples samples = read_draws(draws, designs, spec);
  samples.schedule = config.schedule;
  std::error_code ec;
  fs::create_directories(opt.out, ec);
  if (ec) throw DataError(opt.out + ": cannot create output directory (" + ec.message() + ")");
  write_summaries(opt.out, samples, config);
  std::cerr << "summarize: " << samples.draws.size() << " draws from " << draws.string() << "; wrote " << opt.out
            << "\n";
  return 0;
}

int run_simulate(const Options& opt) {
  RunConfig config = load(opt, "simulate");
  if (opt.desk) config.simulate.replicates = 10;
  if (opt.full) config.simulate.replicates = 40;
  std::vector<SimMetrics> cells;
  std::uint64_t cell = 0;
  for (auto n : config.simulate.n) {
    for (double rho : config.simulate.rho) {
      SimScenario s;
      s.n = n;
      s.rho = rho;
      s.dims = config.simulate.dims;
      s.mean_model = config.simulate.mean_model;
      s.replicates = config.simulate.replicates;
      s.seed = derive_seed(config.schedule.seed, cell++);
      s.schedule = config.schedule;
      s.priors = config.priors;
      s.inclusion = config.simulate.inclusion;
      std::cerr << "simulate: n=" << n << ", rho=" << rho << " (" << s.replicates << " replicates)\n";
      cells.push_back(run_table(s, [&](const ReplicateResult& r) {
        std::cerr << "  replicate " << r.index + 1 << "/" << s.replicates << "\n";
      }));
      for (const auto& w : cells.back().warnings) std::cerr << "  warning: " << w << "\n";
    }
  }
  emit_simulation(opt.out, cells, config);
  std::cerr << "simulate: wrote " << opt.out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian semiparametric multivariate regression sampler"};
  app.require_subcommand(1);
  Options opt;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", opt.config, "JSON run configuration")->check(CLI::ExistingFile);
    if (needs_config) c->required();
    sub->add_option("--seed", opt.seed, "base seed (overrides chain.seed)");
    sub->add_option("--out", opt.out, "output directory")->capture_default_str();
    auto* desk = sub->add_flag("--desk-scale", opt.desk, "10,000 sweeps / 5,000 burn-in / thin 2");
    auto* full = sub->add_flag("--full-scale", opt.full, "40,000 sweeps / 20,000 burn-in / thin 2");
    desk->excludes(full);
  };
  auto* fit = app.add_subcommand("fit", "run the sampler and write draws, summaries and a manifest");
  common(fit, true);
  auto* summarize = app.add_subcommand("summarize", "recompute summary tables from a draws file");
  common(summarize, true);
  summarize->add_option("--draws", opt.draws, "draws file (default: <out>/draws.csv)");
  auto* simulate = app.add_subcommand("simulate", "run the relative bias/variance simulation study");
  common(simulate, false);

  CLI11_PARSE(app, argc, argv);

  try {
    if (fit->parsed()) return run_fit(opt);
    if (summarize->parsed()) return run_summarize(opt);
    if (simulate->parsed()) return run_simulate(opt);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
