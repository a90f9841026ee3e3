#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "bnmvr/io.hpp"

using namespace bnmvr;
namespace fs = std::filesystem;

namespace {

const fs::path data_dir = BNMVR_DATA_DIR;

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("bnmvr_test_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

RunConfig marks_config(std::size_t sweeps, std::size_t burn_in, std::size_t thin) {
  std::ostringstream j;
  j << R"({"responses": ["mechanics", "vectors", "algebra"],
           "correlation": {"variant": "grouped_correlations"},
           "chain": {"sweeps": )"
    << sweeps << R"(, "burn_in": )" << burn_in << R"(, "thin": )" << thin << R"(, "seed": 9},
           "summary": {"grid_points": 5, "precision_thresholds": [0.1, 0.2]}})";
  return parse_config(j.str());
}

}  // namespace

TEST_CASE("parse_config: omitted priors are materialised with their defaults") {
  const RunConfig c = parse_config(R"({"responses": ["a", "b"], "mean": [{"column": "x"}]})");
  CHECK(c.priors.c_beta_shape == 0.5);
  CHECK(c.priors.c_beta_scale == 0.0);
  CHECK(c.priors.resolved_c_beta_scale(40, 2) == 40.0);
  CHECK(c.priors.c_alpha.kind == ScalePriorKind::inverse_gamma);
  CHECK(c.priors.c_alpha.shape == 1.1);
  CHECK(c.priors.c_alpha.scale == 1.1);
  CHECK(c.priors.sigma2.kind == ScalePriorKind::half_normal);
  CHECK(c.priors.sigma2.hn_var == 2.0);
  REQUIRE(c.mean_terms.size() == 1);
  CHECK(c.mean_terms[0].inclusion.a == 1.0);
  CHECK(c.mean_terms[0].inclusion.b == 1.0);
  CHECK(c.mean_terms[0].kind == TermKind::parametric);
  CHECK(c.correlation.variant == CorrelationVariant::common);
  CHECK(c.correlation.mean_prior_var == 1.0);
  CHECK(c.correlation.sd_prior_var == 1.0);
  CHECK(c.correlation.concentration_shape == 5.0);
  CHECK(c.correlation.concentration_rate == 2.0);

  // The echo carries every resolved value.
  const auto echo = nlohmann::json::parse(c.source);
  CHECK(echo["priors"]["c_beta"]["scale"] == "np/2");
  CHECK(echo["priors"]["c_alpha"]["shape"] == 1.1);
  CHECK(echo["correlation"]["concentration"]["rate"] == 2.0);
  CHECK(echo["mean"][0]["inclusion"]["b"] == 1.0);
}

TEST_CASE("parse_config: smooth terms default to six basis functions") {
  const RunConfig c = parse_config(R"({"responses": ["a"], "mean": [{"column": "x", "type": "smooth"}]})");
  CHECK(c.mean_terms[0].kind == TermKind::smooth);
  CHECK(c.mean_terms[0].basis_count == 6);
}

TEST_CASE("parse_config: errors name the offending key") {
  CHECK_THROWS_WITH_AS(parse_config(R"({"chain": {"sweeps": 100, "burn_in": 100}})"),
                       doctest::Contains("config.chain.burn_in"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"correlation": {"variant": "blocky"}})"),
                       doctest::Contains("common, grouped_correlations, grouped_variables"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"chain": {"swepes": 10}})"), doctest::Contains("config.chain.swepes"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"priors": {"c_alpha": {"type": "half_normal", "shape": 2}}})"),
                       doctest::Contains("config.priors.c_alpha"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"mean": [{"column": "x", "basis": 4}]})"),
                       doctest::Contains("config.mean[0].basis"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config("{not json"), doctest::Contains("not valid JSON"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config(R"({"simulate": {"dims": [2, 4]}})"), doctest::Contains("must include 1"),
                       ConfigError);
}

TEST_CASE("resolve_model: unknown column") {
  const Dataset d = parse_csv("a,b\n1,2\n3,4\n");
  const RunConfig c = parse_config(R"({"responses": ["a", "zz"]})");
  CHECK_THROWS_WITH_AS(resolve_model(c, d), doctest::Contains("'zz'"), ConfigError);
}

TEST_CASE("ingest_csv: shipped datasets") {
  const Dataset clinical = ingest_csv(data_dir / "clinical_17x6.csv");
  CHECK(clinical.rows() == 17);
  CHECK(clinical.cols() == 6);
  CHECK(clinical.names[3] == "sex");
  CHECK(clinical.values(0, 0) == 440.258);
  const Dataset marks = ingest_csv(data_dir / "marks_88x5.csv");
  CHECK(marks.rows() == 88);
  CHECK(marks.cols() == 5);
  CHECK(marks.values(0, 1) == 60.0);
}

TEST_CASE("parse_csv: malformed input") {
  CHECK_THROWS_WITH_AS(parse_csv("a,b\n1,2\n3,x\n", "f.csv"),
                       doctest::Contains("f.csv: row 2 (line 3), column 'b': non-numeric value 'x'"), DataError);
  CHECK_THROWS_WITH_AS(parse_csv("a,b\n1,2,3\n", "f.csv"), doctest::Contains("has 3 fields but the header has 2"),
                       DataError);
  CHECK_THROWS_WITH_AS(parse_csv("", "f.csv"), doctest::Contains("empty file"), DataError);
  CHECK_THROWS_WITH_AS(parse_csv("a,b\n", "f.csv"), doctest::Contains("no data rows"), DataError);
  CHECK_THROWS_WITH_AS(parse_csv("a,a\n1,2\n", "f.csv"), doctest::Contains("duplicate column"), DataError);
}

TEST_CASE("format_double: 17 significant digits round-trip") {
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(format_double(1.0) == "1");
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform() * 40.0 - 20.0);
    CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
  }
}

TEST_CASE("draws: write, read and summarize reproduce the fit exactly") {
  const RunConfig config = marks_config(600, 300, 2);
  const Dataset data = ingest_csv(data_dir / "marks_88x5.csv");
  const ModelSpec spec = resolve_model(config, data);
  const DesignMatrices designs = build_designs(data, spec.design);
  const ChainSamples fit = run_chain(designs, spec, config.schedule);
  REQUIRE(fit.draws.size() == 150);

  const fs::path a = scratch("fit");
  emit_outputs(a, fit, config);
  for (const char* f : {"draws.csv", "curves.csv", "inclusion.csv", "correlations.csv", "precision.csv",
                        "manifest.json"})
    CHECK(fs::exists(a / f));
  CHECK(line_count(a / "draws.csv") == 151);

  ChainSamples back = read_draws(a / "draws.csv", designs, spec);
  REQUIRE(back.draws.size() == fit.draws.size());
  for (std::size_t s = 0; s < fit.draws.size(); ++s) {
    CHECK(back.draws[s].beta == fit.draws[s].beta);
    CHECK(back.draws[s].r == fit.draws[s].r);
    CHECK(back.draws[s].sigma2 == fit.draws[s].sigma2);
    CHECK(back.draws[s].c_beta == fit.draws[s].c_beta);
    CHECK(back.draws[s].labels == fit.draws[s].labels);
    CHECK(back.draws[s].concentration == fit.draws[s].concentration);
  }

  back.schedule = config.schedule;
  const fs::path b = scratch("summarize");
  write_summaries(b, back, config);
  for (const char* f : {"curves.csv", "inclusion.csv", "correlations.csv", "precision.csv"})
    CHECK(slurp(a / f) == slurp(b / f));

  const auto manifest = nlohmann::json::parse(slurp(a / "manifest.json"));
  CHECK(manifest["seed"] == 9);
  CHECK(manifest["retained_draws"] == 150);
  CHECK(manifest["acceptance"].is_array());
  CHECK(manifest["health"]["numerical_failures"] == 0);
  CHECK(manifest["config"]["correlation"]["variant"] == "grouped_correlations");
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("draws: header mismatch is rejected") {
  const RunConfig config = marks_config(40, 20, 1);
  const Dataset data = ingest_csv(data_dir / "marks_88x5.csv");
  const ModelSpec spec = resolve_model(config, data);
  const DesignMatrices designs = build_designs(data, spec.design);
  const fs::path dir = scratch("mismatch");
  write_draws(dir / "draws.csv", run_chain(designs, spec, config.schedule));
  RunConfig other = parse_config(R"({"responses": ["mechanics", "vectors"]})");
  const ModelSpec spec2 = resolve_model(other, data);
  CHECK_THROWS_WITH_AS(read_draws(dir / "draws.csv", build_designs(data, spec2.design), spec2),
                       doctest::Contains("header does not match"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("draws: 10,000 retained draws give 10,000 rows") {
  const RunConfig config = parse_config(
      R"({"responses": ["y1"], "chain": {"sweeps": 10500, "burn_in": 500, "thin": 1, "seed": 3}})");
  const Dataset data = ingest_csv(data_dir / "clinical_17x6.csv");
  const ModelSpec spec = resolve_model(config, data);
  const ChainSamples fit = run_chain(build_designs(data, spec.design), spec, config.schedule);
  const fs::path dir = scratch("rows");
  write_draws(dir / "draws.csv", fit);
  CHECK(line_count(dir / "draws.csv") == 10001);
  fs::remove_all(dir);
}
