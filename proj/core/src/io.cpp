#include "bnmvr/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bnmvr {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- config

std::string join_path(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

void check_object(const json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      std::string list;
      for (auto a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
      throw ConfigError(join_path(path, key) + ": unknown key (expected one of: " + list + ")");
    }
  }
}

double get_number(const json& j, const std::string& key, const std::string& path, double fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number()) throw ConfigError(join_path(path, key) + ": expected a number");
  return v.get<double>();
}

double get_positive(const json& j, const std::string& key, const std::string& path, double fallback) {
  const double v = get_number(j, key, path, fallback);
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(join_path(path, key) + ": must be positive");
  return v;
}

std::uint64_t get_count(const json& j, const std::string& key, const std::string& path, std::uint64_t fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) throw ConfigError(join_path(path, key) + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

bool get_bool(const json& j, const std::string& key, const std::string& path, bool fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_boolean()) throw ConfigError(join_path(path, key) + ": expected true or false");
  return j.at(key).get<bool>();
}

std::string get_string(const json& j, const std::string& key, const std::string& path, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ConfigError(join_path(path, key) + ": expected a string");
  return j.at(key).get<std::string>();
}

InclusionPrior parse_inclusion(const json& j, const std::string& path, InclusionPrior fallback) {
  check_object(j, path, {"a", "b"});
  return {get_positive(j, "a", path, fallback.a), get_positive(j, "b", path, fallback.b)};
}

ScalePrior parse_scale_prior(const json& j, const std::string& path, ScalePrior fallback) {
  check_object(j, path, {"type", "shape", "scale", "variance"});
  ScalePrior out = fallback;
  const std::string type = get_string(j, "type", path, fallback.kind == ScalePriorKind::inverse_gamma ? "inverse_gamma" : "half_normal");
  if (type == "inverse_gamma") {
    out.kind = ScalePriorKind::inverse_gamma;
    if (j.contains("variance")) throw ConfigError(path + ".variance: not used by an inverse_gamma prior");
    out.shape = get_positive(j, "shape", path, fallback.kind == ScalePriorKind::inverse_gamma ? fallback.shape : 1.1);
    out.scale = get_positive(j, "scale", path, fallback.kind == ScalePriorKind::inverse_gamma ? fallback.scale : 1.1);
  } else if (type == "half_normal") {
    out.kind = ScalePriorKind::half_normal;
    if (j.contains("shape") || j.contains("scale")) throw ConfigError(path + ": shape/scale not used by a half_normal prior");
    out.hn_var = get_positive(j, "variance", path, fallback.kind == ScalePriorKind::half_normal ? fallback.hn_var : 2.0);
  } else {
    throw ConfigError(path + ".type: unknown prior '" + type + "' (expected inverse_gamma or half_normal)");
  }
  return out;
}

std::vector<TermConfig> parse_terms(const json& j, const std::string& path, InclusionPrior default_inclusion) {
  if (!j.is_array()) throw ConfigError(path + ": expected an array of terms");
  std::vector<TermConfig> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string tp = path + "[" + std::to_string(i) + "]";
    const auto& t = j[i];
    check_object(t, tp, {"column", "type", "basis", "inclusion"});
    TermConfig term;
    if (!t.contains("column")) throw ConfigError(tp + ".column: required");
    term.column = get_string(t, "column", tp, "");
    const std::string type = get_string(t, "type", tp, "linear");
    if (type == "linear") {
      term.kind = TermKind::parametric;
      if (t.contains("basis")) throw ConfigError(tp + ".basis: only smooth terms take a basis size");
    } else if (type == "smooth") {
      term.kind = TermKind::smooth;
      term.basis_count = get_count(t, "basis", tp, 6);
      if (term.basis_count < 2) throw ConfigError(tp + ".basis: smooth terms need at least 2 basis functions");
    } else {
      throw ConfigError(tp + ".type: unknown term type '" + type + "' (expected linear or smooth)");
    }
    term.inclusion = t.contains("inclusion") ? parse_inclusion(t.at("inclusion"), tp + ".inclusion", default_inclusion)
                                             : default_inclusion;
    out.push_back(term);
  }
  return out;
}

template <class T>
std::vector<T> get_list(const json& j, const std::string& key, const std::string& path, std::vector<T> fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_array() || v.empty()) throw ConfigError(join_path(path, key) + ": expected a non-empty array");
  std::vector<T> out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::string ip = join_path(path, key) + "[" + std::to_string(i) + "]";
    if constexpr (std::is_same_v<T, double>) {
      if (!v[i].is_number()) throw ConfigError(ip + ": expected a number");
    } else {
      if (!v[i].is_number_unsigned()) throw ConfigError(ip + ": expected a non-negative integer");
    }
    out.push_back(v[i].get<T>());
  }
  return out;
}

const char* variant_name(CorrelationVariant v) {
  switch (v) {
    case CorrelationVariant::common:
      return "common";
    case CorrelationVariant::grouped_correlations:
      return "grouped_correlations";
    case CorrelationVariant::grouped_variables:
      return "grouped_variables";
  }
  return "common";
}

json scale_prior_json(const ScalePrior& p) {
  if (p.kind == ScalePriorKind::inverse_gamma) return {{"type", "inverse_gamma"}, {"shape", p.shape}, {"scale", p.scale}};
  return {{"type", "half_normal"}, {"variance", p.hn_var}};
}

json terms_json(const std::vector<TermConfig>& terms) {
  json out = json::array();
  for (const auto& t : terms) {
    json item{{"column", t.column}, {"type", t.kind == TermKind::smooth ? "smooth" : "linear"},
              {"inclusion", {{"a", t.inclusion.a}, {"b", t.inclusion.b}}}};
    if (t.kind == TermKind::smooth) item["basis"] = t.basis_count;
    out.push_back(item);
  }
  return out;
}

json config_json(const RunConfig& c) {
  json priors{{"c_beta", {{"shape", c.priors.c_beta_shape}}},
              {"c_alpha", scale_prior_json(c.priors.c_alpha)},
              {"sigma2", scale_prior_json(c.priors.sigma2)}};
  if (c.priors.c_beta_scale > 0.0)
    priors["c_beta"]["scale"] = c.priors.c_beta_scale;
  else
    priors["c_beta"]["scale"] = "np/2";
  return {
      {"data", c.data_path},
      {"responses", c.responses},
      {"mean", terms_json(c.mean_terms)},
      {"variance", terms_json(c.variance_terms)},
      {"standardize", {{"covariates", c.standardize_covariates}, {"responses", c.standardize_responses}}},
      {"correlation",
       {{"variant", variant_name(c.correlation.variant)},
        {"link", c.correlation.link == Link::fisher_z ? "fisher_z" : "identity"},
        {"tau2", c.correlation.tau2},
        {"mean_prior_variance", c.correlation.mean_prior_var},
        {"sd_prior_variance", c.correlation.sd_prior_var},
        {"truncation", c.correlation.truncation},
        {"groups", c.correlation.variable_groups},
        {"proposal_weight", c.correlation.proposal_weight},
        {"concentration", {{"shape", c.correlation.concentration_shape}, {"rate", c.correlation.concentration_rate}}}}},
      {"priors", priors},
      {"chain",
       {{"sweeps", c.schedule.sweeps},
        {"burn_in", c.schedule.burn_in},
        {"thin", c.schedule.thin},
        {"seed", c.schedule.seed},
        {"adapt", c.schedule.adapt},
        {"batch_size", c.schedule.batch_size}}},
      {"summary", {{"grid_points", c.grid_points}, {"precision_thresholds", c.precision_thresholds}}},
      {"simulate",
       {{"n", c.simulate.n},
        {"rho", c.simulate.rho},
        {"dims", c.simulate.dims},
        {"mean_model", c.simulate.mean_model},
        {"replicates", c.simulate.replicates},
        {"inclusion", {{"a", c.simulate.inclusion.a}, {"b", c.simulate.inclusion.b}}}}},
  };
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON (") + e.what() + ")");
  }
  const std::string top = "config";
  check_object(root, top,
               {"data", "responses", "mean", "variance", "standardize", "correlation", "priors", "chain", "summary",
                "simulate"});
  RunConfig c;
  c.data_path = get_string(root, "data", top, "");
  if (root.contains("responses")) {
    const auto& r = root.at("responses");
    if (!r.is_array()) throw ConfigError("config.responses: expected an array of column names");
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (!r[i].is_string()) throw ConfigError("config.responses[" + std::to_string(i) + "]: expected a column name");
      c.responses.push_back(r[i].get<std::string>());
    }
  }

  // Priors first: the default inclusion prior feeds the term lists.
  InclusionPrior default_inclusion;
  if (root.contains("priors")) {
    const auto& p = root.at("priors");
    const std::string pp = "config.priors";
    check_object(p, pp, {"c_beta", "c_alpha", "sigma2", "inclusion"});
    if (p.contains("c_beta")) {
      const auto& cb = p.at("c_beta");
      check_object(cb, pp + ".c_beta", {"shape", "scale"});
      c.priors.c_beta_shape = get_positive(cb, "shape", pp + ".c_beta", c.priors.c_beta_shape);
      if (cb.contains("scale") && !(cb.at("scale").is_string() && cb.at("scale") == "np/2"))
        c.priors.c_beta_scale = get_positive(cb, "scale", pp + ".c_beta", 0.0);
    }
    if (p.contains("c_alpha")) c.priors.c_alpha = parse_scale_prior(p.at("c_alpha"), pp + ".c_alpha", c.priors.c_alpha);
    if (p.contains("sigma2")) c.priors.sigma2 = parse_scale_prior(p.at("sigma2"), pp + ".sigma2", c.priors.sigma2);
    if (p.contains("inclusion")) default_inclusion = parse_inclusion(p.at("inclusion"), pp + ".inclusion", default_inclusion);
  }
  if (root.contains("mean")) c.mean_terms = parse_terms(root.at("mean"), "config.mean", default_inclusion);
  if (root.contains("variance")) c.variance_terms = parse_terms(root.at("variance"), "config.variance", default_inclusion);

  if (root.contains("standardize")) {
    const auto& s = root.at("standardize");
    check_object(s, "config.standardize", {"covariates", "responses"});
    c.standardize_covariates = get_bool(s, "covariates", "config.standardize", true);
    c.standardize_responses = get_bool(s, "responses", "config.standardize", true);
  }

  if (root.contains("correlation")) {
    const auto& r = root.at("correlation");
    const std::string rp = "config.correlation";
    check_object(r, rp,
                 {"variant", "link", "tau2", "mean_prior_variance", "sd_prior_variance", "truncation", "groups",
                  "concentration", "proposal_weight"});
    const std::string variant = get_string(r, "variant", rp, "common");
    if (variant == "common")
      c.correlation.variant = CorrelationVariant::common;
    else if (variant == "grouped_correlations")
      c.correlation.variant = CorrelationVariant::grouped_correlations;
    else if (variant == "grouped_variables")
      c.correlation.variant = CorrelationVariant::grouped_variables;
    else
      throw ConfigError(rp + ".variant: unknown variant '" + variant +
                        "' (valid: common, grouped_correlations, grouped_variables)");
    const std::string link = get_string(r, "link", rp, "fisher_z");
    if (link == "fisher_z")
      c.correlation.link = Link::fisher_z;
    else if (link == "identity")
      c.correlation.link = Link::identity;
    else
      throw ConfigError(rp + ".link: unknown link '" + link + "' (valid: fisher_z, identity)");
    c.correlation.tau2 = get_positive(r, "tau2", rp, c.correlation.tau2);
    c.correlation.mean_prior_var = get_positive(r, "mean_prior_variance", rp, c.correlation.mean_prior_var);
    c.correlation.sd_prior_var = get_positive(r, "sd_prior_variance", rp, c.correlation.sd_prior_var);
    c.correlation.proposal_weight = get_positive(r, "proposal_weight", rp, c.correlation.proposal_weight);
    if (c.correlation.proposal_weight > 1.0) throw ConfigError(rp + ".proposal_weight: must lie in (0, 1]");
    c.correlation.truncation = get_count(r, "truncation", rp, 0);
    c.correlation.variable_groups = get_count(r, "groups", rp, 0);
    if (r.contains("concentration")) {
      const auto& a = r.at("concentration");
      check_object(a, rp + ".concentration", {"shape", "rate"});
      c.correlation.concentration_shape = get_positive(a, "shape", rp + ".concentration", 5.0);
      c.correlation.concentration_rate = get_positive(a, "rate", rp + ".concentration", 2.0);
    }
  }

  if (root.contains("chain")) {
    const auto& ch = root.at("chain");
    const std::string cp = "config.chain";
    check_object(ch, cp, {"sweeps", "burn_in", "thin", "seed", "adapt", "batch_size"});
    c.schedule.sweeps = get_count(ch, "sweeps", cp, c.schedule.sweeps);
    c.schedule.burn_in = get_count(ch, "burn_in", cp, c.schedule.burn_in);
    c.schedule.thin = get_count(ch, "thin", cp, c.schedule.thin);
    c.schedule.seed = get_count(ch, "seed", cp, c.schedule.seed);
    c.schedule.adapt = get_bool(ch, "adapt", cp, c.schedule.adapt);
    c.schedule.batch_size = get_count(ch, "batch_size", cp, c.schedule.batch_size);
  }
  if (c.schedule.sweeps == 0) throw ConfigError("config.chain.sweeps: must be positive");
  if (c.schedule.burn_in >= c.schedule.sweeps) throw ConfigError("config.chain.burn_in: must be smaller than sweeps");
  if (c.schedule.thin < 1) throw ConfigError("config.chain.thin: must be at least 1");
  if (c.schedule.batch_size < 1) throw ConfigError("config.chain.batch_size: must be at least 1");

  if (root.contains("summary")) {
    const auto& s = root.at("summary");
    check_object(s, "config.summary", {"grid_points", "precision_thresholds"});
    c.grid_points = get_count(s, "grid_points", "config.summary", c.grid_points);
    if (c.grid_points < 2) throw ConfigError("config.summary.grid_points: must be at least 2");
    c.precision_thresholds = get_list<double>(s, "precision_thresholds", "config.summary", c.precision_thresholds);
    for (double a : c.precision_thresholds)
      if (!(a > 0.0)) throw ConfigError("config.summary.precision_thresholds: thresholds must be positive");
  }

  if (root.contains("simulate")) {
    const auto& s = root.at("simulate");
    const std::string sp = "config.simulate";
    check_object(s, sp, {"n", "rho", "dims", "mean_model", "replicates", "inclusion"});
    c.simulate.n = get_list<std::size_t>(s, "n", sp, c.simulate.n);
    c.simulate.rho = get_list<double>(s, "rho", sp, c.simulate.rho);
    c.simulate.dims = get_list<std::size_t>(s, "dims", sp, c.simulate.dims);
    c.simulate.mean_model = static_cast<int>(get_count(s, "mean_model", sp, 1));
    if (c.simulate.mean_model < 1 || c.simulate.mean_model > 3) throw ConfigError(sp + ".mean_model: must be 1, 2 or 3");
    c.simulate.replicates = get_count(s, "replicates", sp, c.simulate.replicates);
    if (c.simulate.replicates < 1) throw ConfigError(sp + ".replicates: must be at least 1");
    if (s.contains("inclusion")) c.simulate.inclusion = parse_inclusion(s.at("inclusion"), sp + ".inclusion", {});
    for (double r : c.simulate.rho)
      if (!(r > -1.0 / 9.0 && r < 1.0)) throw ConfigError(sp + ".rho: values must lie in (-1/9, 1)");
    for (auto d : c.simulate.dims)
      if (d < 1 || d > sim_responses) throw ConfigError(sp + ".dims: dimensions must lie in 1..10");
    if (std::find(c.simulate.dims.begin(), c.simulate.dims.end(), std::size_t{1}) == c.simulate.dims.end())
      throw ConfigError(sp + ".dims: must include 1 (reference fit)");
    for (auto n : c.simulate.n)
      if (n < 3) throw ConfigError(sp + ".n: sample sizes must be at least 3");
  }
  c.source = config_json(c).dump(2);
  return c;
}

RunConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

ModelSpec resolve_model(const RunConfig& config, const Dataset& data) {
  ModelSpec spec;
  spec.priors = config.priors;
  spec.correlation = config.correlation;
  spec.design.standardize_covariates = config.standardize_covariates;
  spec.design.standardize_responses = config.standardize_responses;
  auto find = [&](const std::string& name, const std::string& path) {
    const auto it = std::find(data.names.begin(), data.names.end(), name);
    if (it == data.names.end()) throw ConfigError(path + ": column '" + name + "' not in data header");
    return static_cast<std::size_t>(it - data.names.begin());
  };
  if (config.responses.empty()) throw ConfigError("config.responses: at least one response is required");
  for (std::size_t j = 0; j < config.responses.size(); ++j)
    spec.design.responses.push_back(find(config.responses[j], "config.responses[" + std::to_string(j) + "]"));
  auto terms = [&](const std::vector<TermConfig>& in, const std::string& path) {
    std::vector<TermSpec> out;
    for (std::size_t i = 0; i < in.size(); ++i) {
      TermSpec t;
      t.kind = in[i].kind;
      t.column = find(in[i].column, path + "[" + std::to_string(i) + "].column");
      t.basis_count = in[i].basis_count;
      t.inclusion = in[i].inclusion;
      out.push_back(t);
    }
    return out;
  };
  spec.design.mean_terms = terms(config.mean_terms, "config.mean");
  spec.design.variance_terms = terms(config.variance_terms, "config.variance");
  const auto p = spec.design.responses.size();
  if (config.correlation.variant == CorrelationVariant::grouped_variables && config.correlation.variable_groups > p)
    throw ConfigError("config.correlation.groups: cannot exceed the number of responses");
  return spec;
}

// ---------------------------------------------------------------- CSV

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  std::string out(s.substr(b, e - b + 1));
  if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
  return out;
}

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos : comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

bool parse_number(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && std::isfinite(out);
}

}  // namespace

Dataset parse_csv(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_row(line);
    if (header.empty()) {
      std::set<std::string> seen;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        if (cells[c].empty()) throw DataError(origin + ": header column " + std::to_string(c + 1) + " is empty");
        if (!seen.insert(cells[c]).second) throw DataError(origin + ": duplicate column name '" + cells[c] + "'");
      }
      header = std::move(cells);
      continue;
    }
    if (cells.size() != header.size())
      throw DataError(origin + ": row " + std::to_string(rows.size() + 1) + " (line " + std::to_string(line_no) +
                      ") has " + std::to_string(cells.size()) + " fields but the header has " +
                      std::to_string(header.size()));
    std::vector<double> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (!parse_number(cells[c], values[c]))
        throw DataError(origin + ": row " + std::to_string(rows.size() + 1) + " (line " + std::to_string(line_no) +
                        "), column '" + header[c] + "': non-numeric value '" + cells[c] + "'");
    }
    rows.push_back(std::move(values));
  }
  if (header.empty()) throw DataError(origin + ": empty file");
  if (rows.empty()) throw DataError(origin + ": no data rows");
  Dataset d;
  d.names = header;
  d.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(header.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < header.size(); ++c) d.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  return d;
}

Dataset ingest_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), path.string());
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- draws

namespace {

std::vector<std::string> coefficient_labels(const std::vector<TermBlock>& blocks) {
  std::vector<std::string> out;
  std::map<std::string, int> used;
  for (std::size_t k = 0; k < blocks.size(); ++k) {
    std::string base = blocks[k].label;
    if (used[base]++ > 0) base += "~" + std::to_string(k + 1);
    if (blocks[k].width == 1 && blocks[k].spec.kind == TermKind::parametric) {
      out.push_back(base);
    } else {
      for (std::size_t i = 0; i < blocks[k].width; ++i) out.push_back(base + ".b" + std::to_string(i + 1));
    }
  }
  return out;
}

std::string term_name(const TermBlock& b) {
  return b.spec.kind == TermKind::smooth ? "s(" + b.label + ")" : b.label;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  return out;
}

}  // namespace

std::vector<std::string> draw_columns(const DesignMatrices& d, const ModelSpec& spec) {
  const auto mean = coefficient_labels(d.mean_blocks);
  const auto var = coefficient_labels(d.variance_blocks);
  const auto& rn = d.response_names;
  const auto p = d.p();
  std::vector<std::string> cols{"draw"};
  for (const auto& r : rn) {
    cols.push_back("beta." + r + ".intercept");
    for (const auto& m : mean) cols.push_back("beta." + r + "." + m);
  }
  for (const auto& r : rn)
    for (const auto& m : mean) cols.push_back("gamma." + r + "." + m);
  for (const auto& r : rn)
    for (const auto& v : var) cols.push_back("alpha." + r + "." + v);
  for (const auto& r : rn)
    for (const auto& v : var) cols.push_back("delta." + r + "." + v);
  for (const auto& r : rn) cols.push_back("sigma2." + r);
  cols.push_back("c_beta");
  for (const auto& r : rn) cols.push_back("c_alpha." + r);
  for (std::size_t k = 0; k < p; ++k)
    for (std::size_t l = k + 1; l < p; ++l) cols.push_back("r." + rn[k] + "." + rn[l]);
  for (std::size_t k = 0; k < p; ++k)
    for (std::size_t l = k + 1; l < p; ++l) cols.push_back("theta." + rn[k] + "." + rn[l]);
  if (pair_count(p) > 0) {
    for (std::size_t h = 0; h < spec.correlation.cluster_count(p); ++h) cols.push_back("mu_R." + std::to_string(h + 1));
    cols.push_back("sigma2_R");
  }
  if (spec.correlation.variant == CorrelationVariant::grouped_variables) {
    for (const auto& r : rn) cols.push_back("label." + r);
  } else if (spec.correlation.variant == CorrelationVariant::grouped_correlations) {
    for (std::size_t k = 0; k < p; ++k)
      for (std::size_t l = k + 1; l < p; ++l) cols.push_back("label." + rn[k] + "." + rn[l]);
  }
  if (spec.correlation.variant != CorrelationVariant::common && pair_count(p) > 0) cols.push_back("concentration");
  return cols;
}

namespace {

/// Flattens a draw in draw_columns order (without the leading index).
std::vector<double> flatten(const Draw& dr, const DesignMatrices& d, const ModelSpec& spec) {
  std::vector<double> v;
  const auto p = static_cast<Eigen::Index>(d.p());
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index a = 0; a < dr.beta.cols(); ++a) v.push_back(dr.beta(j, a));
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index a = 0; a < dr.gamma.cols(); ++a) v.push_back(dr.gamma(j, a) ? 1.0 : 0.0);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index a = 0; a < dr.alpha.cols(); ++a) v.push_back(dr.alpha(j, a));
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index a = 0; a < dr.delta.cols(); ++a) v.push_back(dr.delta(j, a) ? 1.0 : 0.0);
  for (Eigen::Index j = 0; j < p; ++j) v.push_back(dr.sigma2(j));
  v.push_back(dr.c_beta);
  for (Eigen::Index j = 0; j < p; ++j) v.push_back(dr.c_alpha(j));
  for (Eigen::Index k = 0; k < p; ++k)
    for (Eigen::Index l = k + 1; l < p; ++l) v.push_back(dr.r(k, l));
  for (Eigen::Index i = 0; i < dr.theta.size(); ++i) v.push_back(dr.theta(i));
  if (pair_count(d.p()) > 0) {
    for (Eigen::Index h = 0; h < dr.cluster_means.size(); ++h) v.push_back(dr.cluster_means(h));
    v.push_back(dr.sigma2_R);
  }
  if (spec.correlation.variant != CorrelationVariant::common)
    for (auto l : dr.labels) v.push_back(static_cast<double>(l + 1));
  if (spec.correlation.variant != CorrelationVariant::common && pair_count(d.p()) > 0) v.push_back(dr.concentration);
  return v;
}

Draw unflatten(const std::vector<double>& v, const DesignMatrices& d, const ModelSpec& spec, const std::string& where) {
  Draw dr;
  const auto p = static_cast<Eigen::Index>(d.p());
  const auto mw = static_cast<Eigen::Index>(d.mean_width());
  const auto vw = static_cast<Eigen::Index>(d.variance_width());
  std::size_t pos = 0;
  auto next = [&]() { return v.at(pos++); };
  auto flag = [&]() {
    const double x = next();
    if (x != 0.0 && x != 1.0) throw DataError(where + ": indicator column holds " + format_double(x));
    return x == 1.0;
  };
  dr.beta.resize(p, mw + 1);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index a = 0; a <= mw; ++a) dr.beta(j, a) = next();
  dr.gamma.resize(p, mw);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index a = 0; a < mw; ++a) dr.gamma(j, a) = flag();
  dr.alpha.resize(p, vw);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index a = 0; a < vw; ++a) dr.alpha(j, a) = next();
  dr.delta.resize(p, vw);
  for (Eigen::Index j = 0; j < p; ++j)
    for (Eigen::Index a = 0; a < vw; ++a) dr.delta(j, a) = flag();
  dr.sigma2.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) dr.sigma2(j) = next();
  dr.c_beta = next();
  dr.c_alpha.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) dr.c_alpha(j) = next();
  dr.r = Eigen::MatrixXd::Identity(p, p);
  for (Eigen::Index k = 0; k < p; ++k)
    for (Eigen::Index l = k + 1; l < p; ++l) dr.r(k, l) = dr.r(l, k) = next();
  const auto pairs = static_cast<Eigen::Index>(pair_count(d.p()));
  dr.theta.resize(pairs);
  for (Eigen::Index i = 0; i < pairs; ++i) dr.theta(i) = next();
  if (pairs > 0) {
    dr.cluster_means.resize(static_cast<Eigen::Index>(spec.correlation.cluster_count(d.p())));
    for (Eigen::Index h = 0; h < dr.cluster_means.size(); ++h) dr.cluster_means(h) = next();
    dr.sigma2_R = next();
  }
  std::size_t labels = 0;
  if (spec.correlation.variant == CorrelationVariant::grouped_variables) labels = d.p();
  if (spec.correlation.variant == CorrelationVariant::grouped_correlations) labels = pair_count(d.p());
  for (std::size_t i = 0; i < labels; ++i) {
    const double x = next();
    if (!(x >= 1.0) || x != std::floor(x)) throw DataError(where + ": cluster label must be a positive integer");
    dr.labels.push_back(static_cast<std::size_t>(x) - 1);
  }
  if (spec.correlation.variant != CorrelationVariant::common && pairs > 0) dr.concentration = next();
  return dr;
}

}  // namespace

void write_draws(const fs::path& path, const ChainSamples& samples) {
  auto out = open_out(path);
  const auto cols = draw_columns(samples.designs, samples.spec);
  for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
  out << "\n";
  for (std::size_t s = 0; s < samples.draws.size(); ++s) {
    out << s + 1;
    for (double v : flatten(samples.draws[s], samples.designs, samples.spec)) out << "," << format_double(v);
    out << "\n";
  }
  if (!out) throw DataError(path.string() + ": write failed");
}

ChainSamples read_draws(const fs::path& path, const DesignMatrices& designs, const ModelSpec& spec) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": cannot open file");
  const auto expected = draw_columns(designs, spec);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty file");
  const auto header = split_row(line);
  if (header != expected) {
    std::size_t c = 0;
    while (c < header.size() && c < expected.size() && header[c] == expected[c]) ++c;
    throw DataError(path.string() + ": header does not match the model (first difference at column " +
                    std::to_string(c + 1) + ", expected '" + (c < expected.size() ? expected[c] : "<end>") + "')");
  }
  ChainSamples samples;
  samples.designs = designs;
  samples.spec = spec;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto cells = split_row(line);
    const std::string where = path.string() + ": row " + std::to_string(row);
    if (cells.size() != expected.size()) throw DataError(where + ": wrong number of fields");
    std::vector<double> v(cells.size() - 1);
    for (std::size_t c = 1; c < cells.size(); ++c)
      if (!parse_number(cells[c], v[c - 1]))
        throw DataError(where + ", column '" + expected[c] + "': non-numeric value '" + cells[c] + "'");
    samples.draws.push_back(unflatten(v, designs, spec, where));
  }
  return samples;
}

// ---------------------------------------------------------------- summaries

void write_summaries(const fs::path& dir, const ChainSamples& samples, const RunConfig& config) {
  const auto& d = samples.designs;
  const auto& rn = d.response_names;
  {
    auto out = open_out(dir / "curves.csv");
    out << "response,term,x,median,lower,upper\n";
    if (!samples.draws.empty()) {
      for (std::size_t j = 0; j < d.p(); ++j) {
        for (std::size_t k = 0; k < d.mean_blocks.size(); ++k) {
          const auto c = curve_summary(samples, j, k, default_grid(samples, k, config.grid_points));
          for (std::size_t g = 0; g < c.grid.size(); ++g)
            out << rn[j] << "," << term_name(d.mean_blocks[k]) << "," << format_double(c.grid[g]) << ","
                << format_double(c.median[g]) << "," << format_double(c.lower[g]) << "," << format_double(c.upper[g])
                << "\n";
        }
      }
    }
  }
  {
    auto out = open_out(dir / "inclusion.csv");
    out << "model,response,term,coefficient,probability\n";
    if (!samples.draws.empty()) {
      const auto inc = inclusion_probabilities(samples);
      auto emit = [&](const char* model, const std::vector<TermBlock>& blocks, const Eigen::MatrixXd& coef,
                      const Eigen::MatrixXd& terms) {
        const auto labels = coefficient_labels(blocks);
        for (std::size_t j = 0; j < d.p(); ++j) {
          for (std::size_t k = 0; k < blocks.size(); ++k) {
            for (std::size_t i = 0; i < blocks[k].width; ++i) {
              const auto col = blocks[k].offset + i;
              out << model << "," << rn[j] << "," << term_name(blocks[k]) << "," << labels[col] << ","
                  << format_double(coef(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(col))) << "\n";
            }
            out << model << "," << rn[j] << "," << term_name(blocks[k]) << ",any,"
                << format_double(terms(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k))) << "\n";
          }
        }
      };
      emit("mean", d.mean_blocks, inc.mean_coefficients, inc.mean_terms);
      emit("variance", d.variance_blocks, inc.variance_coefficients, inc.variance_terms);
    }
  }
  {
    auto out = open_out(dir / "correlations.csv");
    out << "response_k,response_l,mean,sd,q05,q95,co_cluster\n";
    if (!samples.draws.empty()) {
      for (const auto& c : correlation_summary(samples))
        out << rn[c.k] << "," << rn[c.l] << "," << format_double(c.mean) << "," << format_double(c.sd) << ","
            << format_double(c.q05) << "," << format_double(c.q95) << ","
            << (c.co_cluster ? format_double(*c.co_cluster) : "") << "\n";
    }
  }
  {
    auto out = open_out(dir / "precision.csv");
    out << "threshold,response_k,response_l,probability\n";
    if (!samples.draws.empty()) {
      for (double a : config.precision_thresholds) {
        const auto probs = precision_threshold_probs(samples, a);
        for (Eigen::Index k = 0; k < probs.rows(); ++k)
          for (Eigen::Index l = k + 1; l < probs.cols(); ++l)
            out << format_double(a) << "," << rn[static_cast<std::size_t>(k)] << "," << rn[static_cast<std::size_t>(l)]
                << "," << format_double(probs(k, l)) << "\n";
      }
    }
  }
}

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json moves_json(const std::vector<MoveReport>& moves) {
  json out = json::array();
  for (const auto& m : moves) {
    const double rate = m.proposed ? static_cast<double>(m.accepted) / static_cast<double>(m.proposed) : NAN;
    out.push_back({{"move", m.name},
                   {"proposed", m.proposed},
                   {"accepted", m.accepted},
                   {"overall_rate", number_or_null(rate)},
                   {"burn_in_rate", number_or_null(m.burn_in_rate)},
                   {"final_scale", number_or_null(m.final_value)}});
  }
  return out;
}

json health_json(const ChainHealth& h) {
  return {{"rank_deficient_gamma", h.rank_deficient_gamma},
          {"delta_alpha_failures", h.delta_alpha_failures},
          {"sigma2_failures", h.sigma2_failures},
          {"c_beta_newton_fallbacks", h.c_beta_newton_fallbacks},
          {"beta_draw_failures", h.beta_draw_failures},
          {"r_numerical_failures", h.r_numerical_failures},
          {"invariant_violations", h.invariant_violations},
          {"numerical_failures", h.numerical_failures()}};
}

void write_json(const fs::path& path, const json& j) {
  auto out = open_out(path);
  out << j.dump(2) << "\n";
}

}  // namespace

void emit_outputs(const fs::path& dir, const ChainSamples& samples, const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(dir.string() + ": cannot create output directory (" + ec.message() + ")");
  write_draws(dir / "draws.csv", samples);
  write_summaries(dir, samples, config);
  const json manifest{
      {"tool", "bnmvr"},
      {"version", "0.1.0"},
      {"subcommand", config.subcommand.empty() ? "fit" : config.subcommand},
      {"seed", samples.schedule.seed},
      {"schedule",
       {{"sweeps", samples.schedule.sweeps},
        {"burn_in", samples.schedule.burn_in},
        {"thin", samples.schedule.thin},
        {"adapt", samples.schedule.adapt},
        {"batch_size", samples.schedule.batch_size}}},
      {"retained_draws", samples.draws.size()},
      {"observations", samples.designs.n()},
      {"responses", samples.designs.response_names},
      {"seconds", samples.seconds},
      {"acceptance", moves_json(samples.moves)},
      {"r_proposal_weight", samples.proposal_weight},
      {"health", health_json(samples.health)},
      {"curve_centering", "term contributions centred at their training-data mean; the intercept carries the level"},
      {"config", json::parse(config.source)},
  };
  write_json(dir / "manifest.json", manifest);
}

void emit_simulation(const fs::path& dir, const std::vector<SimMetrics>& cells, const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError(dir.string() + ": cannot create output directory (" + ec.message() + ")");
  {
    auto out = open_out(dir / "simulation.csv");
    out << "n,rho,d,replicates,mean_bias,mean_variance,relative_bias,relative_variance,mean_ratio_bias,"
           "mean_ratio_variance,coverage,spurious_inclusion,x1_inclusion,mean_seconds\n";
    for (const auto& m : cells)
      for (std::size_t k = 0; k < m.scenario.dims.size(); ++k)
        out << m.scenario.n << "," << format_double(m.scenario.rho) << "," << m.scenario.dims[k] << ","
            << m.replicates.size() << "," << format_double(m.mean_bias[k]) << "," << format_double(m.mean_variance[k])
            << "," << format_double(m.relative_bias[k]) << "," << format_double(m.relative_variance[k]) << ","
            << format_double(m.mean_ratio_bias[k]) << "," << format_double(m.mean_ratio_variance[k]) << ","
            << format_double(m.coverage[k]) << "," << format_double(m.spurious[k]) << ","
            << format_double(m.relevant[k]) << "," << format_double(m.seconds[k]) << "\n";
  }
  // Paper layout: one block per d, rows n, columns rho.
  auto wide = [&](const fs::path& path, bool bias) {
    auto out = open_out(path);
    std::vector<double> rhos;
    std::vector<std::size_t> ns;
    for (const auto& m : cells) {
      if (std::find(rhos.begin(), rhos.end(), m.scenario.rho) == rhos.end()) rhos.push_back(m.scenario.rho);
      if (std::find(ns.begin(), ns.end(), m.scenario.n) == ns.end()) ns.push_back(m.scenario.n);
    }
    out << "d,n";
    for (double r : rhos) out << "," << format_double(r);
    out << "\n";
    for (auto d : config.simulate.dims) {
      for (auto n : ns) {
        out << d << "," << n;
        for (double r : rhos) {
          std::string cell;
          for (const auto& m : cells) {
            if (m.scenario.n != n || m.scenario.rho != r) continue;
            const auto it = std::find(m.scenario.dims.begin(), m.scenario.dims.end(), d);
            if (it == m.scenario.dims.end()) continue;
            const auto k = static_cast<std::size_t>(it - m.scenario.dims.begin());
            cell = format_double(bias ? m.relative_bias[k] : m.relative_variance[k]);
          }
          out << "," << cell;
        }
        out << "\n";
      }
    }
  };
  wide(dir / "bias_table.csv", true);
  wide(dir / "variance_table.csv", false);
  {
    auto out = open_out(dir / "replicates.csv");
    out << "n,rho,replicate,d,data_seed,chain_seed,bias,variance,coverage,spurious_inclusion,x1_inclusion,seconds,"
           "numerical_failures\n";
    for (const auto& m : cells)
      for (const auto& r : m.replicates)
        for (std::size_t k = 0; k < r.fits.size(); ++k) {
          const auto& f = r.fits[k];
          out << m.scenario.n << "," << format_double(m.scenario.rho) << "," << r.index + 1 << ","
              << m.scenario.dims[k] << "," << r.data_seed << "," << r.chain_seeds[k] << "," << format_double(f.bias)
              << "," << format_double(f.variance) << "," << format_double(f.coverage) << ","
              << format_double(f.spurious) << "," << format_double(f.relevant) << "," << format_double(f.seconds)
              << "," << f.numerical_failures << "\n";
        }
  }
  json cell_list = json::array();
  for (const auto& m : cells) {
    json warnings = m.warnings;
    cell_list.push_back({{"n", m.scenario.n},
                         {"rho", m.scenario.rho},
                         {"seed", m.scenario.seed},
                         {"replicates_used", m.replicates.size()},
                         {"warnings", warnings}});
  }
  const ChainSchedule& sch = cells.empty() ? config.schedule : cells.front().scenario.schedule;
  const json manifest{
      {"tool", "bnmvr"},
      {"version", "0.1.0"},
      {"subcommand", "simulate"},
      {"seed", cells.empty() ? config.schedule.seed : cells.front().scenario.seed},
      {"seed_scheme",
       "cell seed = derive_seed(base, cell index); replicate r data seed = derive_seed(cell seed, 2r); chain seed for "
       "dimension d = derive_seed(derive_seed(cell seed, 2r+1), d)"},
      {"schedule", {{"sweeps", sch.sweeps}, {"burn_in", sch.burn_in}, {"thin", sch.thin}, {"batch_size", sch.batch_size}}},
      {"aggregation", "relative_bias = 100 * mean_r B_r(d) / mean_r B_r(1); mean_ratio_bias = 100 * mean_r B_r(d)/B_r(1)"},
      {"cells", cell_list},
      {"config", json::parse(config.source)},
  };
  write_json(dir / "manifest.json", manifest);
}

}  // namespace bnmvr
