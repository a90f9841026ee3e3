#include "bnmvr/posterior.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bnmvr {

namespace {

void require_draws(const ChainSamples& samples) {
  if (samples.draws.empty()) throw ModelError("posterior summary needs at least one draw");
}

struct Band {
  double median;
  double lower;
  double upper;
};

Band band(std::vector<double>& values) {
  std::sort(values.begin(), values.end());
  return {sorted_quantile(values, 0.5), sorted_quantile(values, 0.05), sorted_quantile(values, 0.95)};
}

}  // namespace

double sorted_quantile(std::span<const double> sorted, double level) {
  if (sorted.empty()) throw ModelError("quantile of an empty sample");
  const double h = static_cast<double>(sorted.size() - 1) * level;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::vector<double> default_grid(const ChainSamples& samples, std::size_t term, std::size_t points) {
  if (term >= samples.designs.mean_blocks.size()) throw ModelError("mean term index out of range");
  if (points < 2) throw ModelError("grid needs at least two points");
  const auto& b = samples.designs.mean_blocks[term];
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i)
    grid[i] = b.raw_min + (b.raw_max - b.raw_min) * static_cast<double>(i) / static_cast<double>(points - 1);
  return grid;
}

CurveSummary curve_summary(const ChainSamples& samples, std::size_t response, std::size_t term,
                           const std::vector<double>& grid, bool allow_extrapolation) {
  require_draws(samples);
  const auto& d = samples.designs;
  if (response >= d.p()) throw ModelError("response index out of range");
  if (term >= d.mean_blocks.size()) throw ModelError("mean term index out of range");
  const auto& block = d.mean_blocks[term];
  const auto off = static_cast<Eigen::Index>(block.offset);
  const auto w = static_cast<Eigen::Index>(block.width);
  const double span = block.raw_max - block.raw_min;
  for (double g : grid) {
    if (!allow_extrapolation && (g < block.raw_min - 1e-12 * span || g > block.raw_max + 1e-12 * span))
      throw ModelError("grid point " + std::to_string(g) + " lies outside the observed covariate range");
  }

  Eigen::MatrixXd rows(static_cast<Eigen::Index>(grid.size()), w);
  for (std::size_t g = 0; g < grid.size(); ++g) rows.row(static_cast<Eigen::Index>(g)) = block.evaluate(grid[g]);
  rows.rowwise() -= d.x.middleCols(off, w).colwise().mean();
  const double scale = d.response_scale[response].scale;

  // values(g, s): contribution at grid point g under draw s.
  Eigen::MatrixXd coef(w, static_cast<Eigen::Index>(samples.draws.size()));
  for (std::size_t s = 0; s < samples.draws.size(); ++s)
    coef.col(static_cast<Eigen::Index>(s)) =
        samples.draws[s].beta.row(static_cast<Eigen::Index>(response)).segment(off + 1, w).transpose();
  const Eigen::MatrixXd values = scale * (rows * coef);

  CurveSummary out;
  out.response = response;
  out.term = term;
  out.grid = grid;
  std::vector<double> buf(samples.draws.size());
  for (Eigen::Index g = 0; g < values.rows(); ++g) {
    for (Eigen::Index s = 0; s < values.cols(); ++s) buf[static_cast<std::size_t>(s)] = values(g, s);
    const auto b = band(buf);
    out.median.push_back(b.median);
    out.lower.push_back(b.lower);
    out.upper.push_back(b.upper);
  }
  return out;
}

FittedSummary fitted_mean_summary(const ChainSamples& samples, std::size_t response) {
  require_draws(samples);
  const auto& d = samples.designs;
  if (response >= d.p()) throw ModelError("response index out of range");
  const auto j = static_cast<Eigen::Index>(response);
  const auto& tr = d.response_scale[response];
  const auto n = static_cast<Eigen::Index>(d.n());
  Eigen::MatrixXd coef(d.x.cols(), static_cast<Eigen::Index>(samples.draws.size()));
  Eigen::RowVectorXd intercept(static_cast<Eigen::Index>(samples.draws.size()));
  for (std::size_t s = 0; s < samples.draws.size(); ++s) {
    const auto& beta = samples.draws[s].beta;
    intercept(static_cast<Eigen::Index>(s)) = beta(j, 0);
    coef.col(static_cast<Eigen::Index>(s)) = beta.row(j).tail(beta.cols() - 1).transpose();
  }
  Eigen::MatrixXd mu = d.x * coef;
  mu.rowwise() += intercept;

  FittedSummary out;
  std::vector<double> buf(samples.draws.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index s = 0; s < mu.cols(); ++s) buf[static_cast<std::size_t>(s)] = tr.invert(mu(i, s));
    const auto b = band(buf);
    out.median.push_back(b.median);
    out.lower.push_back(b.lower);
    out.upper.push_back(b.upper);
  }
  return out;
}

namespace {

Eigen::MatrixXd term_inclusion(const std::vector<Draw>& draws, const std::vector<TermBlock>& blocks, bool mean,
                               Eigen::Index p) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p, static_cast<Eigen::Index>(blocks.size()));
  for (const auto& dr : draws) {
    const Indicators& ind = mean ? dr.gamma : dr.delta;
    for (Eigen::Index j = 0; j < p; ++j)
      for (std::size_t k = 0; k < blocks.size(); ++k)
        if (ind.row(j).segment(static_cast<Eigen::Index>(blocks[k].offset), static_cast<Eigen::Index>(blocks[k].width)).any())
          out(j, static_cast<Eigen::Index>(k)) += 1.0;
  }
  return out / static_cast<double>(draws.size());
}

}  // namespace

InclusionSummary inclusion_probabilities(const ChainSamples& samples) {
  require_draws(samples);
  const auto& d = samples.designs;
  const auto p = static_cast<Eigen::Index>(d.p());
  InclusionSummary out;
  out.mean_coefficients = Eigen::MatrixXd::Zero(p, static_cast<Eigen::Index>(d.mean_width()));
  out.variance_coefficients = Eigen::MatrixXd::Zero(p, static_cast<Eigen::Index>(d.variance_width()));
  for (const auto& dr : samples.draws) {
    out.mean_coefficients += dr.gamma.cast<double>().matrix();
    out.variance_coefficients += dr.delta.cast<double>().matrix();
  }
  const double count = static_cast<double>(samples.draws.size());
  out.mean_coefficients /= count;
  out.variance_coefficients /= count;
  out.mean_terms = term_inclusion(samples.draws, d.mean_blocks, true, p);
  out.variance_terms = term_inclusion(samples.draws, d.variance_blocks, false, p);
  return out;
}

double at_least_one_included(const ChainSamples& samples, std::size_t response, const std::vector<std::size_t>& columns) {
  require_draws(samples);
  const auto j = static_cast<Eigen::Index>(response);
  std::size_t hits = 0;
  for (const auto& dr : samples.draws) {
    bool any = false;
    for (auto c : columns) any = any || dr.gamma(j, static_cast<Eigen::Index>(c));
    if (any) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.draws.size());
}

std::vector<CorrelationSummary> correlation_summary(const ChainSamples& samples) {
  require_draws(samples);
  const auto p = samples.designs.p();
  const auto variant = samples.spec.correlation.variant;
  const double count = static_cast<double>(samples.draws.size());
  std::vector<CorrelationSummary> out;
  std::vector<double> buf(samples.draws.size());
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t l = k + 1; l < p; ++l) {
      CorrelationSummary c;
      c.k = k;
      c.l = l;
      std::size_t together = 0;
      const auto pair = pair_index(k, l, p);
      for (std::size_t s = 0; s < samples.draws.size(); ++s) {
        const auto& dr = samples.draws[s];
        buf[s] = dr.r(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
        if (variant == CorrelationVariant::grouped_variables && dr.labels[k] == dr.labels[l]) ++together;
        if (variant == CorrelationVariant::grouped_correlations) {
          const auto shared = std::count(dr.labels.begin(), dr.labels.end(), dr.labels[pair]);
          if (shared > 1) ++together;
        }
      }
      const Eigen::Map<const Eigen::VectorXd> v(buf.data(), static_cast<Eigen::Index>(buf.size()));
      c.mean = v.mean();
      c.sd = buf.size() > 1 ? std::sqrt((v.array() - c.mean).square().sum() / (count - 1.0)) : 0.0;
      std::sort(buf.begin(), buf.end());
      c.q05 = sorted_quantile(buf, 0.05);
      c.q95 = sorted_quantile(buf, 0.95);
      if (variant != CorrelationVariant::common) c.co_cluster = static_cast<double>(together) / count;
      out.push_back(c);
    }
  }
  return out;
}

Eigen::MatrixXd variable_co_clustering(const ChainSamples& samples) {
  require_draws(samples);
  if (samples.spec.correlation.variant != CorrelationVariant::grouped_variables) return {};
  const auto p = static_cast<Eigen::Index>(samples.designs.p());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p, p);
  for (const auto& dr : samples.draws)
    for (Eigen::Index k = 0; k < p; ++k)
      for (Eigen::Index l = 0; l < p; ++l)
        if (dr.labels[static_cast<std::size_t>(k)] == dr.labels[static_cast<std::size_t>(l)]) out(k, l) += 1.0;
  return out / static_cast<double>(samples.draws.size());
}

Eigen::MatrixXd correlation_co_clustering(const ChainSamples& samples) {
  require_draws(samples);
  if (samples.spec.correlation.variant != CorrelationVariant::grouped_correlations) return {};
  const auto m = static_cast<Eigen::Index>(pair_count(samples.designs.p()));
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(m, m);
  for (const auto& dr : samples.draws)
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b)
        if (dr.labels[static_cast<std::size_t>(a)] == dr.labels[static_cast<std::size_t>(b)]) out(a, b) += 1.0;
  return out / static_cast<double>(samples.draws.size());
}

Eigen::MatrixXd scaled_negative_precision(const Eigen::MatrixXd& r) {
  Eigen::LLT<Eigen::MatrixXd> llt(r);
  if (llt.info() != Eigen::Success) throw NumericalError("correlation draw not positive definite");
  const Eigen::MatrixXd omega = llt.solve(Eigen::MatrixXd::Identity(r.rows(), r.cols()));
  const Eigen::VectorXd inv_sd = omega.diagonal().array().rsqrt();
  Eigen::MatrixXd out = -(inv_sd.asDiagonal() * omega * inv_sd.asDiagonal());
  out.diagonal().setOnes();
  return out;
}

Eigen::MatrixXd precision_threshold_probs(const ChainSamples& samples, double threshold) {
  require_draws(samples);
  if (!(threshold > 0.0)) throw ModelError("precision threshold must be positive");
  const auto p = static_cast<Eigen::Index>(samples.designs.p());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p, p);
  for (const auto& dr : samples.draws) out += (scaled_negative_precision(dr.r).array().abs() > threshold).cast<double>().matrix();
  out /= static_cast<double>(samples.draws.size());
  out.diagonal().setOnes();
  return out;
}

}  // namespace bnmvr
