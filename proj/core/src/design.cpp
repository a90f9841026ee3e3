#include "bnmvr/design.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace bnmvr {

std::size_t Dataset::column(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ModelError("unknown column '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

StandardizedColumn standardize(std::span<const double> column) {
  const auto n = column.size();
  if (n < 2) throw ModelError("degenerate covariate: fewer than two values");
  const Eigen::Map<const Eigen::VectorXd> v(column.data(), static_cast<Eigen::Index>(n));
  const double mean = v.mean();
  const double var = (v.array() - mean).square().sum() / static_cast<double>(n - 1);
  const double sd = std::sqrt(var);
  if (!(sd > 0.0) || sd < 1e-14 * std::max(1.0, std::abs(mean)))
    throw ModelError("degenerate covariate: constant column");
  StandardizedColumn out;
  out.transform = {mean, sd};
  out.values = (v.array() - mean) / sd;
  return out;
}

KnotGrid make_knots(std::span<const double> u, std::size_t basis_count, std::size_t covariate) {
  if (basis_count < 2) throw ModelError("smooth term needs at least 2 basis functions");
  std::vector<double> order(u.begin(), u.end());
  std::sort(order.begin(), order.end());
  std::vector<double> unique_values = order;
  unique_values.erase(std::unique(unique_values.begin(), unique_values.end()), unique_values.end());
  if (basis_count - 1 > unique_values.size())
    throw ModelError("too few distinct covariate values for " + std::to_string(basis_count - 1) +
                     " knots");

  KnotGrid grid;
  grid.covariate = covariate;
  const double last = static_cast<double>(order.size() - 1);
  for (std::size_t l = 1; l < basis_count; ++l) {
    const double h = last * static_cast<double>(l) / static_cast<double>(basis_count);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, order.size() - 1);
    const double frac = h - static_cast<double>(lo);
    grid.knots.push_back(order[lo] + frac * (order[hi] - order[lo]));
  }
  for (std::size_t l = 1; l < grid.knots.size(); ++l) {
    if (!(grid.knots[l] > grid.knots[l - 1]))
      throw ModelError("tied knot locations: covariate has heavy duplication for " +
                       std::to_string(basis_count) + " basis functions");
  }
  return grid;
}

Eigen::RowVectorXd radial_basis_row(double u, const KnotGrid& grid) {
  Eigen::RowVectorXd row(static_cast<Eigen::Index>(grid.basis_count()));
  row(0) = u;
  for (std::size_t l = 0; l < grid.knots.size(); ++l) {
    const double r2 = (u - grid.knots[l]) * (u - grid.knots[l]);
    row(static_cast<Eigen::Index>(l + 1)) = r2 > 0.0 ? r2 * std::log(r2) : 0.0;
  }
  return row;
}

Eigen::RowVectorXd TermBlock::evaluate(double raw) const {
  const double u = covariate.apply(raw);
  Eigen::RowVectorXd row;
  if (knots) {
    row = radial_basis_row(u, *knots);
  } else {
    row.resize(1);
    row(0) = u;
  }
  if (column_centers.size() == row.size()) row -= column_centers;
  return row;
}

Eigen::MatrixXd DesignMatrices::stacked_mean_row(std::size_t i) const {
  const auto p_ = static_cast<Eigen::Index>(p());
  const auto w = static_cast<Eigen::Index>(mean_width()) + 1;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p_, p_ * w);
  for (Eigen::Index j = 0; j < p_; ++j) {
    out(j, j * w) = 1.0;
    out.block(j, j * w + 1, 1, w - 1) = x.row(static_cast<Eigen::Index>(i));
  }
  return out;
}

namespace {

std::vector<double> column_values(const Dataset& data, std::size_t c) {
  std::vector<double> out(data.rows());
  for (std::size_t i = 0; i < data.rows(); ++i) out[i] = data.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c));
  return out;
}

std::vector<TermBlock> build_blocks(const Dataset& data, std::vector<TermSpec> terms,
                                    bool standardize_covariates,
                                    std::map<std::size_t, Standardization>& transforms,
                                    std::size_t& width) {
  // Parametric terms first, then smooth blocks, each group in the order given.
  std::stable_partition(terms.begin(), terms.end(), [](const TermSpec& t) { return t.kind == TermKind::parametric; });
  std::vector<TermBlock> blocks;
  width = 0;
  for (const auto& t : terms) {
    if (t.column >= data.cols())
      throw ModelError("term references column " + std::to_string(t.column) + " but data has " +
                       std::to_string(data.cols()) + " columns");
    TermBlock block;
    block.spec = t;
    block.label = t.column < data.names.size() ? data.names[t.column] : "x" + std::to_string(t.column + 1);
    if (t.kind == TermKind::parametric) block.spec.basis_count = 1;
    if (t.kind == TermKind::smooth && t.basis_count < 2)
      throw ModelError("smooth term on column " + std::to_string(t.column) + " needs q >= 2");
    if (!transforms.contains(t.column)) {
      const auto raw = column_values(data, t.column);
      transforms[t.column] = standardize_covariates ? standardize(raw).transform : Standardization{};
    }
    block.covariate = transforms[t.column];
    {
      const auto raw = column_values(data, t.column);
      const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
      block.raw_min = *lo;
      block.raw_max = *hi;
    }
    if (block.spec.kind == TermKind::smooth) {
      std::vector<double> u = column_values(data, t.column);
      for (auto& v : u) v = block.covariate.apply(v);
      block.knots = make_knots(u, block.spec.basis_count, t.column);
    }
    block.offset = width;
    block.width = block.spec.basis_count;
    width += block.width;
    blocks.push_back(std::move(block));
  }
  return blocks;
}

Eigen::MatrixXd fill(const Dataset& data, const std::vector<TermBlock>& blocks, std::size_t width) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(data.rows()), static_cast<Eigen::Index>(width));
  for (const auto& b : blocks) {
    for (std::size_t i = 0; i < data.rows(); ++i) {
      const double raw = data.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b.spec.column));
      out.block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b.offset), 1,
                static_cast<Eigen::Index>(b.width)) = b.evaluate(raw);
    }
  }
  return out;
}

}  // namespace

DesignMatrices build_designs(const Dataset& data, const DesignSpec& spec) {
  if (spec.responses.empty()) throw ModelError("model needs at least one response");
  if (data.rows() < 2) throw ModelError("dataset needs at least two observations");
  DesignMatrices d;
  const auto n = static_cast<Eigen::Index>(data.rows());
  d.y.resize(n, static_cast<Eigen::Index>(spec.responses.size()));
  for (std::size_t j = 0; j < spec.responses.size(); ++j) {
    const auto c = spec.responses[j];
    if (c >= data.cols())
      throw ModelError("response column " + std::to_string(c) + " out of range");
    const auto raw = column_values(data, c);
    Standardization s;
    if (spec.standardize_responses) s = standardize(raw).transform;
    d.response_scale.push_back(s);
    d.response_names.push_back(c < data.names.size() ? data.names[c] : "y" + std::to_string(j + 1));
    for (Eigen::Index i = 0; i < n; ++i) d.y(i, static_cast<Eigen::Index>(j)) = s.apply(raw[static_cast<std::size_t>(i)]);
  }

  std::map<std::size_t, Standardization> transforms;
  std::size_t mean_width = 0;
  std::size_t var_width = 0;
  d.mean_blocks = build_blocks(data, spec.mean_terms, spec.standardize_covariates, transforms, mean_width);
  d.variance_blocks =
      build_blocks(data, spec.variance_terms, spec.standardize_covariates, transforms, var_width);
  d.x = fill(data, d.mean_blocks, mean_width);
  Eigen::MatrixXd z_raw = fill(data, d.variance_blocks, var_width);
  for (auto& b : d.variance_blocks) {
    b.column_centers = z_raw.middleCols(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.width))
                           .colwise()
                           .mean();
  }
  d.z = fill(data, d.variance_blocks, var_width);
  return d;
}

}  // namespace bnmvr
