#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "bnmvr/posterior.hpp"
#include "bnmvr/random.hpp"

using namespace bnmvr;

namespace {

ChainSamples fake_samples(std::size_t p, CorrelationVariant variant, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  Dataset data;
  for (std::size_t j = 0; j < p; ++j) data.names.push_back("y" + std::to_string(j + 1));
  data.names.insert(data.names.end(), {"a", "b"});
  data.values.resize(30, static_cast<Eigen::Index>(p + 2));
  for (Eigen::Index i = 0; i < 30; ++i)
    for (Eigen::Index c = 0; c < data.values.cols(); ++c) data.values(i, c) = rng.normal(1.0, 2.0);
  ChainSamples s;
  for (std::size_t j = 0; j < p; ++j) s.spec.design.responses.push_back(j);
  s.spec.design.mean_terms = {{TermKind::parametric, p, 1, {}}, {TermKind::smooth, p + 1, 4, {}}};
  s.spec.correlation.variant = variant;
  s.designs = build_designs(data, s.spec.design);
  const auto P = static_cast<Eigen::Index>(p);
  for (std::size_t d = 0; d < count; ++d) {
    Draw dr;
    dr.gamma = Indicators(P, 5);
    dr.beta = Eigen::MatrixXd::Zero(P, 6);
    for (Eigen::Index j = 0; j < P; ++j) {
      dr.beta(j, 0) = rng.normal();
      for (Eigen::Index c = 0; c < 5; ++c) {
        dr.gamma(j, c) = rng.bernoulli(0.6);
        if (dr.gamma(j, c)) dr.beta(j, c + 1) = rng.normal();
      }
    }
    dr.delta = Indicators(P, 0);
    dr.alpha.resize(P, 0);
    dr.sigma2 = Eigen::VectorXd::Ones(P);
    dr.c_alpha = Eigen::VectorXd::Ones(P);
    dr.r = Eigen::MatrixXd::Identity(P, P);
    for (Eigen::Index k = 0; k < P; ++k)
      for (Eigen::Index l = k + 1; l < P; ++l) dr.r(k, l) = dr.r(l, k) = 0.3 * rng.uniform();
    if (variant == CorrelationVariant::grouped_variables)
      for (std::size_t k = 0; k < p; ++k) dr.labels.push_back(rng.integer(0, 1));
    if (variant == CorrelationVariant::grouped_correlations)
      for (std::size_t k = 0; k < pair_count(p); ++k) dr.labels.push_back(rng.integer(0, 2));
    s.draws.push_back(dr);
  }
  return s;
}

double oracle_quantile(std::vector<double> v, double level) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * level;
  const auto lo = static_cast<std::size_t>(h);
  return v[lo] + (h - static_cast<double>(lo)) * (v[std::min(lo + 1, v.size() - 1)] - v[lo]);
}

}  // namespace

TEST_CASE("sorted_quantile: type 7 interpolation") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  CHECK(sorted_quantile(v, 0.5) == 2.5);
  CHECK(sorted_quantile(v, 0.0) == 1.0);
  CHECK(sorted_quantile(v, 1.0) == 4.0);
  CHECK(sorted_quantile(v, 0.05) == doctest::Approx(1.15));
  CHECK_THROWS_AS(sorted_quantile(std::vector<double>{}, 0.5), ModelError);
}

TEST_CASE("curve_summary: identical draws give a zero-width band") {
  auto s = fake_samples(2, CorrelationVariant::common, 50, 1);
  for (auto& d : s.draws) d = s.draws.front();
  const auto grid = default_grid(s, 1, 20);
  const auto c = curve_summary(s, 0, 1, grid);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    CHECK(c.lower[g] == doctest::Approx(c.median[g]));
    CHECK(c.upper[g] == doctest::Approx(c.median[g]));
  }
}

TEST_CASE("curve_summary: symmetric draws have a zero median") {
  auto s = fake_samples(1, CorrelationVariant::common, 100, 2);
  for (std::size_t d = 50; d < 100; ++d) {
    s.draws[d] = s.draws[d - 50];
    s.draws[d].beta *= -1.0;
  }
  const auto c = curve_summary(s, 0, 1, default_grid(s, 1, 15));
  for (double m : c.median) CHECK(std::abs(m) < 1e-12);
}

TEST_CASE("curve_summary: quantiles match a sort-based recomputation on 1000 draws") {
  const auto s = fake_samples(2, CorrelationVariant::common, 1000, 3);
  const auto grid = default_grid(s, 1, 12);
  const auto c = curve_summary(s, 1, 1, grid);
  const auto& block = s.designs.mean_blocks[1];
  const Eigen::RowVectorXd centre = s.designs.x.middleCols(static_cast<Eigen::Index>(block.offset), 4).colwise().mean();
  const double scale = s.designs.response_scale[1].scale;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    // Oracle: rebuild the basis row by hand and evaluate every draw.
    const double u = block.covariate.apply(grid[g]);
    Eigen::RowVectorXd row(4);
    row(0) = u;
    for (int l = 0; l < 3; ++l) {
      const double r2 = std::pow(u - block.knots->knots[static_cast<std::size_t>(l)], 2);
      row(l + 1) = r2 > 0 ? r2 * std::log(r2) : 0.0;
    }
    row -= centre;
    std::vector<double> vals;
    for (const auto& d : s.draws) vals.push_back(scale * row.dot(d.beta.row(1).segment(2, 4)));
    CHECK(c.median[g] == doctest::Approx(oracle_quantile(vals, 0.5)).epsilon(1e-12));
    CHECK(c.lower[g] == doctest::Approx(oracle_quantile(vals, 0.05)).epsilon(1e-12));
    CHECK(c.upper[g] == doctest::Approx(oracle_quantile(vals, 0.95)).epsilon(1e-12));
    CHECK(c.lower[g] <= c.median[g]);
    CHECK(c.median[g] <= c.upper[g]);
  }
}

TEST_CASE("curve_summary: errors") {
  auto s = fake_samples(1, CorrelationVariant::common, 5, 4);
  const auto& block = s.designs.mean_blocks[1];
  CHECK_THROWS_WITH_AS(curve_summary(s, 0, 1, {block.raw_max + 1.0}), doctest::Contains("outside the observed"),
                       ModelError);
  CHECK_NOTHROW(curve_summary(s, 0, 1, {block.raw_max + 1.0}, true));
  s.draws.clear();
  CHECK_THROWS_AS(curve_summary(s, 0, 1, {block.raw_min}), ModelError);
}

TEST_CASE("inclusion: always-on, exclusive pairs and recount oracle") {
  auto s = fake_samples(2, CorrelationVariant::common, 400, 5);
  for (std::size_t d = 0; d < s.draws.size(); ++d) {
    s.draws[d].gamma(0, 0) = true;
    s.draws[d].gamma(1, 1) = d % 2 == 0;
    s.draws[d].gamma(1, 2) = d % 2 == 1;
  }
  const auto inc = inclusion_probabilities(s);
  CHECK(inc.mean_coefficients(0, 0) == 1.0);
  CHECK(inc.mean_coefficients(1, 1) == 0.5);
  CHECK(inc.mean_coefficients(1, 2) == 0.5);
  CHECK(at_least_one_included(s, 1, {1, 2}) == 1.0);

  for (Eigen::Index j = 0; j < 2; ++j) {
    double term = 0.0, any02 = 0.0;
    for (const auto& d : s.draws) {
      term += d.gamma.row(j).segment(1, 4).any() ? 1.0 : 0.0;
      any02 += (d.gamma(j, 0) || d.gamma(j, 2)) ? 1.0 : 0.0;
    }
    CHECK(inc.mean_terms(j, 1) == doctest::Approx(term / 400.0));
    CHECK(at_least_one_included(s, static_cast<std::size_t>(j), {0, 2}) == doctest::Approx(any02 / 400.0));
  }
}

TEST_CASE("correlation_summary: common model and recount oracle") {
  const auto s = fake_samples(3, CorrelationVariant::common, 300, 6);
  const auto cs = correlation_summary(s);
  REQUIRE(cs.size() == 3);
  for (const auto& c : cs) {
    CHECK_FALSE(c.co_cluster.has_value());
    std::vector<double> v;
    for (const auto& d : s.draws) v.push_back(d.r(static_cast<Eigen::Index>(c.k), static_cast<Eigen::Index>(c.l)));
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    CHECK(c.mean == doctest::Approx(m).epsilon(1e-13));
    CHECK(c.sd == doctest::Approx(std::sqrt(ss / (v.size() - 1.0))).epsilon(1e-12));
    CHECK(c.q05 == doctest::Approx(oracle_quantile(v, 0.05)));
    CHECK(c.q95 == doctest::Approx(oracle_quantile(v, 0.95)));
    CHECK(c.q05 >= -1.0);
    CHECK(c.q95 <= 1.0);
  }
  const auto two = fake_samples(2, CorrelationVariant::common, 10, 7);
  CHECK(correlation_summary(two).size() == 1);
  CHECK(variable_co_clustering(two).size() == 0);
}

TEST_CASE("co-clustering: grouped variables and grouped correlations") {
  auto gv = fake_samples(3, CorrelationVariant::grouped_variables, 200, 8);
  const auto cs = correlation_summary(gv);
  const Eigen::MatrixXd m = variable_co_clustering(gv);
  for (const auto& c : cs) {
    double together = 0.0;
    for (const auto& d : gv.draws) together += d.labels[c.k] == d.labels[c.l] ? 1.0 : 0.0;
    CHECK(*c.co_cluster == doctest::Approx(together / 200.0));
    CHECK(m(static_cast<Eigen::Index>(c.k), static_cast<Eigen::Index>(c.l)) == doctest::Approx(together / 200.0));
  }
  for (auto& d : gv.draws) std::fill(d.labels.begin(), d.labels.end(), 0);
  for (const auto& c : correlation_summary(gv)) CHECK(*c.co_cluster == 1.0);

  const auto gc = fake_samples(3, CorrelationVariant::grouped_correlations, 200, 9);
  const Eigen::MatrixXd cc = correlation_co_clustering(gc);
  CHECK(cc.rows() == 3);
  for (const auto& c : correlation_summary(gc)) {
    const auto pair = pair_index(c.k, c.l, 3);
    double shared = 0.0;
    for (const auto& d : gc.draws) shared += std::count(d.labels.begin(), d.labels.end(), d.labels[pair]) > 1 ? 1.0 : 0.0;
    CHECK(*c.co_cluster == doctest::Approx(shared / 200.0));
    CHECK(*c.co_cluster >= 0.0);
    CHECK(*c.co_cluster <= 1.0);
  }
}

TEST_CASE("precision thresholds: identity, 2x2 closed form, monotone") {
  auto s = fake_samples(3, CorrelationVariant::common, 100, 10);
  auto ident = s;
  for (auto& d : ident.draws) d.r = Eigen::MatrixXd::Identity(3, 3);
  const Eigen::MatrixXd zero = precision_threshold_probs(ident, 0.1);
  CHECK((zero - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() == 0.0);

  auto two = fake_samples(2, CorrelationVariant::common, 20, 11);
  for (auto& d : two.draws) d.r << 1, 0.9, 0.9, 1;
  CHECK(scaled_negative_precision(two.draws[0].r)(0, 1) == doctest::Approx(0.9).epsilon(1e-14));
  CHECK(precision_threshold_probs(two, 0.1)(0, 1) == 1.0);
  CHECK(precision_threshold_probs(two, 1e9)(0, 1) == 0.0);

  double prev = 2.0;
  for (double a : {0.01, 0.05, 0.1, 0.2, 0.4, 1e9}) {
    const Eigen::MatrixXd m = precision_threshold_probs(s, a);
    CHECK(m(0, 1) <= prev);
    prev = m(0, 1);
  }
  CHECK(prev == 0.0);
  CHECK_THROWS_AS(precision_threshold_probs(s, 0.0), ModelError);
}

TEST_CASE("summaries are pure functions of the samples") {
  const auto s = fake_samples(3, CorrelationVariant::grouped_variables, 150, 12);
  const auto g = default_grid(s, 1, 10);
  const auto a = curve_summary(s, 2, 1, g);
  const auto b = curve_summary(s, 2, 1, g);
  CHECK(a.median == b.median);
  CHECK(a.lower == b.lower);
  const auto fa = fitted_mean_summary(s, 0);
  const auto fb = fitted_mean_summary(s, 0);
  CHECK(fa.median == fb.median);
  for (std::size_t i = 0; i < fa.median.size(); ++i) {
    CHECK(fa.lower[i] <= fa.median[i]);
    CHECK(fa.median[i] <= fa.upper[i]);
  }
  CHECK((precision_threshold_probs(s, 0.1).array() == precision_threshold_probs(s, 0.1).array()).all());
}
