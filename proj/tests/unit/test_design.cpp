#include <doctest.h>

#include <cmath>
#include <vector>

#include "bnmvr/design.hpp"
#include "bnmvr/random.hpp"

using namespace bnmvr;

namespace {

Dataset toy_dataset(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset d;
  d.names = {"y1", "y2", "y3", "a", "b"};
  d.values.resize(static_cast<Eigen::Index>(n), 5);
  for (Eigen::Index i = 0; i < d.values.rows(); ++i)
    for (Eigen::Index c = 0; c < 5; ++c) d.values(i, c) = c < 3 ? rng.normal() : rng.uniform() * 4.0 - 1.0;
  return d;
}

double sample_sd(const Eigen::VectorXd& v) {
  return std::sqrt((v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1));
}

}  // namespace

TEST_CASE("standardize: symmetric three-point column") {
  const std::vector<double> col{1.0, 2.0, 3.0};
  const auto s = standardize(col);
  CHECK(s.values(0) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(s.values(1) == doctest::Approx(0.0));
  CHECK(s.values(2) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.transform.center == 2.0);
  CHECK(s.transform.scale == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.transform.invert(s.values(2)) == doctest::Approx(3.0));
}

TEST_CASE("standardize: idempotent on a standardized column") {
  Rng rng(4);
  std::vector<double> col(200);
  for (auto& v : col) v = rng.normal(3.0, 2.0);
  const auto once = standardize(col);
  const std::vector<double> again(once.values.data(), once.values.data() + once.values.size());
  const auto twice = standardize(again);
  CHECK((twice.values - once.values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("standardize: moments recomputed directly on 500 uniforms") {
  Rng rng(17);
  std::vector<double> col(500);
  for (auto& v : col) v = rng.uniform() - 0.5;
  const auto s = standardize(col);
  CHECK(std::abs(s.values.mean()) < 1e-12);
  CHECK(sample_sd(s.values) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("standardize: constant column is a degenerate covariate") {
  const std::vector<double> col(10, 3.5);
  CHECK_THROWS_WITH_AS(standardize(col), doctest::Contains("degenerate covariate"), ModelError);
}

TEST_CASE("make_knots: median and sextiles on an even grid") {
  std::vector<double> u(101);
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = static_cast<double>(i) / 100.0;
  const auto two = make_knots(u, 2);
  REQUIRE(two.knots.size() == 1);
  CHECK(two.knots[0] == doctest::Approx(0.5).epsilon(1e-14));

  const auto six = make_knots(u, 6);
  REQUIRE(six.knots.size() == 5);
  for (std::size_t l = 1; l <= 5; ++l) {
    // Type-7 quantile of the grid: position 100 l / 6, interpolated between neighbours.
    const double h = 100.0 * static_cast<double>(l) / 6.0;
    const double lo = std::floor(h);
    const double oracle = (lo + (h - lo)) / 100.0;
    CHECK(six.knots[l - 1] == doctest::Approx(oracle).epsilon(1e-13));
    CHECK(six.knots[l - 1] == doctest::Approx(static_cast<double>(l) / 6.0).epsilon(1e-12));
  }
  CHECK(six.basis_count() == 6);
}

TEST_CASE("make_knots: tied quantiles are refused") {
  std::vector<double> u(100, 0.0);
  for (std::size_t i = 90; i < 100; ++i) u[i] = static_cast<double>(i);
  CHECK_THROWS_WITH_AS(make_knots(u, 6), doctest::Contains("tied knot"), ModelError);
  const std::vector<double> few{1.0, 2.0, 1.0, 2.0};
  CHECK_THROWS_WITH_AS(make_knots(few, 6), doctest::Contains("too few distinct"), ModelError);
}

TEST_CASE("radial_basis_row: closed-form entries") {
  KnotGrid grid;
  grid.knots = {0.0, 1.0};
  const auto at_knot = radial_basis_row(0.0, grid);
  CHECK(at_knot(0) == 0.0);
  CHECK(at_knot(1) == 0.0);
  const auto unit = radial_basis_row(1.0, grid);
  CHECK(unit(1) == 0.0);  // r = 1
  CHECK(unit(2) == 0.0);  // at the second knot
  const auto half = radial_basis_row(0.5, grid);
  CHECK(half(0) == 0.5);
  CHECK(half(1) == doctest::Approx(0.25 * std::log(0.25)).epsilon(1e-15));
  CHECK(half(1) == doctest::Approx(-0.3466).epsilon(1e-4));
}

TEST_CASE("radial_basis_row: continuous across knots") {
  KnotGrid grid;
  grid.knots = {-0.3, 0.2, 0.7};
  for (double xi : grid.knots) {
    const auto lo = radial_basis_row(xi - 1e-8, grid);
    const auto hi = radial_basis_row(xi + 1e-8, grid);
    CHECK((hi - lo).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("build_designs: widths and stacked block layout") {
  const Dataset data = toy_dataset(40, 3);
  DesignSpec spec;
  spec.responses = {0};
  spec.mean_terms = {{TermKind::parametric, 3, 1, {}}};
  auto one = build_designs(data, spec);
  CHECK(one.mean_width() == 1);
  CHECK(one.stacked_mean_row(0).cols() == 2);

  spec.responses = {0, 1, 2};
  spec.mean_terms = {{TermKind::smooth, 4, 6, {}}, {TermKind::parametric, 3, 1, {}}};
  const auto d = build_designs(data, spec);
  CHECK(d.mean_width() == 7);
  // Parametric terms come first whatever order they were listed in.
  CHECK(d.mean_blocks[0].spec.kind == TermKind::parametric);
  CHECK(d.mean_blocks[1].offset == 1);
  const Eigen::MatrixXd xs = d.stacked_mean_row(5);
  CHECK(xs.rows() == 3);
  CHECK(xs.cols() == 24);
  // Oracle: count the nonzero pattern block by block.
  for (Eigen::Index j = 0; j < 3; ++j) {
    for (Eigen::Index c = 0; c < 24; ++c) {
      const bool own = c / 8 == j;
      if (!own) CHECK(xs(j, c) == 0.0);
    }
    CHECK(xs(j, j * 8) == 1.0);
    CHECK((xs.block(j, j * 8 + 1, 1, 7) - d.x.row(5)).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("build_designs: design rows equal term-by-term evaluation") {
  const Dataset data = toy_dataset(60, 9);
  DesignSpec spec;
  spec.responses = {0, 1};
  spec.mean_terms = {{TermKind::parametric, 3, 1, {}}, {TermKind::smooth, 4, 5, {}}};
  spec.variance_terms = {{TermKind::parametric, 4, 1, {}}};
  const auto d = build_designs(data, spec);
  Rng rng(2);
  Eigen::VectorXd beta(1 + d.mean_width());
  for (Eigen::Index a = 0; a < beta.size(); ++a) beta(a) = rng.normal();

  // Oracle: standardize by hand, place knots by hand, evaluate the additive predictor.
  const Eigen::VectorXd ua = data.values.col(3);
  const Eigen::VectorXd ub = data.values.col(4);
  const double ma = ua.mean(), sa = sample_sd(ua), mb = ub.mean(), sb = sample_sd(ub);
  std::vector<double> zb(ub.size());
  for (Eigen::Index i = 0; i < ub.size(); ++i) zb[static_cast<std::size_t>(i)] = (ub(i) - mb) / sb;
  const KnotGrid grid = make_knots(zb, 5);
  for (Eigen::Index i = 0; i < d.x.rows(); ++i) {
    double direct = beta(0) + beta(1) * (ua(i) - ma) / sa;
    const double u = (ub(i) - mb) / sb;
    direct += beta(2) * u;
    for (std::size_t l = 0; l < grid.knots.size(); ++l) {
      const double r2 = (u - grid.knots[l]) * (u - grid.knots[l]);
      direct += beta(static_cast<Eigen::Index>(3 + l)) * (r2 > 0 ? r2 * std::log(r2) : 0.0);
    }
    const double via_row = beta(0) + d.x.row(i).dot(beta.tail(d.mean_width()));
    CHECK(std::abs(direct - via_row) < 1e-12);
  }
  // Variance columns are centred.
  CHECK(std::abs(d.z.col(0).mean()) < 1e-12);
  // Responses standardized by default.
  CHECK(std::abs(d.y.col(1).mean()) < 1e-12);
}

TEST_CASE("build_designs: deterministic and rejects bad columns") {
  const Dataset data = toy_dataset(30, 5);
  DesignSpec spec;
  spec.responses = {0};
  spec.mean_terms = {{TermKind::smooth, 3, 4, {}}};
  const auto a = build_designs(data, spec);
  const auto b = build_designs(data, spec);
  CHECK((a.x.array() == b.x.array()).all());
  CHECK((a.y.array() == b.y.array()).all());

  spec.mean_terms = {{TermKind::parametric, 9, 1, {}}};
  CHECK_THROWS_WITH_AS(build_designs(data, spec), doctest::Contains("term references column 9"), ModelError);
  spec.mean_terms.clear();
  spec.responses = {7};
  CHECK_THROWS_AS(build_designs(data, spec), ModelError);
  CHECK_THROWS_WITH_AS(data.column("nope"), doctest::Contains("unknown column 'nope'"), ModelError);
}
