#include <doctest.h>

#include <cmath>

#include "bnmvr/simharness.hpp"

using namespace bnmvr;

namespace {

double sample_corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd x = a.array() - a.mean();
  const Eigen::ArrayXd y = b.array() - b.mean();
  return (x * y).sum() / std::sqrt(x.square().sum() * y.square().sum());
}

SimScenario tiny() {
  SimScenario s;
  s.n = 30;
  s.rho = 0.5;
  s.dims = {1, 2};
  s.replicates = 2;
  s.seed = 77;
  s.schedule = {600, 300, 2, 1, true, 50};
  return s;
}

}  // namespace

TEST_CASE("data-generating constants") {
  CHECK(sim_beta0 == 0.0);
  CHECK(sim_beta1 == 3.47);
  const auto d = desk_schedule();
  CHECK(d.sweeps == 10000);
  CHECK(d.burn_in == 5000);
  CHECK(d.thin == 2);
  const auto f = full_schedule();
  CHECK(f.sweeps == 40000);
  CHECK(f.burn_in == 20000);
  CHECK(f.retained() == 10000);
}

TEST_CASE("equicorrelation: positive definiteness follows the eigenvalues 1+(p-1)rho and 1-rho") {
  const Eigen::MatrixXd s = equicorrelation(10, 0.9);
  CHECK(Eigen::LLT<Eigen::MatrixXd>(s).info() == Eigen::Success);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  CHECK(eig.eigenvalues().maxCoeff() == doctest::Approx(1.0 + 9.0 * 0.9));
  CHECK(eig.eigenvalues().minCoeff() == doctest::Approx(0.1));
  CHECK_THROWS_WITH_AS(equicorrelation(10, -0.2), doctest::Contains("not positive definite"), ModelError);
  CHECK_NOTHROW(equicorrelation(10, -0.1));
}

TEST_CASE("gen_dataset: layout, covariate range and independence at rho = 0") {
  Rng rng(4);
  const std::size_t n = 2000;
  const Dataset d = gen_dataset(n, 0.0, rng);
  CHECK(d.cols() == 20);
  CHECK(d.names[0] == "y1");
  CHECK(d.names[10] == "x1");
  CHECK(d.values.rightCols(10).minCoeff() >= -0.5);
  CHECK(d.values.rightCols(10).maxCoeff() <= 0.5);
  const double bound = 4.0 / std::sqrt(static_cast<double>(n));
  for (Eigen::Index a = 1; a < 10; ++a)
    for (Eigen::Index b = a + 1; b < 10; ++b) CHECK(std::abs(sample_corr(d.values.col(a), d.values.col(b))) < bound);
}

TEST_CASE("gen_dataset: equicorrelated errors at rho = 0.7") {
  Rng rng(5);
  const Dataset d = gen_dataset(4000, 0.7, rng);
  const Eigen::VectorXd e1 = d.values.col(0) - true_mean(d);
  CHECK(sample_corr(e1, d.values.col(4)) == doctest::Approx(0.7).epsilon(0.05));
  CHECK(sample_corr(d.values.col(2), d.values.col(8)) == doctest::Approx(0.7).epsilon(0.05));
}

TEST_CASE("check_snr: constant fit, population value and perfect fit") {
  Rng rng(6);
  const Dataset d = gen_dataset(200000, 0.1, rng);
  const Eigen::VectorXd y = d.values.col(0);
  CHECK(check_snr(y, Eigen::VectorXd::Constant(y.size(), y.mean())) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(check_snr(y, true_mean(d)) == doctest::Approx(3.47 * 3.47 / 12.0).epsilon(0.02));
  CHECK(3.47 * 3.47 / 12.0 == doctest::Approx(1.003).epsilon(1e-3));
  CHECK_THROWS_WITH_AS(check_snr(y, y), doctest::Contains("SSE is zero"), ModelError);
}

TEST_CASE("scenario validation") {
  SimScenario s = tiny();
  CHECK_NOTHROW(s.validate());
  s.dims = {2, 4};
  CHECK_THROWS_WITH_AS(s.validate(), doctest::Contains("d = 1"), ModelError);
  s = tiny();
  s.dims = {1, 11};
  CHECK_THROWS_AS(s.validate(), ModelError);
  s = tiny();
  s.mean_model = 4;
  CHECK_THROWS_AS(s.validate(), ModelError);
  s = tiny();
  s.replicates = 0;
  CHECK_THROWS_AS(s.validate(), ModelError);
}

TEST_CASE("scenario_model: mean model widths") {
  SimScenario s = tiny();
  for (int m : {1, 2, 3}) {
    s.mean_model = m;
    const auto spec = scenario_model(s, 4);
    CHECK(spec.design.responses.size() == 4);
    CHECK(spec.design.mean_terms.size() == (m == 1 ? 1u : m == 2 ? 3u : 10u));
    CHECK(spec.design.mean_terms[0].column == sim_responses);
  }
}

TEST_CASE("run_table: d = 1 is exactly 100 and tables are reproducible") {
  const auto a = run_table(tiny());
  const auto b = run_table(tiny());
  REQUIRE(a.replicates.size() == 2);
  CHECK(a.relative_bias[0] == 100.0);
  CHECK(a.relative_variance[0] == 100.0);
  CHECK(a.mean_ratio_bias[0] == 100.0);
  CHECK(a.relative_bias == b.relative_bias);
  CHECK(a.relative_variance == b.relative_variance);
  CHECK(a.coverage == b.coverage);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(a.replicates[r].data_seed == b.replicates[r].data_seed);
    CHECK(a.replicates[r].chain_seeds == b.replicates[r].chain_seeds);
    for (const auto& f : a.replicates[r].fits) {
      CHECK(f.bias >= 0.0);
      CHECK(f.variance >= 0.0);
      CHECK(f.coverage >= 0.0);
      CHECK(f.coverage <= 1.0);
    }
  }
  // Ratio of means over replicates.
  const double ratio = 100.0 * ((a.replicates[0].fits[1].bias + a.replicates[1].fits[1].bias) /
                                (a.replicates[0].fits[0].bias + a.replicates[1].fits[0].bias));
  CHECK(a.relative_bias[1] == doctest::Approx(ratio).epsilon(1e-12));
}
