#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bnmvr/likelihood.hpp"
#include "oracles.hpp"

using namespace bnmvr;

namespace {

DesignMatrices single_point(double y) {
  DesignMatrices d;
  d.y = Eigen::MatrixXd::Constant(1, 1, y);
  d.x.resize(1, 0);
  d.z.resize(1, 0);
  return d;
}

SamplerState trivial_state(std::size_t p) {
  const auto P = static_cast<Eigen::Index>(p);
  SamplerState s;
  s.beta = Eigen::MatrixXd::Zero(P, 1);
  s.gamma = Indicators(P, 0);
  s.delta = Indicators(P, 0);
  s.alpha.resize(P, 0);
  s.sigma2 = Eigen::VectorXd::Ones(P);
  s.c_alpha = Eigen::VectorXd::Ones(P);
  s.r = Eigen::MatrixXd::Identity(P, P);
  return s;
}

}  // namespace

TEST_CASE("full_loglik: standard normal at zero") {
  const auto d = single_point(0.0);
  const auto s = trivial_state(1);
  CHECK(full_loglik(s, d) == doctest::Approx(-0.5 * std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
}

TEST_CASE("full_loglik: independent components factorise") {
  Rng rng(8);
  auto inst = oracle::random_instance(7, 2, 2, 0, rng);
  inst.state.r = Eigen::MatrixXd::Identity(2, 2);
  double sum = 0.0;
  for (Eigen::Index j = 0; j < 2; ++j) {
    oracle::Instance one;
    one.designs = inst.designs;
    one.designs.y = inst.designs.y.col(j);
    one.state = trivial_state(1);
    one.state.beta = inst.state.beta.row(j);
    one.state.gamma = inst.state.gamma.row(j);
    one.state.sigma2(0) = inst.state.sigma2(j);
    sum += full_loglik(one.state, one.designs);
  }
  CHECK(full_loglik(inst.state, inst.designs) == doctest::Approx(sum).epsilon(1e-13));
}

TEST_CASE("full_loglik: dense multivariate normal oracle on n=5, p=3") {
  Rng rng(21);
  for (int rep = 0; rep < 10; ++rep) {
    const auto inst = oracle::random_instance(5, 3, 2, 1, rng);
    CHECK(std::abs(full_loglik(inst.state, inst.designs) - oracle::dense_full_loglik(inst.state, inst.designs)) <
          1e-8);
  }
}

TEST_CASE("full_loglik: non-PD correlation is an error") {
  Rng rng(2);
  auto inst = oracle::random_instance(5, 3, 1, 0, rng);
  inst.state.r << 1, 0.9, 0.9, 0.9, 1, -0.9, 0.9, -0.9, 1;
  CHECK_THROWS_WITH_AS(full_loglik(inst.state, inst.designs), "correlation not positive definite", NumericalError);
}

TEST_CASE("compute_S: c_beta = 0 leaves the trace term") {
  Rng rng(5);
  auto inst = oracle::random_instance(6, 2, 3, 1, rng);
  inst.state.gamma.setConstant(false);
  inst.state.c_beta = 0.0;
  const auto q = compute_S(inst.state, inst.designs);
  const Eigen::MatrixXd sigma = oracle::dense_sigma(inst.state, inst.designs);
  const Eigen::VectorXd y = oracle::stacked_y(inst.designs);
  CHECK(q.s == doctest::Approx(y.dot(sigma.llt().solve(y))).epsilon(1e-12));
  CHECK(q.selected == 0);
}

TEST_CASE("compute_S: dense projection oracle on n=4, p=2") {
  Rng rng(33);
  const auto inst = oracle::random_instance(4, 2, 1, 0, rng, true);
  CHECK(std::abs(compute_S(inst.state, inst.designs).s - oracle::dense_S(inst.state, inst.designs)) < 1e-8);
}

TEST_CASE("compute_S: trace form equals dense form on 100 random instances") {
  Rng rng(101);
  int checked = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t p = 1 + rng.integer(0, 5);
    const std::size_t width = rng.integer(0, 3);
    const std::size_t n = std::max<std::size_t>(2 + width, 1 + rng.integer(0, 5));
    const auto inst = oracle::random_instance(n, p, width, rng.integer(0, 2), rng);
    const auto q = compute_S(inst.state, inst.designs);
    const double dense = oracle::dense_S(inst.state, inst.designs);
    CHECK(std::abs(q.s - dense) < 1e-8 * std::max(1.0, std::abs(dense)));
    CHECK(q.s >= -1e-10);
    CHECK(q.selected == static_cast<std::size_t>(inst.state.gamma.count()));
    CHECK(std::abs(q.log_det_sigma - oracle::dense_log_det_sigma(inst.state, inst.designs)) < 1e-8);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("compute_S: quadratic in Y") {
  Rng rng(7);
  auto inst = oracle::random_instance(9, 3, 2, 1, rng);
  const double base = compute_S(inst.state, inst.designs).s;
  inst.designs.y *= 2.0;
  CHECK(compute_S(inst.state, inst.designs).s == doctest::Approx(4.0 * base).epsilon(1e-12));
}

TEST_CASE("compute_S: rank-deficient Gram names the gamma configuration") {
  Rng rng(3);
  auto inst = oracle::random_instance(6, 1, 2, 0, rng);
  inst.designs.x.col(1) = inst.designs.x.col(0);
  inst.state.gamma.setConstant(true);
  CHECK_THROWS_WITH_AS(compute_S(inst.state, inst.designs), "rank-deficient Gram matrix for gamma = [11]",
                       NumericalError);
}

TEST_CASE("marginal_loglik: Monte Carlo integral of likelihood times g-prior") {
  Rng rng(2024);
  auto inst = oracle::random_instance(4, 2, 0, 0, rng);
  inst.state.c_beta = 1.5;
  const double exact = marginal_loglik(inst.state, inst.designs);
  Rng mc(99);
  const auto est = oracle::marginal_by_monte_carlo(inst.state, inst.designs, 100000, mc);
  CHECK(std::abs(exact - est.log_value) < 3.0 * est.log_se);
}

TEST_CASE("marginal_loglik: invariant to observation order") {
  Rng rng(12);
  auto inst = oracle::random_instance(8, 3, 2, 1, rng);
  const double before = marginal_loglik(inst.state, inst.designs);
  Eigen::PermutationMatrix<Eigen::Dynamic> perm(8);
  perm.setIdentity();
  rng.shuffle(perm.indices().data(), perm.indices().data() + perm.indices().size());
  inst.designs.y = perm * inst.designs.y;
  inst.designs.x = perm * inst.designs.x;
  inst.designs.z = perm * inst.designs.z;
  CHECK(marginal_loglik(inst.state, inst.designs) == doctest::Approx(before).epsilon(1e-12));
}

TEST_CASE("marginal_loglik: c_beta penalty term") {
  Rng rng(14);
  const auto inst = oracle::random_instance(8, 2, 3, 0, rng);
  auto q = compute_S(inst.state, inst.designs);
  const double a = marginal_loglik(q, 2.0, 8, 2);
  const double b = marginal_loglik(q, 5.0, 8, 2);
  const double cols = static_cast<double>(q.selected + 2);
  CHECK(a - b == doctest::Approx(0.5 * cols * (std::log(6.0) - std::log(3.0))).epsilon(1e-12));
}

TEST_CASE("GPriorInR: equals the dense g-prior density") {
  Rng rng(55);
  for (int rep = 0; rep < 5; ++rep) {
    const auto inst = oracle::random_instance(7, 3, 2, 1, rng);
    const GPriorInR gp(inst.state, inst.designs);
    const Eigen::MatrixXd cov = oracle::gprior_covariance(inst.state, inst.designs);
    const Eigen::VectorXd b = oracle::dense_beta(inst.state);
    CHECK(gp(inst.state.r) == doctest::Approx(oracle::log_mvn(b, Eigen::VectorXd::Zero(b.size()), cov)).epsilon(1e-10));
  }
}
