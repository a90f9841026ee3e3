#include "bnmvr/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace bnmvr {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return splitmix64(splitmix64(base) ^ (stream * 0xd1342543de82ef95ULL + 1));
}

double Rng::uniform() {
  // (0,1): never returns 0 so log(uniform()) is finite.
  constexpr double scale = 1.0 / 9007199254740992.0;
  return (static_cast<double>(engine_() >> 11) + 0.5) * scale;
}

double Rng::normal() {
  std::normal_distribution<double> dist(0.0, 1.0);
  return dist(engine_);
}

double Rng::gamma(double shape, double rate) {
  std::gamma_distribution<double> dist(shape, 1.0 / rate);
  return dist(engine_);
}

double Rng::beta(double a, double b) {
  const double x = gamma(a, 1.0);
  const double y = gamma(b, 1.0);
  if (x + y == 0.0) return a / (a + b);
  return x / (x + y);
}

std::size_t Rng::integer(std::size_t lo, std::size_t hi) {
  std::uniform_int_distribution<std::size_t> dist(lo, hi);
  return dist(engine_);
}

std::size_t Rng::categorical_log(std::span<const double> log_weights) {
  const double top = *std::max_element(log_weights.begin(), log_weights.end());
  std::vector<double> cumulative(log_weights.size());
  double total = 0.0;
  for (std::size_t h = 0; h < log_weights.size(); ++h) {
    total += std::isfinite(log_weights[h]) ? std::exp(log_weights[h] - top) : 0.0;
    cumulative[h] = total;
  }
  const double u = uniform() * total;
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(it - cumulative.begin(), log_weights.size() - 1);
}

Eigen::VectorXd Rng::mvn_chol(const Eigen::VectorXd& mean, const Eigen::MatrixXd& lower) {
  Eigen::VectorXd z(mean.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = normal();
  return mean + lower.triangularView<Eigen::Lower>() * z;
}

Eigen::MatrixXd Rng::inv_wishart(double df, const Eigen::MatrixXd& scale) {
  const Eigen::Index p = scale.rows();
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success) return {};
  // Bartlett factor A of W ~ Wishart(df, I); E = U A^{-T} A^{-1} U^T with scale = U U^T.
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    a(i, i) = std::sqrt(chi_squared(df - static_cast<double>(i)));
    for (Eigen::Index j = 0; j < i; ++j) a(i, j) = normal();
  }
  const Eigen::MatrixXd u = llt.matrixL();
  const Eigen::MatrixXd a_inv_t =
      a.transpose().triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd b = u * a_inv_t;
  Eigen::MatrixXd e = b * b.transpose();
  return 0.5 * (e + e.transpose());
}

double log_multigamma(double a, int p) {
  double out = 0.25 * p * (p - 1) * std::log(std::numbers::pi);
  for (int j = 0; j < p; ++j) out += std::lgamma(a - 0.5 * j);
  return out;
}

double log_inv_wishart_density(const Eigen::MatrixXd& e, double df, const Eigen::MatrixXd& scale) {
  const int p = static_cast<int>(e.rows());
  Eigen::LLT<Eigen::MatrixXd> le(e);
  Eigen::LLT<Eigen::MatrixXd> ls(scale);
  if (le.info() != Eigen::Success || ls.info() != Eigen::Success)
    return -std::numeric_limits<double>::infinity();
  const double logdet_e = 2.0 * le.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double logdet_s = 2.0 * ls.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double trace = le.solve(scale).trace();
  return 0.5 * df * logdet_s - 0.5 * df * p * std::numbers::ln2 - log_multigamma(0.5 * df, p) -
         0.5 * (df + p + 1) * logdet_e - 0.5 * trace;
}

double log_normal_density(double x, double mean, double var) {
  const double d = x - mean;
  return -0.5 * (std::log(2.0 * std::numbers::pi * var) + d * d / var);
}

}  // namespace bnmvr
