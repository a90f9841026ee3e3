#ifndef BNMVR_RANDOM_HPP
#define BNMVR_RANDOM_HPP

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace bnmvr {

/// Derives the seed of stream `stream` from a 64-bit base seed.
///
/// Streams are numbered by the caller (chain index, replicate index, ...);
/// the mapping is two rounds of splitmix64 over (base, stream), so serial and
/// parallel runs that use the same numbering draw identical numbers.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// Random number source for one chain. Not thread-safe; give every chain its own.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform();
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }
  /// Gamma with shape/rate parametrisation (mean shape/rate).
  double gamma(double shape, double rate);
  /// Inverse gamma IG(shape, scale): density ∝ x^{-shape-1} exp(-scale/x).
  double inv_gamma(double shape, double scale) { return 1.0 / gamma(shape, scale); }
  double beta(double a, double b);
  double chi_squared(double df) { return gamma(0.5 * df, 0.5); }
  bool bernoulli(double p) { return uniform() < p; }
  /// Uniform integer on [lo, hi].
  std::size_t integer(std::size_t lo, std::size_t hi);
  /// Index drawn with probability proportional to exp(log_weights).
  std::size_t categorical_log(std::span<const double> log_weights);

  template <class It>
  void shuffle(It first, It last) {
    std::shuffle(first, last, engine_);
  }

  /// Draw from N(mean, L L^T) given the lower Cholesky factor L.
  Eigen::VectorXd mvn_chol(const Eigen::VectorXd& mean, const Eigen::MatrixXd& lower);

  /// Draw E ~ IW(df, scale): density ∝ |E|^{-(df+p+1)/2} exp(-tr(scale E^{-1})/2).
  /// Returns an empty matrix if the scale is not positive definite.
  Eigen::MatrixXd inv_wishart(double df, const Eigen::MatrixXd& scale);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

/// Log density of IW(df, scale) at E, including all normalising constants.
double log_inv_wishart_density(const Eigen::MatrixXd& e, double df, const Eigen::MatrixXd& scale);

/// log Γ_p(a), the multivariate log-gamma function.
double log_multigamma(double a, int p);

double log_normal_density(double x, double mean, double var);

}  // namespace bnmvr

#endif
