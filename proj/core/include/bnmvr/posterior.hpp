#ifndef BNMVR_POSTERIOR_HPP
#define BNMVR_POSTERIOR_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "bnmvr/sampler.hpp"

namespace bnmvr {

/// Empirical quantile with linear interpolation between order statistics
/// (Hyndman-Fan type 7). `sorted` must be ascending and non-empty.
double sorted_quantile(std::span<const double> sorted, double level);

struct CurveSummary {
  std::size_t response = 0;
  std::size_t term = 0;
  std::vector<double> grid;  // covariate values in data units
  std::vector<double> median;
  std::vector<double> lower;  // 5%
  std::vector<double> upper;  // 95%
};

/// Posterior of one additive mean term f_jk on a grid, in response units.
///
/// Each draw's contribution is centred at its average over the training data so the
/// intercept carries the level. Grid points outside the observed covariate range are
/// refused unless `allow_extrapolation` is set.
CurveSummary curve_summary(const ChainSamples& samples, std::size_t response, std::size_t term,
                           const std::vector<double>& grid, bool allow_extrapolation = false);

/// Evenly spaced grid over the observed range of a mean term's covariate.
std::vector<double> default_grid(const ChainSamples& samples, std::size_t term, std::size_t points = 50);

/// Posterior median and 90% band of mu_ij at every observation, in response units.
struct FittedSummary {
  std::vector<double> median;
  std::vector<double> lower;
  std::vector<double> upper;
};

FittedSummary fitted_mean_summary(const ChainSamples& samples, std::size_t response);

struct InclusionSummary {
  Eigen::MatrixXd mean_coefficients;      // p x P, mean of gamma
  Eigen::MatrixXd mean_terms;             // p x (mean terms), any coefficient of the term included
  Eigen::MatrixXd variance_coefficients;  // p x Q, mean of delta
  Eigen::MatrixXd variance_terms;         // p x (variance terms)
};

InclusionSummary inclusion_probabilities(const ChainSamples& samples);

/// Fraction of draws in which at least one of the listed mean-design columns of
/// response j is included.
double at_least_one_included(const ChainSamples& samples, std::size_t response, const std::vector<std::size_t>& columns);

struct CorrelationSummary {
  std::size_t k = 0;
  std::size_t l = 0;
  double mean = 0.0;
  double sd = 0.0;
  double q05 = 0.0;
  double q95 = 0.0;
  /// Grouped variables: P(both variables share a group). Grouped correlations:
  /// P(this correlation shares its cluster with another one). Absent for the common model.
  std::optional<double> co_cluster;
};

std::vector<CorrelationSummary> correlation_summary(const ChainSamples& samples);

/// Co-clustering probabilities as a p x p matrix (variables for grouped variables,
/// unit diagonal); empty for other variants.
Eigen::MatrixXd variable_co_clustering(const ChainSamples& samples);

/// Co-clustering probabilities between correlations (pair order of pair_index) for the
/// grouped-correlations variant; empty otherwise.
Eigen::MatrixXd correlation_co_clustering(const ChainSamples& samples);

/// P(|-omega_kl / sqrt(omega_kk omega_ll)| > a) with Omega = R^{-1}; unit diagonal.
Eigen::MatrixXd precision_threshold_probs(const ChainSamples& samples, double threshold);

/// Scaled negative precision -omega_kl / sqrt(omega_kk omega_ll) of one correlation matrix.
Eigen::MatrixXd scaled_negative_precision(const Eigen::MatrixXd& r);

}  // namespace bnmvr

#endif
