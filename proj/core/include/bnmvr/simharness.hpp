#ifndef BNMVR_SIMHARNESS_HPP
#define BNMVR_SIMHARNESS_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bnmvr/sampler.hpp"

namespace bnmvr {

inline constexpr double sim_beta0 = 0.0;
inline constexpr double sim_beta1 = 3.47;
inline constexpr std::size_t sim_responses = 10;
inline constexpr std::size_t sim_covariates = 10;

struct SimScenario {
  std::size_t n = 50;
  double rho = 0.1;
  std::vector<std::size_t> dims{1, 2, 4, 6, 10};
  int mean_model = 1;  // 1: x1; 2: x1..x3; 3: x1..x10
  std::size_t replicates = 40;
  std::uint64_t seed = 1;
  ChainSchedule schedule{40000, 20000, 2, 1, true, 50};
  PriorConfig priors;
  InclusionPrior inclusion;  // Beta(1,1) for bias tables, Beta(1,3) for selection

  void validate() const;
};

/// Desk-scale schedule: 10,000 sweeps, 5,000 burn-in, thin 2.
ChainSchedule desk_schedule();
/// The paper's schedule: 40,000 sweeps, 20,000 burn-in, thin 2.
ChainSchedule full_schedule();

/// Columns y1..y10 then x1..x10; x iid U(-0.5, 0.5), Y ~ N10((3.47 x1, 0, ..., 0), Sigma(rho)).
Dataset gen_dataset(std::size_t n, double rho, Rng& rng);

/// Unit-diagonal equicorrelation matrix; throws ModelError when it is not positive definite.
Eigen::MatrixXd equicorrelation(std::size_t p, double rho);

/// (SST - SSE) / SSE; throws ModelError when SSE = 0.
double check_snr(const Eigen::VectorXd& y, const Eigen::VectorXd& fitted);

/// Model for the first d responses of a simulated dataset under the scenario's mean model:
/// linear terms, constant variances, common correlations.
ModelSpec scenario_model(const SimScenario& scenario, std::size_t d);

/// True mu_i1 for every row of a simulated dataset.
Eigen::VectorXd true_mean(const Dataset& data);

struct FitMetrics {
  double bias = 0.0;       // B(d)
  double variance = 0.0;   // V(d)
  double coverage = 0.0;   // fraction of i with mu_i1 inside the 90% band
  double spurious = 0.0;   // P(at least one of the irrelevant covariates of response 1)
  double relevant = 0.0;   // P(x1 included in response 1)
  double seconds = 0.0;
  std::vector<MoveReport> moves;
  std::size_t numerical_failures = 0;
};

struct ReplicateResult {
  std::size_t index = 0;
  std::uint64_t data_seed = 0;
  std::vector<std::uint64_t> chain_seeds;  // per dimension
  std::vector<FitMetrics> fits;            // per dimension, same order as dims
};

struct SimMetrics {
  SimScenario scenario;
  std::vector<ReplicateResult> replicates;
  std::vector<std::string> warnings;
  std::vector<double> mean_bias;             // per dimension, averaged over replicates
  std::vector<double> mean_variance;
  std::vector<double> relative_bias;         // 100 * mean B(d) / mean B(1)
  std::vector<double> relative_variance;     // 100 * mean V(d) / mean V(1)
  std::vector<double> mean_ratio_bias;       // 100 * mean over replicates of B(d)/B(1)
  std::vector<double> mean_ratio_variance;
  std::vector<double> coverage;
  std::vector<double> spurious;
  std::vector<double> relevant;
  std::vector<double> seconds;               // mean fit time per dimension
};

/// Fits one replicate dataset at every dimension of the scenario.
ReplicateResult run_replicate(const SimScenario& scenario, std::size_t index);

/// Runs all replicates and aggregates. Replicates whose fits throw are dropped
/// with a warning. `progress`, when set, is called after each replicate.
SimMetrics run_table(const SimScenario& scenario,
                     const std::function<void(const ReplicateResult&)>& progress = {});

}  // namespace bnmvr

#endif
