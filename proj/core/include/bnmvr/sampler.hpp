#ifndef BNMVR_SAMPLER_HPP
#define BNMVR_SAMPLER_HPP

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bnmvr/correlation.hpp"
#include "bnmvr/design.hpp"
#include "bnmvr/likelihood.hpp"
#include "bnmvr/random.hpp"
#include "bnmvr/state.hpp"

namespace bnmvr {

enum class ScalePriorKind { inverse_gamma, half_normal };

/// Prior on a variance-type parameter x > 0: either IG(shape, scale) on x, or a
/// half-normal HN(hn_var) on sqrt(x).
struct ScalePrior {
  ScalePriorKind kind = ScalePriorKind::inverse_gamma;
  double shape = 1.1;
  double scale = 1.1;
  double hn_var = 2.0;

  /// Log density of x up to a constant; -inf for x <= 0.
  double log_density(double x) const;
};

struct PriorConfig {
  double c_beta_shape = 0.5;
  double c_beta_scale = 0.0;  // 0 means n p / 2
  ScalePrior c_alpha{ScalePriorKind::inverse_gamma, 1.1, 1.1, 2.0};
  ScalePrior sigma2{ScalePriorKind::half_normal, 1.1, 1.1, 2.0};

  double resolved_c_beta_scale(std::size_t n, std::size_t p) const;
};

struct ModelSpec {
  DesignSpec design;
  PriorConfig priors;
  CorrelationModelSpec correlation;
};

struct ChainSchedule {
  std::size_t sweeps = 10000;
  std::size_t burn_in = 5000;
  std::size_t thin = 2;
  std::uint64_t seed = 1;
  bool adapt = true;
  std::size_t batch_size = 50;

  /// Number of draws the schedule retains; throws ModelError for an invalid schedule.
  std::size_t retained() const;
};

/// +1: raise the parameter when acceptance is above target (random-walk scales).
/// -1: lower it (concentration-type parameters such as zeta).
enum class AdaptDirection : int { raise_when_high = 1, lower_when_high = -1 };

/// One log-scale tuning parameter with its acceptance counters.
struct AdaptiveScale {
  std::string name;
  double log_value = 0.0;
  AdaptDirection direction = AdaptDirection::raise_when_high;
  double floor = 0.0;  // value never goes below this (0 = no floor)
  std::size_t batch_proposed = 0;
  std::size_t batch_accepted = 0;
  std::size_t total_proposed = 0;
  std::size_t total_accepted = 0;
  std::vector<std::size_t> batch_history_proposed;
  std::vector<std::size_t> batch_history_accepted;

  double value() const;
  void record(bool accepted);
  /// Pools the last `batches` completed batches; NaN if nothing was proposed.
  double recent_rate(std::size_t batches = 10) const;
  double overall_rate() const;
};

inline constexpr double adapt_band_low = 0.20;
inline constexpr double adapt_band_high = 0.25;

/// New log-scale after one batch: unchanged inside [0.20, 0.25], otherwise moved by
/// min(0.05, 1/sqrt(batch_index)) in the direction that brings the rate toward the band.
double adapt_log_scale(double log_value, double rate, std::size_t batch_index, AdaptDirection direction);

struct TuningState {
  AdaptiveScale zeta;                  // log of zeta; floor p + 3
  std::vector<AdaptiveScale> h;        // IRLS scale per (response, variance term), row-major
  AdaptiveScale g2;                    // c_beta independence proposal inflation
  AdaptiveScale f1;                    // log sigma^2_R random-walk variance
  std::vector<AdaptiveScale> f2;       // c_alpha_j random-walk variance (half-normal prior only)
  std::vector<AdaptiveScale> f3;       // sigma^2_j random-walk variance
  double kappa = 0.5;                  // data weight of the R proposal; tuned only while zeta sits at its floor
  double kappa_max = 0.5;
  std::size_t batch_size = 50;
  std::size_t batches_done = 0;

  std::vector<const AdaptiveScale*> all() const;
  std::vector<AdaptiveScale*> all();
};

TuningState initial_tuning(std::size_t n, std::size_t p, std::size_t variance_terms);

/// Closes the current batch of every scale and nudges those that saw proposals.
void adapt(TuningState& tuning);

struct ChainHealth {
  std::size_t rank_deficient_gamma = 0;
  std::size_t delta_alpha_failures = 0;
  std::size_t sigma2_failures = 0;
  std::size_t c_beta_newton_fallbacks = 0;
  std::size_t beta_draw_failures = 0;
  std::size_t r_numerical_failures = 0;
  std::size_t invariant_violations = 0;

  std::size_t numerical_failures() const;
};

/// Result of the safeguarded Newton search.
struct NewtonResult {
  double mode = 0.0;
  double second_derivative = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

/// Maximises a smooth function on (lower, inf) by Newton-Raphson with step halving.
NewtonResult newton_mode(const std::function<double(double)>& f, const std::function<double(double)>& df,
                         const std::function<double(double)>& d2f, double start, double lower = 0.0);

/// Log full conditional of c_beta up to a constant: the beta-marginal likelihood terms
/// -(N+p)/2 log(1+c) + c/(1+c) Q/2 plus the IG(a, b) prior.
struct CBetaConditional {
  double cols = 0.0;  // N(gamma) + p
  double quad = 0.0;  // Q
  double shape = 0.5;
  double scale = 1.0;

  double value(double c) const;
  double first(double c) const;
  double second(double c) const;
};

/// IRLS working response z_k'alpha_jk + (e_i - s2_i)/s2_i of response j, with squared
/// residuals e_i taken from q.beta_hat and `term_cols` the selected columns of the moved term.
Eigen::VectorXd working_response(const SamplerState& state, const MarginalQuantities& q, const DesignMatrices& designs,
                                 Eigen::Index j, const std::vector<Eigen::Index>& term_cols);

/// Empty string if the state satisfies the dimension and positivity invariants,
/// otherwise a description of the first violation.
std::string check_invariants(const SamplerState& state, const DesignMatrices& designs);

/// The Gibbs/Metropolis sweep over all unknowns for one chain.
class Sampler {
 public:
  Sampler(DesignMatrices designs, ModelSpec spec, std::uint64_t seed);

  /// One full sweep in the fixed order: gamma, (delta, alpha), sigma^2, c_beta, c_alpha,
  /// beta, R, theta, mu_R / sigma^2_R, DP steps.
  void sweep();

  void update_gamma_blocks();
  void update_delta_alpha();
  void update_sigma2();
  void update_c_beta();
  void update_c_alpha();
  void draw_beta();
  void update_R();
  void update_shadow();

  const SamplerState& state() const { return state_; }
  /// Replaces the state (e.g. a prior draw); beta is kept as given.
  void set_state(SamplerState state);
  /// Replaces the response matrix (used by successive-conditional checks).
  void set_responses(const Eigen::MatrixXd& y);

  const TuningState& tuning() const { return tuning_; }
  TuningState& tuning() { return tuning_; }
  const ChainHealth& health() const { return health_; }
  const DesignMatrices& designs() const { return designs_; }
  const ModelSpec& spec() const { return spec_; }
  Rng& rng() { return rng_; }

  double c_beta_scale() const { return c_beta_scale_; }

 private:
  std::optional<MarginalQuantities> evaluate(const SamplerState& s) const;
  const MarginalQuantities& current();
  double log_marginal(const MarginalQuantities& q) const;
  double sigma_log_prior(const SamplerState& s, std::size_t j) const;
  void invalidate() { cached_.reset(); }

  DesignMatrices designs_;
  ModelSpec spec_;
  Rng rng_;
  SamplerState state_;
  TuningState tuning_;
  ChainHealth health_;
  double c_beta_scale_ = 1.0;
  std::optional<MarginalQuantities> cached_;
};

/// State the chain starts from: gamma and delta zero except parametric mean terms,
/// alpha = 0, sigma^2_j = sample variance, R = I, theta = 0, c_beta = n p.
SamplerState initial_state(const DesignMatrices& designs, const ModelSpec& spec);

/// One retained draw.
struct Draw {
  Eigen::MatrixXd beta;
  Indicators gamma;
  Indicators delta;
  Eigen::MatrixXd alpha;
  Eigen::VectorXd sigma2;
  double c_beta = 0.0;
  Eigen::VectorXd c_alpha;
  Eigen::MatrixXd r;
  Eigen::VectorXd theta;
  Eigen::VectorXd cluster_means;
  double sigma2_R = 0.0;
  std::vector<std::size_t> labels;
  double concentration = 0.0;
};

Draw make_draw(const SamplerState& s);

struct MoveReport {
  std::string name;
  std::size_t proposed = 0;
  std::size_t accepted = 0;
  double burn_in_rate = 0.0;  // pooled over the last 10 burn-in batches (NaN if none)
  double final_value = 0.0;
};

struct ChainSamples {
  DesignMatrices designs;
  ModelSpec spec;
  ChainSchedule schedule;
  std::vector<Draw> draws;
  ChainHealth health;
  std::vector<MoveReport> moves;
  double proposal_weight = 0.0;  // R proposal data weight at the end of burn-in
  double seconds = 0.0;
};

ChainSamples run_chain(const DesignMatrices& designs, const ModelSpec& spec, const ChainSchedule& schedule);
ChainSamples run_chain(const ModelSpec& spec, const Dataset& data, const ChainSchedule& schedule);

}  // namespace bnmvr

#endif
