#ifndef BNMVR_CORRELATION_HPP
#define BNMVR_CORRELATION_HPP

#include <cstddef>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "bnmvr/random.hpp"

namespace bnmvr {

enum class Link { fisher_z, identity };

enum class CorrelationVariant { common, grouped_correlations, grouped_variables };

struct CorrelationModelSpec {
  CorrelationVariant variant = CorrelationVariant::common;
  Link link = Link::fisher_z;
  double tau2 = 1e-2;            // shadow variance on the link scale
  double mean_prior_var = 1.0;   // mu_R ~ N(0, .) and the DP base distribution
  double sd_prior_var = 1.0;     // sigma_R ~ HN(.)
  std::size_t truncation = 0;    // H for grouped correlations; 0 means min(20, p(p-1)/2)
  std::size_t variable_groups = 0;  // G for grouped variables; 0 means p
  double concentration_shape = 5.0;
  double concentration_rate = 2.0;
  double proposal_weight = 0.5;  // share of the residual scatter entering the IW proposal for R

  /// Number of mixture components that labels range over (H or G; 1 for common).
  std::size_t components(std::size_t p) const;
  /// Number of distinct cluster means (H, or G(G+1)/2 for grouped variables).
  std::size_t cluster_count(std::size_t p) const;
};

/// Latent layer between R and its hyperparameters.
///
/// theta holds one entry per correlation, pairs ordered (0,1), (0,2), ..., (1,2), ...
/// For grouped variables cluster_means is the packed upper triangle of the G x G
/// table of pair means, and labels are per variable; for grouped correlations
/// labels are per correlation. The common model has one mean and no labels.
struct ShadowState {
  Eigen::VectorXd theta;
  Eigen::VectorXd cluster_means;
  double sigma2 = 0.25;
  std::vector<std::size_t> labels;
  Eigen::VectorXd sticks;
  Eigen::VectorXd weights;
  double concentration = 2.5;
};

std::size_t pair_count(std::size_t p);
std::size_t pair_index(std::size_t k, std::size_t l, std::size_t p);
/// Packed index of the unordered group pair {h1, h2} among G groups.
std::size_t group_pair_index(std::size_t h1, std::size_t h2, std::size_t groups);

double fisher_z(double r);
double inv_fisher_z(double z);
/// dg/dr for the Fisher link: 1 / ((1 - r)(1 + r)).
double link_jacobian(double r);

double link(double r, Link g);
double inv_link(double z, Link g);
double log_link_jacobian(double r, Link g);

/// Mean of theta at `pair` under the current clustering.
double theta_prior_mean(const ShadowState& s, const CorrelationModelSpec& spec, std::size_t pair,
                        std::size_t p);

/// Unnormalised log shadow prior of R given theta; -inf outside the PD cone.
double log_prior_R(const Eigen::MatrixXd& r, const ShadowState& s, const CorrelationModelSpec& spec);

/// Log Jacobian of E -> (D, R) with E = D^{1/2} R D^{1/2}: (p-1)/2 * log|D|.
double separation_log_jacobian(const Eigen::VectorXd& d_diag);

struct RUpdate {
  Eigen::MatrixXd r;
  bool accepted = false;
  bool numerical_failure = false;
  double log_ratio = 0.0;
};

/// Metropolis-Hastings step for R with an inverse-Wishart separation proposal.
///
/// `scatter` is sum_i S_i^{-1/2} r_i r_i^T S_i^{-1/2} over n residual vectors and
/// `log_target` returns the log full conditional of R up to a constant. The proposal is
/// IW(w n + zeta, w scatter + (zeta-p-1) E) with E = D^{1/2} R D^{1/2}; w = 1 is the plain
/// conjugate update, w = 1/2 balances drift against spread so the move stays reversible
/// in higher dimensions. D is an auxiliary variable refreshed from
/// IG((w n+zeta-p+1)/2, (w scatter_kk+zeta-p-1)/2) before each proposal, so the acceptance
/// ratio is exact for a state-dependent Psi.
RUpdate propose_and_accept_R(const Eigen::MatrixXd& r, const Eigen::MatrixXd& scatter, double n,
                             double zeta, const std::function<double(const Eigen::MatrixXd&)>& log_target,
                             Rng& rng, double weight = 0.5);

ShadowState initial_shadow(std::size_t p, const CorrelationModelSpec& spec);

/// Gibbs draw of theta from its normal full conditional; the nu ratio is taken as one.
void update_theta(ShadowState& s, const Eigen::MatrixXd& r, const CorrelationModelSpec& spec, Rng& rng);

struct MoveOutcome {
  bool proposed = false;
  bool accepted = false;
};

/// Conjugate draws of the cluster means and a random-walk step on log sigma^2_R (variance f1_sq).
MoveOutcome update_mu_and_sigma_R(ShadowState& s, const CorrelationModelSpec& spec, std::size_t p,
                                  double f1_sq, Rng& rng);

/// Log full conditional of sigma^2_R up to a constant (half-normal prior on sigma_R).
double log_sigma2_R_conditional(double sigma2, const ShadowState& s, const CorrelationModelSpec& spec,
                                std::size_t p);

std::vector<double> correlation_label_log_probs(std::size_t pair, const ShadowState& s);
std::vector<double> variable_label_log_probs(std::size_t k, const ShadowState& s, std::size_t p);

/// Stick-breaking weights from sticks v_1..v_{H-1}; the last weight closes the stick.
Eigen::VectorXd stick_weights(const Eigen::VectorXd& sticks);

/// Escobar-West two-step draw of the DP concentration given k occupied clusters among d items.
double draw_concentration(double current, std::size_t occupied, std::size_t items, double shape,
                          double rate, Rng& rng);

/// Grouped correlations: labels, concentration, then sticks given labels.
void update_dp_clustering(ShadowState& s, const CorrelationModelSpec& spec, std::size_t p, Rng& rng);

/// Grouped variables: sequential variable labels, concentration, then sticks.
void update_grouped_variables(ShadowState& s, const CorrelationModelSpec& spec, std::size_t p, Rng& rng);

}  // namespace bnmvr

#endif
