#ifndef BNMVR_LIKELIHOOD_HPP
#define BNMVR_LIKELIHOOD_HPP

#include <cstddef>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "bnmvr/design.hpp"
#include "bnmvr/state.hpp"

namespace bnmvr {

/// A factorisation or solve failed (non-PD correlation, rank-deficient Gram matrix).
/// The sampler turns these into rejected proposals.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// log sigma^2_ij = log sigma^2_j + z_i' alpha_j, as an n x p matrix.
Eigen::MatrixXd log_variances(const SamplerState& state, const DesignMatrices& designs);

/// Sigma_i = S_i^{1/2} R S_i^{1/2} held in factored form.
class CovarianceFactors {
 public:
  /// Throws NumericalError("correlation not positive definite") when R fails Cholesky.
  CovarianceFactors(Eigen::MatrixXd log_variance, const Eigen::MatrixXd& r);

  const Eigen::MatrixXd& log_variance() const { return log_variance_; }
  const Eigen::MatrixXd& correlation() const { return r_; }
  const Eigen::MatrixXd& correlation_inverse() const { return r_inv_; }
  double log_det_correlation() const { return log_det_r_; }
  /// sum_i log|S_i| + n log|R|.
  double log_det_sigma() const;
  /// Element-wise S_i^{-1/2} scaling, n x p.
  Eigen::MatrixXd inverse_sd() const { return (-0.5 * log_variance_.array()).exp(); }

 private:
  Eigen::MatrixXd log_variance_;
  Eigen::MatrixXd r_;
  Eigen::MatrixXd r_inv_;
  double log_det_r_ = 0.0;
};

/// Generalised least-squares system for the selected mean coefficients.
///
/// Coefficients are packed response by response: intercept first, then the
/// selected columns of x in order. `columns[j]` lists the x columns of response j.
struct GlsSystem {
  Eigen::MatrixXd gram;        // X~' X~
  Eigen::VectorXd rhs;         // X~' Y~
  double trace_term = 0.0;     // Y~' Y~ = tr(R^{-1} sum_i y_i y_i')
  std::vector<std::vector<Eigen::Index>> columns;
  Eigen::LLT<Eigen::MatrixXd> factor;

  Eigen::Index size() const { return rhs.size(); }
  /// Unpacks a packed coefficient vector into the p x (1+P) full-width layout.
  Eigen::MatrixXd unpack(const Eigen::VectorXd& packed, std::size_t mean_width) const;
  Eigen::VectorXd pack(const Eigen::MatrixXd& beta) const;
};

/// Builds and factors the GLS system. Throws NumericalError naming the offending
/// gamma configuration if the Gram matrix has a pivot below 1e-10 (relative).
GlsSystem build_gls(const Indicators& gamma, const CovarianceFactors& cov, const DesignMatrices& designs);

struct MarginalQuantities {
  double s = 0.0;
  double trace_term = 0.0;  // first term of S
  double quad_term = 0.0;   // (X~'Y~)' (X~'X~)^{-1} (X~'Y~)
  std::size_t selected = 0;
  double log_det_sigma = 0.0;
  Eigen::MatrixXd beta_hat;  // c/(1+c) (X~'X~)^{-1} X~'Y~, full width
};

MarginalQuantities compute_S(const SamplerState& state, const DesignMatrices& designs);
MarginalQuantities compute_S(const SamplerState& state, const CovarianceFactors& cov,
                             const DesignMatrices& designs);

/// Log of the beta-marginalised likelihood with all normalising constants.
double marginal_loglik(const SamplerState& state, const DesignMatrices& designs);
double marginal_loglik(const MarginalQuantities& q, double c_beta, std::size_t n, std::size_t p);

/// Log of the full-data Gaussian likelihood at the current beta.
double full_loglik(const SamplerState& state, const DesignMatrices& designs);

/// mu_ij for the current beta, n x p.
Eigen::MatrixXd mean_matrix(const Eigen::MatrixXd& beta, const DesignMatrices& designs);

/// sum_i S_i^{-1/2} r_i r_i' S_i^{-1/2} for residuals r_i = y_i - mu_i.
Eigen::MatrixXd standardized_scatter(const SamplerState& state, const DesignMatrices& designs);

/// log N(beta*_gamma; 0, c_beta (X~'X~)^{-1}) as a function of R, with the variances,
/// selection and beta held fixed. Used as part of the R full conditional.
class GPriorInR {
 public:
  GPriorInR(const SamplerState& state, const DesignMatrices& designs);
  double operator()(const Eigen::MatrixXd& r) const;

 private:
  std::vector<Eigen::MatrixXd> weighted_;  // W_j = S_j^{-1/2} [1, x_gamma_j]
  Eigen::MatrixXd cross_;                  // [W_1..W_p]' [W_1..W_p]
  std::vector<Eigen::Index> offsets_;
  Eigen::MatrixXd fitted_products_;        // (W_j b_j)'(W_l b_l)
  double c_beta_;
  Eigen::Index dim_ = 0;
};

}  // namespace bnmvr

#endif
