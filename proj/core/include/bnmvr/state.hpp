#ifndef BNMVR_STATE_HPP
#define BNMVR_STATE_HPP

#include <cstddef>

#include <Eigen/Dense>

#include "bnmvr/correlation.hpp"

namespace bnmvr {

using Indicators = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Every unknown of the model at one sweep.
///
/// Coefficients are stored at full width with exact zeros where the matching
/// indicator is off, so beta row j is (beta_0j, beta_j) and alpha row j is alpha_j.
struct SamplerState {
  Eigen::MatrixXd beta;     // p x (1 + P)
  Indicators gamma;         // p x P
  Indicators delta;         // p x Q
  Eigen::MatrixXd alpha;    // p x Q
  Eigen::VectorXd sigma2;   // p
  double c_beta = 1.0;
  Eigen::VectorXd c_alpha;  // p
  Eigen::MatrixXd r;        // p x p correlation matrix
  ShadowState shadow;

  std::size_t p() const { return static_cast<std::size_t>(sigma2.size()); }
  /// N(gamma): selected mean coefficients, intercepts excluded.
  std::size_t selected_count() const { return static_cast<std::size_t>(gamma.count()); }
};

}  // namespace bnmvr

#endif
