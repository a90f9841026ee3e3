#ifndef BNMVR_DESIGN_HPP
#define BNMVR_DESIGN_HPP

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace bnmvr {

/// Raised for invalid model specifications or data that cannot support them.
class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Rectangular numeric table with named columns (responses and covariates alike).
struct Dataset {
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // rows = observations

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(values.cols()); }
  /// Index of the named column; throws ModelError if absent.
  std::size_t column(const std::string& name) const;
};

enum class TermKind { parametric, smooth };

/// Beta(a, b) prior on the inclusion probability of a term's coefficients.
struct InclusionPrior {
  double a = 1.0;
  double b = 1.0;
};

struct TermSpec {
  TermKind kind = TermKind::parametric;
  std::size_t column = 0;
  std::size_t basis_count = 1;  // q; forced to 1 for parametric terms
  InclusionPrior inclusion;
};

struct DesignSpec {
  std::vector<std::size_t> responses;
  std::vector<TermSpec> mean_terms;
  std::vector<TermSpec> variance_terms;
  bool standardize_covariates = true;
  bool standardize_responses = true;
};

/// Affine map raw -> (raw - center) / scale.
struct Standardization {
  double center = 0.0;
  double scale = 1.0;

  double apply(double raw) const { return (raw - center) / scale; }
  double invert(double standardized) const { return center + scale * standardized; }
};

struct StandardizedColumn {
  Eigen::VectorXd values;
  Standardization transform;
};

/// Ordered interior knots of one smooth term, on the scale the basis is evaluated.
struct KnotGrid {
  std::size_t covariate = 0;
  std::vector<double> knots;

  std::size_t basis_count() const { return knots.size() + 1; }
};

StandardizedColumn standardize(std::span<const double> column);

/// q-1 knots at the sample quantiles l/q, l = 1..q-1 (linear interpolation between
/// order statistics). Throws ModelError when the grid would not be strictly increasing.
KnotGrid make_knots(std::span<const double> u, std::size_t basis_count, std::size_t covariate = 0);

/// (u, r_1^2 log r_1^2, ..., r_{q-1}^2 log r_{q-1}^2) with r_l = |u - knot_l| and 0 log 0 = 0.
Eigen::RowVectorXd radial_basis_row(double u, const KnotGrid& grid);

/// Columns [offset, offset + width) of the mean or variance design that belong to one term.
struct TermBlock {
  TermSpec spec;
  std::string label;  // covariate column name
  std::size_t offset = 0;
  std::size_t width = 0;
  Standardization covariate;
  std::optional<KnotGrid> knots;
  Eigen::RowVectorXd column_centers;  // subtracted from the raw basis (zero for mean terms)
  double raw_min = 0.0;               // observed covariate range in data units
  double raw_max = 0.0;

  /// Design row of this term for a covariate value in raw data units.
  Eigen::RowVectorXd evaluate(double raw) const;
};

struct DesignMatrices {
  Eigen::MatrixXd y;  // n x p, standardised when requested
  std::vector<Standardization> response_scale;
  std::vector<std::string> response_names;
  Eigen::MatrixXd x;  // n x P mean design without the intercept column
  std::vector<TermBlock> mean_blocks;
  Eigen::MatrixXd z;  // n x Q variance design (no intercept; sigma^2_j plays that role)
  std::vector<TermBlock> variance_blocks;

  std::size_t n() const { return static_cast<std::size_t>(y.rows()); }
  std::size_t p() const { return static_cast<std::size_t>(y.cols()); }
  std::size_t mean_width() const { return static_cast<std::size_t>(x.cols()); }
  std::size_t variance_width() const { return static_cast<std::size_t>(z.cols()); }

  /// The p x p(1+P) block-diagonal row block X_i^* for observation i.
  Eigen::MatrixXd stacked_mean_row(std::size_t i) const;
};

DesignMatrices build_designs(const Dataset& data, const DesignSpec& spec);

}  // namespace bnmvr

#endif
