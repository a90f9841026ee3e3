#include "bnmvr/likelihood.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace bnmvr {

namespace {

constexpr double rank_tolerance = 1e-10;

std::string describe_gamma(const Indicators& gamma) {
  std::ostringstream os;
  os << "[";
  for (Eigen::Index j = 0; j < gamma.rows(); ++j) {
    if (j > 0) os << " | ";
    for (Eigen::Index a = 0; a < gamma.cols(); ++a) os << (gamma(j, a) ? '1' : '0');
  }
  os << "]";
  return os.str();
}

struct WeightedDesign {
  Eigen::MatrixXd stacked;  // n x m
  std::vector<Eigen::Index> offsets;
  std::vector<Eigen::Index> widths;
  std::vector<std::vector<Eigen::Index>> columns;
};

WeightedDesign weight_design(const Indicators& gamma, const Eigen::MatrixXd& inv_sd, const DesignMatrices& designs) {
  WeightedDesign w;
  const auto n = static_cast<Eigen::Index>(designs.n());
  const auto p = static_cast<Eigen::Index>(designs.p());
  Eigen::Index m = 0;
  for (Eigen::Index j = 0; j < p; ++j) {
    std::vector<Eigen::Index> cols;
    for (Eigen::Index a = 0; a < gamma.cols(); ++a)
      if (gamma(j, a)) cols.push_back(a);
    w.offsets.push_back(m);
    w.widths.push_back(1 + static_cast<Eigen::Index>(cols.size()));
    m += w.widths.back();
    w.columns.push_back(std::move(cols));
  }
  w.stacked.resize(n, m);
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto off = w.offsets[static_cast<std::size_t>(j)];
    w.stacked.col(off) = inv_sd.col(j);
    const auto& cols = w.columns[static_cast<std::size_t>(j)];
    for (std::size_t c = 0; c < cols.size(); ++c)
      w.stacked.col(off + 1 + static_cast<Eigen::Index>(c)) = inv_sd.col(j).cwiseProduct(designs.x.col(cols[c]));
  }
  return w;
}

Eigen::MatrixXd assemble_gram(const Eigen::MatrixXd& cross, const Eigen::MatrixXd& r_inv,
                              const std::vector<Eigen::Index>& offsets, const std::vector<Eigen::Index>& widths) {
  Eigen::MatrixXd gram(cross.rows(), cross.cols());
  const auto p = static_cast<Eigen::Index>(offsets.size());
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index l = 0; l < p; ++l) {
      const auto oj = offsets[static_cast<std::size_t>(j)];
      const auto ol = offsets[static_cast<std::size_t>(l)];
      const auto wj = widths[static_cast<std::size_t>(j)];
      const auto wl = widths[static_cast<std::size_t>(l)];
      gram.block(oj, ol, wj, wl) = r_inv(j, l) * cross.block(oj, ol, wj, wl);
    }
  }
  return gram;
}

bool factor_ok(const Eigen::LLT<Eigen::MatrixXd>& llt, const Eigen::MatrixXd& gram) {
  if (llt.info() != Eigen::Success) return false;
  const Eigen::VectorXd l = llt.matrixLLT().diagonal();
  for (Eigen::Index i = 0; i < l.size(); ++i) {
    const double scale = std::max(gram(i, i), std::numeric_limits<double>::min());
    if (!(l(i) * l(i) > rank_tolerance * scale)) return false;
  }
  return true;
}

double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

Eigen::MatrixXd log_variances(const SamplerState& state, const DesignMatrices& designs) {
  const auto n = static_cast<Eigen::Index>(designs.n());
  const auto p = static_cast<Eigen::Index>(designs.p());
  Eigen::MatrixXd lv(n, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    lv.col(j).setConstant(std::log(state.sigma2(j)));
    if (designs.z.cols() > 0) lv.col(j) += designs.z * state.alpha.row(j).transpose();
  }
  return lv;
}

CovarianceFactors::CovarianceFactors(Eigen::MatrixXd log_variance, const Eigen::MatrixXd& r)
    : log_variance_(std::move(log_variance)), r_(r) {
  Eigen::LLT<Eigen::MatrixXd> llt(r_);
  if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > std::sqrt(rank_tolerance)))
    throw NumericalError("correlation not positive definite");
  r_inv_ = llt.solve(Eigen::MatrixXd::Identity(r_.rows(), r_.cols()));
  log_det_r_ = log_det_from_llt(llt);
}

double CovarianceFactors::log_det_sigma() const {
  return log_variance_.sum() + static_cast<double>(log_variance_.rows()) * log_det_r_;
}

Eigen::MatrixXd GlsSystem::unpack(const Eigen::VectorXd& packed, std::size_t mean_width) const {
  const auto p = static_cast<Eigen::Index>(columns.size());
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(p, 1 + static_cast<Eigen::Index>(mean_width));
  Eigen::Index pos = 0;
  for (Eigen::Index j = 0; j < p; ++j) {
    beta(j, 0) = packed(pos++);
    for (auto a : columns[static_cast<std::size_t>(j)]) beta(j, 1 + a) = packed(pos++);
  }
  return beta;
}

Eigen::VectorXd GlsSystem::pack(const Eigen::MatrixXd& beta) const {
  Eigen::VectorXd packed(size());
  Eigen::Index pos = 0;
  for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(columns.size()); ++j) {
    packed(pos++) = beta(j, 0);
    for (auto a : columns[static_cast<std::size_t>(j)]) packed(pos++) = beta(j, 1 + a);
  }
  return packed;
}

GlsSystem build_gls(const Indicators& gamma, const CovarianceFactors& cov, const DesignMatrices& designs) {
  const Eigen::MatrixXd inv_sd = cov.inverse_sd();
  WeightedDesign w = weight_design(gamma, inv_sd, designs);
  const Eigen::MatrixXd& r_inv = cov.correlation_inverse();
  const Eigen::MatrixXd ydot = designs.y.cwiseProduct(inv_sd);

  Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(w.stacked.cols(), w.stacked.cols());
  cross.selfadjointView<Eigen::Lower>().rankUpdate(w.stacked.transpose());
  cross = cross.selfadjointView<Eigen::Lower>();

  GlsSystem sys;
  sys.gram = assemble_gram(cross, r_inv, w.offsets, w.widths);
  const Eigen::MatrixXd wy = w.stacked.transpose() * ydot;  // m x p
  sys.rhs.resize(w.stacked.cols());
  for (std::size_t j = 0; j < w.offsets.size(); ++j)
    sys.rhs.segment(w.offsets[j], w.widths[j]) =
        wy.middleRows(w.offsets[j], w.widths[j]) * r_inv.col(static_cast<Eigen::Index>(j));
  sys.trace_term = r_inv.cwiseProduct(ydot.transpose() * ydot).sum();
  sys.columns = std::move(w.columns);
  sys.factor.compute(sys.gram);
  if (!factor_ok(sys.factor, sys.gram))
    throw NumericalError("rank-deficient Gram matrix for gamma = " + describe_gamma(gamma));
  return sys;
}

MarginalQuantities compute_S(const SamplerState& state, const CovarianceFactors& cov, const DesignMatrices& designs) {
  const GlsSystem sys = build_gls(state.gamma, cov, designs);
  const Eigen::VectorXd solved = sys.factor.solve(sys.rhs);
  const double shrink = state.c_beta / (1.0 + state.c_beta);
  MarginalQuantities q;
  q.trace_term = sys.trace_term;
  q.quad_term = sys.rhs.dot(solved);
  q.s = q.trace_term - shrink * q.quad_term;
  q.selected = state.selected_count();
  q.log_det_sigma = cov.log_det_sigma();
  q.beta_hat = sys.unpack(shrink * solved, designs.mean_width());
  return q;
}

MarginalQuantities compute_S(const SamplerState& state, const DesignMatrices& designs) {
  const CovarianceFactors cov(log_variances(state, designs), state.r);
  return compute_S(state, cov, designs);
}

double marginal_loglik(const MarginalQuantities& q, double c_beta, std::size_t n, std::size_t p) {
  const double np = static_cast<double>(n * p);
  const double cols = static_cast<double>(q.selected + p);
  return -0.5 * np * std::log(2.0 * std::numbers::pi) - 0.5 * q.log_det_sigma -
         0.5 * cols * std::log1p(c_beta) - 0.5 * q.s;
}

double marginal_loglik(const SamplerState& state, const DesignMatrices& designs) {
  return marginal_loglik(compute_S(state, designs), state.c_beta, designs.n(), designs.p());
}

Eigen::MatrixXd mean_matrix(const Eigen::MatrixXd& beta, const DesignMatrices& designs) {
  Eigen::MatrixXd mu = designs.x * beta.rightCols(beta.cols() - 1).transpose();
  mu.rowwise() += beta.col(0).transpose();
  return mu;
}

Eigen::MatrixXd standardized_scatter(const SamplerState& state, const DesignMatrices& designs) {
  const Eigen::MatrixXd lv = log_variances(state, designs);
  const Eigen::MatrixXd resid =
      (designs.y - mean_matrix(state.beta, designs)).cwiseProduct((-0.5 * lv.array()).exp().matrix());
  return resid.transpose() * resid;
}

double full_loglik(const SamplerState& state, const DesignMatrices& designs) {
  const CovarianceFactors cov(log_variances(state, designs), state.r);
  const Eigen::MatrixXd resid =
      (designs.y - mean_matrix(state.beta, designs)).cwiseProduct(cov.inverse_sd());
  const double quad = cov.correlation_inverse().cwiseProduct(resid.transpose() * resid).sum();
  const double np = static_cast<double>(designs.n() * designs.p());
  return -0.5 * np * std::log(2.0 * std::numbers::pi) - 0.5 * cov.log_det_sigma() - 0.5 * quad;
}

GPriorInR::GPriorInR(const SamplerState& state, const DesignMatrices& designs) : c_beta_(state.c_beta) {
  const Eigen::MatrixXd lv = log_variances(state, designs);
  const Eigen::MatrixXd inv_sd = (-0.5 * lv.array()).exp();
  WeightedDesign w = weight_design(state.gamma, inv_sd, designs);
  offsets_ = w.offsets;
  dim_ = w.stacked.cols();
  cross_ = w.stacked.transpose() * w.stacked;
  const auto p = static_cast<Eigen::Index>(designs.p());
  Eigen::MatrixXd fitted(w.stacked.rows(), p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto& cols = w.columns[static_cast<std::size_t>(j)];
    Eigen::VectorXd b(1 + static_cast<Eigen::Index>(cols.size()));
    b(0) = state.beta(j, 0);
    for (std::size_t c = 0; c < cols.size(); ++c) b(1 + static_cast<Eigen::Index>(c)) = state.beta(j, 1 + cols[c]);
    fitted.col(j) = w.stacked.middleCols(w.offsets[static_cast<std::size_t>(j)], b.size()) * b;
    weighted_.push_back(w.stacked.middleCols(w.offsets[static_cast<std::size_t>(j)], b.size()));
  }
  fitted_products_ = fitted.transpose() * fitted;
}

double GPriorInR::operator()(const Eigen::MatrixXd& r) const {
  Eigen::LLT<Eigen::MatrixXd> lr(r);
  if (lr.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const Eigen::MatrixXd r_inv = lr.solve(Eigen::MatrixXd::Identity(r.rows(), r.cols()));
  std::vector<Eigen::Index> widths;
  for (const auto& w : weighted_) widths.push_back(w.cols());
  const Eigen::MatrixXd gram = assemble_gram(cross_, r_inv, offsets_, widths);
  Eigen::LLT<Eigen::MatrixXd> lg(gram);
  if (!factor_ok(lg, gram)) return -std::numeric_limits<double>::infinity();
  const double quad = r_inv.cwiseProduct(fitted_products_).sum();
  return -0.5 * static_cast<double>(dim_) * std::log(2.0 * std::numbers::pi * c_beta_) +
         0.5 * log_det_from_llt(lg) - quad / (2.0 * c_beta_);
}

}  // namespace bnmvr
