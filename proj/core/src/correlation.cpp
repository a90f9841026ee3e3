#include "bnmvr/correlation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace bnmvr {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

double log_inv_gamma_density(double x, double shape, double scale) {
  return shape * std::log(scale) - std::lgamma(shape) - (shape + 1.0) * std::log(x) - scale / x;
}

bool is_correlation_pd(const Eigen::MatrixXd& r) {
  Eigen::LLT<Eigen::MatrixXd> llt(r);
  if (llt.info() != Eigen::Success) return false;
  const Eigen::VectorXd diag = llt.matrixLLT().diagonal();
  return diag.minCoeff() > std::sqrt(1e-10);
}

}  // namespace

std::size_t CorrelationModelSpec::components(std::size_t p) const {
  switch (variant) {
    case CorrelationVariant::common:
      return 1;
    case CorrelationVariant::grouped_correlations:
      return truncation > 0 ? truncation : std::max<std::size_t>(1, std::min<std::size_t>(20, pair_count(p)));
    case CorrelationVariant::grouped_variables:
      return variable_groups > 0 ? variable_groups : p;
  }
  return 1;
}

std::size_t CorrelationModelSpec::cluster_count(std::size_t p) const {
  const auto c = components(p);
  return variant == CorrelationVariant::grouped_variables ? c * (c + 1) / 2 : c;
}

std::size_t pair_count(std::size_t p) { return p * (p - 1) / 2; }

std::size_t pair_index(std::size_t k, std::size_t l, std::size_t p) {
  if (k > l) std::swap(k, l);
  return k * p - k * (k + 1) / 2 + (l - k - 1);
}

std::size_t group_pair_index(std::size_t h1, std::size_t h2, std::size_t groups) {
  if (h1 > h2) std::swap(h1, h2);
  return h1 * groups - h1 * (h1 + 1) / 2 + h2;
}

double fisher_z(double r) {
  if (!(std::abs(r) < 1.0)) throw std::domain_error("fisher_z: |r| must be < 1");
  return 0.5 * std::log((1.0 + r) / (1.0 - r));
}

double inv_fisher_z(double z) { return std::tanh(z); }

double link_jacobian(double r) {
  if (!(std::abs(r) < 1.0)) throw std::domain_error("link_jacobian: |r| must be < 1");
  return 1.0 / ((1.0 - r) * (1.0 + r));
}

double link(double r, Link g) { return g == Link::fisher_z ? fisher_z(r) : r; }

double inv_link(double z, Link g) { return g == Link::fisher_z ? inv_fisher_z(z) : z; }

double log_link_jacobian(double r, Link g) {
  return g == Link::fisher_z ? -std::log1p(-r) - std::log1p(r) : 0.0;
}

double theta_prior_mean(const ShadowState& s, const CorrelationModelSpec& spec, std::size_t pair,
                        std::size_t p) {
  switch (spec.variant) {
    case CorrelationVariant::common:
      return s.cluster_means(0);
    case CorrelationVariant::grouped_correlations:
      return s.cluster_means(static_cast<Eigen::Index>(s.labels[pair]));
    case CorrelationVariant::grouped_variables: {
      // Recover (k, l) from the pair index.
      std::size_t k = 0;
      std::size_t idx = pair;
      while (idx >= p - k - 1) {
        idx -= p - k - 1;
        ++k;
      }
      const std::size_t l = k + 1 + idx;
      const auto g = spec.components(p);
      return s.cluster_means(static_cast<Eigen::Index>(group_pair_index(s.labels[k], s.labels[l], g)));
    }
  }
  return 0.0;
}

double log_prior_R(const Eigen::MatrixXd& r, const ShadowState& s, const CorrelationModelSpec& spec) {
  const auto p = static_cast<std::size_t>(r.rows());
  if (!is_correlation_pd(r)) return neg_inf;
  double out = 0.0;
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t l = k + 1; l < p; ++l) {
      const double rkl = r(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l));
      if (!(std::abs(rkl) < 1.0)) return neg_inf;
      const double resid = link(rkl, spec.link) - s.theta(static_cast<Eigen::Index>(pair_index(k, l, p)));
      out += -resid * resid / (2.0 * spec.tau2) + log_link_jacobian(rkl, spec.link);
    }
  }
  return out;
}

double separation_log_jacobian(const Eigen::VectorXd& d_diag) {
  const double p = static_cast<double>(d_diag.size());
  return 0.5 * (p - 1.0) * d_diag.array().log().sum();
}

RUpdate propose_and_accept_R(const Eigen::MatrixXd& r, const Eigen::MatrixXd& scatter, double n,
                             double zeta, const std::function<double(const Eigen::MatrixXd&)>& log_target,
                             Rng& rng, double weight) {
  RUpdate out;
  out.r = r;
  const auto p = r.rows();
  if (p == 1) {
    out.accepted = true;
    return out;
  }
  const double pd = static_cast<double>(p);
  const double wn = weight * n;
  const Eigen::MatrixXd wscatter = weight * scatter;
  const double aux_shape = 0.5 * (wn + zeta - pd + 1.0);
  Eigen::VectorXd aux_scale(p);
  for (Eigen::Index k = 0; k < p; ++k) aux_scale(k) = 0.5 * (wscatter(k, k) + zeta - pd - 1.0);

  auto log_aux = [&](const Eigen::VectorXd& d) {
    double acc = 0.0;
    for (Eigen::Index k = 0; k < p; ++k) acc += log_inv_gamma_density(d(k), aux_shape, aux_scale(k));
    return acc;
  };

  Eigen::VectorXd d(p);
  for (Eigen::Index k = 0; k < p; ++k) d(k) = rng.inv_gamma(aux_shape, aux_scale(k));
  const Eigen::VectorXd d_sqrt = d.array().sqrt();
  const Eigen::MatrixXd e = d_sqrt.asDiagonal() * r * d_sqrt.asDiagonal();

  const double df = wn + zeta;
  const Eigen::MatrixXd scale_fwd = wscatter + (zeta - pd - 1.0) * e;
  Eigen::MatrixXd e_new = rng.inv_wishart(df, scale_fwd);
  if (e_new.size() == 0 || !e_new.allFinite() || (e_new.diagonal().array() <= 0.0).any()) {
    out.numerical_failure = true;
    return out;
  }
  const Eigen::VectorXd d_new = e_new.diagonal();
  const Eigen::VectorXd inv_sqrt = d_new.array().rsqrt();
  Eigen::MatrixXd r_new = inv_sqrt.asDiagonal() * e_new * inv_sqrt.asDiagonal();
  r_new = (0.5 * (r_new + r_new.transpose())).eval();
  r_new.diagonal().setOnes();
  if (!is_correlation_pd(r_new)) {
    out.numerical_failure = true;
    return out;
  }

  const double target_new = log_target(r_new);
  if (!std::isfinite(target_new)) return out;
  const double target_old = log_target(r);

  const Eigen::MatrixXd scale_rev = wscatter + (zeta - pd - 1.0) * e_new;
  const double log_h_fwd = log_inv_wishart_density(e_new, df, scale_fwd) + separation_log_jacobian(d_new);
  const double log_h_rev = log_inv_wishart_density(e, df, scale_rev) + separation_log_jacobian(d);
  if (!std::isfinite(log_h_fwd) || !std::isfinite(log_h_rev)) {
    out.numerical_failure = true;
    return out;
  }

  out.log_ratio = target_new - target_old + log_aux(d_new) - log_aux(d) + log_h_rev - log_h_fwd;
  if (std::log(rng.uniform()) < out.log_ratio) {
    out.r = r_new;
    out.accepted = true;
  }
  return out;
}

Eigen::VectorXd stick_weights(const Eigen::VectorXd& sticks) {
  const auto h = sticks.size() + 1;
  Eigen::VectorXd w(h);
  double remaining = 1.0;
  for (Eigen::Index i = 0; i < sticks.size(); ++i) {
    w(i) = sticks(i) * remaining;
    remaining *= 1.0 - sticks(i);
  }
  w(h - 1) = remaining;
  return w;
}

ShadowState initial_shadow(std::size_t p, const CorrelationModelSpec& spec) {
  ShadowState s;
  s.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(pair_count(p)));
  s.cluster_means = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.cluster_count(p)));
  s.sigma2 = 0.25;
  const auto comps = spec.components(p);
  switch (spec.variant) {
    case CorrelationVariant::common:
      break;
    case CorrelationVariant::grouped_correlations:
      s.labels.assign(pair_count(p), 0);
      break;
    case CorrelationVariant::grouped_variables:
      s.labels.assign(p, 0);
      break;
  }
  // Prior-mean sticks Beta(1, alpha*) -> v = 1/(1 + alpha*).
  s.concentration = spec.concentration_shape / spec.concentration_rate;
  s.sticks = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(comps - 1), 1.0 / (1.0 + s.concentration));
  s.weights = stick_weights(s.sticks);
  return s;
}

void update_theta(ShadowState& s, const Eigen::MatrixXd& r, const CorrelationModelSpec& spec, Rng& rng) {
  const auto p = static_cast<std::size_t>(r.rows());
  const double a = 1.0 / (1.0 / spec.tau2 + 1.0 / s.sigma2);
  const double sd = std::sqrt(a);
  for (std::size_t k = 0; k < p; ++k) {
    for (std::size_t l = k + 1; l < p; ++l) {
      const auto idx = pair_index(k, l, p);
      const double g = link(r(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(l)), spec.link);
      const double mu = theta_prior_mean(s, spec, idx, p);
      s.theta(static_cast<Eigen::Index>(idx)) = rng.normal(a * (g / spec.tau2 + mu / s.sigma2), sd);
    }
  }
}

namespace {

/// Cluster index of every theta under the current labels.
std::vector<std::size_t> theta_clusters(const ShadowState& s, const CorrelationModelSpec& spec, std::size_t p) {
  std::vector<std::size_t> out(pair_count(p), 0);
  switch (spec.variant) {
    case CorrelationVariant::common:
      break;
    case CorrelationVariant::grouped_correlations:
      out = s.labels;
      break;
    case CorrelationVariant::grouped_variables: {
      const auto g = spec.components(p);
      for (std::size_t k = 0; k < p; ++k)
        for (std::size_t l = k + 1; l < p; ++l)
          out[pair_index(k, l, p)] = group_pair_index(s.labels[k], s.labels[l], g);
      break;
    }
  }
  return out;
}

double theta_sum_of_squares(const ShadowState& s, const CorrelationModelSpec& spec, std::size_t p) {
  const auto clusters = theta_clusters(s, spec, p);
  double ss = 0.0;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const double d = s.theta(static_cast<Eigen::Index>(i)) - s.cluster_means(static_cast<Eigen::Index>(clusters[i]));
    ss += d * d;
  }
  return ss;
}

}  // namespace

double log_sigma2_R_conditional(double sigma2, const ShadowState& s, const CorrelationModelSpec& spec,
                                std::size_t p) {
  if (!(sigma2 > 0.0)) return neg_inf;
  const double d = static_cast<double>(pair_count(p));
  const double ss = theta_sum_of_squares(s, spec, p);
  // Half-normal on sigma_R induces x^{-1/2} exp(-x / (2 phi^2)) on x = sigma_R^2.
  return -0.5 * d * std::log(sigma2) - ss / (2.0 * sigma2) - sigma2 / (2.0 * spec.sd_prior_var) -
         0.5 * std::log(sigma2);
}

MoveOutcome update_mu_and_sigma_R(ShadowState& s, const CorrelationModelSpec& spec, std::size_t p,
                                  double f1_sq, Rng& rng) {
  MoveOutcome out;
  if (pair_count(p) == 0) return out;
  const auto clusters = theta_clusters(s, spec, p);
  const auto m = static_cast<std::size_t>(s.cluster_means.size());
  std::vector<double> sums(m, 0.0);
  std::vector<std::size_t> counts(m, 0);
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    sums[clusters[i]] += s.theta(static_cast<Eigen::Index>(i));
    ++counts[clusters[i]];
  }
  for (std::size_t h = 0; h < m; ++h) {
    const double dh = static_cast<double>(counts[h]);
    const double prec = dh / s.sigma2 + 1.0 / spec.mean_prior_var;
    const double mean = counts[h] > 0 ? (dh / s.sigma2) * (sums[h] / dh) / prec : 0.0;
    s.cluster_means(static_cast<Eigen::Index>(h)) = rng.normal(mean, std::sqrt(1.0 / prec));
  }

  // Random walk on log sigma_R^2; the posterior piles up near zero when the thetas agree.
  out.proposed = true;
  const double step = rng.normal(0.0, std::sqrt(f1_sq));
  const double proposal = s.sigma2 * std::exp(step);
  if (!(proposal > 0.0) || !std::isfinite(proposal)) return out;
  const double log_ratio = log_sigma2_R_conditional(proposal, s, spec, p) -
                           log_sigma2_R_conditional(s.sigma2, s, spec, p) + step;
  if (std::log(rng.uniform()) < log_ratio) {
    s.sigma2 = proposal;
    out.accepted = true;
  }
  return out;
}

std::vector<double> correlation_label_log_probs(std::size_t pair, const ShadowState& s) {
  const auto h = static_cast<std::size_t>(s.weights.size());
  std::vector<double> out(h);
  const double theta = s.theta(static_cast<Eigen::Index>(pair));
  for (std::size_t c = 0; c < h; ++c) {
    const double w = s.weights(static_cast<Eigen::Index>(c));
    out[c] = (w > 0.0 ? std::log(w) : neg_inf) +
             log_normal_density(theta, s.cluster_means(static_cast<Eigen::Index>(c)), s.sigma2);
  }
  return out;
}

std::vector<double> variable_label_log_probs(std::size_t k, const ShadowState& s, std::size_t p) {
  const auto g = static_cast<std::size_t>(s.weights.size());
  std::vector<double> out(g);
  for (std::size_t h = 0; h < g; ++h) {
    const double w = s.weights(static_cast<Eigen::Index>(h));
    double acc = w > 0.0 ? std::log(w) : neg_inf;
    for (std::size_t l = 0; l < p; ++l) {
      if (l == k) continue;
      const double theta = s.theta(static_cast<Eigen::Index>(pair_index(k, l, p)));
      const double mu = s.cluster_means(static_cast<Eigen::Index>(group_pair_index(h, s.labels[l], g)));
      acc += log_normal_density(theta, mu, s.sigma2);
    }
    out[h] = acc;
  }
  return out;
}

double draw_concentration(double current, std::size_t occupied, std::size_t items, double shape,
                          double rate, Rng& rng) {
  const double k = static_cast<double>(occupied);
  const double d = static_cast<double>(items);
  const double eta = rng.beta(current + 1.0, d);
  const double rate_post = rate - std::log(eta);
  const double odds_num = shape + k - 1.0;
  const double pi_eta = odds_num / (odds_num + d * rate_post);
  const double shape_post = rng.uniform() < pi_eta ? shape + k : shape + k - 1.0;
  return rng.gamma(shape_post, rate_post);
}

namespace {

void redraw_sticks(ShadowState& s, const std::vector<std::size_t>& counts, Rng& rng) {
  const auto h = counts.size();
  std::size_t remaining = 0;
  for (auto c : counts) remaining += c;
  for (std::size_t c = 0; c + 1 < h; ++c) {
    remaining -= counts[c];
    s.sticks(static_cast<Eigen::Index>(c)) =
        rng.beta(1.0 + static_cast<double>(counts[c]), s.concentration + static_cast<double>(remaining));
  }
  s.weights = stick_weights(s.sticks);
}

void finish_dp_step(ShadowState& s, const CorrelationModelSpec& spec, std::size_t components, Rng& rng) {
  std::vector<std::size_t> counts(components, 0);
  for (auto l : s.labels) ++counts[l];
  const auto occupied = static_cast<std::size_t>(std::count_if(counts.begin(), counts.end(), [](auto c) { return c > 0; }));
  s.concentration = draw_concentration(s.concentration, occupied, s.labels.size(), spec.concentration_shape,
                                       spec.concentration_rate, rng);
  redraw_sticks(s, counts, rng);
}

}  // namespace

void update_dp_clustering(ShadowState& s, const CorrelationModelSpec& spec, std::size_t p, Rng& rng) {
  const auto h = spec.components(p);
  if (h == 1) {
    std::fill(s.labels.begin(), s.labels.end(), 0);
    s.weights = Eigen::VectorXd::Ones(1);
    return;
  }
  for (std::size_t pair = 0; pair < s.labels.size(); ++pair) {
    const auto lp = correlation_label_log_probs(pair, s);
    s.labels[pair] = rng.categorical_log(lp);
  }
  finish_dp_step(s, spec, h, rng);
}

void update_grouped_variables(ShadowState& s, const CorrelationModelSpec& spec, std::size_t p, Rng& rng) {
  const auto g = spec.components(p);
  if (g == 1) {
    std::fill(s.labels.begin(), s.labels.end(), 0);
    s.weights = Eigen::VectorXd::Ones(1);
    return;
  }
  for (std::size_t k = 0; k < p; ++k) {
    const auto lp = variable_label_log_probs(k, s, p);
    s.labels[k] = rng.categorical_log(lp);
  }
  finish_dp_step(s, spec, g, rng);
}

}  // namespace bnmvr
