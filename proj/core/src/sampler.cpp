#include "bnmvr/sampler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>

namespace bnmvr {

namespace {

constexpr double neg_inf = -std::numeric_limits<double>::infinity();
constexpr std::size_t max_block = 5;

double log_mvn_isotropic(const Eigen::VectorXd& x, double var) {
  const double k = static_cast<double>(x.size());
  return -0.5 * k * std::log(2.0 * std::numbers::pi * var) - x.squaredNorm() / (2.0 * var);
}

/// log N(x; mean, h * cov) given the lower Cholesky factor of cov.
double log_mvn_chol(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& lower, double h) {
  const double k = static_cast<double>(x.size());
  const Eigen::VectorXd z = lower.triangularView<Eigen::Lower>().solve(x - mean);
  return -0.5 * k * std::log(2.0 * std::numbers::pi * h) - lower.diagonal().array().log().sum() -
         z.squaredNorm() / (2.0 * h);
}

/// Shuffled positions of a term cut into consecutive blocks of uniform size 1..min(width, 5).
std::vector<std::vector<std::size_t>> random_blocks(std::size_t width, Rng& rng) {
  std::vector<std::size_t> order(width);
  for (std::size_t i = 0; i < width; ++i) order[i] = i;
  rng.shuffle(order.begin(), order.end());
  std::vector<std::vector<std::size_t>> blocks;
  std::size_t pos = 0;
  while (pos < width) {
    const auto size = std::min(rng.integer(1, std::min(width, max_block)), width - pos);
    blocks.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(pos),
                        order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    pos += size;
  }
  return blocks;
}

/// Redraws indicators[offset + b] for b in block from the Beta-Bernoulli prior
/// conditional on the rest of the term (pi integrated out, sequential urn).
void urn_proposal(Indicators& ind, Eigen::Index row, std::size_t offset, std::size_t width,
                  const std::vector<std::size_t>& block, const InclusionPrior& prior, Rng& rng) {
  std::vector<bool> in_block(width, false);
  for (auto b : block) in_block[b] = true;
  double ones = 0.0;
  double seen = 0.0;
  for (std::size_t i = 0; i < width; ++i) {
    if (in_block[i]) continue;
    seen += 1.0;
    if (ind(row, static_cast<Eigen::Index>(offset + i))) ones += 1.0;
  }
  for (auto b : block) {
    const double p1 = (prior.a + ones) / (prior.a + prior.b + seen);
    const bool on = rng.bernoulli(p1);
    ind(row, static_cast<Eigen::Index>(offset + b)) = on;
    seen += 1.0;
    if (on) ones += 1.0;
  }
}

std::vector<Eigen::Index> selected_columns(const Indicators& ind, Eigen::Index row, const TermBlock& block) {
  std::vector<Eigen::Index> out;
  for (std::size_t i = 0; i < block.width; ++i) {
    const auto c = static_cast<Eigen::Index>(block.offset + i);
    if (ind(row, c)) out.push_back(c);
  }
  return out;
}

Eigen::MatrixXd take_columns(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out.col(static_cast<Eigen::Index>(c)) = m.col(cols[c]);
  return out;
}

/// One-step IRLS moments for a Gamma GLM with log link on the squared residuals.
struct IrlsMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd lower;  // Cholesky factor of Delta
};

std::optional<IrlsMoments> irls_moments(const Eigen::MatrixXd& z_sel, const Eigen::VectorXd& working, double c_alpha) {
  const auto k = z_sel.cols();
  Eigen::MatrixXd precision = z_sel.transpose() * z_sel;
  precision.diagonal().array() += 1.0 / c_alpha;
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) return std::nullopt;
  IrlsMoments m;
  m.mean = llt.solve(z_sel.transpose() * working);
  const Eigen::MatrixXd delta = llt.solve(Eigen::MatrixXd::Identity(k, k));
  Eigen::LLT<Eigen::MatrixXd> dl(delta);
  if (dl.info() != Eigen::Success) return std::nullopt;
  m.lower = dl.matrixL();
  return m;
}

}  // namespace

Eigen::VectorXd working_response(const SamplerState& state, const MarginalQuantities& q, const DesignMatrices& designs,
                                 Eigen::Index j, const std::vector<Eigen::Index>& term_cols) {
  const Eigen::VectorXd fitted = mean_matrix(q.beta_hat, designs).col(j);
  const Eigen::ArrayXd e = (designs.y.col(j) - fitted).array().square();
  Eigen::VectorXd lv = Eigen::VectorXd::Constant(designs.y.rows(), std::log(state.sigma2(j)));
  if (designs.z.cols() > 0) lv += designs.z * state.alpha.row(j).transpose();
  const Eigen::ArrayXd s2 = lv.array().exp();
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(designs.y.rows());
  for (auto c : term_cols) eta += designs.z.col(c) * state.alpha(j, c);
  return eta.array() + (e - s2) / s2;
}

namespace {

Eigen::VectorXd gather(const Eigen::MatrixXd& m, Eigen::Index row, const std::vector<Eigen::Index>& cols) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) out(static_cast<Eigen::Index>(c)) = m(row, cols[c]);
  return out;
}

bool accept(double log_ratio, Rng& rng) { return std::isfinite(log_ratio) && std::log(rng.uniform()) < log_ratio; }

}  // namespace

double ScalePrior::log_density(double x) const {
  if (!(x > 0.0)) return neg_inf;
  if (kind == ScalePriorKind::inverse_gamma) return -(shape + 1.0) * std::log(x) - scale / x;
  // Half-normal on sqrt(x) induces x^{-1/2} exp(-x / (2 phi^2)).
  return -x / (2.0 * hn_var) - 0.5 * std::log(x);
}

double PriorConfig::resolved_c_beta_scale(std::size_t n, std::size_t p) const {
  return c_beta_scale > 0.0 ? c_beta_scale : 0.5 * static_cast<double>(n * p);
}

std::size_t ChainSchedule::retained() const {
  if (thin == 0) throw ModelError("schedule: thin must be >= 1");
  if (burn_in > sweeps) throw ModelError("schedule: burn-in exceeds sweeps");
  if (batch_size == 0) throw ModelError("schedule: batch size must be >= 1");
  return (sweeps - burn_in) / thin;
}

double AdaptiveScale::value() const { return std::max(std::exp(log_value), floor); }

void AdaptiveScale::record(bool accepted) {
  ++batch_proposed;
  ++total_proposed;
  if (accepted) {
    ++batch_accepted;
    ++total_accepted;
  }
}

double AdaptiveScale::recent_rate(std::size_t batches) const {
  const auto n = batch_history_proposed.size();
  const auto from = n > batches ? n - batches : 0;
  std::size_t prop = 0;
  std::size_t acc = 0;
  for (auto i = from; i < n; ++i) {
    prop += batch_history_proposed[i];
    acc += batch_history_accepted[i];
  }
  return prop > 0 ? static_cast<double>(acc) / static_cast<double>(prop) : std::numeric_limits<double>::quiet_NaN();
}

double AdaptiveScale::overall_rate() const {
  return total_proposed > 0 ? static_cast<double>(total_accepted) / static_cast<double>(total_proposed)
                            : std::numeric_limits<double>::quiet_NaN();
}

double adapt_log_scale(double log_value, double rate, std::size_t batch_index, AdaptDirection direction) {
  if (std::isnan(rate) || (rate >= adapt_band_low && rate <= adapt_band_high)) return log_value;
  const double step = std::min(0.05, 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(batch_index, 1))));
  const double sign = rate > adapt_band_high ? 1.0 : -1.0;
  return log_value + sign * static_cast<double>(static_cast<int>(direction)) * step;
}

std::vector<const AdaptiveScale*> TuningState::all() const {
  std::vector<const AdaptiveScale*> out{&zeta, &g2, &f1};
  for (const auto& s : h) out.push_back(&s);
  for (const auto& s : f2) out.push_back(&s);
  for (const auto& s : f3) out.push_back(&s);
  return out;
}

std::vector<AdaptiveScale*> TuningState::all() {
  std::vector<AdaptiveScale*> out{&zeta, &g2, &f1};
  for (auto& s : h) out.push_back(&s);
  for (auto& s : f2) out.push_back(&s);
  for (auto& s : f3) out.push_back(&s);
  return out;
}

namespace {

AdaptiveScale make_scale(std::string name, double value, AdaptDirection direction, double floor = 0.0) {
  AdaptiveScale s;
  s.name = std::move(name);
  s.log_value = std::log(value);
  s.direction = direction;
  s.floor = floor;
  return s;
}

}  // namespace

TuningState initial_tuning(std::size_t n, std::size_t p, std::size_t variance_terms) {
  TuningState t;
  const double nd = static_cast<double>(n);
  const double pd = static_cast<double>(p);
  // zeta starts larger for more correlations so burn-in adaptation reaches its working range.
  t.zeta = make_scale("zeta", pd + 3.0 + 0.25 * nd * (pd - 1.0) * (pd - 1.0), AdaptDirection::lower_when_high,
                      pd + 3.0);
  t.g2 = make_scale("g2", 64.0, AdaptDirection::raise_when_high);
  t.f1 = make_scale("f1", 10.0, AdaptDirection::raise_when_high);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = 0; k < variance_terms; ++k)
      t.h.push_back(make_scale("h[" + std::to_string(j) + "," + std::to_string(k) + "]", 10.0,
                               AdaptDirection::raise_when_high));
    t.f2.push_back(make_scale("f2[" + std::to_string(j) + "]", 0.5, AdaptDirection::raise_when_high));
    t.f3.push_back(make_scale("f3[" + std::to_string(j) + "]", 8.0 / nd, AdaptDirection::raise_when_high));
  }
  return t;
}

namespace {

void close_batch(TuningState& tuning, bool nudge) {
  ++tuning.batches_done;
  const auto& z = tuning.zeta;
  const double zeta_rate =
      z.batch_proposed > 0 ? static_cast<double>(z.batch_accepted) / static_cast<double>(z.batch_proposed) : NAN;
  for (auto* s : tuning.all()) {
    if (nudge && s->batch_proposed > 0) {
      const double rate = static_cast<double>(s->batch_accepted) / static_cast<double>(s->batch_proposed);
      s->log_value = adapt_log_scale(s->log_value, rate, tuning.batches_done, s->direction);
      if (s->floor > 0.0) s->log_value = std::max(s->log_value, std::log(s->floor));
    }
    s->batch_history_proposed.push_back(s->batch_proposed);
    s->batch_history_accepted.push_back(s->batch_accepted);
    s->batch_proposed = 0;
    s->batch_accepted = 0;
  }
  // At the zeta floor the proposal can only widen through a smaller data weight.
  if (nudge && std::isfinite(zeta_rate) && z.log_value <= std::log(z.floor) + 1e-12) {
    const double lk = adapt_log_scale(std::log(tuning.kappa), zeta_rate, tuning.batches_done,
                                      AdaptDirection::lower_when_high);
    tuning.kappa = std::clamp(std::exp(lk), 1e-3, tuning.kappa_max);
  }
}

}  // namespace

void adapt(TuningState& tuning) { close_batch(tuning, true); }

std::size_t ChainHealth::numerical_failures() const {
  return rank_deficient_gamma + delta_alpha_failures + sigma2_failures + beta_draw_failures + r_numerical_failures;
}

NewtonResult newton_mode(const std::function<double(double)>& f, const std::function<double(double)>& df,
                         const std::function<double(double)>& d2f, double start, double lower) {
  NewtonResult out;
  double x = start;
  double fx = f(x);
  bool settled = false;
  for (std::size_t it = 0; it < 200; ++it) {
    out.iterations = it + 1;
    const double g = df(x);
    const double h = d2f(x);
    if (!std::isfinite(g) || !std::isfinite(h) || !std::isfinite(fx)) return out;
    double step = h < 0.0 ? -g / h : (g > 0.0 ? 1.0 : -0.5) * std::max(std::abs(x - lower), 1e-8);
    while (x + step <= lower) step *= 0.5;
    double candidate = x + step;
    double fc = f(candidate);
    std::size_t halvings = 0;
    while (!(fc >= fx) && halvings < 60) {
      step *= 0.5;
      candidate = x + step;
      fc = f(candidate);
      ++halvings;
    }
    if (!(fc >= fx)) break;
    x = candidate;
    fx = fc;
    if (std::abs(step) <= 1e-10 * (1.0 + std::abs(x))) {
      settled = true;
      break;
    }
  }
  out.mode = x;
  out.second_derivative = d2f(x);
  out.converged = settled && std::isfinite(out.second_derivative) && out.second_derivative < 0.0;
  return out;
}

double CBetaConditional::value(double c) const {
  if (!(c > 0.0)) return neg_inf;
  return -0.5 * cols * std::log1p(c) + 0.5 * quad * c / (1.0 + c) - (shape + 1.0) * std::log(c) - scale / c;
}

double CBetaConditional::first(double c) const {
  const double u = 1.0 + c;
  return -0.5 * cols / u + 0.5 * quad / (u * u) - (shape + 1.0) / c + scale / (c * c);
}

double CBetaConditional::second(double c) const {
  const double u = 1.0 + c;
  return 0.5 * cols / (u * u) - quad / (u * u * u) + (shape + 1.0) / (c * c) - 2.0 * scale / (c * c * c);
}

std::string check_invariants(const SamplerState& s, const DesignMatrices& d) {
  const auto p = static_cast<Eigen::Index>(d.p());
  const auto mw = static_cast<Eigen::Index>(d.mean_width());
  const auto vw = static_cast<Eigen::Index>(d.variance_width());
  if (s.beta.rows() != p || s.beta.cols() != mw + 1) return "beta has wrong shape";
  if (s.gamma.rows() != p || s.gamma.cols() != mw) return "gamma has wrong shape";
  if (s.delta.rows() != p || s.delta.cols() != vw) return "delta has wrong shape";
  if (s.alpha.rows() != p || s.alpha.cols() != vw) return "alpha has wrong shape";
  for (Eigen::Index j = 0; j < p; ++j) {
    for (Eigen::Index a = 0; a < mw; ++a)
      if (!s.gamma(j, a) && s.beta(j, a + 1) != 0.0) return "deselected beta is nonzero";
    for (Eigen::Index a = 0; a < vw; ++a)
      if (!s.delta(j, a) && s.alpha(j, a) != 0.0) return "deselected alpha is nonzero";
  }
  if (!s.beta.allFinite() || !s.alpha.allFinite()) return "non-finite coefficients";
  if (!(s.sigma2.array() > 0.0).all() || !s.sigma2.allFinite()) return "sigma2 not positive";
  if (!(s.c_beta > 0.0) || !std::isfinite(s.c_beta)) return "c_beta not positive";
  if (!(s.c_alpha.array() > 0.0).all()) return "c_alpha not positive";
  if (s.r.rows() != p || s.r.cols() != p) return "R has wrong shape";
  if (!((s.r.diagonal().array() - 1.0).abs() < 1e-12).all()) return "R diagonal not one";
  if (!(s.r - s.r.transpose()).isZero(1e-12)) return "R not symmetric";
  Eigen::LLT<Eigen::MatrixXd> llt(s.r);
  if (llt.info() != Eigen::Success) return "R not positive definite";
  return {};
}

SamplerState initial_state(const DesignMatrices& designs, const ModelSpec& spec) {
  const auto p = static_cast<Eigen::Index>(designs.p());
  const auto mw = static_cast<Eigen::Index>(designs.mean_width());
  const auto vw = static_cast<Eigen::Index>(designs.variance_width());
  SamplerState s;
  s.beta = Eigen::MatrixXd::Zero(p, mw + 1);
  s.gamma = Indicators::Constant(p, mw, false);
  for (const auto& b : designs.mean_blocks)
    if (b.spec.kind == TermKind::parametric)
      s.gamma.middleCols(static_cast<Eigen::Index>(b.offset), static_cast<Eigen::Index>(b.width)).setConstant(true);
  s.delta = Indicators::Constant(p, vw, false);
  s.alpha = Eigen::MatrixXd::Zero(p, vw);
  s.sigma2.resize(p);
  const double n = static_cast<double>(designs.n());
  for (Eigen::Index j = 0; j < p; ++j) {
    const double mean = designs.y.col(j).mean();
    s.sigma2(j) = std::max((designs.y.col(j).array() - mean).square().sum() / (n - 1.0), 1e-8);
  }
  s.c_beta = n * static_cast<double>(p);
  s.c_alpha = Eigen::VectorXd::Ones(p);
  s.r = Eigen::MatrixXd::Identity(p, p);
  s.shadow = initial_shadow(designs.p(), spec.correlation);
  return s;
}

Sampler::Sampler(DesignMatrices designs, ModelSpec spec, std::uint64_t seed)
    : designs_(std::move(designs)), spec_(std::move(spec)), rng_(seed) {
  state_ = initial_state(designs_, spec_);
  tuning_ = initial_tuning(designs_.n(), designs_.p(), designs_.variance_blocks.size());
  tuning_.kappa = tuning_.kappa_max = spec_.correlation.proposal_weight;
  c_beta_scale_ = spec_.priors.resolved_c_beta_scale(designs_.n(), designs_.p());
  draw_beta();
}

void Sampler::set_state(SamplerState state) {
  state_ = std::move(state);
  invalidate();
}

void Sampler::set_responses(const Eigen::MatrixXd& y) {
  designs_.y = y;
  invalidate();
}

std::optional<MarginalQuantities> Sampler::evaluate(const SamplerState& s) const {
  try {
    return compute_S(s, designs_);
  } catch (const NumericalError&) {
    return std::nullopt;
  }
}

const MarginalQuantities& Sampler::current() {
  if (!cached_) {
    cached_ = evaluate(state_);
    if (!cached_) throw NumericalError("current state has a singular system");
  }
  return *cached_;
}

double Sampler::log_marginal(const MarginalQuantities& q) const {
  return marginal_loglik(q, state_.c_beta, designs_.n(), designs_.p());
}

double Sampler::sigma_log_prior(const SamplerState& s, std::size_t j) const {
  return spec_.priors.sigma2.log_density(s.sigma2(static_cast<Eigen::Index>(j)));
}

void Sampler::sweep() {
  update_gamma_blocks();
  update_delta_alpha();
  update_sigma2();
  update_c_beta();
  update_c_alpha();
  draw_beta();
  update_R();
  update_shadow();
}

void Sampler::update_gamma_blocks() {
  const auto p = designs_.p();
  std::vector<std::pair<std::size_t, std::size_t>> terms;
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t k = 0; k < designs_.mean_blocks.size(); ++k) terms.emplace_back(j, k);
  rng_.shuffle(terms.begin(), terms.end());

  for (auto [j, k] : terms) {
    const auto& block = designs_.mean_blocks[k];
    const auto row = static_cast<Eigen::Index>(j);
    for (const auto& b : random_blocks(block.width, rng_)) {
      SamplerState proposal = state_;
      urn_proposal(proposal.gamma, row, block.offset, block.width, b, block.spec.inclusion, rng_);
      if ((proposal.gamma == state_.gamma).all()) continue;
      const auto q = evaluate(proposal);
      if (!q) {
        ++health_.rank_deficient_gamma;
        continue;
      }
      const double log_ratio = log_marginal(*q) - log_marginal(current());
      if (accept(log_ratio, rng_)) {
        state_.gamma = proposal.gamma;
        for (Eigen::Index a = 0; a < state_.gamma.cols(); ++a)
          if (!state_.gamma(row, a)) state_.beta(row, a + 1) = 0.0;
        cached_ = *q;
      }
    }
  }
}

void Sampler::update_delta_alpha() {
  const auto p = designs_.p();
  const auto kv = designs_.variance_blocks.size();
  if (kv == 0) return;
  std::vector<std::pair<std::size_t, std::size_t>> terms;
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t k = 0; k < kv; ++k) terms.emplace_back(j, k);
  rng_.shuffle(terms.begin(), terms.end());

  for (auto [j, k] : terms) {
    const auto& block = designs_.variance_blocks[k];
    const auto row = static_cast<Eigen::Index>(j);
    auto& h_scale = tuning_.h[j * kv + k];
    for (const auto& b : random_blocks(block.width, rng_)) {
      try {
        const double h = h_scale.value();
        const double c_alpha = state_.c_alpha(row);
        const MarginalQuantities& cur = current();
        const auto cols_cur = selected_columns(state_.delta, row, block);

        SamplerState proposal = state_;
        urn_proposal(proposal.delta, row, block.offset, block.width, b, block.spec.inclusion, rng_);
        const auto cols_prop = selected_columns(proposal.delta, row, block);
        for (std::size_t i = 0; i < block.width; ++i) proposal.alpha(row, static_cast<Eigen::Index>(block.offset + i)) = 0.0;

        double log_fwd = 0.0;
        Eigen::VectorXd alpha_prop;
        if (!cols_prop.empty()) {
          const Eigen::VectorXd d = working_response(state_, cur, designs_, row, cols_cur);
          const auto m = irls_moments(take_columns(designs_.z, cols_prop), d, c_alpha);
          if (!m) {
            ++health_.delta_alpha_failures;
            continue;
          }
          alpha_prop = m->mean + std::sqrt(h) * (m->lower * Eigen::VectorXd::NullaryExpr(m->mean.size(), [&] { return rng_.normal(); }));
          log_fwd = log_mvn_chol(alpha_prop, m->mean, m->lower, h);
          for (std::size_t c = 0; c < cols_prop.size(); ++c) proposal.alpha(row, cols_prop[c]) = alpha_prop(static_cast<Eigen::Index>(c));
        }

        const auto q = evaluate(proposal);
        if (!q) {
          ++health_.delta_alpha_failures;
          continue;
        }

        double log_rev = 0.0;
        const Eigen::VectorXd alpha_cur = gather(state_.alpha, row, cols_cur);
        if (!cols_cur.empty()) {
          const Eigen::VectorXd d = working_response(proposal, *q, designs_, row, cols_prop);
          const auto m = irls_moments(take_columns(designs_.z, cols_cur), d, c_alpha);
          if (!m) {
            ++health_.delta_alpha_failures;
            continue;
          }
          log_rev = log_mvn_chol(alpha_cur, m->mean, m->lower, h);
        }

        const double log_prior = (cols_prop.empty() ? 0.0 : log_mvn_isotropic(alpha_prop, c_alpha)) -
                                 (cols_cur.empty() ? 0.0 : log_mvn_isotropic(alpha_cur, c_alpha));
        const double log_ratio = log_marginal(*q) - log_marginal(cur) + log_prior + log_rev - log_fwd;
        const bool ok = accept(log_ratio, rng_);
        if (!cols_cur.empty() && !cols_prop.empty()) h_scale.record(ok);
        if (ok) {
          state_.delta = proposal.delta;
          state_.alpha = proposal.alpha;
          cached_ = *q;
        }
      } catch (const NumericalError&) {
        ++health_.delta_alpha_failures;
      }
    }
  }
}

void Sampler::update_sigma2() {
  for (std::size_t j = 0; j < designs_.p(); ++j) {
    const auto row = static_cast<Eigen::Index>(j);
    auto& scale = tuning_.f3[j];
    const double proposed = rng_.normal(state_.sigma2(row), std::sqrt(scale.value()));
    if (!(proposed > 0.0)) {
      scale.record(false);
      continue;
    }
    try {
      const MarginalQuantities& cur = current();
      SamplerState proposal = state_;
      proposal.sigma2(row) = proposed;
      const auto q = evaluate(proposal);
      if (!q) {
        ++health_.sigma2_failures;
        scale.record(false);
        continue;
      }
      const double log_ratio =
          log_marginal(*q) - log_marginal(cur) + sigma_log_prior(proposal, j) - sigma_log_prior(state_, j);
      const bool ok = accept(log_ratio, rng_);
      scale.record(ok);
      if (ok) {
        state_.sigma2(row) = proposed;
        cached_ = *q;
      }
    } catch (const NumericalError&) {
      ++health_.sigma2_failures;
      scale.record(false);
    }
  }
}

void Sampler::update_c_beta() {
  const MarginalQuantities& cur = current();
  CBetaConditional ell;
  ell.cols = static_cast<double>(cur.selected + designs_.p());
  ell.quad = cur.quad_term;
  ell.shape = spec_.priors.c_beta_shape;
  ell.scale = c_beta_scale_;
  const double c = state_.c_beta;

  // Work on eta = log c_beta: the conditional has a polynomial right tail in c, which a
  // normal proposal on c cannot cover.
  auto f = [&](double eta) { return ell.value(std::exp(eta)) + eta; };
  auto df = [&](double eta) {
    const double x = std::exp(eta);
    return ell.first(x) * x + 1.0;
  };
  auto d2f = [&](double eta) {
    const double x = std::exp(eta);
    return ell.second(x) * x * x + ell.first(x) * x;
  };
  const double eta = std::log(c);
  const auto nr = newton_mode(f, df, d2f, eta, std::log(std::numeric_limits<double>::min()));
  double proposed = 0.0;
  if (nr.converged) {
    const double var = -tuning_.g2.value() / nr.second_derivative;
    const double eta_new = rng_.normal(nr.mode, std::sqrt(var));
    proposed = std::exp(eta_new);
    double log_ratio = neg_inf;
    if (proposed > 0.0 && std::isfinite(proposed))
      log_ratio = f(eta_new) - f(eta) + log_normal_density(eta, nr.mode, var) - log_normal_density(eta_new, nr.mode, var);
    const bool ok = accept(log_ratio, rng_);
    tuning_.g2.record(ok);
    if (!ok) return;
  } else {
    ++health_.c_beta_newton_fallbacks;
    const double eta_new = eta + 0.3 * rng_.normal();
    proposed = std::exp(eta_new);
    if (!accept(f(eta_new) - f(eta), rng_)) return;
  }
  state_.c_beta = proposed;
  invalidate();
}

void Sampler::update_c_alpha() {
  const auto& prior = spec_.priors.c_alpha;
  for (std::size_t j = 0; j < designs_.p(); ++j) {
    const auto row = static_cast<Eigen::Index>(j);
    const double count = static_cast<double>(state_.delta.row(row).count());
    const double ssq = state_.alpha.row(row).squaredNorm();
    if (prior.kind == ScalePriorKind::inverse_gamma) {
      state_.c_alpha(row) = rng_.inv_gamma(prior.shape + 0.5 * count, prior.scale + 0.5 * ssq);
      continue;
    }
    auto target = [&](double x) {
      if (!(x > 0.0)) return neg_inf;
      return -0.5 * count * std::log(x) - ssq / (2.0 * x) + prior.log_density(x);
    };
    auto& scale = tuning_.f2[j];
    const double c = state_.c_alpha(row);
    const double proposed = rng_.normal(c, std::sqrt(scale.value()));
    const bool ok = proposed > 0.0 && accept(target(proposed) - target(c), rng_);
    scale.record(ok);
    if (ok) state_.c_alpha(row) = proposed;
  }
}

void Sampler::draw_beta() {
  try {
    const CovarianceFactors cov(log_variances(state_, designs_), state_.r);
    const GlsSystem sys = build_gls(state_.gamma, cov, designs_);
    const double shrink = state_.c_beta / (1.0 + state_.c_beta);
    const Eigen::VectorXd mean = shrink * sys.factor.solve(sys.rhs);
    Eigen::VectorXd z(sys.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng_.normal();
    const Eigen::VectorXd noise = sys.factor.matrixU().solve(z);
    state_.beta = sys.unpack(mean + std::sqrt(shrink) * noise, designs_.mean_width());
  } catch (const NumericalError&) {
    ++health_.beta_draw_failures;
    for (Eigen::Index j = 0; j < state_.gamma.rows(); ++j)
      for (Eigen::Index a = 0; a < state_.gamma.cols(); ++a)
        if (!state_.gamma(j, a)) state_.beta(j, a + 1) = 0.0;
  }
}

void Sampler::update_R() {
  if (designs_.p() < 2) return;
  const Eigen::MatrixXd scatter = standardized_scatter(state_, designs_);
  const GPriorInR gprior(state_, designs_);
  const double n = static_cast<double>(designs_.n());
  const auto& shadow = state_.shadow;
  const auto& cspec = spec_.correlation;
  auto target = [&](const Eigen::MatrixXd& r) {
    Eigen::LLT<Eigen::MatrixXd> llt(r);
    if (llt.info() != Eigen::Success) return neg_inf;
    const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const Eigen::MatrixXd r_inv = llt.solve(Eigen::MatrixXd::Identity(r.rows(), r.cols()));
    const double prior = log_prior_R(r, shadow, cspec);
    if (!std::isfinite(prior)) return neg_inf;
    return -0.5 * n * log_det - 0.5 * r_inv.cwiseProduct(scatter).sum() + prior + gprior(r);
  };
  const auto result = propose_and_accept_R(state_.r, scatter, n, tuning_.zeta.value(), target, rng_, tuning_.kappa);
  tuning_.zeta.record(result.accepted);
  if (result.numerical_failure) ++health_.r_numerical_failures;
  if (result.accepted) {
    state_.r = result.r;
    invalidate();
  }
}

void Sampler::update_shadow() {
  const auto p = designs_.p();
  if (pair_count(p) == 0) return;
  const auto& cspec = spec_.correlation;
  update_theta(state_.shadow, state_.r, cspec, rng_);
  const auto moved = update_mu_and_sigma_R(state_.shadow, cspec, p, tuning_.f1.value(), rng_);
  if (moved.proposed) tuning_.f1.record(moved.accepted);
  switch (cspec.variant) {
    case CorrelationVariant::common:
      break;
    case CorrelationVariant::grouped_correlations:
      update_dp_clustering(state_.shadow, cspec, p, rng_);
      break;
    case CorrelationVariant::grouped_variables:
      update_grouped_variables(state_.shadow, cspec, p, rng_);
      break;
  }
}

Draw make_draw(const SamplerState& s) {
  Draw d;
  d.beta = s.beta;
  d.gamma = s.gamma;
  d.delta = s.delta;
  d.alpha = s.alpha;
  d.sigma2 = s.sigma2;
  d.c_beta = s.c_beta;
  d.c_alpha = s.c_alpha;
  d.r = s.r;
  d.theta = s.shadow.theta;
  d.cluster_means = s.shadow.cluster_means;
  d.sigma2_R = s.shadow.sigma2;
  d.labels = s.shadow.labels;
  d.concentration = s.shadow.concentration;
  return d;
}

ChainSamples run_chain(const DesignMatrices& designs, const ModelSpec& spec, const ChainSchedule& schedule) {
  const auto retained = schedule.retained();
  const auto start = std::chrono::steady_clock::now();
  Sampler sampler(designs, spec, schedule.seed);
  sampler.tuning().batch_size = schedule.batch_size;

  ChainSamples out;
  out.spec = spec;
  out.schedule = schedule;
  out.draws.reserve(retained);
  for (std::size_t sweep = 1; sweep <= schedule.sweeps; ++sweep) {
    sampler.sweep();
    if (!check_invariants(sampler.state(), sampler.designs()).empty()) ++out.health.invariant_violations;
    if (sweep <= schedule.burn_in && sweep % schedule.batch_size == 0) close_batch(sampler.tuning(), schedule.adapt);
    if (sweep > schedule.burn_in && (sweep - schedule.burn_in) % schedule.thin == 0)
      out.draws.push_back(make_draw(sampler.state()));
  }
  const auto invariants = out.health.invariant_violations;
  out.health = sampler.health();
  out.health.invariant_violations = invariants;
  for (const auto* s : sampler.tuning().all()) {
    if (s->total_proposed == 0) continue;
    out.moves.push_back({s->name, s->total_proposed, s->total_accepted, s->recent_rate(10), s->value()});
  }
  out.proposal_weight = sampler.tuning().kappa;
  out.designs = sampler.designs();
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

ChainSamples run_chain(const ModelSpec& spec, const Dataset& data, const ChainSchedule& schedule) {
  return run_chain(build_designs(data, spec.design), spec, schedule);
}

}  // namespace bnmvr
