#include "bnmvr/simharness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "bnmvr/posterior.hpp"

namespace bnmvr {

void SimScenario::validate() const {
  if (n < 3) throw ModelError("scenario: n must be at least 3");
  if (dims.empty()) throw ModelError("scenario: no response dimensions");
  if (std::find(dims.begin(), dims.end(), std::size_t{1}) == dims.end())
    throw ModelError("scenario: dimensions must include d = 1 (the reference fit)");
  for (auto d : dims)
    if (d < 1 || d > sim_responses) throw ModelError("scenario: dimension outside 1..10");
  if (mean_model < 1 || mean_model > 3) throw ModelError("scenario: mean model must be 1, 2 or 3");
  if (replicates == 0) throw ModelError("scenario: replicates must be >= 1");
  equicorrelation(sim_responses, rho);
  schedule.retained();
}

ChainSchedule desk_schedule() { return {10000, 5000, 2, 1, true, 50}; }

ChainSchedule full_schedule() { return {40000, 20000, 2, 1, true, 50}; }

Eigen::MatrixXd equicorrelation(std::size_t p, double rho) {
  const auto pp = static_cast<Eigen::Index>(p);
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(pp, pp, rho);
  s.diagonal().setOnes();
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success || !(llt.matrixLLT().diagonal().minCoeff() > 0.0))
    throw ModelError("equicorrelation matrix with rho = " + std::to_string(rho) + " is not positive definite");
  return s;
}

Dataset gen_dataset(std::size_t n, double rho, Rng& rng) {
  const Eigen::MatrixXd lower = equicorrelation(sim_responses, rho).llt().matrixL();
  const auto p = static_cast<Eigen::Index>(sim_responses);
  const auto k = static_cast<Eigen::Index>(sim_covariates);
  Dataset d;
  for (Eigen::Index j = 0; j < p; ++j) d.names.push_back("y" + std::to_string(j + 1));
  for (Eigen::Index c = 0; c < k; ++c) d.names.push_back("x" + std::to_string(c + 1));
  d.values.resize(static_cast<Eigen::Index>(n), p + k);
  for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
    for (Eigen::Index c = 0; c < k; ++c) d.values(i, p + c) = rng.uniform() - 0.5;
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
    mean(0) = sim_beta0 + sim_beta1 * d.values(i, p);
    d.values.row(i).head(p) = rng.mvn_chol(mean, lower).transpose();
  }
  return d;
}

double check_snr(const Eigen::VectorXd& y, const Eigen::VectorXd& fitted) {
  if (y.size() != fitted.size() || y.size() == 0) throw ModelError("check_snr: size mismatch");
  const double sst = (y.array() - y.mean()).square().sum();
  const double sse = (y - fitted).squaredNorm();
  if (!(sse > 0.0)) throw ModelError("check_snr: SSE is zero");
  return (sst - sse) / sse;
}

ModelSpec scenario_model(const SimScenario& scenario, std::size_t d) {
  ModelSpec spec;
  spec.priors = scenario.priors;
  for (std::size_t j = 0; j < d; ++j) spec.design.responses.push_back(j);
  const std::size_t covariates = scenario.mean_model == 1 ? 1 : scenario.mean_model == 2 ? 3 : sim_covariates;
  for (std::size_t c = 0; c < covariates; ++c) {
    TermSpec t;
    t.kind = TermKind::parametric;
    t.column = sim_responses + c;
    t.inclusion = scenario.inclusion;
    spec.design.mean_terms.push_back(t);
  }
  spec.design.standardize_covariates = true;
  spec.design.standardize_responses = false;
  spec.correlation.variant = CorrelationVariant::common;
  return spec;
}

Eigen::VectorXd true_mean(const Dataset& data) {
  return (sim_beta0 + sim_beta1 * data.values.col(static_cast<Eigen::Index>(sim_responses)).array()).matrix();
}

ReplicateResult run_replicate(const SimScenario& scenario, std::size_t index) {
  ReplicateResult out;
  out.index = index;
  out.data_seed = derive_seed(scenario.seed, 2 * index);
  Rng data_rng(out.data_seed);
  const Dataset data = gen_dataset(scenario.n, scenario.rho, data_rng);
  const Eigen::VectorXd truth = true_mean(data);

  for (auto d : scenario.dims) {
    ChainSchedule schedule = scenario.schedule;
    schedule.seed = derive_seed(derive_seed(scenario.seed, 2 * index + 1), d);
    out.chain_seeds.push_back(schedule.seed);
    const ModelSpec spec = scenario_model(scenario, d);
    const ChainSamples samples = run_chain(spec, data, schedule);
    FitMetrics m;
    m.seconds = samples.seconds;
    m.moves = samples.moves;
    m.numerical_failures = samples.health.numerical_failures();
    if (!samples.draws.empty()) {
      const auto fit = fitted_mean_summary(samples, 0);
      double inside = 0.0;
      for (std::size_t i = 0; i < fit.median.size(); ++i) {
        const double mu = truth(static_cast<Eigen::Index>(i));
        m.bias += (mu - fit.median[i]) * (mu - fit.median[i]);
        m.variance += (fit.upper[i] - fit.lower[i]) * (fit.upper[i] - fit.lower[i]);
        if (fit.lower[i] <= mu && mu <= fit.upper[i]) inside += 1.0;
      }
      m.coverage = inside / static_cast<double>(fit.median.size());
      std::vector<std::size_t> irrelevant;
      for (std::size_t c = 1; c < samples.designs.mean_width(); ++c) irrelevant.push_back(c);
      m.spurious = irrelevant.empty() ? 0.0 : at_least_one_included(samples, 0, irrelevant);
      m.relevant = at_least_one_included(samples, 0, {0});
    }
    out.fits.push_back(std::move(m));
  }
  return out;
}

SimMetrics run_table(const SimScenario& scenario, const std::function<void(const ReplicateResult&)>& progress) {
  scenario.validate();
  SimMetrics out;
  out.scenario = scenario;
  for (std::size_t r = 0; r < scenario.replicates; ++r) {
    try {
      out.replicates.push_back(run_replicate(scenario, r));
      if (progress) progress(out.replicates.back());
    } catch (const std::exception& e) {
      out.warnings.push_back("replicate " + std::to_string(r) + " dropped: " + e.what());
    }
  }

  const auto nd = scenario.dims.size();
  const auto ref = static_cast<std::size_t>(
      std::find(scenario.dims.begin(), scenario.dims.end(), std::size_t{1}) - scenario.dims.begin());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double reps = static_cast<double>(out.replicates.size());
  for (std::size_t k = 0; k < nd; ++k) {
    double b = 0.0, v = 0.0, rb = 0.0, rv = 0.0, cov = 0.0, sp = 0.0, rel = 0.0, sec = 0.0;
    for (const auto& rep : out.replicates) {
      const auto& f = rep.fits[k];
      b += f.bias;
      v += f.variance;
      rb += f.bias / rep.fits[ref].bias;
      rv += f.variance / rep.fits[ref].variance;
      cov += f.coverage;
      sp += f.spurious;
      rel += f.relevant;
      sec += f.seconds;
    }
    const bool any = !out.replicates.empty();
    out.mean_bias.push_back(any ? b / reps : nan);
    out.mean_variance.push_back(any ? v / reps : nan);
    out.mean_ratio_bias.push_back(any ? 100.0 * (rb / reps) : nan);
    out.mean_ratio_variance.push_back(any ? 100.0 * (rv / reps) : nan);
    out.coverage.push_back(any ? cov / reps : nan);
    out.spurious.push_back(any ? sp / reps : nan);
    out.relevant.push_back(any ? rel / reps : nan);
    out.seconds.push_back(any ? sec / reps : nan);
  }
  for (std::size_t k = 0; k < nd; ++k) {
    out.relative_bias.push_back(100.0 * (out.mean_bias[k] / out.mean_bias[ref]));
    out.relative_variance.push_back(100.0 * (out.mean_variance[k] / out.mean_variance[ref]));
  }
  return out;
}

}  // namespace bnmvr
