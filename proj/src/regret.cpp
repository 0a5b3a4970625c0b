#include "mwe/regret.hpp"

#include <cmath>

namespace mwe {

namespace {

void require_aligned(const PredictionPanel& panel, const EnsembleTrace& trace) {
  require(trace.steps.size() == panel.periods(),
          "trace has " + std::to_string(trace.steps.size()) + " steps but panel has " +
              std::to_string(panel.periods()) + " periods");
  for (const auto& s : trace.steps) {
    require(static_cast<std::size_t>(s.p.size()) == panel.models(),
            "trace distribution length does not match the panel's model count");
  }
}

}  // namespace

RegretDiagnostics regret_report(const PredictionPanel& panel, const EnsembleTrace& trace) {
  require_aligned(panel, trace);
  const auto rows = trace.scored_rows();
  require(!rows.empty(), "regret report: no scored periods");
  const auto L = static_cast<Eigen::Index>(panel.models());
  const auto tau = static_cast<Eigen::Index>(rows.size());

  Eigen::MatrixXd F(tau, L);
  Eigen::VectorXd r(tau);
  Eigen::VectorXd combined(tau);
  for (Eigen::Index k = 0; k < tau; ++k) {
    const auto t = rows[static_cast<std::size_t>(k)];
    F.row(k) = panel.forecasts().row(static_cast<Eigen::Index>(t));
    r[k] = panel.realized()[static_cast<Eigen::Index>(t)];
    combined[k] = trace.steps[t].combined;
  }

  RegretDiagnostics out;
  out.tau = rows.size();
  out.r2_ensemble = r2_oos(r, combined);

  OptimalEnsemble oracle;
  const auto moments = forecast_moments(F, r);
  try {
    oracle = solve_optimal_weights(moments);
  } catch (const NumericalError&) {
    OracleOptions opts;
    opts.ridge_jitter = true;
    oracle = solve_optimal_weights(moments, opts);
  }
  for (const auto& w : oracle.warnings) out.warnings.push_back(w);
  out.r2_star = r2_oos(r, F * oracle.p_star);
  out.gap = out.r2_star - out.r2_ensemble;
  out.delta_tau = oracle.delta_tau;
  out.lambda_min = oracle.lambda_min;

  const double S = r.squaredNorm() / static_cast<double>(tau);
  Eigen::VectorXd abs_gain = Eigen::VectorXd::Zero(L);
  double gain_sum = 0.0;
  double bound_sum = 0.0;
  double decomposition = 0.0;
  double eta_sum = 0.0;
  for (Eigen::Index k = 0; k < tau; ++k) {
    const auto& s = trace.steps[rows[static_cast<std::size_t>(k)]];
    const Eigen::VectorXd f = F.row(k).transpose();
    gain_sum += s.raw.m.dot(s.p);
    abs_gain += s.clipped.m.cwiseAbs();
    eta_sum += s.eta;
    const double f_star = f.dot(oracle.p_star);
    const double f_t = f.dot(s.p);
    bound_sum += (f_star - f_t) * f_star;
    decomposition += (2.0 * r[k] - f_star - f_t) * (f_star - f_t);
  }
  const double n = static_cast<double>(tau);
  out.avg_gain = gain_sum / n;
  out.effective_bound = bound_sum / n;
  out.effective_bound_scaled = out.effective_bound / S;
  out.gap_decomposition = decomposition / n / S;
  out.mean_abs_gain_norm = (abs_gain / n).norm();
  out.eta = eta_sum / n;

  // Model count of the final distribution; evicted models carry no weight.
  const auto& last = trace.steps[rows.back()].p;
  const double active = static_cast<double>((last.array() > 0.0).count());
  const double log_l = std::log(active);
  out.bound_cor3 = out.eta * out.mean_abs_gain_norm + log_l / (n * out.eta);
  out.bound_cor5 = out.eta * std::min(1.0, out.delta_tau) * out.mean_abs_gain_norm +
                   log_l / (n * out.eta);
  return out;
}

Lemma1Check lemma1_check(const PredictionPanel& panel, const EnsembleTrace& trace,
                         const Lemma1Options& options) {
  require_aligned(panel, trace);
  require(options.scale > 0.0, "lemma1 check: scale must be positive");
  if (options.mode == Sigma2Mode::fixed) {
    require(options.fixed_sigma2 > 0.0, "lemma1 check: fixed sigma2 must be positive");
  }
  const auto rows = trace.scored_rows();
  Lemma1Check out;
  out.tau.reserve(rows.size());
  out.d.reserve(rows.size());

  // Raw gains are m = 1 - X/σ² with X independent of σ², so X_p = Xᵀp is
  // computed once (σ² = 1) and rescaled for whichever σ² applies.
  double sum_sq_err = 0.0;
  double sum_sq_ret = 0.0;
  double gain_sum = 0.0;
  double x_sum = 0.0;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto t = rows[k];
    const auto& s = trace.steps[t];
    const double r = panel.realized()[static_cast<Eigen::Index>(t)];
    const Eigen::VectorXd f = panel.forecasts().row(static_cast<Eigen::Index>(t)).transpose();
    const GainVector unit = gain(r, f, WeightDistribution(s.p), 1.0);
    const double x_p = 1.0 - unit.m.dot(s.p);
    x_sum += x_p;
    sum_sq_err += (r - s.combined) * (r - s.combined);
    sum_sq_ret += r * r;
    const double tau = static_cast<double>(k + 1);

    double avg_gain = 0.0;
    switch (options.mode) {
      case Sigma2Mode::estimated:
        gain_sum += 1.0 - x_p / (options.scale * s.sigma2);
        avg_gain = gain_sum / tau;
        break;
      case Sigma2Mode::fixed:
        gain_sum += 1.0 - x_p / (options.scale * options.fixed_sigma2);
        avg_gain = gain_sum / tau;
        break;
      case Sigma2Mode::in_sample: {
        const double s2 = options.scale * sum_sq_ret / tau;
        avg_gain = s2 > 0.0 ? 1.0 - x_sum / tau / s2 : 0.0;
        break;
      }
    }
    const double r2 = sum_sq_ret > 0.0 ? 1.0 - sum_sq_err / sum_sq_ret : 0.0;
    out.tau.push_back(k + 1);
    out.d.push_back(std::abs(r2 - avg_gain));
  }
  out.flagged = !out.d.empty() && !(out.d.back() <= options.flag_threshold);
  return out;
}

Eigen::MatrixXd gain_jacobian(const Eigen::Ref<const Eigen::VectorXd>& forecasts,
                              double sigma2) {
  require(sigma2 > 0.0, "gain jacobian: sigma2 must be positive");
  return -(forecasts * forecasts.transpose()) / sigma2;
}

}  // namespace mwe
