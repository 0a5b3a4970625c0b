#include "mwe/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mwe {

ForecastMoments forecast_moments(const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                                 const Eigen::Ref<const Eigen::VectorXd>& realized) {
  require(forecasts.rows() == realized.size(), "forecast moments: row mismatch");
  require(forecasts.rows() >= 1, "forecast moments: empty panel");
  const double tau = static_cast<double>(forecasts.rows());
  ForecastMoments m;
  m.A = (forecasts.transpose() * forecasts) / tau;
  m.b = (forecasts.transpose() * realized) / tau;
  m.tau = static_cast<std::size_t>(forecasts.rows());
  return m;
}

OptimalEnsemble solve_optimal_weights(const ForecastMoments& moments,
                                      const OracleOptions& options) {
  const auto L = moments.A.rows();
  require(L >= 1 && moments.A.cols() == L && moments.b.size() == L,
          "optimal weights: inconsistent moment shapes");
  OptimalEnsemble out;
  Eigen::MatrixXd A = moments.A;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(A, Eigen::EigenvaluesOnly);
  out.lambda_min = eig.eigenvalues().minCoeff();
  out.lambda_max = eig.eigenvalues().maxCoeff();
  const bool ill = !(out.lambda_min > 0.0) ||
                   out.lambda_max / out.lambda_min > options.max_condition;
  if (ill) {
    std::ostringstream msg;
    msg << "forecast second-moment matrix is ill-conditioned (lambda_min="
        << out.lambda_min << ", lambda_max=" << out.lambda_max << ")";
    if (!options.ridge_jitter) {
      throw NumericalError(msg.str() + "; enable ridge jitter to regularize");
    }
    const double jitter = 1e-10 * A.trace() / static_cast<double>(L);
    A.diagonal().array() += jitter > 0.0 ? jitter : 1e-300;
    out.ridge_used = true;
    out.warnings.push_back(msg.str() + "; ridge jitter applied");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig2(A, Eigen::EigenvaluesOnly);
    out.lambda_min = eig2.eigenvalues().minCoeff();
    out.lambda_max = eig2.eigenvalues().maxCoeff();
  }

  const Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(L);
  const Eigen::VectorXd a_inv_b = ldlt.solve(moments.b);
  const Eigen::VectorXd a_inv_1 = ldlt.solve(ones);
  const double c = (ones.dot(a_inv_b) - 1.0) / ones.dot(a_inv_1);
  out.p_star = a_inv_b - c * a_inv_1;
  out.delta_tau = (moments.b - c * ones).norm() / out.lambda_min;
  if (!out.p_star.allFinite() || !std::isfinite(out.delta_tau)) {
    throw NumericalError("optimal weights: solve produced non-finite values");
  }
  out.norm_bound_holds =
      out.p_star.norm() <= std::min(1.0, out.delta_tau) * (1.0 + 1e-12);
  if (!out.norm_bound_holds) {
    out.warnings.push_back("norm bound ||p*|| <= min(1, delta_tau) violated");
  }
  return out;
}

OptimalEnsemble optimal_weights(const PredictionPanel& panel,
                                const OracleOptions& options) {
  auto out = solve_optimal_weights(
      forecast_moments(panel.forecasts(), panel.realized()), options);
  out.r2_star = r2_oos(panel.realized(), panel.forecasts() * out.p_star);
  return out;
}

double delta_tau(const PredictionPanel& panel, const OracleOptions& options) {
  return solve_optimal_weights(forecast_moments(panel.forecasts(), panel.realized()),
                               options)
      .delta_tau;
}

}  // namespace mwe
