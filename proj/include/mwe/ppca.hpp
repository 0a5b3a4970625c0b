#pragma once

#include <cstddef>
#include <vector>

#include "mwe/core.hpp"

namespace mwe {

struct PpcaOptions {
  std::size_t q = 1;
  double tol = 1e-6;  // relative log-likelihood change
  std::size_t max_iter = 1000;
  double min_observed_fraction = 0.2;
};

/// x ~ N(μ, WWᵀ + σ²I), fitted by EM on the observed entries only.
struct PpcaModel {
  Eigen::MatrixXd W;   // k × q, orthogonal columns ordered by norm
  Eigen::VectorXd mu;  // k
  double sigma2 = 0.0;
  Eigen::MatrixXd F;  // q × t posterior mean scores of the training columns
  std::vector<double> loglik_trace;
  std::size_t iterations = 0;
  bool converged = false;
  // False if any EM step lowered the log-likelihood by more than 1e-9 (relative).
  bool monotone = true;
};

/// `X` is k × t with NaN marking missing entries. Throws ValidationError on
/// q ≥ k, an empty row or column, or too few observed entries.
PpcaModel ppca_fit(const Eigen::Ref<const Eigen::MatrixXd>& X, const PpcaOptions& options = {});

/// Observed-data log-likelihood of X under the model.
double ppca_loglik(const PpcaModel& model, const Eigen::Ref<const Eigen::MatrixXd>& X);

/// Posterior mean scores E[f | x_observed] of each column of X; a column
/// with nothing observed gets the prior mean 0.
Eigen::MatrixXd ppca_project(const PpcaModel& model, const Eigen::Ref<const Eigen::MatrixXd>& X);

/// Fills missing entries with WE[f] + μ and keeps observed entries verbatim.
Eigen::MatrixXd ppca_impute(const PpcaModel& model, const Eigen::Ref<const Eigen::MatrixXd>& X);

}  // namespace mwe
