#pragma once

#include <string>
#include <vector>

#include "mwe/core.hpp"

namespace mwe {

struct OracleOptions {
  // Reject A when λ_max/λ_min exceeds this.
  double max_condition = 1e12;
  // Add 1e-10·trace(A)/L to the diagonal instead of failing.
  bool ridge_jitter = false;
};

/// A = (1/τ)Σ r̂_t r̂_tᵀ and b = (1/τ)Σ r̂_t r_t.
struct ForecastMoments {
  Eigen::MatrixXd A;
  Eigen::VectorXd b;
  std::size_t tau = 0;
};

ForecastMoments forecast_moments(const Eigen::Ref<const Eigen::MatrixXd>& forecasts,
                                 const Eigen::Ref<const Eigen::VectorXd>& realized);

/// Hindsight-optimal fixed ensemble on the plane 1ᵀp = 1 (entries may be
/// negative).
struct OptimalEnsemble {
  Eigen::VectorXd p_star;
  double delta_tau = 0.0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  double r2_star = 0.0;
  bool ridge_used = false;
  // ‖p*‖₂ ≤ min(1, δ_τ); reported, never enforced.
  bool norm_bound_holds = true;
  std::vector<std::string> warnings;
};

/// Closed form p* = A⁻¹(b - c·1), c = (1ᵀA⁻¹b - 1)/(1ᵀA⁻¹1), together with
/// δ_τ = ‖b - c·1‖₂ / λ_min. Throws NumericalError on an ill-conditioned A
/// unless ridge jitter is enabled. r2_star is left at zero.
OptimalEnsemble solve_optimal_weights(const ForecastMoments& moments,
                                      const OracleOptions& options = {});

OptimalEnsemble optimal_weights(const PredictionPanel& panel,
                                const OracleOptions& options = {});

double delta_tau(const PredictionPanel& panel, const OracleOptions& options = {});

}  // namespace mwe
