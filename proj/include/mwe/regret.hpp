#pragma once

#include <string>
#include <vector>

#include "mwe/core.hpp"
#include "mwe/mwum.hpp"
#include "mwe/oracle.hpp"

namespace mwe {

/// Regret monitoring for one ensemble run, computed over the scored periods.
struct RegretDiagnostics {
  std::size_t tau = 0;
  double r2_ensemble = 0.0;
  double r2_star = 0.0;
  double gap = 0.0;  // r2_star - r2_ensemble
  // (1/τ)Σ m⁽ᵗ⁾ᵀp⁽ᵗ⁾ with raw gains and the σ̂² used online.
  double avg_gain = 0.0;
  // (1/τ)Σ (p* - p⁽ᵗ⁾)ᵀ r̂ r̂ᵀ p*, in squared-return units.
  double effective_bound = 0.0;
  // The same sum divided by S = (1/τ)Σ r², which puts it on the R² scale.
  double effective_bound_scaled = 0.0;
  // (1/τ)Σ (2r - r̂ᵀp* - r̂ᵀp⁽ᵗ⁾)(r̂ᵀp* - r̂ᵀp⁽ᵗ⁾)/S; equals `gap` exactly.
  double gap_decomposition = 0.0;
  double mean_abs_gain_norm = 0.0;  // ‖(1/τ)Σ|m̃|‖₂
  double eta = 0.0;                 // mean η over scored steps
  double delta_tau = 0.0;
  double lambda_min = 0.0;
  double bound_cor3 = 0.0;  // η‖·‖ + log L/(τη)
  double bound_cor5 = 0.0;  // η·min(1, δ)‖·‖ + log L/(τη)
  std::vector<std::string> warnings;
};

/// Aligns the trace with the panel row by row. Only scored steps enter the
/// statistics; the oracle is fitted on the same rows. Falls back to ridge
/// jitter (with a warning) when the forecast moments are ill-conditioned.
RegretDiagnostics regret_report(const PredictionPanel& panel, const EnsembleTrace& trace);

enum class Sigma2Mode {
  estimated,  // σ̂² the ensemble used online
  fixed,      // one injected value for every step
  in_sample,  // prefix second moment (1/τ')Σ_{t≤τ'} r², the exact case
};

struct Lemma1Options {
  Sigma2Mode mode = Sigma2Mode::estimated;
  double fixed_sigma2 = 0.0;
  // Multiplies whatever σ² the mode produces; for misspecification checks.
  double scale = 1.0;
  // Final discrepancy above this sets `flagged`.
  double flag_threshold = 0.05;
};

struct Lemma1Check {
  std::vector<std::size_t> tau;  // prefix lengths, 1..τ over scored steps
  std::vector<double> d;         // |R²(τ') - (1/τ')Σ m⁽ᵗ⁾ᵀp⁽ᵗ⁾|
  bool flagged = false;
};

/// Prefix discrepancy between realized R² and average gain. Gains are
/// recomputed from the trace's p⁽ᵗ⁾ under the requested σ².
Lemma1Check lemma1_check(const PredictionPanel& panel, const EnsembleTrace& trace,
                         const Lemma1Options& options = {});

/// ∂m/∂p = -r̂ r̂ᵀ/σ². Raw gains are affine in p, so
/// m(p) = m(q) + J (p - q) holds exactly for any two distributions.
Eigen::MatrixXd gain_jacobian(const Eigen::Ref<const Eigen::VectorXd>& forecasts,
                              double sigma2);

}  // namespace mwe
