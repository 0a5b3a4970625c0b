#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mwe/core.hpp"
#include "mwe/gain.hpp"

namespace mwe {

enum class EtaKind { fixed, cor3, cor5, feasible };

/// 16 log-spaced learning rates in [1e-3, 0.5] by default.
std::vector<double> default_eta_grid(std::size_t n = 16, double lo = 1e-3,
                                     double hi = 0.5);

/// How the learning rate is resolved at every update. The grid is also the
/// fallback pool for the closed-form rules when they degenerate.
struct EtaPolicy {
  EtaKind kind = EtaKind::feasible;
  double fixed_eta = 0.5;
  std::vector<double> grid = default_eta_grid();
  std::size_t lookback = 12;
  // Replays start from the live weights at the window start; false restarts
  // from w = 1.
  bool warm_start = true;

  static EtaPolicy fixed(double eta);
  static EtaPolicy cor3();
  static EtaPolicy cor5();
  static EtaPolicy feasible(std::vector<double> grid = default_eta_grid(),
                            std::size_t lookback = 12);
  void validate() const;
};

std::string to_string(EtaKind kind);
EtaKind parse_eta_kind(const std::string& text);

struct EtaChoice {
  double eta = 0.5;
  // True when the rule fell back to a default instead of its formula.
  bool flagged = false;
  std::string note;
};

/// min(1/2, η); non-positive η is an error.
double clip_eta(double eta);

/// Closed form √(log L · scale / ‖mean|m|‖₂), clipped. `scale` is 1 for the
/// plain rule and min(1, δ_τ) for the R²-specific one.
EtaChoice eta_closed_form(const Eigen::Ref<const Eigen::VectorXd>& mean_abs_gain,
                          std::size_t models, double scale,
                          std::span<const double> grid);

EtaChoice eta_cor3(std::span<const GainVector> gain_history, std::size_t models,
                   std::span<const double> grid = default_eta_grid());

EtaChoice eta_cor5(std::span<const GainVector> gain_history, std::size_t models,
                   double delta_tau, std::span<const double> grid = default_eta_grid());

/// One scored period as needed to replay the recursion with another η.
struct ReplayRecord {
  double realized = 0.0;
  Eigen::VectorXd forecasts;
  double sigma2 = 0.0;
  Eigen::VectorXd log_w_before;
};

/// Replays the last `lookback` records for every grid η and returns the one
/// whose replayed ensemble had the highest R²_oos; ties go to the smaller η.
/// `active` masks evicted models out of the replay.
EtaChoice eta_feasible(std::span<const ReplayRecord> history, const EtaPolicy& policy,
                       const std::vector<bool>& active);

struct EvictionPolicy {
  enum class Mode { off, naive_streak, clip_mass };
  Mode mode = Mode::off;
  // Trailing window for the naive-benchmark R² of each model.
  std::size_t window = 24;
  // Consecutive negative windows before eviction.
  std::size_t streak = 24;
  // clip_mass mode: evict once excess clip mass per scored step exceeds this.
  double clip_rate = 0.25;
};

struct EnsembleConfig {
  EtaPolicy eta;
  EvictionPolicy eviction;
  std::size_t min_obs = 12;
  std::optional<std::size_t> sigma_window;
};

struct StepDiagnostics {
  bool scored = false;
  Eigen::VectorXd p;  // distribution used for the combined forecast
  double combined = 0.0;
  double realized = 0.0;
  double sigma2 = 0.0;  // NaN when not scored
  GainVector raw;
  GainVector clipped;
  double eta = 0.0;  // NaN when not scored
  bool eta_flagged = false;
  std::string note;
  std::vector<std::size_t> evicted_now;
};

/// Weights, second-moment estimate and the bookkeeping the η rules and the
/// eviction rule need. Weights are stored as logarithms so long streams of
/// negative gains never underflow to zero.
class EnsembleState {
 public:
  EnsembleState(std::size_t models, EnsembleConfig config);

  /// Scores the period with the current distribution, then updates.
  StepDiagnostics step(double realized, const Eigen::Ref<const Eigen::VectorXd>& forecasts);

  /// w ← w(1 + η m̃) on active models; m̃ must already be clipped.
  void apply_gains(const GainVector& clipped, double eta);

  /// Feeds returns observed before the first scored period to σ̂².
  void prime(std::span<const double> past_returns);

  [[nodiscard]] WeightDistribution distribution() const;
  [[nodiscard]] Eigen::VectorXd weights() const;
  [[nodiscard]] const Eigen::VectorXd& log_weights() const { return log_w_; }
  [[nodiscard]] std::size_t models() const {
    return static_cast<std::size_t>(log_w_.size());
  }
  [[nodiscard]] std::size_t steps_applied() const { return t_; }
  [[nodiscard]] std::size_t periods_seen() const { return periods_seen_; }
  [[nodiscard]] const std::vector<bool>& evicted() const { return evicted_; }
  [[nodiscard]] std::size_t active_count() const;
  [[nodiscard]] const std::vector<GainVector>& gain_history() const {
    return gain_history_;
  }
  [[nodiscard]] const EnsembleConfig& config() const { return config_; }
  [[nodiscard]] const SecondMomentEstimator& second_moment() const { return sigma_; }
  [[nodiscard]] const ClipAccumulator& clip_stats() const { return clip_; }
  [[nodiscard]] const std::vector<std::size_t>& negative_streaks() const {
    return streaks_;
  }
  /// Naive-benchmark R² of each model over the trailing eviction window (NaN
  /// until the window is full).
  [[nodiscard]] std::vector<double> trailing_r2() const;
  /// Mean |m̃| per model over scored steps.
  [[nodiscard]] Eigen::VectorXd mean_abs_gain() const;

  struct Snapshot {
    Eigen::VectorXd weights;
    std::vector<bool> evicted;
    std::size_t t = 0;
    EtaPolicy policy;
  };
  [[nodiscard]] Snapshot snapshot() const;
  /// Restores weights, eviction set and counter. Histories start empty, so
  /// history-based η rules fall back until they refill.
  static EnsembleState restore(const Snapshot& snapshot, EnsembleConfig config);

 private:
  [[nodiscard]] std::vector<bool> active_mask() const;
  EtaChoice resolve_eta() const;
  void track_eviction(double realized, const Eigen::Ref<const Eigen::VectorXd>& forecasts,
                      StepDiagnostics& diag);
  friend std::vector<bool> evict_check(const EnsembleState&, const EvictionPolicy&);

  EnsembleConfig config_;
  Eigen::VectorXd log_w_;
  std::vector<bool> evicted_;
  std::size_t t_ = 0;
  std::size_t periods_seen_ = 0;
  SecondMomentEstimator sigma_;
  std::vector<GainVector> gain_history_;
  ClipAccumulator clip_;
  Eigen::VectorXd abs_gain_sum_;
  std::size_t scored_ = 0;
  Eigen::MatrixXd a_sum_;
  Eigen::VectorXd b_sum_;
  std::deque<ReplayRecord> replay_;
  std::deque<Eigen::VectorXd> window_sq_err_;
  std::deque<double> window_sq_ret_;
  std::vector<std::size_t> streaks_;
};

EnsembleState init(std::size_t models, EtaPolicy policy);
EnsembleState init(std::size_t models, EnsembleConfig config);

/// Value-semantics wrapper around EnsembleState::step.
std::pair<EnsembleState, StepDiagnostics> step(
    EnsembleState state, double realized,
    const Eigen::Ref<const Eigen::VectorXd>& forecasts);

/// Set of models that should be evicted under `policy` given the state's
/// tracked statistics. Always leaves at least one active model.
std::vector<bool> evict_check(const EnsembleState& state, const EvictionPolicy& policy);

struct EnsembleTrace {
  std::vector<std::string> model_ids;
  std::vector<Period> period_ids;
  std::vector<StepDiagnostics> steps;

  [[nodiscard]] Eigen::VectorXd combined() const;
  [[nodiscard]] std::vector<std::size_t> scored_rows() const;
};

/// Runs the recursion over every row of the panel.
EnsembleTrace run_ensemble(const PredictionPanel& panel, const EnsembleConfig& config,
                           std::span<const double> warmup_returns = {});

}  // namespace mwe
