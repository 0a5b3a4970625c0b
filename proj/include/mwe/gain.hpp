#pragma once

#include <cstddef>
#include <deque>
#include <optional>
#include <span>

#include "mwe/core.hpp"

namespace mwe {

/// Mean of squared past returns. `window` limits the average to the most
/// recent observations; std::nullopt means expanding.
double estimate_second_moment(std::span<const double> past_returns,
                              std::size_t min_obs = 12,
                              std::optional<std::size_t> window = std::nullopt);

/// Online version of estimate_second_moment. The owner calls value() before
/// observe() for the period being scored, so the estimate only ever uses
/// returns strictly before that period.
class SecondMomentEstimator {
 public:
  explicit SecondMomentEstimator(std::size_t min_obs = 12,
                                 std::optional<std::size_t> window = std::nullopt);

  void observe(double realized);
  [[nodiscard]] bool ready() const;
  [[nodiscard]] double value() const;
  [[nodiscard]] std::size_t count() const { return count_; }
  [[nodiscard]] std::size_t min_obs() const { return min_obs_; }
  [[nodiscard]] std::optional<std::size_t> window() const { return window_; }

 private:
  std::size_t min_obs_;
  std::optional<std::size_t> window_;
  std::deque<double> recent_;  // squared returns, fixed window only
  double sum_sq_ = 0.0;
  std::size_t count_ = 0;
};

/// ξ matrix of the exploration term: off-diagonal r̂_i r̂_j p_j, diagonal
/// -r̂_i²(1 - p_i).
Eigen::MatrixXd exploration_matrix(const Eigen::Ref<const Eigen::VectorXd>& forecasts,
                                   const WeightDistribution& p);

/// Raw (unclipped) gain vector
///   m_l = 1 - (r - r̂_l)²/σ² - (ξ·1)_l/σ²,
/// using the row-sum identity (ξ·1)_l = r̂_l (r̂ᵀp - r̂_l).
GainVector gain(double realized, const Eigen::Ref<const Eigen::VectorXd>& forecasts,
                const WeightDistribution& p, double sigma2);

/// Entrywise clamp to [-1, 1], recording which entries moved.
GainVector clip_gain(const GainVector& m);

/// Running per-model clip statistics, used by the eviction rule.
struct ClipAccumulator {
  Eigen::VectorXd excess_mass;  // Σ_t max(|m| - 1, 0)
  Eigen::VectorXd signed_mass;  // Σ_t sign(m) max(|m| - 1, 0)
  std::size_t steps = 0;

  explicit ClipAccumulator(std::size_t models = 0);
  void add(const GainVector& clipped);
};

}  // namespace mwe
