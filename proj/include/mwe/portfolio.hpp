#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mwe/core.hpp"

namespace mwe {

/// Bucket sizes listed from the lowest-ranked bucket up, with display labels.
struct QuantileScheme {
  std::vector<std::size_t> sizes;
  std::vector<std::string> labels;

  [[nodiscard]] std::size_t total() const;
  [[nodiscard]] std::size_t buckets() const { return sizes.size(); }
  void validate() const;

  /// 5/15/20/15/5 for 60 sectors; other N get the same proportions by
  /// largest remainder with at least one sector per bucket (N ≥ 5).
  static QuantileScheme standard(std::size_t n_sectors);
  /// Explicit sizes, bottom first. Labels are generated from the ranks.
  static QuantileScheme from_sizes(std::vector<std::size_t> sizes);
};

/// Labels counted from the top: "Top k", "a-b", ..., "Bottom k".
std::vector<std::string> rank_labels(const std::vector<std::size_t>& sizes);

/// Bucket index per sector (0 = lowest forecasts). Ascending sort on the
/// forecast with ties broken by sector id.
std::vector<std::size_t> rank_and_bucket(const std::vector<double>& forecasts,
                                         const std::vector<std::string>& sector_ids,
                                         const QuantileScheme& scheme);

/// Equal weights 1/n_b on members of bucket `bucket`, per period (T × N).
Eigen::MatrixXd bucket_weights(const std::vector<std::vector<std::size_t>>& assignments,
                               std::size_t bucket, std::size_t n_buckets);

struct BucketReturns {
  Eigen::MatrixXd gross;       // T × B
  Eigen::VectorXd top_bottom;  // top bucket minus bottom bucket
};

/// `assignments[t]` is the bucket per sector held over period t and
/// `sector_returns` (T × N) the returns realized over it.
BucketReturns bucket_returns(const std::vector<std::vector<std::size_t>>& assignments,
                             const Eigen::Ref<const Eigen::MatrixXd>& sector_returns,
                             std::size_t n_buckets);

/// Σ|w_t - w̃_{t-1}| with w̃ the previous weights drifted by their realized
/// returns and renormalized. Period 0 counts the build from cash (Σ|w_0|)
/// only if `charge_initial`.
Eigen::VectorXd turnover(const Eigen::Ref<const Eigen::MatrixXd>& weights,
                         const Eigen::Ref<const Eigen::MatrixXd>& sector_returns,
                         bool charge_initial = false);

struct CostOptions {
  // Charge bps per percentage point of turnover instead of per unit.
  bool per_percentage_point = false;
};

/// gross_t - (bps/10⁴)·turnover_t.
Eigen::VectorXd apply_costs(const Eigen::Ref<const Eigen::VectorXd>& gross,
                            const Eigen::Ref<const Eigen::VectorXd>& turnover, double cost_bps,
                            const CostOptions& options = {});

struct PerfStats {
  std::size_t n = 0;
  double ann_return = 0.0;
  double ann_vol = 0.0;
  double sharpe = 0.0;  // NaN when vol is zero
  double max_drawdown = 0.0;
  double sortino = 0.0;  // +inf without downside and positive mean
  bool short_series = false;
  bool zero_vol = false;
};

/// Annualized with 12 periods per year. Drawdowns are measured on the
/// compounded value with a starting level of 1.
PerfStats perf_stats(const Eigen::Ref<const Eigen::VectorXd>& monthly);

/// floor(4 (T/100)^(2/9)).
std::size_t newey_west_default_lag(std::size_t T);

struct RegressionResult {
  Eigen::VectorXd coef;  // intercept first
  Eigen::VectorXd se;
  Eigen::VectorXd t;
  std::size_t lags = 0;
  std::size_t nobs = 0;
  [[nodiscard]] double alpha() const { return coef[0]; }
  [[nodiscard]] double t_alpha() const { return t[0]; }
};

/// OLS of y on an intercept plus X with Newey-West (Bartlett) standard
/// errors; lag 0 gives White's HC0.
RegressionResult hac_regression(const Eigen::Ref<const Eigen::VectorXd>& y,
                                const Eigen::Ref<const Eigen::MatrixXd>& X,
                                std::optional<std::size_t> lags = std::nullopt);

/// Monthly factor returns keyed by period.
struct FactorTable {
  std::vector<Period> periods;
  std::vector<std::string> names;
  Eigen::MatrixXd values;  // periods × names

  [[nodiscard]] std::size_t column(const std::string& name) const;
};

enum class AlphaModel { capm, ff3, carhart4 };
std::string to_string(AlphaModel m);
std::vector<std::string> alpha_model_factors(AlphaModel m);

/// Aligns the series with the factor table by period; every period of the
/// series must be present in the table.
RegressionResult factor_alphas(const Eigen::Ref<const Eigen::VectorXd>& excess,
                               const std::vector<Period>& periods, const FactorTable& factors,
                               AlphaModel model, std::optional<std::size_t> lags = std::nullopt);

struct SubsampleCell {
  std::string label;
  std::size_t n = 0;
  double mean = 0.0;
  double t_stat = 0.0;  // NaN below 2 observations
};

/// Mean and Newey-West t-statistic per label, labels in sorted order.
std::vector<SubsampleCell> subsample_stats(const Eigen::Ref<const Eigen::VectorXd>& series,
                                           const std::vector<std::string>& labels,
                                           std::optional<std::size_t> lags = std::nullopt);

/// "up"/"down" from the sign of the previous period's market return; the
/// first period has no predecessor and is labeled "na".
std::vector<std::string> lagged_sign_indicator(const Eigen::Ref<const Eigen::VectorXd>& market);

}  // namespace mwe
