#include "mwe/portfolio.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace mwe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::size_t QuantileScheme::total() const {
  return std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
}

void QuantileScheme::validate() const {
  require(!sizes.empty(), "quantile scheme: no buckets");
  require(labels.size() == sizes.size(), "quantile scheme: one label per bucket required");
  for (auto s : sizes) require(s >= 1, "quantile scheme: every bucket needs a sector");
}

std::vector<std::string> rank_labels(const std::vector<std::size_t>& sizes) {
  const std::size_t B = sizes.size();
  std::vector<std::string> labels(B);
  std::size_t rank = 1;  // counted from the top bucket down
  for (std::size_t k = 0; k < B; ++k) {
    const std::size_t b = B - 1 - k;
    const std::size_t lo = rank;
    const std::size_t hi = rank + sizes[b] - 1;
    if (B > 1 && b == B - 1) {
      labels[b] = "Top " + std::to_string(sizes[b]);
    } else if (B > 1 && b == 0) {
      labels[b] = "Bottom " + std::to_string(sizes[b]);
    } else {
      labels[b] = lo == hi ? std::to_string(lo) : std::to_string(lo) + "-" + std::to_string(hi);
    }
    rank = hi + 1;
  }
  return labels;
}

QuantileScheme QuantileScheme::from_sizes(std::vector<std::size_t> sizes) {
  QuantileScheme s;
  s.labels = rank_labels(sizes);
  s.sizes = std::move(sizes);
  s.validate();
  return s;
}

QuantileScheme QuantileScheme::standard(std::size_t n_sectors) {
  const std::vector<std::size_t> pattern{5, 15, 20, 15, 5};
  require(n_sectors >= pattern.size(),
          "quantile scheme: need at least 5 sectors for the standard scheme, got " +
              std::to_string(n_sectors));
  if (n_sectors == 60) return from_sizes(pattern);

  std::vector<std::size_t> sizes(pattern.size(), 1);
  std::size_t left = n_sectors - pattern.size();
  std::vector<double> quota(pattern.size());
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    quota[i] = static_cast<double>(left) * static_cast<double>(pattern[i]) / 60.0;
    const auto whole = static_cast<std::size_t>(std::floor(quota[i]));
    sizes[i] += whole;
    quota[i] -= static_cast<double>(whole);
  }
  left = n_sectors - std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  std::vector<std::size_t> order(pattern.size());
  std::iota(order.begin(), order.end(), 0);
  // Largest remainder, then the larger bucket, then the middle-most index.
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (quota[a] != quota[b]) return quota[a] > quota[b];
    if (pattern[a] != pattern[b]) return pattern[a] > pattern[b];
    return a > b;
  });
  for (std::size_t k = 0; k < left; ++k) ++sizes[order[k % order.size()]];
  return from_sizes(sizes);
}

std::vector<std::size_t> rank_and_bucket(const std::vector<double>& forecasts,
                                         const std::vector<std::string>& sector_ids,
                                         const QuantileScheme& scheme) {
  scheme.validate();
  const std::size_t N = forecasts.size();
  require(sector_ids.size() == N, "rank_and_bucket: one id per forecast required");
  require(scheme.total() == N, "rank_and_bucket: scheme covers " +
                                   std::to_string(scheme.total()) + " sectors, got " +
                                   std::to_string(N));
  for (double f : forecasts) require(std::isfinite(f), "rank_and_bucket: non-finite forecast");
  std::vector<std::size_t> order(N);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (forecasts[a] != forecasts[b]) return forecasts[a] < forecasts[b];
    return sector_ids[a] < sector_ids[b];
  });
  std::vector<std::size_t> bucket(N);
  std::size_t pos = 0;
  for (std::size_t b = 0; b < scheme.sizes.size(); ++b) {
    for (std::size_t k = 0; k < scheme.sizes[b]; ++k) bucket[order[pos++]] = b;
  }
  return bucket;
}

Eigen::MatrixXd bucket_weights(const std::vector<std::vector<std::size_t>>& assignments,
                               std::size_t bucket, std::size_t n_buckets) {
  require(bucket < n_buckets, "bucket_weights: bucket index out of range");
  require(!assignments.empty(), "bucket_weights: no periods");
  const std::size_t N = assignments.front().size();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(assignments.size()),
                                            static_cast<Eigen::Index>(N));
  for (std::size_t t = 0; t < assignments.size(); ++t) {
    require(assignments[t].size() == N, "bucket_weights: ragged assignments");
    const auto n = std::count(assignments[t].begin(), assignments[t].end(), bucket);
    require(n > 0, "bucket_weights: empty bucket in period " + std::to_string(t));
    for (std::size_t i = 0; i < N; ++i) {
      if (assignments[t][i] == bucket) {
        w(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = 1.0 / static_cast<double>(n);
      }
    }
  }
  return w;
}

BucketReturns bucket_returns(const std::vector<std::vector<std::size_t>>& assignments,
                             const Eigen::Ref<const Eigen::MatrixXd>& sector_returns,
                             std::size_t n_buckets) {
  require(n_buckets >= 1, "bucket_returns: no buckets");
  require(static_cast<Eigen::Index>(assignments.size()) == sector_returns.rows(),
          "bucket_returns: assignments and returns differ in length");
  BucketReturns out;
  out.gross.resize(sector_returns.rows(), static_cast<Eigen::Index>(n_buckets));
  for (std::size_t b = 0; b < n_buckets; ++b) {
    const Eigen::MatrixXd w = bucket_weights(assignments, b, n_buckets);
    require(w.cols() == sector_returns.cols(), "bucket_returns: sector count mismatch");
    out.gross.col(static_cast<Eigen::Index>(b)) =
        (w.array() * sector_returns.array()).rowwise().sum();
  }
  out.top_bottom = out.gross.col(static_cast<Eigen::Index>(n_buckets - 1)) - out.gross.col(0);
  return out;
}

Eigen::VectorXd turnover(const Eigen::Ref<const Eigen::MatrixXd>& weights,
                         const Eigen::Ref<const Eigen::MatrixXd>& sector_returns,
                         bool charge_initial) {
  require(weights.rows() == sector_returns.rows() && weights.cols() == sector_returns.cols(),
          "turnover: weights and returns differ in shape");
  const auto T = weights.rows();
  Eigen::VectorXd out = Eigen::VectorXd::Zero(T);
  if (T == 0) return out;
  if (charge_initial) out[0] = weights.row(0).cwiseAbs().sum();
  for (Eigen::Index t = 1; t < T; ++t) {
    Eigen::RowVectorXd drifted =
        weights.row(t - 1).array() * (1.0 + sector_returns.row(t - 1).array());
    const double gross = weights.row(t - 1).sum();
    const double value = drifted.sum();
    // Renormalize to the previous gross exposure; a wiped-out book keeps its weights.
    if (value != 0.0 && std::isfinite(value)) {
      drifted *= gross / value;
    } else {
      drifted = weights.row(t - 1);
    }
    out[t] = (weights.row(t) - drifted).cwiseAbs().sum();
  }
  return out;
}

Eigen::VectorXd apply_costs(const Eigen::Ref<const Eigen::VectorXd>& gross,
                            const Eigen::Ref<const Eigen::VectorXd>& turnover, double cost_bps,
                            const CostOptions& options) {
  require(gross.size() == turnover.size(), "apply_costs: series length mismatch");
  require(cost_bps >= 0.0 && std::isfinite(cost_bps), "apply_costs: cost must be non-negative");
  double c = cost_bps / 1e4;
  if (options.per_percentage_point) c *= 100.0;
  return gross - c * turnover;
}

PerfStats perf_stats(const Eigen::Ref<const Eigen::VectorXd>& monthly) {
  require(monthly.size() >= 1, "perf_stats: empty series");
  require_finite(monthly, "perf_stats series");
  PerfStats s;
  s.n = static_cast<std::size_t>(monthly.size());
  s.short_series = s.n < 12;
  const double n = static_cast<double>(s.n);
  const double mean = monthly.mean();
  s.ann_return = 12.0 * mean;
  const double var = s.n > 1 ? (monthly.array() - mean).square().sum() / (n - 1.0) : 0.0;
  s.ann_vol = std::sqrt(12.0 * var);
  s.zero_vol = !(s.ann_vol > 0.0);
  s.sharpe = s.zero_vol ? kNaN : s.ann_return / s.ann_vol;

  const double downside = std::sqrt(monthly.array().min(0.0).square().mean());
  if (downside > 0.0) {
    s.sortino = s.ann_return / (std::sqrt(12.0) * downside);
  } else {
    s.sortino = s.ann_return > 0.0 ? std::numeric_limits<double>::infinity() : kNaN;
  }

  double level = 1.0;
  double peak = 1.0;
  for (Eigen::Index t = 0; t < monthly.size(); ++t) {
    level *= 1.0 + monthly[t];
    peak = std::max(peak, level);
    s.max_drawdown = std::max(s.max_drawdown, 1.0 - level / peak);
  }
  s.max_drawdown = std::clamp(s.max_drawdown, 0.0, 1.0);
  return s;
}

std::size_t newey_west_default_lag(std::size_t T) {
  return static_cast<std::size_t>(std::floor(4.0 * std::pow(static_cast<double>(T) / 100.0, 2.0 / 9.0)));
}

RegressionResult hac_regression(const Eigen::Ref<const Eigen::VectorXd>& y,
                                const Eigen::Ref<const Eigen::MatrixXd>& X,
                                std::optional<std::size_t> lags) {
  const auto T = y.size();
  require(X.rows() == T, "regression: rows of y and X differ");
  require(T > X.cols() + 1, "regression: too few observations");
  require_finite(y, "regression target");
  require_finite(X, "regression factors");
  Eigen::MatrixXd D(T, X.cols() + 1);
  D.col(0).setOnes();
  D.rightCols(X.cols()) = X;

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(D);
  if (qr.rank() < D.cols()) {
    throw NumericalError("regression: factor matrix is rank-deficient");
  }
  RegressionResult out;
  out.nobs = static_cast<std::size_t>(T);
  out.lags = lags.value_or(newey_west_default_lag(out.nobs));
  out.coef = qr.solve(y);
  const Eigen::VectorXd u = y - D * out.coef;

  const Eigen::MatrixXd bread = (D.transpose() * D).inverse();
  const Eigen::MatrixXd scores = D.array().colwise() * u.array();  // x_t u_t
  Eigen::MatrixXd S = scores.transpose() * scores;
  for (std::size_t l = 1; l <= out.lags && static_cast<Eigen::Index>(l) < T; ++l) {
    const double w = 1.0 - static_cast<double>(l) / static_cast<double>(out.lags + 1);
    const auto L = static_cast<Eigen::Index>(l);
    const Eigen::MatrixXd G = scores.bottomRows(T - L).transpose() * scores.topRows(T - L);
    S += w * (G + G.transpose());
  }
  const Eigen::MatrixXd V = bread * S * bread;
  out.se = V.diagonal().array().sqrt();
  out.t = out.coef.cwiseQuotient(out.se);
  return out;
}

std::size_t FactorTable::column(const std::string& name) const {
  const auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw ValidationError("factor table has no column '" + name + "'");
  return static_cast<std::size_t>(it - names.begin());
}

std::string to_string(AlphaModel m) {
  switch (m) {
    case AlphaModel::capm: return "capm";
    case AlphaModel::ff3: return "ff3";
    case AlphaModel::carhart4: return "carhart4";
  }
  return "unknown";
}

std::vector<std::string> alpha_model_factors(AlphaModel m) {
  switch (m) {
    case AlphaModel::capm: return {"mkt"};
    case AlphaModel::ff3: return {"mkt", "smb", "hml"};
    case AlphaModel::carhart4: return {"mkt", "smb", "hml", "mom"};
  }
  return {};
}

RegressionResult factor_alphas(const Eigen::Ref<const Eigen::VectorXd>& excess,
                               const std::vector<Period>& periods, const FactorTable& factors,
                               AlphaModel model, std::optional<std::size_t> lags) {
  require(static_cast<Eigen::Index>(periods.size()) == excess.size(),
          "factor alphas: one period per observation required");
  std::map<int, Eigen::Index> row_of;
  for (std::size_t i = 0; i < factors.periods.size(); ++i) {
    row_of[factors.periods[i].index()] = static_cast<Eigen::Index>(i);
  }
  const auto names = alpha_model_factors(model);
  Eigen::MatrixXd X(excess.size(), static_cast<Eigen::Index>(names.size()));
  for (std::size_t t = 0; t < periods.size(); ++t) {
    const auto it = row_of.find(periods[t].index());
    if (it == row_of.end()) {
      throw ValidationError("factor alphas: no factor returns for " + periods[t].str());
    }
    for (std::size_t k = 0; k < names.size(); ++k) {
      X(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) =
          factors.values(it->second, static_cast<Eigen::Index>(factors.column(names[k])));
    }
  }
  return hac_regression(excess, X, lags);
}

std::vector<SubsampleCell> subsample_stats(const Eigen::Ref<const Eigen::VectorXd>& series,
                                           const std::vector<std::string>& labels,
                                           std::optional<std::size_t> lags) {
  require(static_cast<Eigen::Index>(labels.size()) == series.size(),
          "subsample stats: one label per observation required");
  std::map<std::string, std::vector<double>> cells;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    cells[labels[t]].push_back(series[static_cast<Eigen::Index>(t)]);
  }
  std::vector<SubsampleCell> out;
  for (const auto& [label, values] : cells) {
    SubsampleCell c;
    c.label = label;
    c.n = values.size();
    const Eigen::VectorXd v = to_eigen(values);
    c.mean = v.mean();
    c.t_stat = kNaN;
    if (c.n >= 2) {
      const auto reg = hac_regression(v, Eigen::MatrixXd(v.size(), 0), lags);
      c.t_stat = reg.t_alpha();
    }
    out.push_back(c);
  }
  return out;
}

std::vector<std::string> lagged_sign_indicator(const Eigen::Ref<const Eigen::VectorXd>& market) {
  std::vector<std::string> out(static_cast<std::size_t>(market.size()));
  for (Eigen::Index t = 0; t < market.size(); ++t) {
    if (t == 0) {
      out[0] = "na";
    } else {
      out[static_cast<std::size_t>(t)] = market[t - 1] >= 0.0 ? "up" : "down";
    }
  }
  return out;
}

}  // namespace mwe
