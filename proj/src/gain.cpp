#include "mwe/gain.hpp"

#include <algorithm>
#include <cmath>

namespace mwe {

double estimate_second_moment(std::span<const double> past_returns,
                              std::size_t min_obs,
                              std::optional<std::size_t> window) {
  if (past_returns.size() < std::max<std::size_t>(min_obs, 1)) {
    throw ValidationError("second moment: " + std::to_string(past_returns.size()) +
                          " observations, need at least " +
                          std::to_string(std::max<std::size_t>(min_obs, 1)));
  }
  std::size_t start = 0;
  if (window && *window < past_returns.size()) start = past_returns.size() - *window;
  double sum = 0.0;
  for (std::size_t i = start; i < past_returns.size(); ++i) {
    sum += past_returns[i] * past_returns[i];
  }
  const double value = sum / static_cast<double>(past_returns.size() - start);
  if (!(value > 0.0)) throw NumericalError("second moment: all-zero return history");
  return value;
}

SecondMomentEstimator::SecondMomentEstimator(std::size_t min_obs,
                                             std::optional<std::size_t> window)
    : min_obs_(std::max<std::size_t>(min_obs, 1)), window_(window) {
  require(!window_ || *window_ >= 1, "second moment window must be positive");
}

void SecondMomentEstimator::observe(double realized) {
  require(std::isfinite(realized), "second moment: non-finite return");
  const double sq = realized * realized;
  ++count_;
  if (window_) {
    recent_.push_back(sq);
    if (recent_.size() > *window_) recent_.pop_front();
    // Recompute rather than subtract so the window sum never drifts.
    sum_sq_ = 0.0;
    for (double v : recent_) sum_sq_ += v;
  } else {
    sum_sq_ += sq;
  }
}

bool SecondMomentEstimator::ready() const {
  return count_ >= min_obs_ && sum_sq_ > 0.0;
}

double SecondMomentEstimator::value() const {
  if (count_ < min_obs_) {
    throw ValidationError("second moment: " + std::to_string(count_) +
                          " observations, need at least " + std::to_string(min_obs_));
  }
  const double n = window_ ? static_cast<double>(recent_.size())
                           : static_cast<double>(count_);
  const double value = sum_sq_ / n;
  if (!(value > 0.0)) throw NumericalError("second moment: all-zero return history");
  return value;
}

Eigen::MatrixXd exploration_matrix(const Eigen::Ref<const Eigen::VectorXd>& forecasts,
                                   const WeightDistribution& p) {
  const auto L = forecasts.size();
  if (static_cast<std::size_t>(L) != p.size()) {
    throw ValidationError("exploration matrix: forecast/weight length mismatch");
  }
  Eigen::MatrixXd xi(L, L);
  for (Eigen::Index i = 0; i < L; ++i) {
    for (Eigen::Index j = 0; j < L; ++j) {
      const auto pj = p.values()[j];
      xi(i, j) = i == j ? -forecasts[i] * forecasts[i] * (1.0 - pj)
                        : forecasts[i] * forecasts[j] * pj;
    }
  }
  return xi;
}

GainVector gain(double realized, const Eigen::Ref<const Eigen::VectorXd>& forecasts,
                const WeightDistribution& p, double sigma2) {
  if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) {
    throw ValidationError("gain: second moment must be positive");
  }
  require(std::isfinite(realized), "gain: non-finite realized return");
  const double ensemble = combine(forecasts, p);
  Eigen::VectorXd m(forecasts.size());
  for (Eigen::Index l = 0; l < forecasts.size(); ++l) {
    const double f = forecasts[l];
    const double err = realized - f;
    const double exploration = f * (ensemble - f);
    m[l] = 1.0 - (err * err + exploration) / sigma2;
  }
  return GainVector::unclipped(std::move(m));
}

GainVector clip_gain(const GainVector& m) {
  GainVector out = GainVector::unclipped(m.m);
  for (Eigen::Index l = 0; l < m.m.size(); ++l) {
    const double v = m.m[l];
    const double c = std::clamp(v, -1.0, 1.0);
    if (c != v) {
      out.clipped[static_cast<std::size_t>(l)] = true;
      out.excess[l] = std::abs(v) - 1.0;
      out.signed_excess[l] = v > 0.0 ? out.excess[l] : -out.excess[l];
    }
    out.m[l] = c;
  }
  return out;
}

ClipAccumulator::ClipAccumulator(std::size_t models)
    : excess_mass(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(models))),
      signed_mass(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(models))) {}

void ClipAccumulator::add(const GainVector& clipped) {
  require(clipped.m.size() == excess_mass.size(), "clip accumulator: size mismatch");
  excess_mass += clipped.excess;
  signed_mass += clipped.signed_excess;
  ++steps;
}

}  // namespace mwe
