#include "mwe/core.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

namespace mwe {

namespace {

int parse_int(std::string_view text, std::string_view whole) {
  int value = 0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last) {
    throw ValidationError("invalid period '" + std::string(whole) +
                          "' (expected YYYY-MM)");
  }
  return value;
}

}  // namespace

Period Period::parse(std::string_view text) {
  // Accept YYYY-MM and YYYY-MM-DD; the day is ignored.
  if (text.size() != 7 && text.size() != 10) {
    throw ValidationError("invalid period '" + std::string(text) +
                          "' (expected YYYY-MM)");
  }
  if (text[4] != '-' || (text.size() == 10 && text[7] != '-')) {
    throw ValidationError("invalid period '" + std::string(text) +
                          "' (expected YYYY-MM)");
  }
  Period p{parse_int(text.substr(0, 4), text), parse_int(text.substr(5, 2), text)};
  if (p.month < 1 || p.month > 12) {
    throw ValidationError("invalid month in period '" + std::string(text) + "'");
  }
  return p;
}

Period Period::from_index(int index) {
  const int year = index >= 0 ? index / 12 : -((-index + 11) / 12);
  return Period{year, index - year * 12 + 1};
}

std::string Period::str() const {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02d", year, month);
  return buf;
}

void require(bool condition, const std::string& message) {
  if (!condition) throw ValidationError(message);
}

void require_finite(const Eigen::Ref<const Eigen::MatrixXd>& values,
                    const std::string& what) {
  if (!values.allFinite()) throw ValidationError(what + " contains non-finite values");
}

Eigen::VectorXd to_eigen(std::span<const double> values) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[static_cast<Eigen::Index>(i)] = values[i];
  }
  return out;
}

std::vector<double> to_std(const Eigen::Ref<const Eigen::VectorXd>& values) {
  return {values.data(), values.data() + values.size()};
}

PredictionPanel::PredictionPanel(Eigen::MatrixXd forecasts,
                                 Eigen::VectorXd realized,
                                 std::vector<std::string> model_ids,
                                 std::vector<Period> period_ids)
    : forecasts_(std::move(forecasts)),
      realized_(std::move(realized)),
      model_ids_(std::move(model_ids)),
      period_ids_(std::move(period_ids)) {
  require(forecasts_.rows() >= 1, "prediction panel needs at least one period");
  require(forecasts_.cols() >= 1, "prediction panel needs at least one model");
  require(realized_.size() == forecasts_.rows(),
          "prediction panel: realized length does not match forecast rows");
  require(model_ids_.size() == models(),
          "prediction panel: model id count does not match forecast columns");
  require(period_ids_.size() == periods(),
          "prediction panel: period id count does not match forecast rows");
  require_finite(forecasts_, "prediction panel forecasts");
  require_finite(realized_, "prediction panel realized returns");
  for (std::size_t t = 1; t < period_ids_.size(); ++t) {
    require(period_ids_[t - 1] < period_ids_[t],
            "prediction panel: periods must be strictly increasing (at " +
                period_ids_[t].str() + ")");
  }
}

PredictionPanel PredictionPanel::slice(std::size_t begin, std::size_t end) const {
  require(begin < end && end <= periods(), "prediction panel: bad slice range");
  const auto b = static_cast<Eigen::Index>(begin);
  const auto n = static_cast<Eigen::Index>(end - begin);
  return PredictionPanel(forecasts_.middleRows(b, n), realized_.segment(b, n),
                         model_ids_,
                         {period_ids_.begin() + b, period_ids_.begin() + b + n});
}

PredictionPanel PredictionPanel::select_models(
    std::span<const std::size_t> columns) const {
  Eigen::MatrixXd f(forecasts_.rows(), static_cast<Eigen::Index>(columns.size()));
  std::vector<std::string> ids;
  for (std::size_t j = 0; j < columns.size(); ++j) {
    require(columns[j] < models(), "prediction panel: model column out of range");
    f.col(static_cast<Eigen::Index>(j)) =
        forecasts_.col(static_cast<Eigen::Index>(columns[j]));
    ids.push_back(model_ids_[columns[j]]);
  }
  return PredictionPanel(std::move(f), realized_, std::move(ids), period_ids_);
}

WeightDistribution::WeightDistribution(Eigen::VectorXd p) : p_(std::move(p)) {
  require(p_.size() >= 1, "weight distribution must be non-empty");
  require_finite(p_, "weight distribution");
  require((p_.array() >= 0.0).all(), "weight distribution has negative entries");
  const double sum = p_.sum();
  require(std::abs(sum - 1.0) <= kSumTolerance,
          "weight distribution does not sum to one");
}

WeightDistribution WeightDistribution::uniform(std::size_t models) {
  require(models >= 1, "uniform distribution needs at least one model");
  return WeightDistribution(Eigen::VectorXd::Constant(
      static_cast<Eigen::Index>(models), 1.0 / static_cast<double>(models)));
}

GainVector GainVector::unclipped(Eigen::VectorXd values) {
  GainVector g;
  const auto n = values.size();
  g.m = std::move(values);
  g.clipped.assign(static_cast<std::size_t>(n), false);
  g.excess = Eigen::VectorXd::Zero(n);
  g.signed_excess = Eigen::VectorXd::Zero(n);
  return g;
}

double combine(const Eigen::Ref<const Eigen::VectorXd>& forecasts,
               const WeightDistribution& p) {
  if (static_cast<std::size_t>(forecasts.size()) != p.size()) {
    throw ValidationError("combine: forecast length " +
                          std::to_string(forecasts.size()) +
                          " does not match weight length " +
                          std::to_string(p.size()));
  }
  require_finite(forecasts, "combine: forecasts");
  return forecasts.dot(p.values());
}

double r2_oos(const Eigen::Ref<const Eigen::VectorXd>& realized,
              const Eigen::Ref<const Eigen::VectorXd>& predicted) {
  require(realized.size() >= 1, "r2_oos: empty series");
  require(realized.size() == predicted.size(),
          "r2_oos: realized and predicted lengths differ");
  require_finite(realized, "r2_oos: realized");
  require_finite(predicted, "r2_oos: predicted");
  const double denom = realized.squaredNorm();
  if (!(denom > 0.0)) {
    throw NumericalError("r2_oos: realized series is identically zero");
  }
  return 1.0 - (realized - predicted).squaredNorm() / denom;
}

}  // namespace mwe
