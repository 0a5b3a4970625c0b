#pragma once

#include <compare>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace mwe {

// Bad inputs, shapes or preconditions. Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Singular systems, undefined statistics, non-convergence that cannot be
// recovered. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Calendar month, ISO-8601 month precision ("YYYY-MM").
struct Period {
  int year = 1970;
  int month = 1;

  static Period parse(std::string_view text);
  static Period from_index(int index);

  [[nodiscard]] int index() const { return year * 12 + (month - 1); }
  [[nodiscard]] Period next() const { return from_index(index() + 1); }
  [[nodiscard]] Period prev() const { return from_index(index() - 1); }
  [[nodiscard]] std::string str() const;

  friend bool operator==(const Period&, const Period&) = default;
  friend auto operator<=>(const Period& a, const Period& b) {
    return a.index() <=> b.index();
  }
};

/// Forecasts of L models over tau periods for one sector, plus the realized
/// returns. Returns are decimals (0.01 = 1%).
class PredictionPanel {
 public:
  PredictionPanel(Eigen::MatrixXd forecasts, Eigen::VectorXd realized,
                  std::vector<std::string> model_ids,
                  std::vector<Period> period_ids);

  [[nodiscard]] std::size_t periods() const {
    return static_cast<std::size_t>(forecasts_.rows());
  }
  [[nodiscard]] std::size_t models() const {
    return static_cast<std::size_t>(forecasts_.cols());
  }
  [[nodiscard]] const Eigen::MatrixXd& forecasts() const { return forecasts_; }
  [[nodiscard]] const Eigen::VectorXd& realized() const { return realized_; }
  [[nodiscard]] const std::vector<std::string>& model_ids() const {
    return model_ids_;
  }
  [[nodiscard]] const std::vector<Period>& period_ids() const {
    return period_ids_;
  }

  /// Rows [begin, end) as a new panel.
  [[nodiscard]] PredictionPanel slice(std::size_t begin, std::size_t end) const;
  /// Keeps the listed model columns, in the given order.
  [[nodiscard]] PredictionPanel select_models(
      std::span<const std::size_t> columns) const;

 private:
  Eigen::MatrixXd forecasts_;
  Eigen::VectorXd realized_;
  std::vector<std::string> model_ids_;
  std::vector<Period> period_ids_;
};

/// Ensemble weights on the probability simplex.
class WeightDistribution {
 public:
  static constexpr double kSumTolerance = 1e-12;

  explicit WeightDistribution(Eigen::VectorXd p);
  static WeightDistribution uniform(std::size_t models);

  [[nodiscard]] const Eigen::VectorXd& values() const { return p_; }
  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(p_.size());
  }
  [[nodiscard]] double operator[](std::size_t i) const {
    return p_[static_cast<Eigen::Index>(i)];
  }

 private:
  Eigen::VectorXd p_;
};

struct GainVector {
  Eigen::VectorXd m;
  // Set where clip_gain clamped the entry.
  std::vector<bool> clipped;
  // max(|m| - 1, 0) of the pre-clip value; zero for unclipped vectors.
  Eigen::VectorXd excess;
  // sign(m) * max(|m| - 1, 0) of the pre-clip value.
  Eigen::VectorXd signed_excess;

  static GainVector unclipped(Eigen::VectorXd values);
  [[nodiscard]] std::size_t size() const {
    return static_cast<std::size_t>(m.size());
  }
};

/// Ensemble forecast r̂ᵀp.
double combine(const Eigen::Ref<const Eigen::VectorXd>& forecasts,
               const WeightDistribution& p);

/// Out-of-sample R² with a zero-forecast benchmark (denominator not demeaned).
double r2_oos(const Eigen::Ref<const Eigen::VectorXd>& realized,
              const Eigen::Ref<const Eigen::VectorXd>& predicted);

// Helpers shared by the modules below.
void require(bool condition, const std::string& message);
void require_finite(const Eigen::Ref<const Eigen::MatrixXd>& values,
                    const std::string& what);
Eigen::VectorXd to_eigen(std::span<const double> values);
std::vector<double> to_std(const Eigen::Ref<const Eigen::VectorXd>& values);

}  // namespace mwe
