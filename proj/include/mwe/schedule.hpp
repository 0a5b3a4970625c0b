#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mwe/core.hpp"
#include "mwe/factors.hpp"
#include "mwe/forecasters.hpp"

namespace mwe {

enum class WindowKind { rolling, expanding };
std::string to_string(WindowKind k);
WindowKind parse_window_kind(const std::string& text);

struct RollingSchedule {
  std::size_t train_length = 360;
  std::size_t refit_every = 12;
  WindowKind window_kind = WindowKind::rolling;
  std::size_t horizon = 1;

  void validate() const;
  /// Index of the first forecast target: train_length + 1, since the target
  /// at s is paired with predictors from s - 1.
  [[nodiscard]] std::size_t first_target() const { return train_length + 1; }
};

/// A spec that threw on one window. Its forecasts for the window are set to
/// 0, the naive forecast, so the panel stays complete.
struct WindowFailure {
  std::string model_id;
  Period refit;
  std::string message;
};

struct WindowRecord {
  std::string model_id;
  Period refit;
  std::size_t train_rows = 0;
  double hyper = 0.0;
  std::vector<std::string> warnings;
};

struct ScheduleResult {
  PredictionPanel panel;
  std::vector<WindowFailure> failures;
  std::vector<WindowRecord> fits;
};

/// Refits every spec at each refit date on the training targets before it,
/// then forecasts the next refit_every months. The forecast for month s uses
/// the predictors of month s - 1.
ScheduleResult run_schedule(const SectorPanel& sector, const std::vector<ForecasterSpec>& specs,
                            const RollingSchedule& schedule,
                            Weighting weighting = Weighting::equal);

/// Same protocol on raw arrays: row t of Z holds the predictors known at the
/// end of period t, r[t] the return realized over period t.
ScheduleResult run_schedule(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                            const Eigen::Ref<const Eigen::VectorXd>& r,
                            const std::vector<Period>& periods,
                            const std::vector<ForecasterSpec>& specs,
                            const RollingSchedule& schedule);

}  // namespace mwe
