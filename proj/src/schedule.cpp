#include "mwe/schedule.hpp"

#include <algorithm>

namespace mwe {

std::string to_string(WindowKind k) {
  return k == WindowKind::expanding ? "expanding" : "rolling";
}

WindowKind parse_window_kind(const std::string& text) {
  if (text == "rolling") return WindowKind::rolling;
  if (text == "expanding") return WindowKind::expanding;
  throw ValidationError("unknown window kind '" + text + "' (expected rolling or expanding)");
}

void RollingSchedule::validate() const {
  require(train_length >= 24, "schedule: train_length must be at least 24 months");
  require(refit_every >= 1, "schedule: refit_every must be at least 1");
  require(horizon == 1, "schedule: only one-month horizons are supported");
}

ScheduleResult run_schedule(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                            const Eigen::Ref<const Eigen::VectorXd>& r,
                            const std::vector<Period>& periods,
                            const std::vector<ForecasterSpec>& specs,
                            const RollingSchedule& schedule) {
  schedule.validate();
  require(!specs.empty(), "schedule: no forecaster specs");
  const auto T = static_cast<std::size_t>(r.size());
  require(static_cast<std::size_t>(Z.rows()) == T && periods.size() == T,
          "schedule: predictors, returns and periods differ in length");
  const std::size_t first = schedule.first_target();
  require(T > first, "schedule: " + std::to_string(T) + " periods, need more than " +
                         std::to_string(first) + " for one window");

  std::vector<std::unique_ptr<Forecaster>> models;
  std::vector<std::string> ids;
  for (const auto& s : specs) {
    models.push_back(make_forecaster(s));
    ids.push_back(models.back()->id());
  }
  std::vector<std::string> sorted_ids = ids;
  std::sort(sorted_ids.begin(), sorted_ids.end());
  require(std::adjacent_find(sorted_ids.begin(), sorted_ids.end()) == sorted_ids.end(),
          "schedule: duplicate forecaster ids");

  const std::size_t n_out = T - first;
  Eigen::MatrixXd forecasts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_out),
                                                    static_cast<Eigen::Index>(specs.size()));
  ScheduleResult out{PredictionPanel(Eigen::MatrixXd::Zero(1, 1), Eigen::VectorXd::Zero(1),
                                     {"_"}, {periods.front()}),
                     {}, {}};

  for (std::size_t R = first; R < T; R += schedule.refit_every) {
    const std::size_t begin =
        schedule.window_kind == WindowKind::rolling ? R - schedule.train_length : 1;
    const auto n_train = static_cast<Eigen::Index>(R - begin);
    // Targets [begin, R) with predictors one period earlier.
    const Eigen::MatrixXd Zt = Z.middleRows(static_cast<Eigen::Index>(begin - 1), n_train);
    const Eigen::VectorXd rt = r.segment(static_cast<Eigen::Index>(begin), n_train);
    const std::size_t end = std::min(T, R + schedule.refit_every);
    for (std::size_t m = 0; m < models.size(); ++m) {
      try {
        auto fit = models[m]->fit(Zt, rt);
        for (std::size_t s = R; s < end; ++s) {
          const double f = fit.predictor->predict(Z.row(static_cast<Eigen::Index>(s - 1)));
          require(std::isfinite(f), "non-finite forecast");
          forecasts(static_cast<Eigen::Index>(s - first), static_cast<Eigen::Index>(m)) = f;
        }
        out.fits.push_back({ids[m], periods[R], static_cast<std::size_t>(n_train), fit.hyper,
                            std::move(fit.warnings)});
      } catch (const std::exception& e) {
        for (std::size_t s = R; s < end; ++s) {
          forecasts(static_cast<Eigen::Index>(s - first), static_cast<Eigen::Index>(m)) = 0.0;
        }
        out.failures.push_back({ids[m], periods[R], e.what()});
      }
    }
  }

  std::vector<Period> out_periods(periods.begin() + static_cast<std::ptrdiff_t>(first),
                                  periods.end());
  out.panel = PredictionPanel(std::move(forecasts), r.tail(static_cast<Eigen::Index>(n_out)),
                              ids, std::move(out_periods));
  return out;
}

ScheduleResult run_schedule(const SectorPanel& sector, const std::vector<ForecasterSpec>& specs,
                            const RollingSchedule& schedule, Weighting weighting) {
  return run_schedule(sector.factors, sector.returns(weighting), sector.periods, specs,
                      schedule);
}

}  // namespace mwe
