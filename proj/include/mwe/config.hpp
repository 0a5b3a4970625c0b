#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mwe/factors.hpp"
#include "mwe/forecasters.hpp"
#include "mwe/mwum.hpp"
#include "mwe/portfolio.hpp"
#include "mwe/schedule.hpp"
#include "mwe/synthetic.hpp"

namespace mwe {

/// Everything a pipeline run depends on. Parsed from flat `key = value`
/// text; unknown keys are errors so typos never pass silently.
struct RunConfig {
  std::uint64_t seed = 0;
  bool has_seed = false;

  // Inputs. An empty asset path means the synth stage provides the data.
  std::filesystem::path assets;
  std::filesystem::path characteristics;
  std::filesystem::path factor_returns;
  std::filesystem::path indicators;
  std::filesystem::path external_predictions;  // optional extra models
  std::filesystem::path out_dir = "mwe_out";

  SyntheticSpec synthetic;

  RollingSchedule schedule{120, 12, WindowKind::rolling, 1};
  FactorMode factor_mode = FactorMode::causal;
  PpcaOptions ppca;
  std::vector<ForecasterSpec> models;

  EnsembleConfig ensemble;
  // ensemble.eta.grid is rebuilt from these whenever one changes.
  std::size_t eta_grid_n = 16;
  double eta_grid_lo = 1e-3;
  double eta_grid_hi = 0.5;
  // Policies run side by side; the primary one drives the portfolios.
  std::vector<EtaKind> policies{EtaKind::feasible, EtaKind::cor3, EtaKind::cor5, EtaKind::fixed};

  std::vector<std::size_t> scheme_sizes;  // empty: standard scheme for N
  std::vector<double> costs_bps{5.0, 10.0, 15.0};
  std::vector<Weighting> weightings{Weighting::equal, Weighting::cap};
  bool charge_initial = false;
  bool cost_per_point = false;
  std::optional<std::size_t> nw_lags;  // nullopt: automatic

  RunConfig();

  [[nodiscard]] bool synthetic_inputs() const { return assets.empty(); }
  [[nodiscard]] FactorSchedule factor_schedule() const;
  [[nodiscard]] QuantileScheme scheme(std::size_t n_sectors) const;

  /// Checks ranges, the mandatory seed and that every referenced file exists.
  void validate() const;

  /// Sorted `key = value` lines covering every setting except out_dir.
  [[nodiscard]] std::string canonical() const;
  /// 16 hex digits of FNV-1a over canonical().
  [[nodiscard]] std::string hash() const;

  /// Applies one `key = value` setting.
  void set(const std::string& key, const std::string& value);
};

RunConfig parse_config(const std::string& text, const std::string& source = "config");
RunConfig load_config(const std::filesystem::path& path);

std::vector<double> parse_double_list(const std::string& text);

}  // namespace mwe
