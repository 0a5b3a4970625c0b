#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <tuple>
#include <string>
#include <vector>

#include "mwe/core.hpp"
#include "mwe/ppca.hpp"

namespace mwe {

struct AssetReturn {
  Period period;
  std::string asset_id;
  double ret = 0.0;         // decimal return over the month
  double market_cap = 0.0;  // end-of-month capitalization
  std::string sector_code;
};

struct FactorValue {
  Period period;
  std::string asset_id;
  std::string factor;
  double value = 0.0;  // NaN when missing
};

/// Long-format asset data. Membership is read per period from sector_code,
/// so assets may migrate between sectors.
class AssetPanel {
 public:
  AssetPanel(std::vector<AssetReturn> observations, std::vector<FactorValue> factor_values);

  [[nodiscard]] const std::vector<AssetReturn>& observations() const { return observations_; }
  [[nodiscard]] const std::vector<FactorValue>& factor_values() const { return factor_values_; }
  [[nodiscard]] const std::vector<Period>& periods() const { return periods_; }
  [[nodiscard]] const std::vector<std::string>& sectors() const { return sectors_; }
  [[nodiscard]] const std::vector<std::string>& factor_names() const { return factor_names_; }

  /// Value of `factor` for `asset` at period index `t`, if present.
  [[nodiscard]] std::optional<double> factor_value(std::size_t t, const std::string& asset,
                                                   const std::string& factor) const;
  /// Assets carrying `sector` at period index `t`, sorted by id.
  [[nodiscard]] std::vector<std::string> members(std::size_t t, const std::string& sector) const;

 private:
  std::vector<AssetReturn> observations_;
  std::vector<FactorValue> factor_values_;
  std::vector<Period> periods_;
  std::vector<std::string> sectors_;
  std::vector<std::string> factor_names_;
  std::map<std::tuple<int, std::string, std::string>, double> factor_index_;
  std::vector<std::map<std::string, std::vector<std::string>>> members_;
};

enum class Weighting { equal, cap };
std::string to_string(Weighting w);
Weighting parse_weighting(const std::string& text);

struct SectorReturnSeries {
  std::string sector_id;
  std::vector<Period> periods;
  Eigen::VectorXd returns;
  // Cap weighting only: periods that fell back to equal weights because no
  // member had a positive lagged cap.
  std::vector<bool> fallback;
};

/// Equal: mean of member returns. Cap: Σ c_{t-1} r_t / Σ c_{t-1} over members
/// at t, caps taken from the previous period. Every sector must have at least
/// one member in every period of the panel.
std::vector<SectorReturnSeries> sector_returns(const AssetPanel& panel, Weighting weighting);

/// Asset × period matrix of one characteristic over periods [begin, end) for
/// the sector's members; NaN where missing or not a member. Assets with no
/// observation in the window are dropped.
struct CharacteristicMatrix {
  std::vector<std::string> assets;
  Eigen::MatrixXd values;
};
CharacteristicMatrix characteristic_matrix(const AssetPanel& panel, const std::string& sector,
                                           const std::string& factor, std::size_t begin,
                                           std::size_t end);

struct SectorFactor {
  bool available = false;
  std::string reason;    // why it is unavailable
  Eigen::VectorXd z;     // one score per period of the window
  PpcaModel model;       // from the last fit
};

/// First PPCA component of the per-asset standardized characteristic matrix,
/// fitted in-sample on [begin, end).
SectorFactor sector_factor(const AssetPanel& panel, const std::string& sector,
                           const std::string& factor, std::size_t begin, std::size_t end,
                           const PpcaOptions& options = {});

enum class FactorMode {
  causal,  // refit per block on trailing data, project the block out of sample
  full,    // one in-sample fit over the whole panel (looks ahead)
};
std::string to_string(FactorMode m);
FactorMode parse_factor_mode(const std::string& text);

struct FactorSchedule {
  FactorMode mode = FactorMode::causal;
  // Periods [0, first_block) are fitted in-sample; each later block of
  // `block` periods is scored with a fit on the preceding `train_length`.
  std::size_t first_block = 361;
  std::size_t block = 12;
  std::size_t train_length = 360;
  PpcaOptions ppca;
};

/// Factor score series for the whole panel under the schedule.
SectorFactor sector_factor_series(const AssetPanel& panel, const std::string& sector,
                                  const std::string& factor, const FactorSchedule& schedule);

struct SectorPanel {
  std::string sector_id;
  std::vector<Period> periods;
  Eigen::VectorXd returns_eq;
  Eigen::VectorXd returns_cap;
  std::vector<std::string> factor_names;
  Eigen::MatrixXd factors;  // periods × factors, z_{i,t}
  std::vector<bool> cap_fallback;
  std::vector<std::string> dropped_factors;

  [[nodiscard]] const Eigen::VectorXd& returns(Weighting w) const {
    return w == Weighting::cap ? returns_cap : returns_eq;
  }
  [[nodiscard]] std::size_t size() const { return periods.size(); }
};

/// Sector returns under both weightings plus every available factor.
std::vector<SectorPanel> build_sector_panels(const AssetPanel& panel,
                                             const FactorSchedule& schedule);

}  // namespace mwe
