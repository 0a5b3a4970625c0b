#include "mwe/factors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace mwe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// One in-sample PPCA fit with the per-asset standardization it used.
struct WindowFit {
  bool ok = false;
  std::string reason;
  std::vector<std::string> assets;
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  PpcaModel model;
  Eigen::VectorXd z;  // one score per period of the window
};

WindowFit fit_window(const AssetPanel& panel, const std::string& sector,
                     const std::string& factor, std::size_t begin, std::size_t end,
                     const PpcaOptions& options) {
  WindowFit out;
  const auto width = static_cast<Eigen::Index>(end - begin);
  out.z = Eigen::VectorXd::Zero(width);
  auto cm = characteristic_matrix(panel, sector, factor, begin, end);
  const auto k = static_cast<Eigen::Index>(cm.assets.size());
  if (k < 2) {
    out.reason = "fewer than 2 assets with observations";
    return out;
  }
  out.assets = cm.assets;
  out.mean.resize(k);
  out.sd.resize(k);
  Eigen::MatrixXd& X = cm.values;
  for (Eigen::Index i = 0; i < k; ++i) {
    double sum = 0.0;
    double n = 0.0;
    for (Eigen::Index j = 0; j < width; ++j) {
      if (!std::isnan(X(i, j))) {
        sum += X(i, j);
        n += 1.0;
      }
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (Eigen::Index j = 0; j < width; ++j) {
      if (!std::isnan(X(i, j))) ss += (X(i, j) - mean) * (X(i, j) - mean);
    }
    const double sd = n > 1.0 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    out.mean[i] = mean;
    out.sd[i] = sd > 0.0 ? sd : 1.0;
    for (Eigen::Index j = 0; j < width; ++j) {
      if (!std::isnan(X(i, j))) X(i, j) = (X(i, j) - mean) / out.sd[i];
    }
  }

  // Periods with no observation cannot enter the fit; they score 0.
  std::vector<Eigen::Index> cols;
  for (Eigen::Index j = 0; j < width; ++j) {
    if (!X.col(j).array().isNaN().all()) cols.push_back(j);
  }
  Eigen::MatrixXd Xfit(k, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) {
    Xfit.col(static_cast<Eigen::Index>(c)) = X.col(cols[c]);
  }
  PpcaOptions opts = options;
  opts.q = 1;
  try {
    out.model = ppca_fit(Xfit, opts);
  } catch (const ValidationError& e) {
    out.reason = e.what();
    return out;
  } catch (const NumericalError& e) {
    out.reason = e.what();
    return out;
  }
  for (std::size_t c = 0; c < cols.size(); ++c) {
    out.z[cols[c]] = out.model.F(0, static_cast<Eigen::Index>(c));
  }
  out.ok = true;
  return out;
}

// Scores periods [begin, end) with a fit from an earlier window, using that
// window's standardization. Assets unseen in training are ignored.
Eigen::VectorXd project_window(const AssetPanel& panel, const std::string& sector,
                               const std::string& factor, const WindowFit& fit,
                               std::size_t begin, std::size_t end) {
  const auto k = static_cast<Eigen::Index>(fit.assets.size());
  const auto width = static_cast<Eigen::Index>(end - begin);
  Eigen::MatrixXd X = Eigen::MatrixXd::Constant(k, width, kNaN);
  for (Eigen::Index j = 0; j < width; ++j) {
    const auto t = begin + static_cast<std::size_t>(j);
    const auto members = panel.members(t, sector);
    for (Eigen::Index i = 0; i < k; ++i) {
      const auto& asset = fit.assets[static_cast<std::size_t>(i)];
      if (!std::binary_search(members.begin(), members.end(), asset)) continue;
      if (auto v = panel.factor_value(t, asset, factor)) {
        if (!std::isnan(*v)) X(i, j) = (*v - fit.mean[i]) / fit.sd[i];
      }
    }
  }
  return ppca_project(fit.model, X).row(0).transpose();
}

}  // namespace

AssetPanel::AssetPanel(std::vector<AssetReturn> observations,
                       std::vector<FactorValue> factor_values)
    : observations_(std::move(observations)), factor_values_(std::move(factor_values)) {
  require(!observations_.empty(), "asset panel: no return records");
  std::set<std::pair<int, std::string>> keys;
  std::set<int> period_set;
  std::set<std::string> sector_set;
  for (std::size_t i = 0; i < observations_.size(); ++i) {
    const auto& o = observations_[i];
    const std::string where = "return record " + std::to_string(i + 1);
    require(!o.asset_id.empty(), where + ": empty asset id");
    require(!o.sector_code.empty(), where + ": missing sector code");
    require(std::isfinite(o.ret), where + ": non-finite return");
    require(std::isfinite(o.market_cap) && o.market_cap >= 0.0,
            where + ": market cap must be finite and non-negative");
    require(keys.insert({o.period.index(), o.asset_id}).second,
            where + ": duplicate (period, asset) " + o.period.str() + ", " + o.asset_id);
    period_set.insert(o.period.index());
    sector_set.insert(o.sector_code);
  }
  for (int p : period_set) periods_.push_back(Period::from_index(p));
  for (std::size_t t = 1; t < periods_.size(); ++t) {
    require(periods_[t].index() == periods_[t - 1].index() + 1,
            "asset panel: months missing between " + periods_[t - 1].str() + " and " +
                periods_[t].str());
  }
  sectors_.assign(sector_set.begin(), sector_set.end());

  const int first = periods_.front().index();
  members_.resize(periods_.size());
  for (const auto& o : observations_) {
    members_[static_cast<std::size_t>(o.period.index() - first)][o.sector_code].push_back(
        o.asset_id);
  }
  for (auto& by_sector : members_) {
    for (auto& [sector, assets] : by_sector) std::sort(assets.begin(), assets.end());
  }

  std::set<std::string> names;
  for (std::size_t i = 0; i < factor_values_.size(); ++i) {
    const auto& f = factor_values_[i];
    const std::string where = "factor record " + std::to_string(i + 1);
    require(!f.factor.empty(), where + ": empty factor name");
    require(!std::isinf(f.value), where + ": infinite value");
    const int t = f.period.index() - first;
    require(t >= 0 && t < static_cast<int>(periods_.size()),
            where + ": period " + f.period.str() + " outside the return panel");
    require(factor_index_.emplace(std::make_tuple(t, f.asset_id, f.factor), f.value).second,
            where + ": duplicate (period, asset, factor) " + f.period.str() + ", " +
                f.asset_id + ", " + f.factor);
    names.insert(f.factor);
  }
  factor_names_.assign(names.begin(), names.end());
}

std::optional<double> AssetPanel::factor_value(std::size_t t, const std::string& asset,
                                               const std::string& factor) const {
  const auto it = factor_index_.find(std::make_tuple(static_cast<int>(t), asset, factor));
  if (it == factor_index_.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> AssetPanel::members(std::size_t t, const std::string& sector) const {
  require(t < members_.size(), "asset panel: period index out of range");
  const auto it = members_[t].find(sector);
  return it == members_[t].end() ? std::vector<std::string>{} : it->second;
}

std::string to_string(Weighting w) { return w == Weighting::cap ? "cap" : "equal"; }

Weighting parse_weighting(const std::string& text) {
  if (text == "equal") return Weighting::equal;
  if (text == "cap") return Weighting::cap;
  throw ValidationError("unknown weighting '" + text + "' (expected equal or cap)");
}

std::vector<SectorReturnSeries> sector_returns(const AssetPanel& panel, Weighting weighting) {
  const auto& periods = panel.periods();
  std::map<std::pair<int, std::string>, const AssetReturn*> by_key;
  for (const auto& o : panel.observations()) by_key[{o.period.index(), o.asset_id}] = &o;

  std::vector<SectorReturnSeries> out;
  for (const auto& sector : panel.sectors()) {
    SectorReturnSeries s;
    s.sector_id = sector;
    s.periods = periods;
    s.returns.resize(static_cast<Eigen::Index>(periods.size()));
    s.fallback.assign(periods.size(), false);
    for (std::size_t t = 0; t < periods.size(); ++t) {
      const auto members = panel.members(t, sector);
      if (members.empty()) {
        throw ValidationError("sector " + sector + " has no assets in " + periods[t].str());
      }
      double eq = 0.0;
      double num = 0.0;
      double den = 0.0;
      for (const auto& a : members) {
        const double r = by_key.at({periods[t].index(), a})->ret;
        eq += r;
        if (t > 0) {
          const auto prev = by_key.find({periods[t].index() - 1, a});
          if (prev != by_key.end()) {
            num += prev->second->market_cap * r;
            den += prev->second->market_cap;
          }
        }
      }
      eq /= static_cast<double>(members.size());
      double value = eq;
      if (weighting == Weighting::cap) {
        if (den > 0.0) {
          value = num / den;
        } else {
          s.fallback[t] = true;
        }
      }
      s.returns[static_cast<Eigen::Index>(t)] = value;
    }
    out.push_back(std::move(s));
  }
  return out;
}

CharacteristicMatrix characteristic_matrix(const AssetPanel& panel, const std::string& sector,
                                           const std::string& factor, std::size_t begin,
                                           std::size_t end) {
  require(begin < end && end <= panel.periods().size(),
          "characteristic matrix: invalid period range");
  std::set<std::string> assets;
  for (std::size_t t = begin; t < end; ++t) {
    for (const auto& a : panel.members(t, sector)) {
      const auto v = panel.factor_value(t, a, factor);
      if (v && !std::isnan(*v)) assets.insert(a);
    }
  }
  CharacteristicMatrix cm;
  cm.assets.assign(assets.begin(), assets.end());
  const auto width = static_cast<Eigen::Index>(end - begin);
  cm.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(cm.assets.size()), width, kNaN);
  for (Eigen::Index j = 0; j < width; ++j) {
    const auto t = begin + static_cast<std::size_t>(j);
    const auto members = panel.members(t, sector);
    for (std::size_t i = 0; i < cm.assets.size(); ++i) {
      if (!std::binary_search(members.begin(), members.end(), cm.assets[i])) continue;
      if (const auto v = panel.factor_value(t, cm.assets[i], factor)) {
        cm.values(static_cast<Eigen::Index>(i), j) = *v;
      }
    }
  }
  return cm;
}

SectorFactor sector_factor(const AssetPanel& panel, const std::string& sector,
                           const std::string& factor, std::size_t begin, std::size_t end,
                           const PpcaOptions& options) {
  auto fit = fit_window(panel, sector, factor, begin, end, options);
  SectorFactor out;
  out.available = fit.ok;
  out.reason = fit.reason;
  out.z = std::move(fit.z);
  out.model = std::move(fit.model);
  return out;
}

std::string to_string(FactorMode m) { return m == FactorMode::full ? "full" : "causal"; }

FactorMode parse_factor_mode(const std::string& text) {
  if (text == "causal") return FactorMode::causal;
  if (text == "full") return FactorMode::full;
  throw ValidationError("unknown factor mode '" + text + "' (expected causal or full)");
}

SectorFactor sector_factor_series(const AssetPanel& panel, const std::string& sector,
                                  const std::string& factor, const FactorSchedule& schedule) {
  const std::size_t T = panel.periods().size();
  if (schedule.mode == FactorMode::full || T <= schedule.first_block) {
    return sector_factor(panel, sector, factor, 0, T, schedule.ppca);
  }
  require(schedule.block >= 1 && schedule.train_length >= 2 && schedule.first_block >= 2,
          "factor schedule: invalid block sizes");

  SectorFactor out = sector_factor(panel, sector, factor, 0, schedule.first_block, schedule.ppca);
  if (!out.available) return out;
  Eigen::VectorXd z = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(T));
  z.head(static_cast<Eigen::Index>(schedule.first_block)) = out.z;
  for (std::size_t b = schedule.first_block; b < T; b += schedule.block) {
    const std::size_t e = std::min(T, b + schedule.block);
    const std::size_t start = b > schedule.train_length ? b - schedule.train_length : 0;
    const auto fit = fit_window(panel, sector, factor, start, b, schedule.ppca);
    if (!fit.ok) continue;  // block keeps z = 0
    z.segment(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(e - b)) =
        project_window(panel, sector, factor, fit, b, e);
    out.model = fit.model;
  }
  out.z = std::move(z);
  return out;
}

std::vector<SectorPanel> build_sector_panels(const AssetPanel& panel,
                                             const FactorSchedule& schedule) {
  const auto eq = sector_returns(panel, Weighting::equal);
  const auto cap = sector_returns(panel, Weighting::cap);
  std::vector<SectorPanel> out;
  for (std::size_t s = 0; s < eq.size(); ++s) {
    SectorPanel sp;
    sp.sector_id = eq[s].sector_id;
    sp.periods = eq[s].periods;
    sp.returns_eq = eq[s].returns;
    sp.returns_cap = cap[s].returns;
    sp.cap_fallback = cap[s].fallback;
    std::vector<Eigen::VectorXd> columns;
    for (const auto& name : panel.factor_names()) {
      auto f = sector_factor_series(panel, sp.sector_id, name, schedule);
      if (!f.available) {
        sp.dropped_factors.push_back(name + ": " + f.reason);
        continue;
      }
      sp.factor_names.push_back(name);
      columns.push_back(std::move(f.z));
    }
    sp.factors.resize(static_cast<Eigen::Index>(sp.periods.size()),
                      static_cast<Eigen::Index>(columns.size()));
    for (std::size_t c = 0; c < columns.size(); ++c) {
      sp.factors.col(static_cast<Eigen::Index>(c)) = columns[c];
    }
    out.push_back(std::move(sp));
  }
  return out;
}

}  // namespace mwe
