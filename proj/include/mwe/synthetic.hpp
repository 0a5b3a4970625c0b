#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mwe/core.hpp"
#include "mwe/factors.hpp"
#include "mwe/portfolio.hpp"

namespace mwe {

/// The model that is best from `start` (period index) onward.
struct Regime {
  std::size_t start = 0;
  std::size_t best = 0;
};

/// Forecast stream for ensemble experiments. Returns are r = μ + ε with
/// μ ~ N(0, snr·noise_sd²); model l forecasts μ + its own noise, whose SD is
/// good_noise·sd(μ) while l is the regime's best model and bad_noise·sd(μ)
/// otherwise.
struct StreamSpec {
  std::size_t models = 3;
  std::size_t tau = 2000;
  double noise_sd = 0.05;
  double snr = 0.05;
  double good_noise = 0.5;
  double bad_noise = 2.0;
  std::vector<Regime> regimes{{0, 0}};
  // Extra returns before the stream, generated the same way, to prime σ̂².
  std::size_t warmup = 12;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticStream {
  PredictionPanel panel;
  Eigen::VectorXd warmup_returns;
  Eigen::VectorXd mu;                // true conditional mean per period
  std::vector<std::size_t> best;     // best model per period
};

SyntheticStream generate_stream(const StreamSpec& spec);

/// Asset-level data for the full pipeline. Each sector has latent AR(1)
/// characteristics; assets observe them with loadings and noise (some
/// entries missing at random); expected sector returns load on one latent
/// characteristic per regime.
struct SyntheticSpec {
  std::size_t sectors = 6;
  std::size_t assets_per_sector = 4;
  std::size_t factors = 3;
  std::size_t tau = 480;
  double snr = 0.05;
  double return_sd = 0.05;     // total monthly SD of a sector return
  double char_noise = 0.3;     // characteristic noise relative to the latent SD
  double missing_rate = 0.1;
  double ar = 0.8;
  // Driving latent characteristic from `start` onward; `best` indexes factors.
  std::vector<Regime> regimes{{0, 0}};
  // Adds one asset per sector a third of the way through the sample.
  bool churn = true;
  Period start{1980, 1};
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticData {
  AssetPanel assets;
  FactorTable factor_returns;             // mkt, smb, hml, mom
  std::vector<std::string> recession;     // "recession" / "expansion" per period
  std::vector<std::string> activity;      // "positive" / "negative" per period
  Eigen::MatrixXd mu;                     // periods × sectors, E[r_t | info at t-1]
  std::vector<std::string> sector_ids;
  std::vector<std::size_t> driver;        // driving characteristic per period
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

}  // namespace mwe
