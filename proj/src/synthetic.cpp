#include "mwe/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mwe/rng.hpp"

namespace mwe {

namespace {

void validate_regimes(const std::vector<Regime>& regimes, std::size_t n_choices,
                      const char* what) {
  require(!regimes.empty(), std::string(what) + ": at least one regime is required");
  require(regimes.front().start == 0, std::string(what) + ": first regime must start at 0");
  for (std::size_t k = 0; k < regimes.size(); ++k) {
    require(regimes[k].best < n_choices, std::string(what) + ": regime index out of range");
    if (k > 0) {
      require(regimes[k].start > regimes[k - 1].start,
              std::string(what) + ": regime starts must increase");
    }
  }
}

std::vector<std::size_t> expand_regimes(const std::vector<Regime>& regimes, std::size_t n) {
  std::vector<std::size_t> out(n);
  std::size_t k = 0;
  for (std::size_t t = 0; t < n; ++t) {
    while (k + 1 < regimes.size() && regimes[k + 1].start <= t) ++k;
    out[t] = regimes[k].best;
  }
  return out;
}

}  // namespace

void StreamSpec::validate() const {
  require(models >= 1 && tau >= 1, "stream: models and tau must be at least 1");
  require(noise_sd > 0.0 && snr > 0.0, "stream: noise_sd and snr must be positive");
  require(good_noise >= 0.0 && bad_noise >= 0.0, "stream: model noise must be non-negative");
  validate_regimes(regimes, models, "stream");
}

SyntheticStream generate_stream(const StreamSpec& spec) {
  spec.validate();
  Rng ret_rng(spec.seed, "stream.returns");
  Rng model_rng(spec.seed, "stream.models");
  const double mu_sd = std::sqrt(spec.snr) * spec.noise_sd;
  const auto L = static_cast<Eigen::Index>(spec.models);
  const auto tau = static_cast<Eigen::Index>(spec.tau);

  Eigen::VectorXd warmup(static_cast<Eigen::Index>(spec.warmup));
  for (Eigen::Index t = 0; t < warmup.size(); ++t) {
    warmup[t] = mu_sd * ret_rng.normal() + spec.noise_sd * ret_rng.normal();
  }

  const auto best = expand_regimes(spec.regimes, spec.tau);
  Eigen::MatrixXd F(tau, L);
  Eigen::VectorXd r(tau);
  Eigen::VectorXd mu(tau);
  for (Eigen::Index t = 0; t < tau; ++t) {
    mu[t] = mu_sd * ret_rng.normal();
    r[t] = mu[t] + spec.noise_sd * ret_rng.normal();
    for (Eigen::Index l = 0; l < L; ++l) {
      const bool good = static_cast<std::size_t>(l) == best[static_cast<std::size_t>(t)];
      const double sd = (good ? spec.good_noise : spec.bad_noise) * mu_sd;
      F(t, l) = mu[t] + sd * model_rng.normal();
    }
  }

  std::vector<std::string> ids;
  for (Eigen::Index l = 0; l < L; ++l) ids.push_back("m" + std::to_string(l + 1));
  std::vector<Period> periods;
  const Period origin{2000, 1};
  for (Eigen::Index t = 0; t < tau; ++t) {
    periods.push_back(Period::from_index(origin.index() + static_cast<int>(spec.warmup) +
                                         static_cast<int>(t)));
  }
  return {PredictionPanel(std::move(F), std::move(r), std::move(ids), std::move(periods)),
          std::move(warmup), std::move(mu), best};
}

void SyntheticSpec::validate() const {
  require(sectors >= 1 && assets_per_sector >= 1 && factors >= 1 && tau >= 2,
          "synthetic: counts must be at least 1 (tau at least 2)");
  require(snr > 0.0, "synthetic: snr must be positive");
  require(return_sd > 0.0 && char_noise >= 0.0, "synthetic: invalid noise settings");
  require(missing_rate >= 0.0 && missing_rate < 1.0, "synthetic: missing_rate must be in [0, 1)");
  require(std::abs(ar) < 1.0, "synthetic: |ar| must be below 1");
  validate_regimes(regimes, factors, "synthetic");
}

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t N = spec.sectors;
  const std::size_t P = spec.factors;
  const std::size_t T = spec.tau;
  Rng latent_rng(spec.seed, "synthetic.latent");
  Rng ret_rng(spec.seed, "synthetic.returns");
  Rng char_rng(spec.seed, "synthetic.characteristics");
  Rng miss_rng(spec.seed, "synthetic.missing");
  Rng cap_rng(spec.seed, "synthetic.caps");
  Rng fac_rng(spec.seed, "synthetic.factor_returns");
  Rng state_rng(spec.seed, "synthetic.states");

  const double noise_sd = spec.return_sd / std::sqrt(1.0 + spec.snr);
  const double mu_sd = std::sqrt(spec.snr) * noise_sd;
  const double innov = std::sqrt(1.0 - spec.ar * spec.ar);

  const auto driver = expand_regimes(spec.regimes, T);
  Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(N));
  std::vector<std::string> sector_ids;

  std::vector<Period> periods(T);
  for (std::size_t t = 0; t < T; ++t) {
    periods[t] = Period::from_index(spec.start.index() + static_cast<int>(t));
  }

  std::vector<AssetReturn> returns;
  std::vector<FactorValue> chars;
  Eigen::VectorXd mkt = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(T));
  Eigen::VectorXd mkt_count = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(T));

  for (std::size_t i = 0; i < N; ++i) {
    char code[8];
    std::snprintf(code, sizeof code, "%02zu", 10 + i);
    sector_ids.emplace_back(code);
    const std::string sector = code;

    // Latent characteristics, periods × P.
    Eigen::MatrixXd x(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(P));
    for (std::size_t p = 0; p < P; ++p) {
      x(0, static_cast<Eigen::Index>(p)) = latent_rng.normal();
      for (std::size_t t = 1; t < T; ++t) {
        x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(p)) =
            spec.ar * x(static_cast<Eigen::Index>(t - 1), static_cast<Eigen::Index>(p)) +
            innov * latent_rng.normal();
      }
    }
    for (std::size_t t = 1; t < T; ++t) {
      mu(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) =
          mu_sd * x(static_cast<Eigen::Index>(t - 1), static_cast<Eigen::Index>(driver[t]));
    }

    const std::size_t n_assets = spec.assets_per_sector + (spec.churn ? 1 : 0);
    const double idio_sd = noise_sd * std::sqrt(0.5 * static_cast<double>(spec.assets_per_sector));
    std::vector<double> shocks(T);
    for (std::size_t t = 0; t < T; ++t) shocks[t] = noise_sd * std::sqrt(0.5) * ret_rng.normal();

    for (std::size_t a = 0; a < n_assets; ++a) {
      const std::string asset = "A" + sector + "_" + std::to_string(a + 1);
      const std::size_t enter = a >= spec.assets_per_sector ? T / 3 : 0;
      std::vector<double> loading(P);
      std::vector<double> level(P);
      for (std::size_t p = 0; p < P; ++p) {
        loading[p] = 0.5 + char_rng.uniform();
        level[p] = char_rng.normal();
      }
      double cap = std::exp(std::log(100.0) + 0.5 * cap_rng.normal());
      for (std::size_t t = enter; t < T; ++t) {
        const double r = mu(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) +
                         shocks[t] + idio_sd * ret_rng.normal();
        cap = std::max(cap * (1.0 + r), 1e-6);
        returns.push_back({periods[t], asset, r, cap, sector});
        mkt[static_cast<Eigen::Index>(t)] += r;
        mkt_count[static_cast<Eigen::Index>(t)] += 1.0;
        for (std::size_t p = 0; p < P; ++p) {
          const double v = level[p] +
                           loading[p] * x(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(p)) +
                           spec.char_noise * char_rng.normal();
          if (miss_rng.uniform() < spec.missing_rate) continue;
          chars.push_back({periods[t], asset, "char" + std::to_string(p + 1), v});
        }
      }
    }
  }
  SyntheticData out{AssetPanel(std::move(returns), std::move(chars)), {}, {}, {}, std::move(mu),
                    std::move(sector_ids), driver};

  out.factor_returns.periods = periods;
  out.factor_returns.names = {"mkt", "smb", "hml", "mom"};
  out.factor_returns.values.resize(static_cast<Eigen::Index>(T), 4);
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    out.factor_returns.values(row, 0) = mkt[row] / mkt_count[row];
    for (Eigen::Index k = 1; k < 4; ++k) out.factor_returns.values(row, k) = 0.03 * fac_rng.normal();
  }

  bool recession = false;
  double activity = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double u = state_rng.uniform();
    recession = recession ? u < 0.9 : u < 0.02;
    activity = 0.9 * activity + state_rng.normal();
    out.recession.emplace_back(recession ? "recession" : "expansion");
    out.activity.emplace_back(activity >= 0.0 ? "positive" : "negative");
  }
  return out;
}

}  // namespace mwe
