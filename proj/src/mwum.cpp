#include "mwe/mwum.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mwe/oracle.hpp"

namespace mwe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Softmax of log weights over the active models; evicted models get zero.
Eigen::VectorXd normalize(const Eigen::VectorXd& log_w, const std::vector<bool>& active) {
  double max_lw = -std::numeric_limits<double>::infinity();
  for (Eigen::Index l = 0; l < log_w.size(); ++l) {
    if (active[static_cast<std::size_t>(l)]) max_lw = std::max(max_lw, log_w[l]);
  }
  Eigen::VectorXd p = Eigen::VectorXd::Zero(log_w.size());
  double sum = 0.0;
  for (Eigen::Index l = 0; l < log_w.size(); ++l) {
    if (!active[static_cast<std::size_t>(l)]) continue;
    p[l] = std::exp(log_w[l] - max_lw);
    sum += p[l];
  }
  return p / sum;
}

std::vector<std::size_t> active_indices(const std::vector<bool>& active) {
  std::vector<std::size_t> idx;
  for (std::size_t l = 0; l < active.size(); ++l) {
    if (active[l]) idx.push_back(l);
  }
  return idx;
}

Eigen::VectorXd gather(const Eigen::Ref<const Eigen::VectorXd>& v,
                       const std::vector<std::size_t>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    out[static_cast<Eigen::Index>(k)] = v[static_cast<Eigen::Index>(idx[k])];
  }
  return out;
}

// Gain of the active models, scattered back to full length (zeros elsewhere).
GainVector active_gain(double realized, const Eigen::Ref<const Eigen::VectorXd>& forecasts,
                       const Eigen::VectorXd& p, double sigma2,
                       const std::vector<std::size_t>& idx) {
  const Eigen::VectorXd f = gather(forecasts, idx);
  Eigen::VectorXd pa = gather(p, idx);
  pa /= pa.sum();
  const GainVector g = gain(realized, f, WeightDistribution(pa), sigma2);
  Eigen::VectorXd full = Eigen::VectorXd::Zero(forecasts.size());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    full[static_cast<Eigen::Index>(idx[k])] = g.m[static_cast<Eigen::Index>(k)];
  }
  return GainVector::unclipped(std::move(full));
}

double midpoint(std::span<const double> grid) {
  std::vector<double> sorted(grid.begin(), grid.end());
  std::sort(sorted.begin(), sorted.end());
  return sorted[(sorted.size() - 1) / 2];
}

double min_positive(std::span<const double> grid) {
  double best = std::numeric_limits<double>::infinity();
  for (double g : grid) {
    if (g > 0.0) best = std::min(best, g);
  }
  return std::isfinite(best) ? best : 1e-3;
}

}  // namespace

std::vector<double> default_eta_grid(std::size_t n, double lo, double hi) {
  require(n >= 1 && lo > 0.0 && hi >= lo, "eta grid: invalid range");
  std::vector<double> grid(n);
  if (n == 1) {
    grid[0] = hi;
    return grid;
  }
  const double step = std::log(hi / lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    grid[i] = lo * std::exp(step * static_cast<double>(i));
  }
  grid.back() = hi;
  return grid;
}

EtaPolicy EtaPolicy::fixed(double eta) {
  EtaPolicy p;
  p.kind = EtaKind::fixed;
  p.fixed_eta = eta;
  return p;
}

EtaPolicy EtaPolicy::cor3() {
  EtaPolicy p;
  p.kind = EtaKind::cor3;
  return p;
}

EtaPolicy EtaPolicy::cor5() {
  EtaPolicy p;
  p.kind = EtaKind::cor5;
  return p;
}

EtaPolicy EtaPolicy::feasible(std::vector<double> grid, std::size_t lookback) {
  EtaPolicy p;
  p.kind = EtaKind::feasible;
  p.grid = std::move(grid);
  p.lookback = lookback;
  return p;
}

void EtaPolicy::validate() const {
  require(!grid.empty(), "eta policy: grid must be non-empty");
  for (double g : grid) {
    require(g > 0.0 && g <= 0.5, "eta policy: grid values must lie in (0, 1/2]");
  }
  require(lookback >= 1, "eta policy: lookback must be at least 1");
  if (kind == EtaKind::fixed) {
    require(fixed_eta > 0.0 && fixed_eta <= 0.5,
            "eta policy: fixed eta must lie in (0, 1/2]");
  }
}

std::string to_string(EtaKind kind) {
  switch (kind) {
    case EtaKind::fixed: return "fixed";
    case EtaKind::cor3: return "cor3";
    case EtaKind::cor5: return "cor5";
    case EtaKind::feasible: return "feasible";
  }
  return "unknown";
}

EtaKind parse_eta_kind(const std::string& text) {
  if (text == "fixed") return EtaKind::fixed;
  if (text == "cor3") return EtaKind::cor3;
  if (text == "cor5") return EtaKind::cor5;
  if (text == "feasible") return EtaKind::feasible;
  throw ValidationError("unknown eta policy '" + text +
                        "' (expected fixed, cor3, cor5 or feasible)");
}

double clip_eta(double eta) {
  if (!(eta > 0.0)) throw ValidationError("learning rate must be positive");
  return std::min(0.5, eta);
}

EtaChoice eta_closed_form(const Eigen::Ref<const Eigen::VectorXd>& mean_abs_gain,
                          std::size_t models, double scale,
                          std::span<const double> grid) {
  const double norm = mean_abs_gain.norm();
  if (!(norm > 0.0)) {
    return {0.5, true, "zero mean |gain|; default eta 1/2"};
  }
  const double eta = std::sqrt(std::log(static_cast<double>(models)) * scale / norm);
  if (!(eta > 0.0)) {
    return {min_positive(grid), true, "degenerate optimal eta; smallest grid value"};
  }
  return {clip_eta(eta), false, {}};
}

namespace {

Eigen::VectorXd mean_abs(std::span<const GainVector> history) {
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(history.front().m.size());
  for (const auto& g : history) acc += g.m.cwiseAbs();
  return acc / static_cast<double>(history.size());
}

}  // namespace

EtaChoice eta_cor3(std::span<const GainVector> gain_history, std::size_t models,
                   std::span<const double> grid) {
  if (gain_history.empty()) return {0.5, true, "empty gain history; default eta 1/2"};
  return eta_closed_form(mean_abs(gain_history), models, 1.0, grid);
}

EtaChoice eta_cor5(std::span<const GainVector> gain_history, std::size_t models,
                   double delta_tau, std::span<const double> grid) {
  if (gain_history.empty()) return {0.5, true, "empty gain history; default eta 1/2"};
  require(delta_tau >= 0.0, "eta_cor5: delta_tau must be non-negative");
  return eta_closed_form(mean_abs(gain_history), models, std::min(1.0, delta_tau), grid);
}

EtaChoice eta_feasible(std::span<const ReplayRecord> history, const EtaPolicy& policy,
                       const std::vector<bool>& active) {
  require(!policy.grid.empty(), "eta_feasible: empty grid");
  if (history.size() < policy.lookback) {
    return {midpoint(policy.grid), true, "insufficient history; grid midpoint"};
  }
  const auto window = history.subspan(history.size() - policy.lookback);
  const auto idx = active_indices(active);

  std::vector<double> grid(policy.grid.begin(), policy.grid.end());
  std::sort(grid.begin(), grid.end());

  // Active slices of the window, shared by every grid value. The inner loop
  // runs |grid|·lookback times per step, so it avoids allocating.
  const auto n = static_cast<Eigen::Index>(idx.size());
  std::vector<Eigen::VectorXd> f;
  f.reserve(window.size());
  double ss = 0.0;
  for (const auto& rec : window) {
    f.push_back(gather(rec.forecasts, idx));
    ss += rec.realized * rec.realized;
  }
  const Eigen::VectorXd lw0 = policy.warm_start ? gather(window.front().log_w_before, idx)
                                                : Eigen::VectorXd::Zero(n);
  Eigen::VectorXd lw(n);
  Eigen::VectorXd p(n);

  double best_eta = grid.front();
  double best_r2 = -std::numeric_limits<double>::infinity();
  for (double eta : grid) {
    lw = lw0;
    double sse = 0.0;
    for (std::size_t k = 0; k < window.size(); ++k) {
      const double r = window[k].realized;
      const double s2 = window[k].sigma2;
      p = (lw.array() - lw.maxCoeff()).exp();
      p /= p.sum();
      const double combined = f[k].dot(p);
      sse += (r - combined) * (r - combined);
      for (Eigen::Index l = 0; l < n; ++l) {
        const double fl = f[k][l];
        const double m = 1.0 - ((r - fl) * (r - fl) + fl * (combined - fl)) / s2;
        lw[l] += std::log1p(eta * std::clamp(m, -1.0, 1.0));
      }
    }
    const double r2 = ss > 0.0 ? 1.0 - sse / ss : 0.0;
    if (r2 > best_r2) {
      best_r2 = r2;
      best_eta = eta;
    }
  }
  return {best_eta, false, {}};
}

EnsembleState::EnsembleState(std::size_t models, EnsembleConfig config)
    : config_(std::move(config)),
      log_w_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(models))),
      evicted_(models, false),
      sigma_(config_.min_obs, config_.sigma_window),
      clip_(models),
      abs_gain_sum_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(models))),
      a_sum_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(models),
                                   static_cast<Eigen::Index>(models))),
      b_sum_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(models))),
      streaks_(models, 0) {
  require(models >= 1, "ensemble needs at least one model");
  config_.eta.validate();
  require(config_.eviction.window >= 1 && config_.eviction.streak >= 1,
          "eviction window and streak must be positive");
}

std::size_t EnsembleState::active_count() const {
  return static_cast<std::size_t>(std::count(evicted_.begin(), evicted_.end(), false));
}

std::vector<bool> EnsembleState::active_mask() const {
  std::vector<bool> active(evicted_.size());
  for (std::size_t l = 0; l < evicted_.size(); ++l) active[l] = !evicted_[l];
  return active;
}

WeightDistribution EnsembleState::distribution() const {
  return WeightDistribution(normalize(log_w_, active_mask()));
}

Eigen::VectorXd EnsembleState::weights() const { return log_w_.array().exp(); }

Eigen::VectorXd EnsembleState::mean_abs_gain() const {
  if (scored_ == 0) return Eigen::VectorXd::Zero(log_w_.size());
  return abs_gain_sum_ / static_cast<double>(scored_);
}

std::vector<double> EnsembleState::trailing_r2() const {
  std::vector<double> out(models(), kNaN);
  if (window_sq_ret_.size() < config_.eviction.window) return out;
  double ss = 0.0;
  for (double v : window_sq_ret_) ss += v;
  if (!(ss > 0.0)) return out;
  for (std::size_t l = 0; l < models(); ++l) {
    double sse = 0.0;
    for (const auto& e : window_sq_err_) sse += e[static_cast<Eigen::Index>(l)];
    out[l] = 1.0 - sse / ss;
  }
  return out;
}

void EnsembleState::prime(std::span<const double> past_returns) {
  for (double r : past_returns) sigma_.observe(r);
}

void EnsembleState::apply_gains(const GainVector& clipped, double eta) {
  require(static_cast<std::size_t>(clipped.m.size()) == models(),
          "apply_gains: gain length mismatch");
  require(eta > 0.0 && eta <= 0.5, "apply_gains: eta must lie in (0, 1/2]");
  require((clipped.m.array().abs() <= 1.0).all(), "apply_gains: gains must be clipped");
  for (std::size_t l = 0; l < models(); ++l) {
    if (evicted_[l]) continue;
    const auto i = static_cast<Eigen::Index>(l);
    log_w_[i] += std::log1p(eta * clipped.m[i]);
  }
  ++t_;
}

EtaChoice EnsembleState::resolve_eta() const {
  const auto& policy = config_.eta;
  const auto idx = active_indices(active_mask());
  switch (policy.kind) {
    case EtaKind::fixed:
      return {policy.fixed_eta, false, {}};
    case EtaKind::cor3:
      return eta_closed_form(gather(mean_abs_gain(), idx), idx.size(), 1.0, policy.grid);
    case EtaKind::cor5: {
      ForecastMoments mom;
      const auto n = static_cast<Eigen::Index>(idx.size());
      mom.A.resize(n, n);
      mom.b.resize(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        mom.b[i] = b_sum_[static_cast<Eigen::Index>(idx[i])] / static_cast<double>(scored_);
        for (Eigen::Index j = 0; j < n; ++j) {
          mom.A(i, j) = a_sum_(static_cast<Eigen::Index>(idx[i]),
                               static_cast<Eigen::Index>(idx[j])) /
                        static_cast<double>(scored_);
        }
      }
      double scale = 1.0;
      bool singular = false;
      try {
        scale = std::min(1.0, solve_optimal_weights(mom).delta_tau);
      } catch (const NumericalError&) {
        singular = true;
      }
      auto choice = eta_closed_form(gather(mean_abs_gain(), idx), idx.size(), scale,
                                    policy.grid);
      if (singular) {
        choice.flagged = true;
        choice.note = "forecast moments singular; min(1, delta) taken as 1";
      }
      return choice;
    }
    case EtaKind::feasible: {
      std::vector<ReplayRecord> history(replay_.begin(), replay_.end());
      return eta_feasible(history, policy, active_mask());
    }
  }
  return {0.5, true, "unknown policy"};
}

StepDiagnostics EnsembleState::step(double realized,
                                    const Eigen::Ref<const Eigen::VectorXd>& forecasts) {
  require(static_cast<std::size_t>(forecasts.size()) == models(),
          "ensemble step: expected " + std::to_string(models()) + " forecasts, got " +
              std::to_string(forecasts.size()));
  require(std::isfinite(realized), "ensemble step: non-finite realized return");
  const auto idx = active_indices(active_mask());
  for (std::size_t l : idx) {
    require(std::isfinite(forecasts[static_cast<Eigen::Index>(l)]),
            "ensemble step: non-finite forecast for active model " + std::to_string(l));
  }

  StepDiagnostics diag;
  diag.p = normalize(log_w_, active_mask());
  diag.realized = realized;
  diag.combined = gather(forecasts, idx).dot(gather(diag.p, idx));
  diag.sigma2 = kNaN;
  diag.eta = kNaN;

  if (!sigma_.ready()) {
    diag.scored = false;
    diag.note = "second moment unavailable; uniform combination, no update";
  } else {
    diag.scored = true;
    diag.sigma2 = sigma_.value();
    diag.raw = active_gain(realized, forecasts, diag.p, diag.sigma2, idx);
    diag.clipped = clip_gain(diag.raw);

    // Record the period before resolving η so the rules see data through t.
    Eigen::VectorXd f_active = Eigen::VectorXd::Zero(forecasts.size());
    for (std::size_t l : idx) {
      const auto i = static_cast<Eigen::Index>(l);
      f_active[i] = forecasts[i];
    }
    gain_history_.push_back(diag.clipped);
    clip_.add(diag.clipped);
    abs_gain_sum_ += diag.clipped.m.cwiseAbs();
    a_sum_ += f_active * f_active.transpose();
    b_sum_ += f_active * realized;
    ++scored_;
    if (config_.eta.kind == EtaKind::feasible) {
      replay_.push_back({realized, f_active, diag.sigma2, log_w_});
      while (replay_.size() > config_.eta.lookback) replay_.pop_front();
    }

    const EtaChoice choice = resolve_eta();
    diag.eta = choice.eta;
    diag.eta_flagged = choice.flagged;
    diag.note = choice.note;
    apply_gains(diag.clipped, choice.eta);
  }

  sigma_.observe(realized);
  ++periods_seen_;
  track_eviction(realized, forecasts, diag);
  return diag;
}

void EnsembleState::track_eviction(double realized,
                                   const Eigen::Ref<const Eigen::VectorXd>& forecasts,
                                   StepDiagnostics& diag) {
  if (config_.eviction.mode == EvictionPolicy::Mode::off) return;
  const auto window = config_.eviction.window;
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(forecasts.size());
  for (Eigen::Index l = 0; l < forecasts.size(); ++l) {
    if (!evicted_[static_cast<std::size_t>(l)]) {
      sq[l] = (realized - forecasts[l]) * (realized - forecasts[l]);
    }
  }
  window_sq_err_.push_back(sq);
  window_sq_ret_.push_back(realized * realized);
  while (window_sq_ret_.size() > window) {
    window_sq_err_.pop_front();
    window_sq_ret_.pop_front();
  }
  const auto r2 = trailing_r2();
  for (std::size_t l = 0; l < models(); ++l) {
    if (evicted_[l]) continue;
    streaks_[l] = (std::isfinite(r2[l]) && r2[l] < 0.0) ? streaks_[l] + 1 : 0;
  }
  const auto next = evict_check(*this, config_.eviction);
  for (std::size_t l = 0; l < models(); ++l) {
    if (next[l] && !evicted_[l]) {
      evicted_[l] = true;
      diag.evicted_now.push_back(l);
    }
  }
}

std::vector<bool> evict_check(const EnsembleState& state, const EvictionPolicy& policy) {
  std::vector<bool> out = state.evicted_;
  if (policy.mode == EvictionPolicy::Mode::off) return out;

  std::vector<double> badness(out.size(), 0.0);
  for (std::size_t l = 0; l < out.size(); ++l) {
    if (out[l]) continue;
    if (policy.mode == EvictionPolicy::Mode::naive_streak) {
      if (state.streaks_[l] >= policy.streak) out[l] = true;
      badness[l] = static_cast<double>(state.streaks_[l]);
    } else {
      const std::size_t steps = state.clip_.steps;
      if (steps >= policy.window) {
        const double rate =
            state.clip_.excess_mass[static_cast<Eigen::Index>(l)] / static_cast<double>(steps);
        if (rate > policy.clip_rate) out[l] = true;
        badness[l] = rate;
      }
    }
  }
  if (std::all_of(out.begin(), out.end(), [](bool e) { return e; })) {
    // Keep the least bad of the models that were active before this check.
    std::size_t keep = out.size();
    for (std::size_t l = 0; l < out.size(); ++l) {
      if (state.evicted_[l]) continue;
      if (keep == out.size() || badness[l] < badness[keep]) keep = l;
    }
    out[keep] = false;
  }
  return out;
}

EnsembleState::Snapshot EnsembleState::snapshot() const {
  return {weights(), evicted_, t_, config_.eta};
}

EnsembleState EnsembleState::restore(const Snapshot& snapshot, EnsembleConfig config) {
  require(snapshot.weights.size() >= 1, "snapshot: empty weights");
  require(static_cast<std::size_t>(snapshot.weights.size()) == snapshot.evicted.size(),
          "snapshot: weights and eviction flags differ in length");
  require((snapshot.weights.array() > 0.0).all() && snapshot.weights.allFinite(),
          "snapshot: weights must be positive and finite");
  config.eta = snapshot.policy;
  EnsembleState state(static_cast<std::size_t>(snapshot.weights.size()), std::move(config));
  state.log_w_ = snapshot.weights.array().log();
  state.evicted_ = snapshot.evicted;
  state.t_ = snapshot.t;
  require(state.active_count() >= 1, "snapshot: every model is evicted");
  return state;
}

EnsembleState init(std::size_t models, EtaPolicy policy) {
  EnsembleConfig config;
  config.eta = std::move(policy);
  return EnsembleState(models, std::move(config));
}

EnsembleState init(std::size_t models, EnsembleConfig config) {
  return EnsembleState(models, std::move(config));
}

std::pair<EnsembleState, StepDiagnostics> step(
    EnsembleState state, double realized,
    const Eigen::Ref<const Eigen::VectorXd>& forecasts) {
  auto diag = state.step(realized, forecasts);
  return {std::move(state), std::move(diag)};
}

Eigen::VectorXd EnsembleTrace::combined() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(steps.size()));
  for (std::size_t t = 0; t < steps.size(); ++t) {
    out[static_cast<Eigen::Index>(t)] = steps[t].combined;
  }
  return out;
}

std::vector<std::size_t> EnsembleTrace::scored_rows() const {
  std::vector<std::size_t> rows;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    if (steps[t].scored) rows.push_back(t);
  }
  return rows;
}

EnsembleTrace run_ensemble(const PredictionPanel& panel, const EnsembleConfig& config,
                           std::span<const double> warmup_returns) {
  EnsembleState state(panel.models(), config);
  state.prime(warmup_returns);
  EnsembleTrace trace;
  trace.model_ids = panel.model_ids();
  trace.period_ids = panel.period_ids();
  trace.steps.reserve(panel.periods());
  for (std::size_t t = 0; t < panel.periods(); ++t) {
    const auto row = static_cast<Eigen::Index>(t);
    trace.steps.push_back(
        state.step(panel.realized()[row], panel.forecasts().row(row).transpose()));
  }
  return trace;
}

}  // namespace mwe
