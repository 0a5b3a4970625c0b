#include "mwe/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mwe/io.hpp"
#include "mwe/regret.hpp"

namespace mwe {

namespace fs = std::filesystem;

std::string to_string(Stage s) {
  switch (s) {
    case Stage::synth: return "synth";
    case Stage::aggregate: return "aggregate";
    case Stage::forecast: return "forecast";
    case Stage::ensemble: return "ensemble";
    case Stage::backtest: return "backtest";
    case Stage::report: return "report";
    default: return "all";
  }
}

Stage parse_stage(const std::string& text) {
  for (auto s : {Stage::synth, Stage::aggregate, Stage::forecast, Stage::ensemble,
                 Stage::backtest, Stage::report, Stage::all}) {
    if (to_string(s) == text) return s;
  }
  throw ValidationError("unknown stage '" + text +
                        "' (expected synth, aggregate, forecast, ensemble, backtest, report or all)");
}

std::string provenance(const RunConfig& config, Stage stage) {
  return "config_hash=" + config.hash() + " seed=" + std::to_string(config.seed) +
         " stage=" + to_string(stage);
}

namespace {

// Free text inside a CSV cell.
std::string clean(std::string text) {
  std::replace(text.begin(), text.end(), ',', ';');
  std::replace(text.begin(), text.end(), '\n', ' ');
  return text;
}

std::string fmt(const char* pattern, double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width, bool left = false) {
  if (s.size() >= width) return s;
  return left ? s + std::string(width - s.size(), ' ') : std::string(width - s.size(), ' ') + s;
}

std::string cost_name(double bps) { return format_double(bps); }

std::vector<EtaKind> run_policies(const RunConfig& c) {
  std::vector<EtaKind> out{c.ensemble.eta.kind};
  for (auto k : c.policies) {
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  }
  return out;
}

struct Paths {
  const RunConfig& cfg;
  fs::path out;

  fs::path data(const char* name) const { return out / "data" / name; }
  fs::path assets() const { return cfg.synthetic_inputs() ? data("assets.csv") : cfg.assets; }
  fs::path characteristics() const {
    return cfg.synthetic_inputs() ? data("characteristics.csv") : cfg.characteristics;
  }
  fs::path factor_returns() const {
    return cfg.synthetic_inputs() ? data("factor_returns.csv") : cfg.factor_returns;
  }
  fs::path indicators() const {
    return cfg.synthetic_inputs() ? data("indicators.csv") : cfg.indicators;
  }
  fs::path sectors() const { return out / "sectors"; }
  fs::path per_weighting(const std::string& stem, Weighting w) const {
    return out / (stem + "_" + to_string(w) + ".csv");
  }
};

void require_file(const fs::path& p, const std::string& producer) {
  if (!fs::exists(p)) {
    throw ValidationError("missing input " + p.string() + " (run the " + producer +
                          " stage first)");
  }
}

// ---------------------------------------------------------------- synth

void stage_synth(const Paths& paths) {
  const RunConfig& cfg = paths.cfg;
  require(cfg.synthetic_inputs(), "config names input files; there is nothing to generate");
  SyntheticSpec spec = cfg.synthetic;
  spec.seed = cfg.seed;
  const SyntheticData data = generate_synthetic(spec);
  const std::string prov = provenance(cfg, Stage::synth);

  write_asset_returns(paths.assets(), prov, data.assets.observations());
  write_characteristics(paths.characteristics(), prov, data.assets.factor_values());
  write_factor_table(paths.factor_returns(), prov, data.factor_returns);

  IndicatorTable ind;
  ind.periods = data.factor_returns.periods;
  ind.names = {"recession", "activity"};
  ind.labels = {data.recession, data.activity};
  write_indicators(paths.indicators(), prov, ind);

  CsvWriter truth(paths.data("truth.csv"), prov, {"period", "sector_id", "mu", "driver"});
  for (std::size_t t = 0; t < data.factor_returns.periods.size(); ++t) {
    for (std::size_t i = 0; i < data.sector_ids.size(); ++i) {
      truth.cell(data.factor_returns.periods[t].str())
          .cell(data.sector_ids[i])
          .cell(data.mu(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)))
          .cell("char" + std::to_string(data.driver[t] + 1));
      truth.end_row();
    }
  }
  truth.close();
}

// ------------------------------------------------------------ aggregate

void stage_aggregate(const Paths& paths) {
  const RunConfig& cfg = paths.cfg;
  require_file(paths.assets(), "synth");
  require_file(paths.characteristics(), "synth");
  const AssetPanel panel(read_asset_returns(paths.assets()),
                         read_characteristics(paths.characteristics()));
  const auto sectors = build_sector_panels(panel, cfg.factor_schedule());
  const std::string prov = provenance(cfg, Stage::aggregate);

  fs::remove_all(paths.sectors());
  fs::create_directories(paths.sectors());
  CsvWriter notes(paths.sectors() / "notes.csv", prov, {"sector_id", "kind", "detail"});
  for (const auto& sp : sectors) {
    write_sector_panel(paths.sectors() / ("sector_" + sp.sector_id + ".csv"), prov, sp);
    for (const auto& d : sp.dropped_factors) {
      notes.cell(sp.sector_id).cell("dropped_factor").cell(clean(d));
      notes.end_row();
    }
    for (std::size_t t = 0; t < sp.cap_fallback.size(); ++t) {
      if (!sp.cap_fallback[t]) continue;
      notes.cell(sp.sector_id).cell("cap_fallback").cell(sp.periods[t].str());
      notes.end_row();
    }
  }
  notes.close();
}

std::vector<SectorPanel> load_sector_panels(const Paths& paths) {
  require_file(paths.sectors(), "aggregate");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(paths.sectors())) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("sector_", 0) == 0 && entry.path().extension() == ".csv") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), "no sector files in " + paths.sectors().string());
  std::vector<SectorPanel> out;
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    out.push_back(read_sector_panel(f, stem.substr(7)));
  }
  return out;
}

// ------------------------------------------------------------- forecast

void stage_forecast(const Paths& paths) {
  const RunConfig& cfg = paths.cfg;
  const auto sectors = load_sector_panels(paths);
  const std::string prov = provenance(cfg, Stage::forecast);
  for (Weighting w : cfg.weightings) {
    std::map<std::string, PredictionPanel> panels;
    CsvWriter fits(paths.per_weighting("fits", w), prov,
                   {"sector_id", "model_id", "refit", "train_rows", "hyper", "status", "detail"});
    for (const auto& sp : sectors) {
      auto result = run_schedule(sp, cfg.models, cfg.schedule, w);
      for (const auto& f : result.fits) {
        std::string detail;
        for (const auto& warning : f.warnings) detail += (detail.empty() ? "" : "; ") + warning;
        fits.cell(sp.sector_id).cell(f.model_id).cell(f.refit.str()).cell(f.train_rows)
            .cell(f.hyper).cell("ok").cell(clean(detail));
        fits.end_row();
      }
      for (const auto& f : result.failures) {
        fits.cell(sp.sector_id).cell(f.model_id).cell(f.refit.str()).cell(std::size_t{0})
            .cell(0.0).cell("failed").cell(clean(f.message));
        fits.end_row();
      }
      panels.emplace(sp.sector_id, std::move(result.panel));
    }
    fits.close();
    write_prediction_panels(paths.per_weighting("predictions", w), prov, panels);
  }
}

// ------------------------------------------------------------- ensemble

// Adds the external models to each sector panel on the sector's periods.
PredictionPanel merge_external(const PredictionPanel& own, const PredictionPanel& ext,
                               const std::string& sector) {
  std::map<int, std::size_t> ext_rows;
  for (std::size_t t = 0; t < ext.periods(); ++t) ext_rows[ext.period_ids()[t].index()] = t;
  for (const auto& id : ext.model_ids()) {
    const auto& ids = own.model_ids();
    require(std::find(ids.begin(), ids.end(), id) == ids.end(),
            "external_predictions: model id '" + id + "' clashes with a configured model");
  }
  const auto T = static_cast<Eigen::Index>(own.periods());
  const auto L1 = static_cast<Eigen::Index>(own.models());
  const auto L2 = static_cast<Eigen::Index>(ext.models());
  Eigen::MatrixXd F(T, L1 + L2);
  F.leftCols(L1) = own.forecasts();
  for (Eigen::Index t = 0; t < T; ++t) {
    const Period p = own.period_ids()[static_cast<std::size_t>(t)];
    const auto it = ext_rows.find(p.index());
    if (it == ext_rows.end()) {
      throw ValidationError("external_predictions: sector " + sector + " has no row for " +
                            p.str());
    }
    const auto row = static_cast<Eigen::Index>(it->second);
    if (std::abs(ext.realized()[row] - own.realized()[t]) > 1e-12) {
      throw ValidationError("external_predictions: realized return for sector " + sector + " " +
                            p.str() + " differs from the sector panel");
    }
    F.row(t).tail(L2) = ext.forecasts().row(row);
  }
  std::vector<std::string> ids = own.model_ids();
  ids.insert(ids.end(), ext.model_ids().begin(), ext.model_ids().end());
  return PredictionPanel(std::move(F), own.realized(), std::move(ids), own.period_ids());
}

void stage_ensemble(const Paths& paths) {
  const RunConfig& cfg = paths.cfg;
  const auto sectors = load_sector_panels(paths);
  const std::string prov = provenance(cfg, Stage::ensemble);
  const auto policies = run_policies(cfg);
  std::map<std::string, PredictionPanel> external;
  if (!cfg.external_predictions.empty()) external = read_prediction_panels(cfg.external_predictions);

  for (Weighting w : cfg.weightings) {
    const auto pred_path = paths.per_weighting("predictions", w);
    require_file(pred_path, "forecast");
    auto panels = read_prediction_panels(pred_path);
    for (const auto& [sector, ext] : external) {
      require(panels.count(sector) == 1,
              "external_predictions: unknown sector '" + sector + "'");
    }
    for (auto& [sector, panel] : panels) {
      if (external.empty()) continue;
      const auto it = external.find(sector);
      require(it != external.end(),
              "external_predictions: no forecasts for sector '" + sector + "'");
      panel = merge_external(panel, it->second, sector);
    }
    write_prediction_panels(paths.per_weighting("panel", w), prov, panels);

    CsvWriter steps(paths.per_weighting("ensemble", w), prov,
                    {"period", "sector_id", "policy", "forecast", "realized", "eta", "sigma2",
                     "scored"});
    CsvWriter weights(paths.per_weighting("weights", w), prov,
                      {"period", "sector_id", "policy", "model_id", "weight"});
    CsvWriter regret(paths.per_weighting("regret", w), prov,
                     {"sector_id", "policy", "tau", "r2_ensemble", "r2_star", "avg_gain",
                      "effective_bound", "eta", "effective_bound_scaled", "gap",
                      "gap_decomposition", "bound_cor3", "bound_cor5", "delta_tau", "lambda_min",
                      "mean_abs_gain_norm", "warnings"});
    CsvWriter lemma(paths.per_weighting("lemma1", w), prov,
                    {"sector_id", "sigma2_mode", "tau", "d"});
    CsvWriter state(paths.per_weighting("state", w), prov,
                    {"sector_id", "policy", "model_id", "w", "evicted", "t", "eta_kind",
                     "fixed_eta", "lookback"});

    for (const auto& [sector, panel] : panels) {
      const auto sp = std::find_if(sectors.begin(), sectors.end(),
                                   [&](const SectorPanel& s) { return s.sector_id == sector; });
      require(sp != sectors.end(), "no sector panel for '" + sector + "'");
      // σ̂² starts from the sector returns observed before the first forecast.
      std::vector<double> warmup;
      const auto& r = sp->returns(w);
      for (std::size_t t = 0; t < sp->size(); ++t) {
        if (sp->periods[t] < panel.period_ids().front()) {
          warmup.push_back(r[static_cast<Eigen::Index>(t)]);
        }
      }

      for (EtaKind kind : policies) {
        EnsembleConfig ec = cfg.ensemble;
        ec.eta.kind = kind;
        EnsembleState ens(panel.models(), ec);
        ens.prime(warmup);
        EnsembleTrace trace{panel.model_ids(), panel.period_ids(), {}};
        for (std::size_t t = 0; t < panel.periods(); ++t) {
          const auto row = static_cast<Eigen::Index>(t);
          trace.steps.push_back(ens.step(panel.realized()[row], panel.forecasts().row(row).transpose()));
        }
        const std::string pname = to_string(kind);
        for (std::size_t t = 0; t < trace.steps.size(); ++t) {
          const auto& s = trace.steps[t];
          steps.cell(panel.period_ids()[t].str()).cell(sector).cell(pname).cell(s.combined)
              .cell(s.realized).cell(s.eta).cell(s.sigma2).cell(std::string(s.scored ? "1" : "0"));
          steps.end_row();
          for (std::size_t l = 0; l < panel.models(); ++l) {
            weights.cell(panel.period_ids()[t].str()).cell(sector).cell(pname)
                .cell(panel.model_ids()[l]).cell(s.p[static_cast<Eigen::Index>(l)]);
            weights.end_row();
          }
        }

        const auto snap = ens.snapshot();
        for (std::size_t l = 0; l < panel.models(); ++l) {
          state.cell(sector).cell(pname).cell(panel.model_ids()[l])
              .cell(snap.weights[static_cast<Eigen::Index>(l)])
              .cell(std::string(snap.evicted[l] ? "1" : "0")).cell(snap.t)
              .cell(to_string(snap.policy.kind)).cell(snap.policy.fixed_eta)
              .cell(snap.policy.lookback);
          state.end_row();
        }

        if (trace.scored_rows().empty()) continue;
        const auto rep = regret_report(panel, trace);
        std::string warn;
        for (const auto& x : rep.warnings) warn += (warn.empty() ? "" : "; ") + x;
        regret.cell(sector).cell(pname).cell(rep.tau).cell(rep.r2_ensemble).cell(rep.r2_star)
            .cell(rep.avg_gain).cell(rep.effective_bound).cell(rep.eta)
            .cell(rep.effective_bound_scaled).cell(rep.gap).cell(rep.gap_decomposition)
            .cell(rep.bound_cor3).cell(rep.bound_cor5).cell(rep.delta_tau).cell(rep.lambda_min)
            .cell(rep.mean_abs_gain_norm).cell(clean(warn));
        regret.end_row();

        if (kind != cfg.ensemble.eta.kind) continue;
        for (auto [mode, name] : {std::pair{Sigma2Mode::estimated, "estimated"},
                                  std::pair{Sigma2Mode::in_sample, "in_sample"}}) {
          Lemma1Options lo;
          lo.mode = mode;
          const auto chk = lemma1_check(panel, trace, lo);
          for (std::size_t k = 0; k < chk.tau.size(); ++k) {
            lemma.cell(sector).cell(std::string(name)).cell(chk.tau[k]).cell(chk.d[k]);
            lemma.end_row();
          }
        }
      }
    }
    steps.close();
    weights.close();
    regret.close();
    lemma.close();
    state.close();
  }
}

// ------------------------------------------------------------- backtest

struct SectorSeries {
  std::vector<Period> periods;
  std::vector<double> forecast;
  std::vector<double> realized;
  std::vector<bool> scored;
};

// policy -> sector -> series
std::map<std::string, std::map<std::string, SectorSeries>> read_ensemble_steps(const fs::path& path) {
  const auto t = read_csv(path, {"period", "sector_id", "policy", "forecast", "realized", "scored"});
  const auto cp = t.column("period"), cs = t.column("sector_id"), cpol = t.column("policy"),
             cf = t.column("forecast"), cr = t.column("realized"), csc = t.column("scored");
  std::map<std::string, std::map<std::string, SectorSeries>> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    auto& s = out[t.rows[i][cpol]][t.rows[i][cs]];
    const Period p = t.period(i, cp);
    if (!s.periods.empty() && !(s.periods.back() < p)) {
      throw ValidationError(t.where(i) + ": periods must increase within a sector and policy");
    }
    s.periods.push_back(p);
    s.forecast.push_back(t.number(i, cf));
    s.realized.push_back(t.number(i, cr));
    s.scored.push_back(t.rows[i][csc] == "1");
  }
  return out;
}

void stage_backtest(const Paths& paths) {
  const RunConfig& cfg = paths.cfg;
  const std::string prov = provenance(cfg, Stage::backtest);
  const std::string primary = to_string(cfg.ensemble.eta.kind);
  for (Weighting w : cfg.weightings) {
    const auto ens_path = paths.per_weighting("ensemble", w);
    require_file(ens_path, "ensemble");
    const auto all = read_ensemble_steps(ens_path);
    const auto it = all.find(primary);
    require(it != all.end(), "ensemble file has no rows for policy " + primary);
    const auto& by_sector = it->second;

    std::vector<std::string> ids;
    for (const auto& [id, s] : by_sector) ids.push_back(id);
    const std::vector<Period>& periods = by_sector.begin()->second.periods;
    for (const auto& [id, s] : by_sector) {
      require(s.periods == periods, "sector " + id + " covers different periods than " + ids[0]);
    }
    const std::size_t N = ids.size();
    const std::size_t T = periods.size();
    const QuantileScheme scheme = cfg.scheme(N);
    const std::size_t B = scheme.buckets();

    Eigen::MatrixXd R(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(N));
    std::vector<std::vector<std::size_t>> assign(T);
    for (std::size_t t = 0; t < T; ++t) {
      std::vector<double> f(N);
      for (std::size_t i = 0; i < N; ++i) {
        const auto& s = by_sector.at(ids[i]);
        f[i] = s.forecast[t];
        R(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = s.realized[t];
      }
      assign[t] = rank_and_bucket(f, ids, scheme);
    }

    const auto br = bucket_returns(assign, R, B);
    std::vector<Eigen::VectorXd> to(B);
    for (std::size_t b = 0; b < B; ++b) {
      to[b] = turnover(bucket_weights(assign, b, B), R, cfg.charge_initial);
    }

    // Display order: top bucket first, then the long-short spread.
    std::vector<std::string> names;
    std::vector<Eigen::VectorXd> gross, turn;
    for (std::size_t k = 0; k < B; ++k) {
      const std::size_t b = B - 1 - k;
      names.push_back(scheme.labels[b]);
      gross.emplace_back(br.gross.col(static_cast<Eigen::Index>(b)));
      turn.push_back(to[b]);
    }
    names.push_back("Top-Bottom");
    gross.push_back(br.top_bottom);
    turn.emplace_back(to[B - 1] + to[0]);

    CostOptions co;
    co.per_percentage_point = cfg.cost_per_point;
    std::vector<std::string> header{"period", "portfolio", "gross", "turnover"};
    for (double c : cfg.costs_bps) header.push_back("net_" + cost_name(c));
    CsvWriter port(paths.per_weighting("portfolios", w), prov, header);
    CsvWriter cum(paths.per_weighting("cumulative", w), prov,
                  {"period", "portfolio", "series", "value"});
    CsvWriter dd(paths.per_weighting("drawdown", w), prov,
                 {"period", "portfolio", "series", "drawdown"});
    for (std::size_t k = 0; k < names.size(); ++k) {
      std::vector<std::pair<std::string, Eigen::VectorXd>> series{{"gross", gross[k]}};
      for (double c : cfg.costs_bps) {
        series.emplace_back("net_" + cost_name(c), apply_costs(gross[k], turn[k], c, co));
      }
      for (std::size_t t = 0; t < T; ++t) {
        port.cell(periods[t].str()).cell(names[k]);
        port.cell(gross[k][static_cast<Eigen::Index>(t)]).cell(turn[k][static_cast<Eigen::Index>(t)]);
        for (std::size_t j = 1; j < series.size(); ++j) {
          port.cell(series[j].second[static_cast<Eigen::Index>(t)]);
        }
        port.end_row();
      }
      for (const auto& [sname, x] : series) {
        double value = 1.0, peak = 1.0;
        for (std::size_t t = 0; t < T; ++t) {
          value *= 1.0 + x[static_cast<Eigen::Index>(t)];
          peak = std::max(peak, value);
          cum.cell(periods[t].str()).cell(names[k]).cell(sname).cell(value);
          cum.end_row();
          dd.cell(periods[t].str()).cell(names[k]).cell(sname).cell(value / peak - 1.0);
          dd.end_row();
        }
      }
    }
    port.close();
    cum.close();
    dd.close();

    CsvWriter hold(paths.per_weighting("holdings", w), prov, {"period", "sector_id", "bucket"});
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t i = 0; i < N; ++i) {
        hold.cell(periods[t].str()).cell(ids[i]).cell(scheme.labels[assign[t][i]]);
        hold.end_row();
      }
    }
    hold.close();
  }
}

// --------------------------------------------------------------- report

struct PortfolioSeries {
  std::vector<std::string> names;  // display order
  std::vector<Period> periods;
  std::map<std::string, std::map<std::string, std::vector<double>>> values;  // name -> column
};

PortfolioSeries read_portfolios(const fs::path& path, const std::vector<std::string>& columns) {
  std::vector<std::string> required{"period", "portfolio"};
  required.insert(required.end(), columns.begin(), columns.end());
  const auto t = read_csv(path, required);
  PortfolioSeries out;
  const auto cp = t.column("period"), cn = t.column("portfolio");
  std::map<std::string, std::vector<Period>> periods;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const std::string& name = t.rows[i][cn];
    if (std::find(out.names.begin(), out.names.end(), name) == out.names.end()) {
      out.names.push_back(name);
    }
    periods[name].push_back(t.period(i, cp));
    for (const auto& c : columns) out.values[name][c].push_back(t.number(i, t.column(c)));
  }
  require(!out.names.empty(), path.string() + ": no portfolio rows");
  out.periods = periods[out.names.front()];
  for (const auto& [name, p] : periods) {
    require(p == out.periods, path.string() + ": portfolio " + name + " has different periods");
  }
  return out;
}

void add_table(std::ostringstream& os, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) {
    width[c] = header[c].size();
    for (const auto& r : rows) width[c] = std::max(width[c], r[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      os << (c ? "  " : "") << pad(cells[c], width[c], c == 0);
    }
    os << "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
  os << "\n";
}

void report_r2(std::ostringstream& os, const Paths& paths, Weighting w) {
  const auto panels = read_prediction_panels(paths.per_weighting("panel", w));
  const auto steps = read_ensemble_steps(paths.per_weighting("ensemble", w));
  const std::string primary = to_string(paths.cfg.ensemble.eta.kind);
  const auto policies = run_policies(paths.cfg);

  std::vector<std::string> cols;
  const auto& first = panels.begin()->second;
  for (const auto& id : first.model_ids()) cols.push_back(id);
  for (auto k : policies) cols.push_back("mwum_" + to_string(k));
  cols.push_back("average");

  std::vector<double> pooled_sse(cols.size(), 0.0);
  double pooled_ss = 0.0;
  std::vector<std::vector<std::string>> rows;
  for (const auto& [sector, panel] : panels) {
    require(panel.model_ids() == first.model_ids(), "sector " + sector + " has different models");
    const auto& prim = steps.at(primary).at(sector);
    require(prim.periods == panel.period_ids(), "ensemble and panel periods differ for " + sector);
    std::vector<double> sse(cols.size(), 0.0);
    double ss = 0.0;
    for (std::size_t t = 0; t < panel.periods(); ++t) {
      if (!prim.scored[t]) continue;
      const auto row = static_cast<Eigen::Index>(t);
      const double r = panel.realized()[row];
      ss += r * r;
      std::size_t c = 0;
      for (std::size_t l = 0; l < panel.models(); ++l, ++c) {
        const double e = r - panel.forecasts()(row, static_cast<Eigen::Index>(l));
        sse[c] += e * e;
      }
      for (auto k : policies) {
        const double e = r - steps.at(to_string(k)).at(sector).forecast[t];
        sse[c++] += e * e;
      }
      const double e = r - panel.forecasts().row(row).mean();
      sse[c] += e * e;
    }
    std::vector<std::string> cells{sector};
    for (std::size_t c = 0; c < cols.size(); ++c) {
      cells.push_back(fmt("%.3f", ss > 0.0 ? 100.0 * (1.0 - sse[c] / ss) : NAN));
      pooled_sse[c] += sse[c];
    }
    pooled_ss += ss;
    rows.push_back(cells);
  }
  std::vector<std::string> cells{"pooled"};
  for (std::size_t c = 0; c < cols.size(); ++c) {
    cells.push_back(fmt("%.3f", pooled_ss > 0.0 ? 100.0 * (1.0 - pooled_sse[c] / pooled_ss) : NAN));
  }
  rows.push_back(cells);

  os << "-- Out-of-sample R2 (%), " << to_string(w) << "-weighted sector returns --\n";
  std::vector<std::string> header{"sector"};
  header.insert(header.end(), cols.begin(), cols.end());
  add_table(os, header, rows);
}

void report_performance(std::ostringstream& os, const Paths& paths, Weighting w,
                        const PortfolioSeries& ps) {
  std::vector<std::pair<std::string, std::string>> series{{"gross", "Gross"}};
  for (double c : paths.cfg.costs_bps) {
    series.emplace_back("net_" + cost_name(c), "Net " + cost_name(c) + " bps");
  }
  std::vector<std::string> notes;
  for (const auto& [col, title] : series) {
    os << "-- Portfolio performance, " << title << ", " << to_string(w) << "-weighted --\n";
    std::vector<std::vector<std::string>> rows;
    for (const auto& name : ps.names) {
      const Eigen::VectorXd x = to_eigen(ps.values.at(name).at(col));
      const Eigen::VectorXd to = to_eigen(ps.values.at(name).at("turnover"));
      const auto st = perf_stats(x);
      rows.push_back({name, std::to_string(st.n), fmt("%.3f", 100.0 * st.ann_return),
                      fmt("%.3f", 100.0 * st.ann_vol), fmt("%.3f", st.sharpe),
                      fmt("%.3f", st.sortino), fmt("%.3f", 100.0 * st.max_drawdown),
                      fmt("%.3f", 100.0 * to.mean())});
      if (st.short_series) notes.push_back(name + " " + col + ": fewer than 12 months");
      if (st.zero_vol) notes.push_back(name + " " + col + ": zero volatility, Sharpe undefined");
    }
    add_table(os,
              {"portfolio", "months", "ann_return%", "ann_vol%", "sharpe", "sortino",
               "max_drawdown%", "turnover%"},
              rows);
  }
  std::sort(notes.begin(), notes.end());
  notes.erase(std::unique(notes.begin(), notes.end()), notes.end());
  for (const auto& n : notes) os << "note: " << n << "\n";
  if (!notes.empty()) os << "\n";
}

void report_alphas(std::ostringstream& os, const Paths& paths, Weighting w,
                   const PortfolioSeries& ps, const FactorTable* factors) {
  os << "-- Factor-model alphas (monthly %, Newey-West t), gross, " << to_string(w)
     << "-weighted --\n";
  if (factors == nullptr) {
    os << "not available: no factor return file\n\n";
    return;
  }
  std::optional<std::size_t> rf_col;
  if (std::find(factors->names.begin(), factors->names.end(), "rf") != factors->names.end()) {
    rf_col = factors->column("rf");
  }
  std::map<int, std::size_t> rows_of;
  for (std::size_t t = 0; t < factors->periods.size(); ++t) rows_of[factors->periods[t].index()] = t;

  std::vector<std::string> header{"portfolio"};
  std::vector<AlphaModel> models;
  for (auto m : {AlphaModel::capm, AlphaModel::ff3, AlphaModel::carhart4}) {
    bool ok = true;
    for (const auto& f : alpha_model_factors(m)) {
      ok = ok && std::find(factors->names.begin(), factors->names.end(), f) != factors->names.end();
    }
    if (!ok) {
      os << "note: " << to_string(m) << " skipped, factor file lacks its factors\n";
      continue;
    }
    models.push_back(m);
    header.push_back(to_string(m) + "_alpha");
    header.push_back(to_string(m) + "_t");
  }
  std::vector<std::vector<std::string>> rows;
  for (const auto& name : ps.names) {
    Eigen::VectorXd y = to_eigen(ps.values.at(name).at("gross"));
    if (rf_col && name != "Top-Bottom") {
      for (std::size_t t = 0; t < ps.periods.size(); ++t) {
        const auto it = rows_of.find(ps.periods[t].index());
        require(it != rows_of.end(), "factor file lacks period " + ps.periods[t].str());
        y[static_cast<Eigen::Index>(t)] -=
            factors->values(static_cast<Eigen::Index>(it->second), static_cast<Eigen::Index>(*rf_col));
      }
    }
    std::vector<std::string> cells{name};
    for (auto m : models) {
      const auto res = factor_alphas(y, ps.periods, *factors, m, paths.cfg.nw_lags);
      cells.push_back(fmt("%.4f", 100.0 * res.alpha()));
      cells.push_back(fmt("%.3f", res.t_alpha()));
    }
    rows.push_back(cells);
  }
  add_table(os, header, rows);
}

void report_subsamples(std::ostringstream& os, const Paths& paths, Weighting w,
                       const PortfolioSeries& ps, const FactorTable* factors,
                       const IndicatorTable* indicators) {
  os << "-- Top-Bottom subsamples (monthly %, Newey-West t), gross, " << to_string(w)
     << "-weighted --\n";
  const Eigen::VectorXd y = to_eigen(ps.values.at("Top-Bottom").at("gross"));
  std::vector<std::pair<std::string, std::vector<std::string>>> splits;
  auto labels_for = [&](const std::vector<Period>& periods, const std::vector<std::string>& labels) {
    std::map<int, std::string> by;
    for (std::size_t t = 0; t < periods.size(); ++t) by[periods[t].index()] = labels[t];
    std::vector<std::string> out;
    for (const auto& p : ps.periods) {
      const auto it = by.find(p.index());
      out.push_back(it == by.end() ? "na" : it->second);
    }
    return out;
  };
  if (indicators != nullptr) {
    for (std::size_t k = 0; k < indicators->names.size(); ++k) {
      splits.emplace_back(indicators->names[k], labels_for(indicators->periods, indicators->labels[k]));
    }
  }
  if (factors != nullptr &&
      std::find(factors->names.begin(), factors->names.end(), "mkt") != factors->names.end()) {
    const Eigen::VectorXd mkt = factors->values.col(static_cast<Eigen::Index>(factors->column("mkt")));
    splits.emplace_back("lagged_market", labels_for(factors->periods, lagged_sign_indicator(mkt)));
  }
  if (splits.empty()) {
    os << "not available: no indicator or market series\n\n";
    return;
  }
  std::vector<std::vector<std::string>> rows;
  for (const auto& [name, labels] : splits) {
    for (const auto& cell : subsample_stats(y, labels, paths.cfg.nw_lags)) {
      rows.push_back({name, cell.label, std::to_string(cell.n), fmt("%.4f", 100.0 * cell.mean),
                      fmt("%.3f", cell.t_stat)});
    }
  }
  add_table(os, {"indicator", "state", "months", "mean%", "t"}, rows);
}

void report_regret(std::ostringstream& os, const Paths& paths, Weighting w) {
  const auto t = read_csv(paths.per_weighting("regret", w),
                          {"sector_id", "policy", "tau", "r2_ensemble", "r2_star", "gap",
                           "avg_gain", "effective_bound_scaled", "bound_cor3", "bound_cor5", "eta",
                           "delta_tau"});
  os << "-- Regret diagnostics, " << to_string(w) << "-weighted --\n";
  std::vector<std::vector<std::string>> rows;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    auto num = [&](const char* c) { return t.optional_number(i, t.column(c)); };
    rows.push_back({t.rows[i][t.column("sector_id")], t.rows[i][t.column("policy")],
                    t.rows[i][t.column("tau")], fmt("%.5f", num("r2_ensemble")),
                    fmt("%.5f", num("r2_star")), fmt("%.5f", num("gap")),
                    fmt("%.5f", num("avg_gain")), fmt("%.5f", num("effective_bound_scaled")),
                    fmt("%.5f", num("bound_cor3")), fmt("%.5f", num("bound_cor5")),
                    fmt("%.5f", num("eta")), fmt("%.4g", num("delta_tau"))});
  }
  add_table(os,
            {"sector", "policy", "tau", "r2_ensemble", "r2_star", "gap", "avg_gain",
             "eff_bound", "bound_cor3", "bound_cor5", "mean_eta", "delta_tau"},
            rows);

  const auto l = read_csv(paths.per_weighting("lemma1", w), {"sector_id", "sigma2_mode", "tau", "d"});
  std::map<std::pair<std::string, std::string>, std::pair<std::string, double>> last;
  for (std::size_t i = 0; i < l.rows.size(); ++i) {
    last[{l.rows[i][0], l.rows[i][1]}] = {l.rows[i][2], l.number(i, 3)};
  }
  std::vector<std::vector<std::string>> lrows;
  for (const auto& [key, v] : last) {
    lrows.push_back({key.first, key.second, v.first, fmt("%.6f", v.second)});
  }
  os << "-- Realized R2 versus average gain, final prefix --\n";
  add_table(os, {"sector", "sigma2", "tau", "discrepancy"}, lrows);
}

void report_fits(std::ostringstream& os, const Paths& paths, Weighting w) {
  const auto t = read_csv(paths.per_weighting("fits", w), {"sector_id", "model_id", "status"});
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // model -> ok, failed
  for (const auto& row : t.rows) {
    auto& c = counts[row[t.column("model_id")]];
    (row[t.column("status")] == "ok" ? c.first : c.second) += 1;
  }
  os << "-- Forecaster windows, " << to_string(w) << "-weighted --\n";
  std::vector<std::vector<std::string>> rows;
  for (const auto& [m, c] : counts) {
    rows.push_back({m, std::to_string(c.first), std::to_string(c.second)});
  }
  add_table(os, {"model", "fitted", "failed (forecast 0)"}, rows);
}

void stage_report(const Paths& paths) {
  const RunConfig& cfg = paths.cfg;
  std::optional<FactorTable> factors;
  if (!paths.factor_returns().empty() && fs::exists(paths.factor_returns())) {
    factors = read_factor_table(paths.factor_returns());
  }
  std::optional<IndicatorTable> indicators;
  if (!paths.indicators().empty() && fs::exists(paths.indicators())) {
    indicators = read_indicators(paths.indicators());
  }

  std::ostringstream os;
  os << "# " << provenance(cfg, Stage::report) << "\n";
  os << "Sector rotation backtest\n\n";
  os << "primary learning-rate policy: " << to_string(cfg.ensemble.eta.kind) << "\n";
  os << "models:";
  for (const auto& m : cfg.models) os << " " << m.label();
  os << "\n";
  os << "schedule: " << to_string(cfg.schedule.window_kind) << " " << cfg.schedule.train_length
     << " months, refit every " << cfg.schedule.refit_every << ", factors "
     << to_string(cfg.factor_mode) << "\n\n";

  std::vector<std::string> columns{"gross", "turnover"};
  for (double c : cfg.costs_bps) columns.push_back("net_" + cost_name(c));
  for (Weighting w : cfg.weightings) {
    for (const char* stem : {"panel", "ensemble", "regret", "lemma1"}) {
      require_file(paths.per_weighting(stem, w), "ensemble");
    }
    require_file(paths.per_weighting("fits", w), "forecast");
    require_file(paths.per_weighting("portfolios", w), "backtest");
    os << "==== " << to_string(w) << "-weighted sectors ====\n\n";
    report_r2(os, paths, w);
    const auto ps = read_portfolios(paths.per_weighting("portfolios", w), columns);
    report_performance(os, paths, w, ps);
    report_alphas(os, paths, w, ps, factors ? &*factors : nullptr);
    report_subsamples(os, paths, w, ps, factors ? &*factors : nullptr,
                      indicators ? &*indicators : nullptr);
    report_regret(os, paths, w);
    report_fits(os, paths, w);
  }

  const fs::path path = paths.out / "report.txt";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << os.str();
  out.close();
  if (!out) throw ValidationError("failed writing " + path.string());
}

void run_one(const Paths& paths, Stage stage) {
  try {
    switch (stage) {
      case Stage::synth: stage_synth(paths); break;
      case Stage::aggregate: stage_aggregate(paths); break;
      case Stage::forecast: stage_forecast(paths); break;
      case Stage::ensemble: stage_ensemble(paths); break;
      case Stage::backtest: stage_backtest(paths); break;
      case Stage::report: stage_report(paths); break;
      case Stage::all: break;
    }
  } catch (const NumericalError& e) {
    throw NumericalError("[" + to_string(stage) + "] " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError("[" + to_string(stage) + "] " + e.what());
  } catch (const std::exception& e) {
    throw ValidationError("[" + to_string(stage) + "] " + e.what());
  }
}

}  // namespace

void run_stage(const RunConfig& config, Stage stage) {
  try {
    config.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("[config] ") + e.what());
  }
  const Paths paths{config, config.out_dir};
  fs::create_directories(paths.out);
  if (stage != Stage::all) {
    run_one(paths, stage);
    return;
  }
  for (auto s : {Stage::synth, Stage::aggregate, Stage::forecast, Stage::ensemble,
                 Stage::backtest, Stage::report}) {
    if (s == Stage::synth && !config.synthetic_inputs()) continue;
    run_one(paths, s);
  }
}

}  // namespace mwe
