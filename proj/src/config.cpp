#include "mwe/config.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mwe/io.hpp"
#include "mwe/rng.hpp"

namespace mwe {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
  if (text.empty() || text[0] == '-') throw ValidationError(key + ": expected a non-negative integer");
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(text.c_str(), &end, 10);
  if (end != text.c_str() + text.size() || errno == ERANGE) {
    throw ValidationError(key + ": expected a non-negative integer, got '" + text + "'");
  }
  return v;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
  return static_cast<std::size_t>(parse_u64(key, text));
}

double parse_double(const std::string& key, const std::string& text) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE || !std::isfinite(v)) {
    throw ValidationError(key + ": expected a finite number, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ValidationError(key + ": expected true or false, got '" + text + "'");
}

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::string eviction_str(EvictionPolicy::Mode m) {
  switch (m) {
    case EvictionPolicy::Mode::naive_streak: return "naive_streak";
    case EvictionPolicy::Mode::clip_mass: return "clip_mass";
    default: return "off";
  }
}

EvictionPolicy::Mode parse_eviction(const std::string& text) {
  if (text == "off") return EvictionPolicy::Mode::off;
  if (text == "naive_streak") return EvictionPolicy::Mode::naive_streak;
  if (text == "clip_mass") return EvictionPolicy::Mode::clip_mass;
  throw ValidationError("eviction: expected off, naive_streak or clip_mass, got '" + text + "'");
}

template <class T, class F>
std::string join(const std::vector<T>& items, F&& show) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ",";
    out += show(items[i]);
  }
  return out;
}

std::string models_str(const std::vector<ForecasterSpec>& specs) {
  return join(specs, [](const ForecasterSpec& s) {
    const std::string kind = to_string(s.kind);
    return s.label() == kind ? kind : s.label() + ":" + kind;
  });
}

// "kind" or "id:kind" entries.
std::vector<ForecasterSpec> parse_models(const std::string& text, std::size_t folds) {
  std::vector<ForecasterSpec> out;
  for (const auto& item : split_list(text)) {
    ForecasterSpec spec;
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      spec.kind = parse_forecaster_kind(item);
    } else {
      spec.id = trim(item.substr(0, colon));
      spec.kind = parse_forecaster_kind(trim(item.substr(colon + 1)));
    }
    spec.cv_folds = folds;
    out.push_back(spec);
  }
  if (out.empty()) throw ValidationError("models: at least one forecaster is required");
  return out;
}

std::string regimes_str(const std::vector<Regime>& regimes) {
  return join(regimes, [](const Regime& r) {
    return std::to_string(r.start) + ":" + std::to_string(r.best);
  });
}

std::vector<Regime> parse_regimes(const std::string& text) {
  std::vector<Regime> out;
  for (const auto& item : split_list(text)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      throw ValidationError("synth.regimes: expected start:factor entries, got '" + item + "'");
    }
    out.push_back({parse_size("synth.regimes", trim(item.substr(0, colon))),
                   parse_size("synth.regimes", trim(item.substr(colon + 1)))});
  }
  return out;
}

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    auto path_key = [&k](const std::string& name, std::filesystem::path RunConfig::*field) {
      k.push_back({name, [field](const RunConfig& c) { return (c.*field).string(); },
                   [field](RunConfig& c, const std::string& v) { c.*field = v; }});
    };
    auto size_key = [&k](const std::string& name, auto getter) {
      k.push_back({name, [getter](const RunConfig& c) {
                     return std::to_string(getter(const_cast<RunConfig&>(c)));
                   },
                   [getter, name](RunConfig& c, const std::string& v) {
                     getter(c) = parse_size(name, v);
                   }});
    };
    auto double_key = [&k](const std::string& name, auto getter) {
      k.push_back({name, [getter](const RunConfig& c) {
                     return format_double(getter(const_cast<RunConfig&>(c)));
                   },
                   [getter, name](RunConfig& c, const std::string& v) {
                     getter(c) = parse_double(name, v);
                   }});
    };
    auto bool_key = [&k](const std::string& name, auto getter) {
      k.push_back({name, [getter](const RunConfig& c) {
                     return bool_str(getter(const_cast<RunConfig&>(c)));
                   },
                   [getter, name](RunConfig& c, const std::string& v) {
                     getter(c) = parse_bool(name, v);
                   }});
    };

    k.push_back({"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& v) {
                   c.seed = parse_u64("seed", v);
                   c.has_seed = true;
                 }});
    path_key("assets", &RunConfig::assets);
    path_key("characteristics", &RunConfig::characteristics);
    path_key("factor_returns", &RunConfig::factor_returns);
    path_key("indicators", &RunConfig::indicators);
    path_key("external_predictions", &RunConfig::external_predictions);

    size_key("synth.sectors", [](RunConfig& c) -> std::size_t& { return c.synthetic.sectors; });
    size_key("synth.assets_per_sector",
             [](RunConfig& c) -> std::size_t& { return c.synthetic.assets_per_sector; });
    size_key("synth.factors", [](RunConfig& c) -> std::size_t& { return c.synthetic.factors; });
    size_key("synth.tau", [](RunConfig& c) -> std::size_t& { return c.synthetic.tau; });
    double_key("synth.snr", [](RunConfig& c) -> double& { return c.synthetic.snr; });
    double_key("synth.return_sd", [](RunConfig& c) -> double& { return c.synthetic.return_sd; });
    double_key("synth.char_noise", [](RunConfig& c) -> double& { return c.synthetic.char_noise; });
    double_key("synth.missing_rate",
               [](RunConfig& c) -> double& { return c.synthetic.missing_rate; });
    double_key("synth.ar", [](RunConfig& c) -> double& { return c.synthetic.ar; });
    bool_key("synth.churn", [](RunConfig& c) -> bool& { return c.synthetic.churn; });
    k.push_back({"synth.regimes",
                 [](const RunConfig& c) { return regimes_str(c.synthetic.regimes); },
                 [](RunConfig& c, const std::string& v) { c.synthetic.regimes = parse_regimes(v); }});
    k.push_back({"synth.start", [](const RunConfig& c) { return c.synthetic.start.str(); },
                 [](RunConfig& c, const std::string& v) { c.synthetic.start = Period::parse(v); }});

    size_key("train_length", [](RunConfig& c) -> std::size_t& { return c.schedule.train_length; });
    size_key("refit_every", [](RunConfig& c) -> std::size_t& { return c.schedule.refit_every; });
    k.push_back({"window", [](const RunConfig& c) { return to_string(c.schedule.window_kind); },
                 [](RunConfig& c, const std::string& v) {
                   c.schedule.window_kind = parse_window_kind(v);
                 }});
    k.push_back({"factor_mode", [](const RunConfig& c) { return to_string(c.factor_mode); },
                 [](RunConfig& c, const std::string& v) { c.factor_mode = parse_factor_mode(v); }});
    double_key("ppca.tol", [](RunConfig& c) -> double& { return c.ppca.tol; });
    size_key("ppca.max_iter", [](RunConfig& c) -> std::size_t& { return c.ppca.max_iter; });
    double_key("ppca.min_observed_fraction",
               [](RunConfig& c) -> double& { return c.ppca.min_observed_fraction; });

    k.push_back({"models", [](const RunConfig& c) { return models_str(c.models); },
                 [](RunConfig& c, const std::string& v) {
                   const std::size_t folds = c.models.empty() ? 5 : c.models.front().cv_folds;
                   c.models = parse_models(v, folds);
                 }});
    k.push_back({"cv_folds",
                 [](const RunConfig& c) {
                   return std::to_string(c.models.empty() ? 5 : c.models.front().cv_folds);
                 },
                 [](RunConfig& c, const std::string& v) {
                   const std::size_t folds = parse_size("cv_folds", v);
                   for (auto& m : c.models) m.cv_folds = folds;
                 }});

    k.push_back({"eta_policy", [](const RunConfig& c) { return to_string(c.ensemble.eta.kind); },
                 [](RunConfig& c, const std::string& v) { c.ensemble.eta.kind = parse_eta_kind(v); }});
    k.push_back({"policies",
                 [](const RunConfig& c) {
                   return join(c.policies, [](EtaKind e) { return to_string(e); });
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.policies.clear();
                   for (const auto& item : split_list(v)) c.policies.push_back(parse_eta_kind(item));
                 }});
    double_key("fixed_eta", [](RunConfig& c) -> double& { return c.ensemble.eta.fixed_eta; });
    size_key("eta_grid_n", [](RunConfig& c) -> std::size_t& { return c.eta_grid_n; });
    double_key("eta_grid_lo", [](RunConfig& c) -> double& { return c.eta_grid_lo; });
    double_key("eta_grid_hi", [](RunConfig& c) -> double& { return c.eta_grid_hi; });
    size_key("lookback", [](RunConfig& c) -> std::size_t& { return c.ensemble.eta.lookback; });
    bool_key("warm_start", [](RunConfig& c) -> bool& { return c.ensemble.eta.warm_start; });
    size_key("min_obs", [](RunConfig& c) -> std::size_t& { return c.ensemble.min_obs; });
    k.push_back({"sigma_window",
                 [](const RunConfig& c) {
                   return c.ensemble.sigma_window ? std::to_string(*c.ensemble.sigma_window)
                                                  : std::string("expanding");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "expanding") {
                     c.ensemble.sigma_window.reset();
                   } else {
                     c.ensemble.sigma_window = parse_size("sigma_window", v);
                   }
                 }});
    k.push_back({"eviction", [](const RunConfig& c) { return eviction_str(c.ensemble.eviction.mode); },
                 [](RunConfig& c, const std::string& v) {
                   c.ensemble.eviction.mode = parse_eviction(v);
                 }});
    size_key("eviction_window",
             [](RunConfig& c) -> std::size_t& { return c.ensemble.eviction.window; });
    size_key("eviction_streak",
             [](RunConfig& c) -> std::size_t& { return c.ensemble.eviction.streak; });
    double_key("eviction_clip_rate",
               [](RunConfig& c) -> double& { return c.ensemble.eviction.clip_rate; });

    k.push_back({"scheme",
                 [](const RunConfig& c) {
                   return c.scheme_sizes.empty()
                              ? std::string("standard")
                              : join(c.scheme_sizes, [](std::size_t s) { return std::to_string(s); });
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.scheme_sizes.clear();
                   if (v == "standard") return;
                   for (const auto& item : split_list(v)) {
                     c.scheme_sizes.push_back(parse_size("scheme", item));
                   }
                 }});
    k.push_back({"costs",
                 [](const RunConfig& c) {
                   return join(c.costs_bps, [](double x) { return format_double(x); });
                 },
                 [](RunConfig& c, const std::string& v) { c.costs_bps = parse_double_list(v); }});
    k.push_back({"weighting",
                 [](const RunConfig& c) {
                   return join(c.weightings, [](Weighting w) { return to_string(w); });
                 },
                 [](RunConfig& c, const std::string& v) {
                   c.weightings.clear();
                   for (const auto& item : split_list(v)) c.weightings.push_back(parse_weighting(item));
                 }});
    bool_key("charge_initial", [](RunConfig& c) -> bool& { return c.charge_initial; });
    bool_key("cost_per_point", [](RunConfig& c) -> bool& { return c.cost_per_point; });
    k.push_back({"nw_lags",
                 [](const RunConfig& c) {
                   return c.nw_lags ? std::to_string(*c.nw_lags) : std::string("auto");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "auto") {
                     c.nw_lags.reset();
                   } else {
                     c.nw_lags = parse_size("nw_lags", v);
                   }
                 }});
    return k;
  }();
  return table;
}

}  // namespace

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(parse_double("list", item));
  return out;
}

RunConfig::RunConfig() {
  for (auto kind : {ForecasterKind::ols, ForecasterKind::lasso, ForecasterKind::pcr}) {
    ForecasterSpec s;
    s.kind = kind;
    models.push_back(s);
  }
}

FactorSchedule RunConfig::factor_schedule() const {
  FactorSchedule f;
  f.mode = factor_mode;
  // Factors for the first forecast rows are fitted on the initial training
  // sample, then refreshed on the refit calendar.
  f.first_block = schedule.train_length + 1;
  f.block = schedule.refit_every;
  f.train_length = schedule.train_length;
  f.ppca = ppca;
  return f;
}

QuantileScheme RunConfig::scheme(std::size_t n_sectors) const {
  if (scheme_sizes.empty()) return QuantileScheme::standard(n_sectors);
  auto s = QuantileScheme::from_sizes(scheme_sizes);
  require(s.total() == n_sectors, "scheme: sizes sum to " + std::to_string(s.total()) +
                                      " but there are " + std::to_string(n_sectors) + " sectors");
  return s;
}

void RunConfig::validate() const {
  require(has_seed, "config: seed is mandatory (set `seed = <u64>` or pass --seed)");
  auto must_exist = [](const std::filesystem::path& p, const char* what) {
    if (!p.empty() && !std::filesystem::exists(p)) {
      throw ValidationError(std::string("config: ") + what + " file not found: " + p.string());
    }
  };
  must_exist(assets, "assets");
  must_exist(characteristics, "characteristics");
  must_exist(factor_returns, "factor_returns");
  must_exist(indicators, "indicators");
  must_exist(external_predictions, "external_predictions");
  if (!assets.empty()) {
    require(!characteristics.empty(), "config: characteristics is required with assets");
  } else {
    require(characteristics.empty() && factor_returns.empty() && indicators.empty(),
            "config: input files given without an assets file");
    synthetic.validate();
  }
  require(!out_dir.empty(), "config: out directory is empty");
  schedule.validate();
  require(!models.empty(), "config: at least one model is required");
  for (const auto& m : models) m.validate();
  ensemble.eta.validate();
  require(ensemble.min_obs >= 1, "config: min_obs must be at least 1");
  require(!policies.empty(), "config: policies is empty");
  require(!weightings.empty(), "config: weighting is empty");
  require(!costs_bps.empty(), "config: costs is empty");
  for (double c : costs_bps) require(c >= 0.0, "config: costs must be non-negative");
  require(ppca.tol > 0.0 && ppca.max_iter >= 1, "config: invalid ppca settings");
}

std::string RunConfig::canonical() const {
  std::vector<std::string> lines;
  for (const auto& k : keys()) lines.push_back(k.name + " = " + k.get(*this));
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + "\n";
  return out;
}

std::string RunConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(canonical())));
  return buf;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "out") {
    out_dir = value;
    return;
  }
  const auto& table = keys();
  const auto it = std::find_if(table.begin(), table.end(),
                               [&](const Key& k) { return k.name == key; });
  if (it == table.end()) throw ValidationError("unknown config key '" + key + "'");
  it->set(*this, value);
  if (key.rfind("eta_grid_", 0) == 0) {
    require(eta_grid_n >= 1 && eta_grid_lo > 0.0 && eta_grid_hi >= eta_grid_lo,
            "config: invalid eta grid");
    ensemble.eta.grid = default_eta_grid(eta_grid_n, eta_grid_lo, eta_grid_hi);
  }
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ValidationError(where + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto [it, fresh] = seen.emplace(key, line_no);
    if (!fresh) {
      throw ValidationError(where + ": duplicate key '" + key + "' (first on line " +
                            std::to_string(it->second) + ")");
    }
    try {
      config.set(key, value);
    } catch (const ValidationError& e) {
      throw ValidationError(where + ": " + e.what());
    }
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

}  // namespace mwe
