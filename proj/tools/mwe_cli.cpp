#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mwe/pipeline.hpp"

namespace {

constexpr int kValidation = 2;
constexpr int kNumerical = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiplicative-weights ensembles for sector rotation"};
  app.fallthrough();
  app.require_subcommand(0, 1);

  std::string config_path;
  std::optional<std::string> seed, out, eta_policy, weighting, costs;
  std::string stage_name;
  std::vector<std::string> overrides;

  app.add_option("--config", config_path, "Flat key = value configuration file")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "64-bit seed (overrides the config)");
  app.add_option("--out", out, "Output directory");
  app.add_option("--stage", stage_name,
                 "synth, aggregate, forecast, ensemble, backtest, report or all");
  app.add_option("--eta-policy", eta_policy, "fixed, cor3, cor5 or feasible");
  app.add_option("--weighting", weighting, "equal or cap (comma list allowed)");
  app.add_option("--costs", costs, "Cost levels in basis points, e.g. 5,10,15");
  app.add_option("--set", overrides, "Extra key=value settings, applied last");

  std::vector<std::pair<CLI::App*, mwe::Stage>> subs;
  for (auto s : {mwe::Stage::synth, mwe::Stage::aggregate, mwe::Stage::forecast,
                 mwe::Stage::ensemble, mwe::Stage::backtest, mwe::Stage::report,
                 mwe::Stage::all}) {
    subs.emplace_back(app.add_subcommand(mwe::to_string(s), "Run the " + mwe::to_string(s) +
                                                                " stage"),
                      s);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidation;
  }

  try {
    mwe::RunConfig config = config_path.empty() ? mwe::RunConfig{} : mwe::load_config(config_path);
    if (seed) config.set("seed", *seed);
    if (out) config.set("out", *out);
    if (eta_policy) config.set("eta_policy", *eta_policy);
    if (weighting) config.set("weighting", *weighting);
    if (costs) config.set("costs", *costs);
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw mwe::ValidationError("--set expects key=value, got '" + kv + "'");
      config.set(kv.substr(0, eq), kv.substr(eq + 1));
    }

    std::optional<mwe::Stage> stage;
    for (const auto& [sub, s] : subs) {
      if (sub->parsed()) stage = s;
    }
    if (!stage_name.empty()) {
      const auto named = mwe::parse_stage(stage_name);
      if (stage && *stage != named) {
        throw mwe::ValidationError("--stage " + stage_name + " conflicts with the subcommand");
      }
      stage = named;
    }
    mwe::run_stage(config, stage.value_or(mwe::Stage::all));
  } catch (const mwe::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  } catch (const mwe::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return 0;
}
