#pragma once

#include <string>

#include "mwe/config.hpp"

namespace mwe {

enum class Stage { synth, aggregate, forecast, ensemble, backtest, report, all };
std::string to_string(Stage s);
Stage parse_stage(const std::string& text);

/// `# config_hash=<hex> seed=<u64> stage=<name>`, without the leading "# ".
std::string provenance(const RunConfig& config, Stage stage);

/// Runs one stage on the files the previous stages left in config.out_dir.
/// `all` runs every stage in order, skipping synth when inputs are given.
/// Errors keep their type (validation or numerical) and gain a "[stage]"
/// prefix.
void run_stage(const RunConfig& config, Stage stage);

inline void run_pipeline(const RunConfig& config) { run_stage(config, Stage::all); }

}  // namespace mwe
