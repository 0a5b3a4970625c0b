#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "mwe/config.hpp"
#include "mwe/io.hpp"
#include "mwe/pipeline.hpp"
#include "mwe/synthetic.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("mwe_unit_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return {};
}

bool contains(const std::string& haystack, const std::string& needle) {
  return haystack.find(needle) != std::string::npos;
}

// Small synthetic run: 6 sectors, 200 months, 60-month training windows.
mwe::RunConfig small_config(const fs::path& out) {
  auto c = mwe::parse_config(
      "seed = 3\n"
      "synth.tau = 200\n"
      "synth.sectors = 6\n"
      "train_length = 60\n"
      "weighting = equal\n");
  c.out_dir = out;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MWE_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::vector<std::string>> rows_of(const fs::path& path) {
  const auto t = mwe::read_csv(path, {});
  std::vector<std::vector<std::string>> out{t.header};
  out.insert(out.end(), t.rows.begin(), t.rows.end());
  return out;
}

}  // namespace

TEST_CASE("csv reading errors name the file and line") {
  const auto dir = scratch("csv");
  write_text(dir / "empty.csv", "");
  auto msg = error_of([&] { mwe::read_asset_returns(dir / "empty.csv"); });
  CHECK(contains(msg, "empty file, missing header"));

  write_text(dir / "cols.csv", "period,asset_id,return\n2000-01,a,0.1\n");
  msg = error_of([&] { mwe::read_asset_returns(dir / "cols.csv"); });
  CHECK(contains(msg, "header lacks column(s): market_cap, sector_code"));

  write_text(dir / "dup.csv",
             "# comment\nperiod,asset_id,return,market_cap,sector_code\n"
             "2000-01,a,0.1,10,11\n2000-01,b,0.1,10,11\n2000-01,a,0.2,10,11\n");
  msg = error_of([&] { mwe::read_asset_returns(dir / "dup.csv"); });
  CHECK(contains(msg, "duplicate (period, asset) 2000-01, a on lines 3 and 5"));

  write_text(dir / "num.csv",
             "period,asset_id,return,market_cap,sector_code\n2000-01,a,abc,10,11\n");
  msg = error_of([&] { mwe::read_asset_returns(dir / "num.csv"); });
  CHECK(contains(msg, "num.csv:2"));

  write_text(dir / "chars.csv",
             "period,asset_id,factor,value\n2000-01,a,bm,0.5\n2000-01,a,bm,NA\n");
  msg = error_of([&] { mwe::read_characteristics(dir / "chars.csv"); });
  CHECK(contains(msg, "on lines 2 and 3"));
  write_text(dir / "chars.csv", "period,asset_id,factor,value\n2000-01,a,bm,NA\n");
  CHECK(std::isnan(mwe::read_characteristics(dir / "chars.csv").front().value));

  write_text(dir / "factors.csv", "period,mkt\n2000-02,0.01\n2000-01,0.02\n");
  CHECK_THROWS_AS(mwe::read_factor_table(dir / "factors.csv"), mwe::ValidationError);
}

TEST_CASE("file round trips are exact") {
  const auto dir = scratch("roundtrip");
  mwe::SyntheticSpec spec;
  spec.tau = 40;
  spec.sectors = 3;
  const auto data = mwe::generate_synthetic(spec);

  mwe::FactorSchedule sched;
  sched.first_block = 20;
  sched.block = 10;
  sched.train_length = 19;
  const auto panels = mwe::build_sector_panels(data.assets, sched);
  mwe::write_sector_panel(dir / "s.csv", "test", panels[0]);
  const auto back = mwe::read_sector_panel(dir / "s.csv", panels[0].sector_id);
  CHECK(back.periods == panels[0].periods);
  CHECK(back.returns_eq == panels[0].returns_eq);
  CHECK(back.returns_cap == panels[0].returns_cap);
  CHECK(back.factors == panels[0].factors);
  CHECK(back.factor_names == panels[0].factor_names);
  CHECK(read_text(dir / "s.csv").rfind("# test\n", 0) == 0);

  mwe::write_asset_returns(dir / "a.csv", "test", data.assets.observations());
  const auto assets = mwe::read_asset_returns(dir / "a.csv");
  REQUIRE(assets.size() == data.assets.observations().size());
  for (std::size_t i = 0; i < assets.size(); ++i) {
    CHECK(assets[i].ret == data.assets.observations()[i].ret);
    CHECK(assets[i].market_cap == data.assets.observations()[i].market_cap);
  }

  mwe::write_factor_table(dir / "f.csv", "test", data.factor_returns);
  CHECK(mwe::read_factor_table(dir / "f.csv").values == data.factor_returns.values);

  Eigen::MatrixXd f(2, 2);
  f << 0.1, 1.0 / 3.0, -0.2, 1e-300;
  std::map<std::string, mwe::PredictionPanel> pp;
  pp.emplace("10", mwe::PredictionPanel(f, Eigen::Vector2d(0.05, -0.07), {"x", "y"},
                                        {mwe::Period{2000, 1}, mwe::Period{2000, 2}}));
  mwe::write_prediction_panels(dir / "p.csv", "test", pp);
  const auto pb = mwe::read_prediction_panels(dir / "p.csv");
  CHECK(pb.at("10").forecasts() == f);
  CHECK(pb.at("10").model_ids() == std::vector<std::string>{"x", "y"});

  // A model missing one period is rejected.
  write_text(dir / "gap.csv",
             "period,sector_id,model_id,forecast,realized\n"
             "2000-01,10,x,0.1,0.05\n2000-01,10,y,0.1,0.05\n2000-02,10,x,0.1,0.02\n");
  CHECK(contains(error_of([&] { mwe::read_prediction_panels(dir / "gap.csv"); }), "lacks a forecast"));
}

TEST_CASE("config parsing and validation") {
  auto c = mwe::parse_config("seed = 9  # trailing comment\n\ntrain_length = 48\neta_policy = cor3\n");
  CHECK(c.seed == 9);
  CHECK(c.schedule.train_length == 48);
  CHECK(c.ensemble.eta.kind == mwe::EtaKind::cor3);
  CHECK_NOTHROW(c.validate());

  CHECK(contains(error_of([] { mwe::parse_config("sead = 1\n"); }), "unknown config key 'sead'"));
  CHECK(contains(error_of([] { mwe::parse_config("seed = 1\nseed = 2\n"); }),
                 "config:2: duplicate key 'seed' (first on line 1)"));
  CHECK(contains(error_of([] { mwe::parse_config("seed = -1\n"); }), "config:1"));
  CHECK(contains(error_of([] { mwe::parse_config("just words\n"); }), "expected key = value"));

  auto unseeded = mwe::parse_config("train_length = 48\n");
  CHECK(contains(error_of([&] { unseeded.validate(); }), "seed is mandatory"));

  auto missing = mwe::parse_config("seed = 1\nassets = /nonexistent/assets.csv\n");
  CHECK_THROWS_AS(missing.validate(), mwe::ValidationError);

  // The output directory does not enter the hash; everything else does.
  auto a = mwe::parse_config("seed = 1\n");
  auto b = a;
  b.set("out", "/tmp/elsewhere");
  CHECK(a.hash() == b.hash());
  CHECK(a.hash().size() == 16);
  b.set("seed", "2");
  CHECK(a.hash() != b.hash());
  auto d = a;
  d.set("costs", "5,10");
  CHECK(a.hash() != d.hash());
  CHECK(mwe::parse_config(a.canonical()).hash() == a.hash());

  CHECK(mwe::parse_double_list("5, 10,15") == std::vector<double>{5, 10, 15});
  CHECK_THROWS_AS(mwe::parse_double_list("5,x"), mwe::ValidationError);
  CHECK(a.scheme(6).sizes == std::vector<std::size_t>{1, 1, 2, 1, 1});
  d.set("scheme", "2,2");
  CHECK_THROWS_AS(d.scheme(6), mwe::ValidationError);
}

TEST_CASE("synthetic data") {
  mwe::SyntheticSpec spec;
  spec.tau = 120;
  const auto a = mwe::generate_synthetic(spec);
  const auto b = mwe::generate_synthetic(spec);
  REQUIRE(a.assets.observations().size() == b.assets.observations().size());
  for (std::size_t i = 0; i < a.assets.observations().size(); ++i) {
    CHECK(a.assets.observations()[i].ret == b.assets.observations()[i].ret);
  }
  CHECK(a.mu == b.mu);
  spec.seed = 2;
  CHECK(mwe::generate_synthetic(spec).mu != a.mu);

  // As SNR grows, realized stream returns collapse onto the conditional mean.
  mwe::StreamSpec ss;
  ss.tau = 2000;
  double prev = 0.0;
  for (double snr : {0.05, 1.0, 100.0, 1e6}) {
    ss.snr = snr;
    const auto s = mwe::generate_stream(ss);
    const double r2 = mwe::r2_oos(s.panel.realized(), s.mu);
    CHECK(r2 > prev);
    prev = r2;
  }
  CHECK(prev > 0.9999);

  // A regime switch moves the hindsight-best model.
  ss.snr = 0.05;
  ss.models = 3;
  ss.regimes = {{0, 0}, {1000, 2}};
  const auto s = mwe::generate_stream(ss);
  auto best_in = [&](std::size_t begin, std::size_t end) {
    const auto sub = s.panel.slice(begin, end);
    std::size_t best = 0;
    double best_r2 = -1e300;
    for (std::size_t l = 0; l < sub.models(); ++l) {
      const double r2 = mwe::r2_oos(sub.realized(), sub.forecasts().col(static_cast<Eigen::Index>(l)));
      if (r2 > best_r2) {
        best_r2 = r2;
        best = l;
      }
    }
    return best;
  };
  CHECK(best_in(0, 1000) == 0);
  CHECK(best_in(1000, 2000) == 2);
  CHECK(s.best[999] == 0);
  CHECK(s.best[1000] == 2);

  mwe::StreamSpec bad;
  bad.snr = 0.0;
  CHECK_THROWS_AS(bad.validate(), mwe::ValidationError);
  mwe::SyntheticSpec none;
  none.sectors = 0;
  CHECK_THROWS_AS(none.validate(), mwe::ValidationError);
}

TEST_CASE("pipeline stages, provenance and byte-identical reruns") {
  const auto root = scratch("pipeline");
  const auto c1 = small_config(root / "a");
  const auto c2 = small_config(root / "b");
  mwe::run_pipeline(c1);
  mwe::run_pipeline(c2);
  for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), root / "a");
    CHECK_MESSAGE(read_text(entry.path()) == read_text(root / "b" / rel), rel.string());
  }
  const auto head = read_text(root / "a" / "ensemble_equal.csv").substr(0, 80);
  CHECK(contains(head, "# config_hash=" + c1.hash() + " seed=3 stage=ensemble"));
  const auto report = read_text(root / "a" / "report.txt");
  for (const char* needle : {"Out-of-sample R2", "Net 15 bps", "carhart4", "Top-Bottom", "Regret"}) {
    CHECK_MESSAGE(contains(report, needle), needle);
  }

  // Stages can be rerun one at a time on the previous stage's files.
  fs::remove(root / "a" / "report.txt");
  mwe::run_stage(c1, mwe::Stage::report);
  CHECK(read_text(root / "a" / "report.txt") == read_text(root / "b" / "report.txt"));

  auto stripped = small_config(root / "empty");
  CHECK(contains(error_of([&] { mwe::run_stage(stripped, mwe::Stage::ensemble); }), "[ensemble]"));
  CHECK(mwe::parse_stage("backtest") == mwe::Stage::backtest);
  CHECK_THROWS_AS(mwe::parse_stage("deploy"), mwe::ValidationError);
}

TEST_CASE("a single model collapses the regret gap") {
  const auto root = scratch("single");
  auto c = small_config(root / "run");
  c.set("models", "ols");
  c.set("policies", "fixed,feasible");
  mwe::run_stage(c, mwe::Stage::synth);
  mwe::run_stage(c, mwe::Stage::aggregate);
  mwe::run_stage(c, mwe::Stage::forecast);
  mwe::run_stage(c, mwe::Stage::ensemble);
  const auto t = mwe::read_csv(root / "run" / "regret_equal.csv", {"gap", "effective_bound"});
  REQUIRE(!t.rows.empty());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    CHECK(std::abs(t.number(i, t.column("gap"))) < 1e-12);
    CHECK(std::abs(t.number(i, t.column("effective_bound"))) < 1e-15);
  }
}

TEST_CASE("cli exit codes") {
  const auto root = scratch("cli");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("--bogus-flag") == 2);
  CHECK(run_cli("all --out " + (root / "x").string()) == 2);  // no seed
  CHECK(run_cli("--seed 1 --set nope=1 --out " + (root / "x").string()) == 2);
  CHECK(run_cli("--seed 1 --set train_length --out " + (root / "x").string()) == 2);
  CHECK(run_cli("--config " + (root / "missing.cfg").string()) == 2);
  CHECK(run_cli("report --stage synth --seed 1 --out " + (root / "x").string()) == 2);

  write_text(root / "run.cfg", "seed = 3\nsynth.tau = 200\nsynth.sectors = 6\ntrain_length = 60\n");
  const auto out = (root / "ok").string();
  CHECK(run_cli("synth --config " + (root / "run.cfg").string() + " --out " + out) == 0);
  CHECK(fs::exists(root / "ok" / "data" / "assets.csv"));
  CHECK(run_cli("--config " + (root / "run.cfg").string() + " --out " + out +
                " --stage aggregate") == 0);
  CHECK(fs::exists(root / "ok" / "sectors" / "notes.csv"));

  // All-zero returns leave the second moment undefined. The run completes with
  // every period unscored and R2 reported as nan rather than aborting.
  const auto assets = mwe::read_asset_returns(root / "ok" / "data" / "assets.csv");
  std::vector<mwe::AssetReturn> zero = assets;
  for (auto& a : zero) a.ret = 0.0;
  mwe::write_asset_returns(root / "zero_assets.csv", "test", zero);
  write_text(root / "zero.cfg",
             "seed = 3\ntrain_length = 60\nweighting = equal\nassets = " +
                 (root / "zero_assets.csv").string() + "\ncharacteristics = " +
                 (root / "ok" / "data" / "characteristics.csv").string() + "\n");
  CHECK(run_cli("--config " + (root / "zero.cfg").string() + " --out " + (root / "z").string()) == 0);
  const auto ens = mwe::read_csv(root / "z" / "ensemble_equal.csv", {"scored"});
  REQUIRE(!ens.rows.empty());
  for (const auto& row : ens.rows) CHECK(row[ens.column("scored")] == "0");
  CHECK(contains(read_text(root / "z" / "report.txt"), "pooled  nan"));
}
