#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "mwe/factors.hpp"
#include "mwe/ppca.hpp"
#include "mwe/rng.hpp"

using mwe::AssetPanel;
using mwe::AssetReturn;
using mwe::FactorValue;
using mwe::Period;

namespace {

double corr(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const Eigen::ArrayXd x = a.array() - a.mean();
  const Eigen::ArrayXd y = b.array() - b.mean();
  return (x * y).sum() / std::sqrt((x * x).sum() * (y * y).sum());
}

// Largest principal angle between two column spaces, from an SVD oracle.
double subspace_sine(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  const Eigen::MatrixXd qa = Eigen::HouseholderQR<Eigen::MatrixXd>(A).householderQ() *
                             Eigen::MatrixXd::Identity(A.rows(), A.cols());
  const Eigen::MatrixXd qb = Eigen::HouseholderQR<Eigen::MatrixXd>(B).householderQ() *
                             Eigen::MatrixXd::Identity(B.rows(), B.cols());
  const Eigen::VectorXd s = Eigen::JacobiSVD<Eigen::MatrixXd>(qa.transpose() * qb).singularValues();
  const double c = std::min(1.0, s.minCoeff());
  return std::sqrt(std::max(0.0, 1.0 - c * c));
}

Period month(int t) { return Period::from_index(1990 * 12 + t); }

// One sector "s", `assets` members, characteristic "x" = signal + noise.
AssetPanel signal_panel(const Eigen::VectorXd& signal, int assets, double noise,
                        std::uint64_t seed, int missing_asset = -1) {
  mwe::Rng rng(seed, "signal-panel");
  std::vector<AssetReturn> obs;
  std::vector<FactorValue> vals;
  for (int t = 0; t < signal.size(); ++t) {
    for (int a = 0; a < assets; ++a) {
      const std::string id = "a" + std::to_string(a);
      obs.push_back({month(t), id, 0.01, 100.0, "s"});
      if (a == missing_asset) continue;
      vals.push_back({month(t), id, "x", (1.0 + 0.2 * a) * signal[t] + 3.0 * a + noise * rng.normal()});
    }
  }
  return {obs, vals};
}

}  // namespace

TEST_CASE("ppca recovers a noiseless rank-1 direction") {
  mwe::Rng rng(1, "rank1");
  Eigen::VectorXd w(6), f(80);
  for (int i = 0; i < 6; ++i) w[i] = rng.normal();
  for (int j = 0; j < 80; ++j) f[j] = rng.normal();
  const Eigen::MatrixXd X = w * f.transpose() + Eigen::VectorXd::Constant(6, 2.0) * Eigen::RowVectorXd::Ones(80);
  const auto model = mwe::ppca_fit(X);
  CHECK(subspace_sine(model.W, w) < 1e-6);
  CHECK(model.sigma2 < 1e-10);
  // σ² sits on its floor here, so the likelihood trace only carries rounding
  // noise; monotonicity is asserted on the noisy fits below.
  // Sign convention: the largest-magnitude loading is positive.
  Eigen::Index big;
  model.W.col(0).cwiseAbs().maxCoeff(&big);
  CHECK(model.W(big, 0) > 0.0);
}

TEST_CASE("ppca q=2 matches SVD-based PCA on complete data") {
  mwe::Rng rng(2, "pca");
  const int k = 8, t = 300;
  Eigen::MatrixXd X(k, t);
  for (int j = 0; j < t; ++j) {
    const double f1 = 3.0 * rng.normal(), f2 = 1.5 * rng.normal();
    for (int i = 0; i < k; ++i) X(i, j) = std::sin(i + 1.0) * f1 + std::cos(2.0 * i) * f2 + 0.3 * rng.normal();
  }
  mwe::PpcaOptions opts;
  opts.q = 2;
  opts.tol = 1e-14;
  opts.max_iter = 20000;
  const auto model = mwe::ppca_fit(X, opts);
  const Eigen::MatrixXd centered = X.colwise() - X.rowwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinU);
  CHECK(subspace_sine(model.W, svd.matrixU().leftCols(2)) < 1e-6);
  for (std::size_t i = 1; i < model.loglik_trace.size(); ++i) {
    CHECK(model.loglik_trace[i] >= model.loglik_trace[i - 1] - 1e-9 * std::abs(model.loglik_trace[i - 1]));
  }
  CHECK(model.mu.isApprox(X.rowwise().mean(), 1e-10));
}

TEST_CASE("ppca imputation") {
  mwe::Rng rng(3, "impute");
  Eigen::VectorXd w(5), f(40);
  for (int i = 0; i < 5; ++i) w[i] = 1.0 + rng.uniform();
  for (int j = 0; j < 40; ++j) f[j] = rng.normal();
  const Eigen::MatrixXd X = w * f.transpose();

  auto model = mwe::ppca_fit(X);
  CHECK(mwe::ppca_impute(model, X) == X);

  Eigen::MatrixXd holed = X;
  holed(2, 17) = NAN;
  model = mwe::ppca_fit(holed);
  CHECK(std::abs(mwe::ppca_impute(model, holed)(2, 17) - X(2, 17)) < 1e-8);

  Eigen::MatrixXd constant = Eigen::MatrixXd::Constant(4, 30, 0.7);
  constant(1, 3) = NAN;
  constant(3, 9) = NAN;
  model = mwe::ppca_fit(constant);
  CHECK(model.mu.isApprox(Eigen::VectorXd::Constant(4, 0.7), 1e-12));
  const auto filled = mwe::ppca_impute(model, constant);
  CHECK(filled(1, 3) == doctest::Approx(0.7).epsilon(1e-10));
  CHECK(filled(3, 9) == doctest::Approx(0.7).epsilon(1e-10));
}

TEST_CASE("ppca rank-2 imputation under 10% missing") {
  mwe::Rng rng(4, "mcar");
  const int k = 10, t = 200;
  const double noise = 0.05;
  Eigen::MatrixXd truth(k, t), X(k, t);
  Eigen::MatrixXd W(k, 2);
  for (int i = 0; i < k; ++i) W.row(i) << rng.normal(), rng.normal();
  for (int j = 0; j < t; ++j) {
    const Eigen::Vector2d f(rng.normal(), rng.normal());
    truth.col(j) = W * f;
  }
  X = truth;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < t; ++j) X(i, j) += noise * rng.normal();
  Eigen::MatrixXd holed = X;
  std::vector<std::pair<int, int>> missing;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < t; ++j)
      if (rng.uniform() < 0.1) {
        holed(i, j) = NAN;
        missing.emplace_back(i, j);
      }
  mwe::PpcaOptions opts;
  opts.q = 2;
  const auto model = mwe::ppca_fit(holed, opts);
  const auto filled = mwe::ppca_impute(model, holed);
  double ss = 0.0;
  for (auto [i, j] : missing) ss += std::pow(filled(i, j) - truth(i, j), 2);
  CHECK(std::sqrt(ss / static_cast<double>(missing.size())) <= 2.0 * noise);
  CHECK(model.monotone);
}

TEST_CASE("ppca preconditions") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Random(3, 20);
  mwe::PpcaOptions opts;
  opts.q = 3;
  CHECK_THROWS_AS(mwe::ppca_fit(X, opts), mwe::ValidationError);
  Eigen::MatrixXd row = X;
  row.row(1).setConstant(NAN);
  CHECK_THROWS_AS(mwe::ppca_fit(row), mwe::ValidationError);
  Eigen::MatrixXd col = X;
  col.col(4).setConstant(NAN);
  CHECK_THROWS_AS(mwe::ppca_fit(col), mwe::ValidationError);
  // One entry per column of six rows: 1/6 observed, below the 20% minimum.
  Eigen::MatrixXd sparse = Eigen::MatrixXd::Constant(6, 30, NAN);
  for (int j = 0; j < 30; ++j) sparse(j % 6, j) = 1.0 + j;
  CHECK_THROWS_AS(mwe::ppca_fit(sparse), mwe::ValidationError);
}

TEST_CASE("sector returns") {
  const std::vector<AssetReturn> obs{
      {month(0), "a", 0.00, 100.0, "s"}, {month(0), "b", 0.00, 300.0, "s"},
      {month(1), "a", 0.02, 110.0, "s"}, {month(1), "b", 0.04, 50.0, "s"},
      {month(0), "c", 0.05, 10.0, "t"},  {month(1), "c", -0.03, 10.0, "t"}};
  const AssetPanel panel(obs, {});
  const auto eq = mwe::sector_returns(panel, mwe::Weighting::equal);
  const auto cap = mwe::sector_returns(panel, mwe::Weighting::cap);
  REQUIRE(eq.size() == 2);
  CHECK(eq[0].sector_id == "s");
  CHECK(eq[0].returns[1] == doctest::Approx(0.03));
  // Caps lag one period: weights 100 and 300 from month 0.
  CHECK(cap[0].returns[1] == doctest::Approx(0.035));
  CHECK(eq[1].returns[1] == -0.03);
  CHECK(cap[1].returns[1] == -0.03);

  std::vector<AssetReturn> scaled = obs;
  for (auto& o : scaled) o.market_cap *= 7.0;
  CHECK(mwe::sector_returns(AssetPanel(scaled, {}), mwe::Weighting::cap)[0].returns[1] ==
        doctest::Approx(0.035).epsilon(1e-14));

  std::vector<AssetReturn> zero = obs;
  for (auto& o : zero) o.market_cap = 0.0;
  const auto fb = mwe::sector_returns(AssetPanel(zero, {}), mwe::Weighting::cap);
  CHECK(fb[0].fallback[1]);
  CHECK(fb[0].returns[1] == doctest::Approx(0.03));

  std::vector<AssetReturn> dup = obs;
  dup.push_back({month(1), "a", 0.01, 1.0, "s"});
  CHECK_THROWS_AS(AssetPanel(dup, {}), mwe::ValidationError);

  // Sector t has no member in month 2.
  std::vector<AssetReturn> gap = obs;
  gap.push_back({month(2), "a", 0.01, 1.0, "s"});
  CHECK_THROWS_AS(mwe::sector_returns(AssetPanel(gap, {}), mwe::Weighting::equal),
                  mwe::ValidationError);
}

TEST_CASE("membership follows the sector code each period") {
  const std::vector<AssetReturn> obs{
      {month(0), "a", 0.01, 1.0, "s"}, {month(0), "b", 0.03, 1.0, "t"},
      {month(1), "a", 0.02, 1.0, "t"}, {month(1), "b", 0.04, 1.0, "s"}};
  const AssetPanel panel(obs, {});
  CHECK(panel.members(0, "s") == std::vector<std::string>{"a"});
  CHECK(panel.members(1, "s") == std::vector<std::string>{"b"});
  const auto eq = mwe::sector_returns(panel, mwe::Weighting::equal);
  CHECK(eq[0].returns[1] == 0.04);
}

TEST_CASE("sector factor from identical characteristics") {
  mwe::Rng rng(5, "ident");
  Eigen::VectorXd s(60);
  for (int t = 0; t < 60; ++t) s[t] = rng.normal();
  std::vector<AssetReturn> obs;
  std::vector<FactorValue> vals;
  for (int t = 0; t < 60; ++t) {
    for (const std::string id : {"a", "b"}) {
      obs.push_back({month(t), id, 0.0, 1.0, "s"});
      vals.push_back({month(t), id, "x", s[t]});
    }
  }
  const auto z = mwe::sector_factor(AssetPanel(obs, vals), "s", "x", 0, 60);
  REQUIRE(z.available);
  CHECK(corr(z.z, s) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("sector factor tracks a common signal") {
  mwe::Rng rng(6, "common");
  Eigen::VectorXd s(240);
  for (int t = 0; t < 240; ++t) s[t] = rng.normal();
  const auto panel = signal_panel(s, 5, 0.3, 6);
  const auto z = mwe::sector_factor(panel, "s", "x", 0, 240);
  REQUIRE(z.available);
  CHECK(corr(z.z, s) > 0.95);
  for (std::size_t i = 1; i < z.model.loglik_trace.size(); ++i) {
    CHECK(z.model.loglik_trace[i] >= z.model.loglik_trace[i - 1] - 1e-9 * std::abs(z.model.loglik_trace[i - 1]));
  }
}

TEST_CASE("an all-missing asset is the same as no asset") {
  mwe::Rng rng(7, "missing");
  Eigen::VectorXd s(100);
  for (int t = 0; t < 100; ++t) s[t] = rng.normal();
  // Asset a3 carries no values; the noise stream for the others is shared.
  const auto with = signal_panel(s, 4, 0.3, 7, 3);
  std::vector<AssetReturn> obs;
  for (const auto& o : with.observations()) {
    if (o.asset_id != "a3") obs.push_back(o);
  }
  const AssetPanel without(obs, with.factor_values());
  const auto a = mwe::sector_factor(with, "s", "x", 0, 100);
  const auto b = mwe::sector_factor(without, "s", "x", 0, 100);
  REQUIRE(a.available);
  CHECK(a.z.isApprox(b.z, 1e-12));
  CHECK(mwe::characteristic_matrix(with, "s", "x", 0, 100).assets.size() == 3);
}

TEST_CASE("sector factor is invariant to the asset order") {
  mwe::Rng rng(8, "perm");
  Eigen::VectorXd s(80);
  for (int t = 0; t < 80; ++t) s[t] = rng.normal();
  const auto panel = signal_panel(s, 4, 0.3, 8);
  // Renaming so the sorted order reverses.
  std::vector<AssetReturn> obs = panel.observations();
  std::vector<FactorValue> vals = panel.factor_values();
  for (auto& o : obs) o.asset_id = "z" + std::to_string(9 - (o.asset_id[1] - '0'));
  for (auto& v : vals) v.asset_id = "z" + std::to_string(9 - (v.asset_id[1] - '0'));
  const auto a = mwe::sector_factor(panel, "s", "x", 0, 80);
  const auto b = mwe::sector_factor(AssetPanel(obs, vals), "s", "x", 0, 80);
  CHECK(a.z.isApprox(b.z, 1e-8));
}

TEST_CASE("too few assets leaves the factor unavailable") {
  Eigen::VectorXd s = Eigen::VectorXd::LinSpaced(30, 0.0, 1.0);
  const auto panel = signal_panel(s, 1, 0.1, 9);
  const auto z = mwe::sector_factor(panel, "s", "x", 0, 30);
  CHECK_FALSE(z.available);
  CHECK_FALSE(z.reason.empty());

  mwe::FactorSchedule sched;
  sched.first_block = 13;
  sched.block = 6;
  sched.train_length = 12;
  const auto panels = mwe::build_sector_panels(panel, sched);
  REQUIRE(panels.size() == 1);
  CHECK(panels[0].factors.cols() == 0);
  CHECK(panels[0].dropped_factors.size() == 1);
}

TEST_CASE("churn: an entrant contributes only on its observed periods") {
  mwe::Rng rng(10, "churn");
  Eigen::VectorXd s(90);
  for (int t = 0; t < 90; ++t) s[t] = rng.normal();
  auto panel = signal_panel(s, 3, 0.3, 10);
  std::vector<AssetReturn> obs = panel.observations();
  std::vector<FactorValue> vals = panel.factor_values();
  for (int t = 45; t < 90; ++t) {
    obs.push_back({month(t), "late", 0.0, 1.0, "s"});
    vals.push_back({month(t), "late", "x", s[t] + 0.3 * rng.normal()});
  }
  const AssetPanel churned(obs, vals);
  const auto cm = mwe::characteristic_matrix(churned, "s", "x", 0, 90);
  REQUIRE(cm.assets.size() == 4);
  const auto late = static_cast<Eigen::Index>(
      std::find(cm.assets.begin(), cm.assets.end(), "late") - cm.assets.begin());
  CHECK(cm.values.row(late).head(45).array().isNaN().all());
  CHECK_FALSE(cm.values.row(late).tail(45).array().isNaN().any());

  // Values recorded while the asset sits in another sector never leak in.
  std::vector<AssetReturn> moved = obs;
  std::vector<FactorValue> moved_vals = vals;
  for (int t = 0; t < 45; ++t) {
    moved.push_back({month(t), "late", 0.0, 1.0, "other"});
    moved_vals.push_back({month(t), "late", "x", 100.0});
  }
  const auto z1 = mwe::sector_factor(churned, "s", "x", 0, 90);
  const auto z2 = mwe::sector_factor(AssetPanel(moved, moved_vals), "s", "x", 0, 90);
  CHECK(z1.z.isApprox(z2.z, 1e-12));
}

TEST_CASE("causal factor series never look ahead") {
  mwe::Rng rng(11, "causal");
  Eigen::VectorXd s(120);
  for (int t = 0; t < 120; ++t) s[t] = rng.normal();
  const auto full = signal_panel(s, 4, 0.3, 11);
  std::vector<AssetReturn> obs;
  std::vector<FactorValue> vals;
  for (const auto& o : full.observations()) {
    if (o.period.index() < month(100).index()) obs.push_back(o);
  }
  for (const auto& v : full.factor_values()) {
    if (v.period.index() < month(100).index()) vals.push_back(v);
  }
  mwe::FactorSchedule sched;
  sched.first_block = 49;
  sched.block = 12;
  sched.train_length = 48;
  const auto a = mwe::sector_factor_series(full, "s", "x", sched);
  const auto b = mwe::sector_factor_series(AssetPanel(obs, vals), "s", "x", sched);
  REQUIRE(a.available);
  // Blocks starting at 49, 61, 73, 85 end before period 100 or at 97.
  CHECK(a.z.head(97).isApprox(b.z.head(97), 1e-12));
  CHECK(corr(a.z.tail(71), s.tail(71)) > 0.9);
}
