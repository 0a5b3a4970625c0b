#include <cmath>
#include <vector>

#include "doctest.h"
#include "mwe/forecasters.hpp"
#include "mwe/rng.hpp"
#include "mwe/schedule.hpp"

using mwe::ForecasterKind;
using mwe::ForecasterSpec;

namespace {

Eigen::MatrixXd random_design(mwe::Rng& rng, Eigen::Index n, Eigen::Index p) {
  Eigen::MatrixXd Z(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) Z(i, j) = rng.normal(0.1 * j, 1.0 + 0.3 * j);
  return Z;
}

// Normal equations on [1 Z], solved by Gaussian elimination with partial pivoting.
Eigen::VectorXd normal_equations(const Eigen::MatrixXd& Z, const Eigen::VectorXd& r) {
  const Eigen::Index p = Z.cols() + 1;
  Eigen::MatrixXd X(Z.rows(), p);
  X << Eigen::VectorXd::Ones(Z.rows()), Z;
  Eigen::MatrixXd A = X.transpose() * X;
  Eigen::VectorXd b = X.transpose() * r;
  for (Eigen::Index c = 0; c < p; ++c) {
    Eigen::Index piv = c;
    for (Eigen::Index i = c + 1; i < p; ++i)
      if (std::abs(A(i, c)) > std::abs(A(piv, c))) piv = i;
    A.row(c).swap(A.row(piv));
    std::swap(b[c], b[piv]);
    for (Eigen::Index i = c + 1; i < p; ++i) {
      const double f = A(i, c) / A(c, c);
      A.row(i) -= f * A.row(c);
      b[i] -= f * b[c];
    }
  }
  Eigen::VectorXd x(p);
  for (Eigen::Index i = p - 1; i >= 0; --i) {
    double s = b[i];
    for (Eigen::Index j = i + 1; j < p; ++j) s -= A(i, j) * x[j];
    x[i] = s / A(i, i);
  }
  return x;
}

std::vector<mwe::Period> months(std::size_t n) {
  std::vector<mwe::Period> out;
  for (std::size_t t = 0; t < n; ++t) out.push_back(mwe::Period::from_index(22000 + static_cast<int>(t)));
  return out;
}

ForecasterSpec spec(ForecasterKind kind) {
  ForecasterSpec s;
  s.kind = kind;
  return s;
}

}  // namespace

TEST_CASE("ols") {
  Eigen::MatrixXd Z(3, 1);
  Z << 1, 2, 3;
  const auto line = mwe::fit_ols(Z, Eigen::Vector3d(2, 4, 6));
  CHECK(line.model.coef[0] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(std::abs(line.model.intercept) < 1e-12);

  mwe::Rng rng(1, "ols");
  const auto X = random_design(rng, 80, 4);
  const Eigen::Vector4d beta(0.5, -1.0, 0.25, 2.0);
  const Eigen::VectorXd exact = (X * beta).array() + 0.3;
  const auto fit = mwe::fit_ols(X, exact);
  CHECK((fit.model.predict_all(X) - exact).cwiseAbs().maxCoeff() < 1e-10);

  Eigen::VectorXd noisy = exact;
  for (Eigen::Index i = 0; i < noisy.size(); ++i) noisy[i] += rng.normal();
  const auto est = mwe::fit_ols(X, noisy);
  const Eigen::VectorXd oracle = normal_equations(X, noisy);
  CHECK(std::abs(est.model.intercept - oracle[0]) < 1e-8);
  CHECK((est.model.coef - oracle.tail(4)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK_FALSE(est.rank_deficient);

  Eigen::MatrixXd dup(80, 2);
  dup << X.col(0), X.col(0);
  CHECK(mwe::fit_ols(dup, noisy).rank_deficient);
}

TEST_CASE("standardizer reuses training statistics") {
  mwe::Rng rng(2, "std");
  const auto train = random_design(rng, 50, 3);
  const auto s = mwe::Standardizer::fit(train);
  const auto z = s.apply(train);
  for (Eigen::Index j = 0; j < 3; ++j) {
    CHECK(std::abs(z.col(j).mean()) < 1e-12);
    CHECK(z.col(j).squaredNorm() / 50.0 == doctest::Approx(1.0));
  }
  const auto test = random_design(rng, 5, 3);
  const Eigen::MatrixXd expect = (test.rowwise() - s.mean).array().rowwise() / s.sd.array();
  CHECK(s.apply(test).isApprox(expect));
  Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(10, 1, 4.0);
  CHECK(mwe::Standardizer::fit(flat).sd[0] == 1.0);
}

TEST_CASE("lasso closed forms") {
  mwe::Rng rng(3, "lasso");
  const auto Z = random_design(rng, 120, 5);
  Eigen::VectorXd r(120);
  for (Eigen::Index i = 0; i < 120; ++i) r[i] = 0.4 * Z(i, 1) - 0.2 * Z(i, 3) + rng.normal();

  const auto ols = mwe::fit_ols(Z, r);
  const auto l0 = mwe::fit_lasso(Z, r, 0.0);
  CHECK(l0.converged);
  CHECK((l0.model.coef - ols.model.coef).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(std::abs(l0.model.intercept - ols.model.intercept) < 1e-6);

  // Independent λ_max on centered, population-standardized columns.
  const Eigen::RowVectorXd mean = Z.colwise().mean();
  const Eigen::MatrixXd Zc = Z.rowwise() - mean;
  const Eigen::RowVectorXd sd = (Zc.colwise().squaredNorm() / 120.0).cwiseSqrt();
  const Eigen::MatrixXd Zs = Zc.array().rowwise() / sd.array();
  const Eigen::VectorXd rc = r.array() - r.mean();
  const double lmax = (2.0 / 120.0 * (Zs.transpose() * rc)).cwiseAbs().maxCoeff();
  CHECK(mwe::lasso_lambda_max(Z, r) == doctest::Approx(lmax).epsilon(1e-12));
  for (double f : {1.0, 1.5, 10.0}) {
    const auto full = mwe::fit_lasso(Z, r, f * lmax);
    CHECK(full.model.coef.cwiseAbs().maxCoeff() == 0.0);
    CHECK(full.model.intercept == doctest::Approx(r.mean()));
  }

  // One predictor: θ = S(ρ, λ/2) on the standardized scale.
  const Eigen::MatrixXd z1 = Z.col(1);
  const double rho = Zs.col(1).dot(rc) / 120.0;
  for (double lambda : {0.0, 0.1, 0.3, 2.0 * std::abs(rho) - 1e-3, 5.0}) {
    const double expect = std::copysign(std::max(std::abs(rho) - lambda / 2.0, 0.0), rho);
    const auto fit = mwe::fit_lasso(z1, r, lambda);
    CHECK(fit.theta_std[0] == doctest::Approx(expect).epsilon(1e-9));
    CHECK(fit.model.coef[0] == doctest::Approx(expect / sd[1]).epsilon(1e-9));
  }

  const auto grid = mwe::lasso_lambda_grid(1.0, 5, 1e-2);
  REQUIRE(grid.size() == 5);
  CHECK(grid.front() == doctest::Approx(1.0));
  CHECK(grid.back() == doctest::Approx(1e-2));
  CHECK(grid[2] == doctest::Approx(0.1));
}

TEST_CASE("contiguous folds") {
  const auto folds = mwe::contiguous_folds(23, 5);
  REQUIRE(folds.size() == 5);
  CHECK(folds.front().first == 0);
  CHECK(folds.back().second == 23);
  for (std::size_t k = 1; k < folds.size(); ++k) CHECK(folds[k].first == folds[k - 1].second);
  for (const auto& [b, e] : folds) CHECK(e - b >= 4);
  CHECK(mwe::contiguous_folds(23, 5) == folds);
  CHECK_THROWS_AS(mwe::contiguous_folds(10, 1), mwe::ValidationError);
}

TEST_CASE("lasso CV picks the larger λ on ties and recovers planted support") {
  mwe::Rng rng(4, "cv");
  // Pure-noise target: every λ ≥ λ_max gives the same fold error.
  const auto Z = random_design(rng, 100, 3);
  Eigen::VectorXd r(100);
  for (Eigen::Index i = 0; i < 100; ++i) r[i] = rng.normal();
  const double lmax = mwe::lasso_lambda_max(Z, r);
  const auto cv = mwe::select_lasso_lambda(Z, r, {4 * lmax, 3 * lmax, 2 * lmax});
  CHECK(cv.best == doctest::Approx(4 * lmax));

  // Twenty AR(1) predictors, the first drives the target with SNR 1.
  int hits = 0;
  const int windows = 40;
  for (int w = 0; w < windows; ++w) {
    mwe::Rng g(100 + w, "support");
    Eigen::MatrixXd X(361, 20);
    X.row(0).setZero();
    for (int t = 1; t < 361; ++t)
      for (int j = 0; j < 20; ++j) X(t, j) = 0.5 * X(t - 1, j) + g.normal();
    const double sd_x = 1.0 / std::sqrt(1.0 - 0.25);
    Eigen::VectorXd y(360);
    for (int t = 0; t < 360; ++t) y[t] = X(t, 0) / sd_x + g.normal();
    const Eigen::MatrixXd Zt = X.topRows(360);
    const auto sel = mwe::select_lasso_lambda(Zt, y, {});
    const auto fit = mwe::fit_lasso(Zt, y, sel.best);
    if (fit.model.coef[0] != 0.0) ++hits;
  }
  CHECK(hits > 0.9 * windows);
}

TEST_CASE("pcr") {
  mwe::Rng rng(5, "pcr");
  const auto Z = random_design(rng, 90, 4);
  Eigen::VectorXd r(90);
  for (Eigen::Index i = 0; i < 90; ++i) r[i] = Z(i, 0) - 0.5 * Z(i, 2) + rng.normal();
  const auto full = mwe::fit_pcr(Z, r, 4);
  const auto ols = mwe::fit_ols(Z, r);
  CHECK((full.model.predict_all(Z) - ols.model.predict_all(Z)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK_THROWS_AS(mwe::fit_pcr(Z, r, 0), mwe::ValidationError);
  CHECK_THROWS_AS(mwe::fit_pcr(Z, r, 5), mwe::ValidationError);

  // Rank-1 design plus tiny noise; the target loads on the common factor.
  // The extra components only fit noise, so CV picks M = 1 in most draws
  // (35 of these 50) and M = 1 already carries the systematic fit.
  int ones = 0;
  double r2_one = 0.0, r2_all = 0.0;
  for (int seed = 0; seed < 50; ++seed) {
    mwe::Rng g(static_cast<std::uint64_t>(seed), "rank1-pcr");
    Eigen::MatrixXd R1(200, 6);
    Eigen::VectorXd y(200), signal(200);
    for (Eigen::Index i = 0; i < 200; ++i) {
      const double f = g.normal();
      for (Eigen::Index j = 0; j < 6; ++j) R1(i, j) = (1.0 + 0.2 * j) * f + 1e-3 * g.normal();
      signal[i] = 0.5 * f;
      y[i] = signal[i] + g.normal();
    }
    const auto cv = mwe::select_pcr_components(R1, y, {1, 2, 3, 4, 5, 6});
    if (cv.best == 1.0) ++ones;
    r2_one += mwe::r2_oos(signal, mwe::fit_pcr(R1, y, 1).model.predict_all(R1)) / 50.0;
    r2_all += mwe::r2_oos(signal, mwe::fit_pcr(R1, y, 6).model.predict_all(R1)) / 50.0;
  }
  CHECK(ones >= 30);
  CHECK(r2_one > 0.9);
  CHECK(r2_one > r2_all);
}

TEST_CASE("forecaster contract") {
  for (auto kind : {ForecasterKind::mean, ForecasterKind::ols, ForecasterKind::lasso, ForecasterKind::pcr}) {
    const auto f = mwe::make_forecaster(spec(kind));
    CHECK(f->id() == mwe::to_string(kind));
    CHECK(mwe::parse_forecaster_kind(mwe::to_string(kind)) == kind);
  }
  CHECK_THROWS_AS(mwe::parse_forecaster_kind("nn3"), mwe::ValidationError);
  ForecasterSpec bad = spec(ForecasterKind::lasso);
  bad.cv_folds = 1;
  CHECK_THROWS_AS(bad.validate(), mwe::ValidationError);
  ForecasterSpec named = spec(ForecasterKind::ols);
  named.id = "ols_small";
  CHECK(mwe::make_forecaster(named)->id() == "ols_small");
}

TEST_CASE("schedule: constant target") {
  mwe::Rng rng(6, "const");
  const std::size_t T = 80;
  const Eigen::MatrixXd Z = random_design(rng, static_cast<Eigen::Index>(T), 2);
  const Eigen::VectorXd r = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(T), 0.007);
  const mwe::RollingSchedule sched{36, 12, mwe::WindowKind::rolling, 1};
  const auto res = mwe::run_schedule(Z, r, months(T),
                                     {spec(ForecasterKind::mean), spec(ForecasterKind::ols)}, sched);
  CHECK(res.failures.empty());
  CHECK(res.panel.periods() == T - 37);
  CHECK(res.panel.period_ids().front() == months(T)[37]);
  CHECK((res.panel.forecasts().array() - 0.007).abs().maxCoeff() < 1e-12);
  CHECK(res.fits.size() == 2 * 4);  // refits at 37, 49, 61, 73
  CHECK(res.fits.front().train_rows == 36);
}

TEST_CASE("schedule: one lagged predictor is fitted without leakage") {
  mwe::Rng rng(7, "lag");
  const std::size_t T = 140;
  Eigen::MatrixXd Z(T, 1);
  Eigen::VectorXd r(T);
  for (std::size_t t = 0; t < T; ++t) Z(static_cast<Eigen::Index>(t), 0) = rng.normal();
  r[0] = 0.0;
  for (std::size_t t = 1; t < T; ++t) r[static_cast<Eigen::Index>(t)] = 0.02 * Z(static_cast<Eigen::Index>(t - 1), 0);
  const mwe::RollingSchedule sched{48, 12, mwe::WindowKind::expanding, 1};
  const auto res = mwe::run_schedule(Z, r, months(T), {spec(ForecasterKind::ols)}, sched);
  // The forecast for s uses z_{s-1}, which reproduces r exactly.
  CHECK((res.panel.forecasts().col(0) - res.panel.realized()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(res.fits.back().train_rows == 1 + 48 + 12 * 7 - 1);

  // Appending rows never changes forecasts already emitted.
  const auto head = mwe::run_schedule(Z.topRows(100), r.head(100), months(100),
                                      {spec(ForecasterKind::lasso), spec(ForecasterKind::pcr)}, sched);
  const auto full = mwe::run_schedule(Z, r, months(T),
                                      {spec(ForecasterKind::lasso), spec(ForecasterKind::pcr)}, sched);
  const auto n = static_cast<Eigen::Index>(head.panel.periods());
  CHECK(head.panel.forecasts() == full.panel.forecasts().topRows(n));
}

TEST_CASE("schedule: a failing spec leaves zeros and a record") {
  mwe::Rng rng(8, "fail");
  const std::size_t T = 70;
  const auto Z = random_design(rng, static_cast<Eigen::Index>(T), 2);
  Eigen::VectorXd r(T);
  for (std::size_t t = 0; t < T; ++t) r[static_cast<Eigen::Index>(t)] = rng.normal(0.0, 0.05);
  ForecasterSpec wide = spec(ForecasterKind::pcr);
  wide.pcr_grid = {5};  // more components than predictors
  const mwe::RollingSchedule sched{30, 12, mwe::WindowKind::rolling, 1};
  const auto res = mwe::run_schedule(Z, r, months(T), {spec(ForecasterKind::ols), wide}, sched);
  CHECK(res.failures.size() == 4);
  CHECK(res.panel.forecasts().col(1).isZero());
  CHECK_FALSE(res.panel.forecasts().col(0).isZero());
}

TEST_CASE("schedule preconditions") {
  mwe::RollingSchedule s{12, 12, mwe::WindowKind::rolling, 1};
  CHECK_THROWS_AS(s.validate(), mwe::ValidationError);
  s.train_length = 24;
  s.refit_every = 0;
  CHECK_THROWS_AS(s.validate(), mwe::ValidationError);
  mwe::Rng rng(9, "pre");
  const auto Z = random_design(rng, 30, 1);
  const Eigen::VectorXd r = Eigen::VectorXd::Ones(30);
  CHECK_THROWS_AS(mwe::run_schedule(Z, r, months(30), {spec(ForecasterKind::ols)},
                                    mwe::RollingSchedule{36, 12, mwe::WindowKind::rolling, 1}),
                  mwe::ValidationError);
  CHECK_THROWS_AS(mwe::run_schedule(Z, r, months(30), {spec(ForecasterKind::ols), spec(ForecasterKind::ols)},
                                    mwe::RollingSchedule{24, 12, mwe::WindowKind::rolling, 1}),
                  mwe::ValidationError);
}
