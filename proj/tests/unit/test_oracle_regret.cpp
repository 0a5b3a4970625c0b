#include <cmath>
#include <vector>

#include "doctest.h"
#include "mwe/oracle.hpp"
#include "mwe/regret.hpp"
#include "mwe/rng.hpp"
#include "mwe/synthetic.hpp"

namespace {

std::vector<mwe::Period> months(std::size_t n) {
  std::vector<mwe::Period> out;
  for (std::size_t t = 0; t < n; ++t) out.push_back(mwe::Period::from_index(23000 + static_cast<int>(t)));
  return out;
}

std::vector<std::string> ids(std::size_t L) {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < L; ++l) out.push_back("m" + std::to_string(l));
  return out;
}

mwe::PredictionPanel random_panel(std::uint64_t seed, std::size_t tau, std::size_t L) {
  mwe::Rng rng(seed, "oracle");
  Eigen::MatrixXd f(tau, L);
  Eigen::VectorXd r(tau);
  for (std::size_t t = 0; t < tau; ++t) {
    r[t] = rng.normal(0.0, 0.05);
    for (std::size_t l = 0; l < L; ++l) f(t, l) = 0.3 * r[t] + rng.normal(0.0, 0.03);
  }
  return {f, r, ids(L), months(tau)};
}

double r2_at(const mwe::PredictionPanel& panel, const Eigen::VectorXd& p) {
  return mwe::r2_oos(panel.realized(), panel.forecasts() * p);
}

}  // namespace

TEST_CASE("single model: the constraint fixes p* and δ = 1") {
  mwe::Rng rng(1, "single");
  Eigen::MatrixXd f(50, 1);
  Eigen::VectorXd r(50);
  for (int t = 0; t < 50; ++t) {
    r[t] = rng.normal(0.0, 0.05);
    f(t, 0) = r[t];
  }
  const mwe::PredictionPanel panel(f, r, ids(1), months(50));
  const auto opt = mwe::optimal_weights(panel);
  CHECK(opt.p_star[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(opt.r2_star == doctest::Approx(1.0).epsilon(1e-14));
  // Scalar case: c = b - a, so b - c = a and δ = a / a.
  CHECK(opt.delta_tau == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(mwe::delta_tau(panel) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("identity moments give the hand-computable bracket") {
  for (Eigen::Index L : {2, 3, 5}) {
    mwe::ForecastMoments mom;
    mom.A = Eigen::MatrixXd::Identity(L, L);
    mom.b = Eigen::VectorXd::Constant(L, 1.0 / static_cast<double>(L));
    mom.tau = 10;
    const auto opt = mwe::solve_optimal_weights(mom);
    CHECK(opt.p_star.isApprox(mom.b, 1e-14));
    CHECK(opt.delta_tau == doctest::Approx(1.0 / std::sqrt(static_cast<double>(L))));
    CHECK(opt.lambda_min == doctest::Approx(1.0));
  }
  mwe::ForecastMoments mom;
  mom.A = Eigen::MatrixXd::Identity(2, 2);
  mom.b = Eigen::Vector2d(0.3, 0.1);
  // c = (0.4 - 1)/2 = -0.3, bracket [0.6, 0.4].
  const auto opt = mwe::solve_optimal_weights(mom);
  CHECK(opt.p_star[0] == doctest::Approx(0.6));
  CHECK(opt.p_star[1] == doctest::Approx(0.4));
  CHECK(opt.delta_tau == doctest::Approx(std::sqrt(0.52)));
}

TEST_CASE("two-model recovery against a dense grid search") {
  mwe::Rng rng(2, "recovery");
  const std::size_t tau = 400;
  Eigen::MatrixXd f(tau, 2);
  Eigen::VectorXd r(tau);
  for (std::size_t t = 0; t < tau; ++t) {
    r[t] = rng.normal(0.0, 0.05);
    f(t, 0) = r[t] + rng.normal(0.0, 0.001);
    f(t, 1) = -r[t];
  }
  const mwe::PredictionPanel panel(f, r, ids(2), months(tau));
  const auto opt = mwe::optimal_weights(panel);
  double best = -1e300, best_p = 0.0;
  for (int k = 0; k <= 500000; ++k) {
    const double p1 = -2.0 + 5.0 * k / 500000.0;
    const double v = r2_at(panel, Eigen::Vector2d(p1, 1.0 - p1));
    if (v > best) {
      best = v;
      best_p = p1;
    }
  }
  CHECK(std::abs(opt.p_star[0] - best_p) < 2e-5);
  CHECK(std::abs(opt.p_star[0] - 1.0) < 1e-3);
  CHECK(opt.r2_star >= best - 1e-12);
}

TEST_CASE("KKT, plane optimality and permutation invariance") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto panel = random_panel(seed, 200, 4);
    const auto opt = mwe::optimal_weights(panel);
    CHECK(std::abs(opt.p_star.sum() - 1.0) < 1e-10);
    const auto mom = mwe::forecast_moments(panel.forecasts(), panel.realized());
    const Eigen::VectorXd g = mom.A * opt.p_star - mom.b;
    // Parallel to 1: no component left after removing the mean.
    CHECK((g.array() - g.mean()).abs().maxCoeff() < 1e-8 * mom.b.norm());

    mwe::Rng rng(seed, "probe");
    for (int k = 0; k < 300; ++k) {
      Eigen::VectorXd p(4);
      for (int i = 0; i < 4; ++i) p[i] = rng.normal(0.0, 1.0);
      p.array() += (1.0 - p.sum()) / 4.0;
      CHECK(r2_at(panel, p) <= opt.r2_star + 1e-12);
    }

    const std::vector<std::size_t> perm{3, 1, 0, 2};
    const auto popt = mwe::optimal_weights(panel.select_models(perm));
    for (std::size_t j = 0; j < 4; ++j) {
      CHECK(popt.p_star[static_cast<Eigen::Index>(j)] ==
            doctest::Approx(opt.p_star[static_cast<Eigen::Index>(perm[j])]).epsilon(1e-9));
    }
    CHECK(popt.delta_tau == doctest::Approx(opt.delta_tau).epsilon(1e-9));
    CHECK(popt.r2_star == doctest::Approx(opt.r2_star).epsilon(1e-12));
  }
}

TEST_CASE("δ under forecast scaling") {
  // A → c²A and b → cb. The constraint term does not scale, so
  // δ(c) = ‖b - ((u - c)/v)·1‖ / (c λ_min) with u = 1ᵀA⁻¹b, v = 1ᵀA⁻¹1,
  // which is not δ(1)/c.
  const auto panel = random_panel(3, 300, 3);
  const auto mom = mwe::forecast_moments(panel.forecasts(), panel.realized());
  const auto base_opt = mwe::optimal_weights(panel);
  const Eigen::VectorXd one = Eigen::VectorXd::Ones(3);
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(mom.A);
  const double u = one.dot(ldlt.solve(mom.b));
  const double v = one.dot(ldlt.solve(one));
  for (double c : {0.1, 2.0, 7.5}) {
    const mwe::PredictionPanel scaled(c * panel.forecasts(), panel.realized(),
                                      panel.model_ids(), panel.period_ids());
    const auto opt = mwe::optimal_weights(scaled);
    CHECK(opt.lambda_min == doctest::Approx(c * c * base_opt.lambda_min).epsilon(1e-9));
    const double expected = (mom.b - ((u - c) / v) * one).norm() / (c * base_opt.lambda_min);
    CHECK(opt.delta_tau == doctest::Approx(expected).epsilon(1e-9));
  }

}

TEST_CASE("singular moments") {
  Eigen::MatrixXd f(40, 2);
  Eigen::VectorXd r(40);
  mwe::Rng rng(4, "sing");
  for (int t = 0; t < 40; ++t) {
    r[t] = rng.normal(0.0, 0.05);
    f(t, 0) = f(t, 1) = 0.5 * r[t];
  }
  const mwe::PredictionPanel panel(f, r, ids(2), months(40));
  CHECK_THROWS_AS(mwe::optimal_weights(panel), mwe::NumericalError);
  mwe::OracleOptions opts;
  opts.ridge_jitter = true;
  const auto opt = mwe::optimal_weights(panel, opts);
  CHECK(opt.ridge_used);
  CHECK_FALSE(opt.warnings.empty());
  CHECK(opt.p_star.sum() == doctest::Approx(1.0));
}

TEST_CASE("raw gains are affine in p") {
  mwe::Rng rng(5, "jac");
  for (int trial = 0; trial < 500; ++trial) {
    const Eigen::Index L = 4;
    Eigen::VectorXd f(L), p(L), q(L);
    for (Eigen::Index i = 0; i < L; ++i) {
      f[i] = rng.normal(0.0, 0.05);
      p[i] = rng.uniform();
      q[i] = rng.uniform();
    }
    p /= p.sum();
    q /= q.sum();
    const double r = rng.normal(0.0, 0.05);
    const double s2 = 0.002;
    const Eigen::MatrixXd J = mwe::gain_jacobian(f, s2);
    CHECK((J + f * f.transpose() / s2).cwiseAbs().maxCoeff() < 1e-15);
    const auto mp = mwe::gain(r, f, mwe::WeightDistribution(p), s2).m;
    const auto mq = mwe::gain(r, f, mwe::WeightDistribution(q), s2).m;
    CHECK((mp - (mq + J * (p - q))).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("regret report on a single model collapses to zero gap") {
  mwe::StreamSpec spec;
  spec.models = 1;
  spec.tau = 300;
  const auto stream = mwe::generate_stream(spec);
  const auto trace = mwe::run_ensemble(stream.panel, mwe::EnsembleConfig{},
                                       mwe::to_std(stream.warmup_returns));
  const auto rep = mwe::regret_report(stream.panel, trace);
  CHECK(rep.tau == 300);
  CHECK(std::abs(rep.gap) < 1e-12);
  CHECK(std::abs(rep.effective_bound) < 1e-15);
  // log L = 0 leaves only the η term.
  CHECK(rep.bound_cor3 == doctest::Approx(rep.eta * rep.mean_abs_gain_norm).epsilon(1e-12));
}

TEST_CASE("gap decomposition is exact and the diagnostics are finite") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    mwe::StreamSpec spec;
    spec.tau = 800;
    spec.seed = seed;
    const auto stream = mwe::generate_stream(spec);
    mwe::EnsembleConfig c;
    c.eta = mwe::EtaPolicy::fixed(0.1);
    const auto trace = mwe::run_ensemble(stream.panel, c, mwe::to_std(stream.warmup_returns));
    const auto rep = mwe::regret_report(stream.panel, trace);
    CHECK(rep.gap_decomposition == doctest::Approx(rep.gap).epsilon(1e-9));
    CHECK(rep.eta == doctest::Approx(0.1));
    // Independent recomputation of the realized gap on the scored rows.
    const auto rows = trace.scored_rows();
    Eigen::VectorXd r(rows.size()), c_hat(rows.size());
    Eigen::MatrixXd f(rows.size(), stream.panel.models());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      r[static_cast<Eigen::Index>(k)] = stream.panel.realized()[static_cast<Eigen::Index>(rows[k])];
      c_hat[static_cast<Eigen::Index>(k)] = trace.steps[rows[k]].combined;
      f.row(static_cast<Eigen::Index>(k)) = stream.panel.forecasts().row(static_cast<Eigen::Index>(rows[k]));
    }
    CHECK(rep.r2_ensemble == doctest::Approx(mwe::r2_oos(r, c_hat)).epsilon(1e-12));
    const double tau = static_cast<double>(rows.size());
    const double L = static_cast<double>(stream.panel.models());
    CHECK(rep.bound_cor3 == doctest::Approx(rep.eta * rep.mean_abs_gain_norm +
                                            std::log(L) / (tau * rep.eta)).epsilon(1e-12));
    CHECK(rep.bound_cor5 <= rep.bound_cor3 + 1e-15);
    CHECK(std::isfinite(rep.effective_bound_scaled));
  }
}

TEST_CASE("zero forecasts: avg gain follows the direct formula") {
  mwe::Rng rng(6, "zero");
  const std::size_t tau = 400;
  Eigen::VectorXd r(tau);
  for (std::size_t t = 0; t < tau; ++t) r[static_cast<Eigen::Index>(t)] = rng.normal(0.0, 0.05);
  const mwe::PredictionPanel panel(Eigen::MatrixXd::Zero(tau, 2), r, ids(2), months(tau));
  const auto trace = mwe::run_ensemble(panel, mwe::EnsembleConfig{});
  double expected = 0.0;
  std::size_t n = 0;
  for (const auto& s : trace.steps) {
    if (!s.scored) continue;
    expected += 1.0 - s.realized * s.realized / s.sigma2;
    ++n;
  }
  expected /= static_cast<double>(n);
  double avg = 0.0;
  for (const auto& s : trace.steps) {
    if (s.scored) avg += s.raw.m.dot(s.p);
  }
  CHECK(avg / static_cast<double>(n) == doctest::Approx(expected).epsilon(1e-12));
  for (const auto& s : trace.steps) CHECK(s.combined == 0.0);
}

TEST_CASE("lemma1 check modes") {
  mwe::StreamSpec spec;
  spec.tau = 1500;
  spec.seed = 9;
  const auto stream = mwe::generate_stream(spec);
  const auto trace = mwe::run_ensemble(stream.panel, mwe::EnsembleConfig{},
                                       mwe::to_std(stream.warmup_returns));
  mwe::Lemma1Options opts;
  opts.mode = mwe::Sigma2Mode::in_sample;
  const auto exact = mwe::lemma1_check(stream.panel, trace, opts);
  REQUIRE(exact.d.size() == 1500);
  for (double d : exact.d) CHECK(d < 1e-10);
  CHECK_FALSE(exact.flagged);

  // A fixed σ² equal to the full-sample moment is exact at the last prefix.
  double ss = 0.0;
  for (std::size_t t : trace.scored_rows()) {
    const double v = stream.panel.realized()[static_cast<Eigen::Index>(t)];
    ss += v * v;
  }
  opts.mode = mwe::Sigma2Mode::fixed;
  opts.fixed_sigma2 = ss / 1500.0;
  CHECK(mwe::lemma1_check(stream.panel, trace, opts).d.back() < 1e-10);

  opts.mode = mwe::Sigma2Mode::estimated;
  const auto est = mwe::lemma1_check(stream.panel, trace, opts);
  CHECK(est.d.back() < 0.2);
  opts.scale = 100.0;
  const auto off = mwe::lemma1_check(stream.panel, trace, opts);
  CHECK(off.flagged);
  CHECK(off.d.back() > 0.5);
}
