#include "mwe/forecasters.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mwe {

namespace {

double soft_threshold(double x, double t) {
  if (x > t) return x - t;
  if (x < -t) return x + t;
  return 0.0;
}

Eigen::MatrixXd with_intercept(const Eigen::Ref<const Eigen::MatrixXd>& Z) {
  Eigen::MatrixXd X(Z.rows(), Z.cols() + 1);
  X.col(0).setOnes();
  X.rightCols(Z.cols()) = Z;
  return X;
}

void require_training(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                      const Eigen::Ref<const Eigen::VectorXd>& r, const char* who) {
  require(Z.rows() == r.size(), std::string(who) + ": row count mismatch");
  require(Z.rows() >= 1, std::string(who) + ": no training rows");
  require_finite(Z, std::string(who) + " predictors");
  require_finite(r, std::string(who) + " target");
}

// Rows outside [begin, end) and the rows inside it.
void split_rows(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                const Eigen::Ref<const Eigen::VectorXd>& r, std::size_t begin, std::size_t end,
                Eigen::MatrixXd& Zt, Eigen::VectorXd& rt, Eigen::MatrixXd& Zv,
                Eigen::VectorXd& rv) {
  const auto n = static_cast<std::size_t>(Z.rows());
  const auto nv = static_cast<Eigen::Index>(end - begin);
  const auto nt = static_cast<Eigen::Index>(n) - nv;
  Zt.resize(nt, Z.cols());
  rt.resize(nt);
  Eigen::Index k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i >= begin && i < end) continue;
    Zt.row(k) = Z.row(static_cast<Eigen::Index>(i));
    rt[k] = r[static_cast<Eigen::Index>(i)];
    ++k;
  }
  Zv = Z.middleRows(static_cast<Eigen::Index>(begin), nv);
  rv = r.segment(static_cast<Eigen::Index>(begin), nv);
}

template <typename Fit>
std::vector<double> cv_errors(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                              const Eigen::Ref<const Eigen::VectorXd>& r, std::size_t n_grid,
                              std::size_t folds, Fit&& fit_at) {
  const auto blocks = contiguous_folds(static_cast<std::size_t>(Z.rows()), folds);
  std::vector<double> errors(n_grid, 0.0);
  Eigen::MatrixXd Zt, Zv;
  Eigen::VectorXd rt, rv;
  for (const auto& [b, e] : blocks) {
    split_rows(Z, r, b, e, Zt, rt, Zv, rv);
    for (std::size_t g = 0; g < n_grid; ++g) {
      const LinearModel m = fit_at(Zt, rt, g);
      errors[g] += (rv - m.predict_all(Zv)).squaredNorm() / static_cast<double>(rv.size());
    }
  }
  for (double& e : errors) e /= static_cast<double>(blocks.size());
  return errors;
}

}  // namespace

Standardizer Standardizer::fit(const Eigen::Ref<const Eigen::MatrixXd>& Z) {
  require(Z.rows() >= 1, "standardizer: no rows");
  Standardizer s;
  s.mean = Z.colwise().mean();
  s.sd.resize(Z.cols());
  for (Eigen::Index j = 0; j < Z.cols(); ++j) {
    const double var = (Z.col(j).array() - s.mean[j]).square().mean();
    s.sd[j] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

Eigen::MatrixXd Standardizer::apply(const Eigen::Ref<const Eigen::MatrixXd>& Z) const {
  require(Z.cols() == mean.size(), "standardizer: column count mismatch");
  return (Z.rowwise() - mean).array().rowwise() / sd.array();
}

double LinearModel::predict(const Eigen::Ref<const Eigen::RowVectorXd>& z) const {
  require(z.size() == coef.size(), "linear model: predictor length mismatch");
  return intercept + z.dot(coef.transpose());
}

Eigen::VectorXd LinearModel::predict_all(const Eigen::Ref<const Eigen::MatrixXd>& Z) const {
  require(Z.cols() == coef.size(), "linear model: predictor count mismatch");
  return (Z * coef).array() + intercept;
}

OlsFit fit_ols(const Eigen::Ref<const Eigen::MatrixXd>& Z,
               const Eigen::Ref<const Eigen::VectorXd>& r) {
  require_training(Z, r, "ols");
  const Eigen::MatrixXd X = with_intercept(Z);
  OlsFit out;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  Eigen::VectorXd beta;
  if (qr.rank() == X.cols()) {
    beta = qr.solve(r);
  } else {
    out.rank_deficient = true;
    beta = X.completeOrthogonalDecomposition().solve(r);
  }
  out.model.intercept = beta[0];
  out.model.coef = beta.tail(Z.cols());
  return out;
}

double lasso_lambda_max(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                        const Eigen::Ref<const Eigen::VectorXd>& r) {
  require_training(Z, r, "lasso");
  if (Z.cols() == 0) return 0.0;
  const auto s = Standardizer::fit(Z);
  const Eigen::MatrixXd Zs = s.apply(Z);
  const Eigen::VectorXd rc = r.array() - r.mean();
  return (2.0 / static_cast<double>(Z.rows()) * (Zs.transpose() * rc)).cwiseAbs().maxCoeff();
}

LassoFit fit_lasso(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                   const Eigen::Ref<const Eigen::VectorXd>& r, double lambda, double tol,
                   std::size_t max_sweeps) {
  require_training(Z, r, "lasso");
  require(lambda >= 0.0 && std::isfinite(lambda), "lasso: lambda must be non-negative");
  const auto P = Z.cols();
  const double T = static_cast<double>(Z.rows());
  const auto s = Standardizer::fit(Z);
  const Eigen::MatrixXd Zs = s.apply(Z);
  const double r_mean = r.mean();
  Eigen::VectorXd resid = r.array() - r_mean;
  // (1/T)Σz² per column; 1 except for constant columns, which are all zero.
  const Eigen::VectorXd col_sq = Zs.colwise().squaredNorm().transpose() / T;

  LassoFit out;
  out.theta_std = Eigen::VectorXd::Zero(P);
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < P; ++j) {
      if (!(col_sq[j] > 0.0)) continue;
      const double old = out.theta_std[j];
      const double rho = Zs.col(j).dot(resid) / T + col_sq[j] * old;
      const double updated = soft_threshold(rho, lambda / 2.0) / col_sq[j];
      if (updated != old) {
        resid -= (updated - old) * Zs.col(j);
        out.theta_std[j] = updated;
        max_change = std::max(max_change, std::abs(updated - old));
      }
    }
    out.sweeps = sweep + 1;
    if (max_change < tol) {
      out.converged = true;
      break;
    }
  }
  out.model.coef = out.theta_std.cwiseQuotient(s.sd.transpose());
  out.model.intercept = r_mean - s.mean.dot(out.model.coef.transpose());
  return out;
}

std::vector<double> lasso_lambda_grid(double lambda_max, std::size_t n, double ratio) {
  require(n >= 1 && ratio > 0.0 && ratio < 1.0, "lasso grid: invalid settings");
  if (!(lambda_max > 0.0)) return {0.0};
  std::vector<double> grid(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double f = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    grid[i] = lambda_max * std::pow(ratio, f);
  }
  return grid;
}

std::vector<std::pair<std::size_t, std::size_t>> contiguous_folds(std::size_t n,
                                                                  std::size_t folds) {
  require(folds >= 2, "cross-validation needs at least 2 folds");
  require(n >= folds, "cross-validation: " + std::to_string(n) + " rows for " +
                          std::to_string(folds) + " folds");
  std::vector<std::pair<std::size_t, std::size_t>> out;
  const std::size_t base = n / folds;
  const std::size_t extra = n % folds;
  std::size_t begin = 0;
  for (std::size_t k = 0; k < folds; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    out.emplace_back(begin, begin + len);
    begin += len;
  }
  return out;
}

CvResult select_lasso_lambda(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                             const Eigen::Ref<const Eigen::VectorXd>& r,
                             std::vector<double> grid, std::size_t folds) {
  require_training(Z, r, "lasso cv");
  if (grid.empty()) grid = lasso_lambda_grid(lasso_lambda_max(Z, r));
  for (double g : grid) require(g >= 0.0, "lasso cv: negative lambda in grid");
  CvResult out;
  out.grid = grid;
  out.errors = cv_errors(Z, r, grid.size(), folds,
                         [&](const Eigen::MatrixXd& Zt, const Eigen::VectorXd& rt,
                             std::size_t g) { return fit_lasso(Zt, rt, grid[g]).model; });
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double e = out.errors[g];
    if (e < best_err || (e == best_err && grid[g] > out.best)) {
      best_err = e;
      out.best = grid[g];
    }
  }
  return out;
}

PcrFit fit_pcr(const Eigen::Ref<const Eigen::MatrixXd>& Z,
               const Eigen::Ref<const Eigen::VectorXd>& r, std::size_t M) {
  require_training(Z, r, "pcr");
  require(M >= 1, "pcr: at least one component is required");
  require(M <= static_cast<std::size_t>(std::min(Z.rows(), Z.cols())),
          "pcr: M=" + std::to_string(M) + " exceeds min(rows, predictors)");
  const auto s = Standardizer::fit(Z);
  const Eigen::MatrixXd Zs = s.apply(Z);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(Zs, Eigen::ComputeThinV);
  const Eigen::MatrixXd Phi = svd.matrixV().leftCols(static_cast<Eigen::Index>(M));
  const OlsFit scores = fit_ols(Zs * Phi, r);
  PcrFit out;
  out.components = M;
  out.model.coef = (Phi * scores.model.coef).cwiseQuotient(s.sd.transpose());
  out.model.intercept = scores.model.intercept - s.mean.dot(out.model.coef.transpose());
  return out;
}

CvResult select_pcr_components(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                               const Eigen::Ref<const Eigen::VectorXd>& r,
                               std::vector<std::size_t> grid, std::size_t folds) {
  require_training(Z, r, "pcr cv");
  const auto blocks = contiguous_folds(static_cast<std::size_t>(Z.rows()), folds);
  std::size_t smallest_train = static_cast<std::size_t>(Z.rows());
  for (const auto& [b, e] : blocks) smallest_train = std::min(smallest_train, Z.rows() - (e - b));
  const std::size_t cap = std::min<std::size_t>(static_cast<std::size_t>(Z.cols()), smallest_train);
  if (grid.empty()) {
    for (std::size_t m = 1; m <= std::min<std::size_t>(cap, 10); ++m) grid.push_back(m);
  }
  for (std::size_t m : grid) {
    require(m >= 1 && m <= cap, "pcr cv: component count " + std::to_string(m) +
                                    " outside [1, " + std::to_string(cap) + "]");
  }
  CvResult out;
  out.grid.assign(grid.begin(), grid.end());
  out.errors = cv_errors(Z, r, grid.size(), folds,
                         [&](const Eigen::MatrixXd& Zt, const Eigen::VectorXd& rt,
                             std::size_t g) { return fit_pcr(Zt, rt, grid[g]).model; });
  double best_err = std::numeric_limits<double>::infinity();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double e = out.errors[g];
    const double m = static_cast<double>(grid[g]);
    if (e < best_err || (e == best_err && m < out.best)) {
      best_err = e;
      out.best = m;
    }
  }
  return out;
}

std::string to_string(ForecasterKind k) {
  switch (k) {
    case ForecasterKind::mean: return "mean";
    case ForecasterKind::ols: return "ols";
    case ForecasterKind::lasso: return "lasso";
    case ForecasterKind::pcr: return "pcr";
  }
  return "unknown";
}

ForecasterKind parse_forecaster_kind(const std::string& text) {
  if (text == "mean") return ForecasterKind::mean;
  if (text == "ols") return ForecasterKind::ols;
  if (text == "lasso") return ForecasterKind::lasso;
  if (text == "pcr") return ForecasterKind::pcr;
  throw ValidationError("unknown forecaster '" + text + "' (expected mean, ols, lasso or pcr)");
}

void ForecasterSpec::validate() const {
  require(cv_folds >= 2, "forecaster " + label() + ": cv_folds must be at least 2");
  for (double l : lambda_grid) {
    require(l >= 0.0, "forecaster " + label() + ": negative lambda in grid");
  }
  for (std::size_t m : pcr_grid) {
    require(m >= 1, "forecaster " + label() + ": component counts must be positive");
  }
}

namespace {

class MeanForecaster final : public Forecaster {
 public:
  explicit MeanForecaster(ForecasterSpec spec) : spec_(std::move(spec)) {}
  std::string id() const override { return spec_.label(); }
  FitResult fit(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                const Eigen::Ref<const Eigen::VectorXd>& r) const override {
    require_training(Z, r, "mean");
    auto m = std::make_unique<LinearModel>();
    m->intercept = r.mean();
    m->coef = Eigen::VectorXd::Zero(Z.cols());
    return {std::move(m), 0.0, {}};
  }

 private:
  ForecasterSpec spec_;
};

class OlsForecaster final : public Forecaster {
 public:
  explicit OlsForecaster(ForecasterSpec spec) : spec_(std::move(spec)) {}
  std::string id() const override { return spec_.label(); }
  FitResult fit(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                const Eigen::Ref<const Eigen::VectorXd>& r) const override {
    auto f = fit_ols(Z, r);
    FitResult out{std::make_unique<LinearModel>(std::move(f.model)), 0.0, {}};
    if (f.rank_deficient) out.warnings.push_back("rank-deficient design; minimum-norm solution");
    return out;
  }

 private:
  ForecasterSpec spec_;
};

class LassoForecaster final : public Forecaster {
 public:
  explicit LassoForecaster(ForecasterSpec spec) : spec_(std::move(spec)) {}
  std::string id() const override { return spec_.label(); }
  FitResult fit(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                const Eigen::Ref<const Eigen::VectorXd>& r) const override {
    const auto cv = select_lasso_lambda(Z, r, spec_.lambda_grid, spec_.cv_folds);
    auto f = fit_lasso(Z, r, cv.best);
    FitResult out{std::make_unique<LinearModel>(std::move(f.model)), cv.best, {}};
    if (!f.converged) out.warnings.push_back("coordinate descent hit the sweep limit");
    return out;
  }

 private:
  ForecasterSpec spec_;
};

class PcrForecaster final : public Forecaster {
 public:
  explicit PcrForecaster(ForecasterSpec spec) : spec_(std::move(spec)) {}
  std::string id() const override { return spec_.label(); }
  FitResult fit(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                const Eigen::Ref<const Eigen::VectorXd>& r) const override {
    if (Z.cols() == 0) return MeanForecaster(spec_).fit(Z, r);
    const auto cv = select_pcr_components(Z, r, spec_.pcr_grid, spec_.cv_folds);
    auto f = fit_pcr(Z, r, static_cast<std::size_t>(cv.best));
    return {std::make_unique<LinearModel>(std::move(f.model)), cv.best, {}};
  }

 private:
  ForecasterSpec spec_;
};

}  // namespace

std::unique_ptr<Forecaster> make_forecaster(const ForecasterSpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case ForecasterKind::mean: return std::make_unique<MeanForecaster>(spec);
    case ForecasterKind::ols: return std::make_unique<OlsForecaster>(spec);
    case ForecasterKind::lasso: return std::make_unique<LassoForecaster>(spec);
    case ForecasterKind::pcr: return std::make_unique<PcrForecaster>(spec);
  }
  throw ValidationError("unknown forecaster kind");
}

}  // namespace mwe
