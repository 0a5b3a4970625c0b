#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "mwe/core.hpp"

namespace mwe {

/// Column means and population SDs from training data, reused unchanged on
/// test rows. Zero-variance columns keep SD 1.
struct Standardizer {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd sd;

  static Standardizer fit(const Eigen::Ref<const Eigen::MatrixXd>& Z);
  [[nodiscard]] Eigen::MatrixXd apply(const Eigen::Ref<const Eigen::MatrixXd>& Z) const;
};

/// Anything that maps one predictor row to a forecast.
class Predictor {
 public:
  virtual ~Predictor() = default;
  [[nodiscard]] virtual double predict(const Eigen::Ref<const Eigen::RowVectorXd>& z) const = 0;
};

struct LinearModel final : Predictor {
  double intercept = 0.0;
  Eigen::VectorXd coef;  // on the raw predictor scale

  [[nodiscard]] double predict(const Eigen::Ref<const Eigen::RowVectorXd>& z) const override;
  [[nodiscard]] Eigen::VectorXd predict_all(const Eigen::Ref<const Eigen::MatrixXd>& Z) const;
};

struct OlsFit {
  LinearModel model;
  bool rank_deficient = false;  // minimum-norm solution used
};

/// Least squares with an intercept column.
OlsFit fit_ols(const Eigen::Ref<const Eigen::MatrixXd>& Z,
               const Eigen::Ref<const Eigen::VectorXd>& r);

struct LassoFit {
  LinearModel model;
  Eigen::VectorXd theta_std;  // coefficients on standardized columns
  bool converged = false;
  std::size_t sweeps = 0;
};

/// Coordinate descent on (1/T)Σ(r̃ - Z̃θ)² + λΣ|θ_j| with Z̃ standardized and
/// r̃ centered; the intercept is unpenalized. Stops when the largest
/// coordinate change falls below `tol` or after `max_sweeps`.
LassoFit fit_lasso(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                   const Eigen::Ref<const Eigen::VectorXd>& r, double lambda,
                   double tol = 1e-8, std::size_t max_sweeps = 10000);

/// Smallest λ with every coefficient zero: max_j |(2/T)Σ z̃_j r̃|.
double lasso_lambda_max(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                        const Eigen::Ref<const Eigen::VectorXd>& r);

/// `n` log-spaced values from λ_max down to ratio·λ_max.
std::vector<double> lasso_lambda_grid(double lambda_max, std::size_t n = 20,
                                      double ratio = 1e-3);

/// Contiguous, deterministic fold blocks over `n` rows: [begin, end) pairs.
std::vector<std::pair<std::size_t, std::size_t>> contiguous_folds(std::size_t n,
                                                                  std::size_t folds);

struct CvResult {
  double best = 0.0;
  std::vector<double> grid;
  std::vector<double> errors;  // mean fold MSE per grid value
};

/// Ties go to the larger λ.
CvResult select_lasso_lambda(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                             const Eigen::Ref<const Eigen::VectorXd>& r,
                             std::vector<double> grid, std::size_t folds = 5);

struct PcrFit {
  LinearModel model;  // folded back to raw predictors
  std::size_t components = 0;
};

/// OLS on the top-M principal component scores of the standardized training Z.
PcrFit fit_pcr(const Eigen::Ref<const Eigen::MatrixXd>& Z,
               const Eigen::Ref<const Eigen::VectorXd>& r, std::size_t M);

/// Ties go to the smaller M.
CvResult select_pcr_components(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                               const Eigen::Ref<const Eigen::VectorXd>& r,
                               std::vector<std::size_t> grid, std::size_t folds = 5);

enum class ForecasterKind { mean, ols, lasso, pcr };
std::string to_string(ForecasterKind k);
ForecasterKind parse_forecaster_kind(const std::string& text);

struct ForecasterSpec {
  ForecasterKind kind = ForecasterKind::ols;
  std::string id;        // defaults to the kind name
  std::vector<double> lambda_grid;       // empty: lasso_lambda_grid(λ_max)
  std::vector<std::size_t> pcr_grid;     // empty: 1..min(P, 10)
  std::size_t cv_folds = 5;

  [[nodiscard]] std::string label() const { return id.empty() ? to_string(kind) : id; }
  void validate() const;
};

struct FitResult {
  std::unique_ptr<Predictor> predictor;
  double hyper = 0.0;  // selected λ or M; 0 when none
  std::vector<std::string> warnings;
};

/// Pluggable forecaster contract: fit on training rows, then predict rows.
class Forecaster {
 public:
  virtual ~Forecaster() = default;
  [[nodiscard]] virtual std::string id() const = 0;
  [[nodiscard]] virtual FitResult fit(const Eigen::Ref<const Eigen::MatrixXd>& Z,
                                      const Eigen::Ref<const Eigen::VectorXd>& r) const = 0;
};

std::unique_ptr<Forecaster> make_forecaster(const ForecasterSpec& spec);

}  // namespace mwe
