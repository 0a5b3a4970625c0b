#include "mwe/ppca.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mwe {

namespace {

struct Posterior {
  Eigen::VectorXd mean;  // E[f]
  Eigen::MatrixXd cov;   // Cov[f] = σ² M⁻¹
  double loglik = 0.0;
};

std::vector<Eigen::Index> observed_rows(const Eigen::Ref<const Eigen::MatrixXd>& X,
                                        Eigen::Index col) {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    if (!std::isnan(X(i, col))) rows.push_back(i);
  }
  return rows;
}

// Posterior of the latent for one column and its marginal log-density,
// via M = σ²I + W_OᵀW_O (Woodbury on the n×n covariance).
Posterior posterior(const Eigen::MatrixXd& W, const Eigen::VectorXd& mu, double sigma2,
                    const Eigen::Ref<const Eigen::MatrixXd>& X, Eigen::Index col,
                    const std::vector<Eigen::Index>& rows) {
  const auto q = W.cols();
  const auto n = static_cast<Eigen::Index>(rows.size());
  Posterior out;
  if (n == 0) {
    out.mean = Eigen::VectorXd::Zero(q);
    out.cov = Eigen::MatrixXd::Identity(q, q);
    return out;
  }
  Eigen::MatrixXd Wo(n, q);
  Eigen::VectorXd xc(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    Wo.row(k) = W.row(rows[static_cast<std::size_t>(k)]);
    xc[k] = X(rows[static_cast<std::size_t>(k)], col) - mu[rows[static_cast<std::size_t>(k)]];
  }
  Eigen::MatrixXd M = Wo.transpose() * Wo;
  M.diagonal().array() += sigma2;
  const Eigen::LLT<Eigen::MatrixXd> llt(M);
  const Eigen::VectorXd wx = Wo.transpose() * xc;
  out.mean = llt.solve(wx);
  out.cov = sigma2 * llt.solve(Eigen::MatrixXd::Identity(q, q));

  // log|C| = (n - q) log σ² + log|M|;  xᵀC⁻¹x = (‖x‖² - wxᵀM⁻¹wx)/σ².
  const Eigen::MatrixXd Lm = llt.matrixL();
  const double log_det_m = 2.0 * Lm.diagonal().array().log().sum();
  const double log_det = static_cast<double>(n - q) * std::log(sigma2) + log_det_m;
  const double quad = (xc.squaredNorm() - wx.dot(out.mean)) / sigma2;
  out.loglik = -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + log_det +
                       std::max(quad, 0.0));
  return out;
}

double observed_loglik(const Eigen::MatrixXd& W, const Eigen::VectorXd& mu, double sigma2,
                       const Eigen::Ref<const Eigen::MatrixXd>& X) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    total += posterior(W, mu, sigma2, X, j, observed_rows(X, j)).loglik;
  }
  return total;
}

// Orthogonal, norm-ordered axes with the largest-magnitude loading of each
// column positive. Scores are rotated to match.
void canonicalize(PpcaModel& model) {
  const auto q = model.W.cols();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(model.W, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::MatrixXd R = svd.matrixV();  // W R has orthogonal columns
  model.W = model.W * R;
  model.F = R.transpose() * model.F;
  for (Eigen::Index c = 0; c < q; ++c) {
    Eigen::Index arg = 0;
    model.W.col(c).cwiseAbs().maxCoeff(&arg);
    if (model.W(arg, c) < 0.0) {
      model.W.col(c) *= -1.0;
      model.F.row(c) *= -1.0;
    }
  }
}

}  // namespace

PpcaModel ppca_fit(const Eigen::Ref<const Eigen::MatrixXd>& X, const PpcaOptions& options) {
  const auto k = X.rows();
  const auto t = X.cols();
  const auto q = static_cast<Eigen::Index>(options.q);
  require(q >= 1, "ppca: q must be at least 1");
  require(q < k, "ppca: q=" + std::to_string(q) + " must be below the row count " +
                     std::to_string(k));
  require(options.tol > 0.0 && options.max_iter >= 1, "ppca: invalid tolerance settings");

  std::size_t n_obs = 0;
  Eigen::VectorXd row_sum = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd row_cnt = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd col_cnt = Eigen::VectorXd::Zero(t);
  for (Eigen::Index j = 0; j < t; ++j) {
    for (Eigen::Index i = 0; i < k; ++i) {
      const double v = X(i, j);
      if (std::isnan(v)) continue;
      require(std::isfinite(v), "ppca: infinite entry");
      row_sum[i] += v;
      row_cnt[i] += 1.0;
      col_cnt[j] += 1.0;
      ++n_obs;
    }
  }
  for (Eigen::Index i = 0; i < k; ++i) {
    require(row_cnt[i] > 0.0, "ppca: row " + std::to_string(i) + " has no observed entries");
  }
  for (Eigen::Index j = 0; j < t; ++j) {
    require(col_cnt[j] > 0.0,
            "ppca: column " + std::to_string(j) + " has no observed entries");
  }
  const double fraction = static_cast<double>(n_obs) / static_cast<double>(k * t);
  require(fraction >= options.min_observed_fraction,
          "ppca: observed fraction " + std::to_string(fraction) + " below minimum " +
              std::to_string(options.min_observed_fraction));

  // Deterministic start: SVD of the mean-imputed, centered matrix.
  const Eigen::VectorXd mean0 = row_sum.cwiseQuotient(row_cnt);
  Eigen::MatrixXd Xc(k, t);
  for (Eigen::Index j = 0; j < t; ++j) {
    for (Eigen::Index i = 0; i < k; ++i) {
      Xc(i, j) = std::isnan(X(i, j)) ? 0.0 : X(i, j) - mean0[i];
    }
  }
  // The floor follows the raw magnitude as well as the spread: a constant
  // matrix has a centered scale made of rounding error only.
  double raw_sq = 0.0;
  for (Eigen::Index j = 0; j < t; ++j) {
    for (Eigen::Index i = 0; i < k; ++i) {
      if (!std::isnan(X(i, j))) raw_sq += X(i, j) * X(i, j);
    }
  }
  const double scale = std::max(Xc.squaredNorm(), raw_sq) / static_cast<double>(n_obs);
  const double sigma2_floor = 1e-12 * (scale > 0.0 ? scale : 1.0);

  Eigen::BDCSVD<Eigen::MatrixXd> svd(Xc, Eigen::ComputeThinU);
  const Eigen::VectorXd eig = svd.singularValues().array().square() / static_cast<double>(t);
  const auto n_eig = eig.size();
  double sigma2 = 0.0;
  if (n_eig > q) sigma2 = eig.tail(n_eig - q).sum() / static_cast<double>(k - q);
  sigma2 = std::max(sigma2, sigma2_floor);
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(k, q);
  for (Eigen::Index c = 0; c < std::min(q, n_eig); ++c) {
    W.col(c) = svd.matrixU().col(c) * std::sqrt(std::max(eig[c] - sigma2, 0.0));
  }
  Eigen::VectorXd mu = mean0;

  PpcaModel model;
  std::vector<std::vector<Eigen::Index>> rows(static_cast<std::size_t>(t));
  for (Eigen::Index j = 0; j < t; ++j) rows[static_cast<std::size_t>(j)] = observed_rows(X, j);

  double prev = observed_loglik(W, mu, sigma2, X);
  model.loglik_trace.push_back(prev);
  std::vector<Posterior> post(static_cast<std::size_t>(t));

  for (std::size_t iter = 0; iter < options.max_iter; ++iter) {
    // E-step.
    for (Eigen::Index j = 0; j < t; ++j) {
      post[static_cast<std::size_t>(j)] = posterior(W, mu, sigma2, X, j, rows[static_cast<std::size_t>(j)]);
    }
    // M-step for each row: [W_i μ_i] jointly, with the latent augmented by 1.
    Eigen::MatrixXd W_new(k, q);
    Eigen::VectorXd mu_new(k);
    std::vector<Eigen::MatrixXd> gram(static_cast<std::size_t>(k),
                                      Eigen::MatrixXd::Zero(q + 1, q + 1));
    Eigen::MatrixXd cross = Eigen::MatrixXd::Zero(k, q + 1);
    for (Eigen::Index j = 0; j < t; ++j) {
      const auto& p = post[static_cast<std::size_t>(j)];
      Eigen::MatrixXd g(q + 1, q + 1);
      g.topLeftCorner(q, q) = p.cov + p.mean * p.mean.transpose();
      g.topRightCorner(q, 1) = p.mean;
      g.bottomLeftCorner(1, q) = p.mean.transpose();
      g(q, q) = 1.0;
      Eigen::VectorXd ef(q + 1);
      ef << p.mean, 1.0;
      for (Eigen::Index i : rows[static_cast<std::size_t>(j)]) {
        gram[static_cast<std::size_t>(i)] += g;
        cross.row(i) += X(i, j) * ef.transpose();
      }
    }
    for (Eigen::Index i = 0; i < k; ++i) {
      const auto& G = gram[static_cast<std::size_t>(i)];
      Eigen::VectorXd sol = G.ldlt().solve(cross.row(i).transpose());
      // Rows seen in very few columns give a rank-deficient Gram matrix.
      if (!sol.allFinite()) {
        sol = G.completeOrthogonalDecomposition().solve(cross.row(i).transpose());
      }
      W_new.row(i) = sol.head(q).transpose();
      mu_new[i] = sol[q];
    }
    double resid = 0.0;
    for (Eigen::Index j = 0; j < t; ++j) {
      const auto& p = post[static_cast<std::size_t>(j)];
      for (Eigen::Index i : rows[static_cast<std::size_t>(j)]) {
        const double e = X(i, j) - W_new.row(i).dot(p.mean) - mu_new[i];
        resid += e * e + W_new.row(i) * p.cov * W_new.row(i).transpose();
      }
    }
    W = W_new;
    mu = mu_new;
    sigma2 = std::max(resid / static_cast<double>(n_obs), sigma2_floor);

    const double cur = observed_loglik(W, mu, sigma2, X);
    model.loglik_trace.push_back(cur);
    model.iterations = iter + 1;
    if (cur < prev - 1e-9 * std::max(1.0, std::abs(prev))) model.monotone = false;
    const double change = std::abs(cur - prev);
    prev = cur;
    if (change <= options.tol * std::max(1.0, std::abs(cur))) {
      model.converged = true;
      break;
    }
  }

  model.W = W;
  model.mu = mu;
  model.sigma2 = sigma2;
  model.F.resize(q, t);
  for (Eigen::Index j = 0; j < t; ++j) {
    model.F.col(j) = posterior(W, mu, sigma2, X, j, rows[static_cast<std::size_t>(j)]).mean;
  }
  canonicalize(model);
  return model;
}

double ppca_loglik(const PpcaModel& model, const Eigen::Ref<const Eigen::MatrixXd>& X) {
  require(X.rows() == model.W.rows(), "ppca loglik: row count mismatch");
  return observed_loglik(model.W, model.mu, model.sigma2, X);
}

Eigen::MatrixXd ppca_project(const PpcaModel& model, const Eigen::Ref<const Eigen::MatrixXd>& X) {
  require(X.rows() == model.W.rows(), "ppca project: row count mismatch");
  Eigen::MatrixXd F(model.W.cols(), X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    F.col(j) = posterior(model.W, model.mu, model.sigma2, X, j, observed_rows(X, j)).mean;
  }
  return F;
}

Eigen::MatrixXd ppca_impute(const PpcaModel& model, const Eigen::Ref<const Eigen::MatrixXd>& X) {
  const Eigen::MatrixXd F = ppca_project(model, X);
  Eigen::MatrixXd out = X;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      if (std::isnan(X(i, j))) out(i, j) = model.W.row(i).dot(F.col(j)) + model.mu[i];
    }
  }
  return out;
}

}  // namespace mwe
