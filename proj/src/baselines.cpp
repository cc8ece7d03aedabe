#include "latmom/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "latmom/errors.hpp"
#include "latmom/model.hpp"

namespace latmom {

namespace {

constexpr double kSeparationBound = 30.0;

double log_expit(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

double bernoulli_logit(int y, double eta) { return y == 1 ? log_expit(eta) : log_expit(-eta); }

// Minimizes f by BFGS with central-difference gradients and Armijo backtracking.
struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

template <class F>
Eigen::VectorXd numeric_gradient(F& f, const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    xp[j] = x[j] + h;
    const double fp = f(xp);
    xp[j] = x[j] - h;
    const double fm = f(xp);
    xp[j] = x[j];
    g[j] = (fp - fm) / (2.0 * h);
  }
  return g;
}

template <class F>
BfgsResult bfgs_minimize(F& f, Eigen::VectorXd x, double tol, std::size_t max_iter) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);
  double fx = f(x);
  Eigen::VectorXd g = numeric_gradient(f, x);
  BfgsResult res;
  for (std::size_t it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    if (g.lpNorm<Eigen::Infinity>() < tol) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd dir = -h_inv * g;
    if (dir.dot(g) >= 0.0) {
      h_inv.setIdentity();
      dir = -g;
    }
    double step = 1.0;
    Eigen::VectorXd x_new;
    double f_new = std::numeric_limits<double>::infinity();
    for (int ls = 0; ls < 60; ++ls) {
      x_new = x + step * dir;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * g.dot(dir)) break;
      step *= 0.5;
    }
    if (!std::isfinite(f_new) || f_new > fx) {
      res.converged = g.lpNorm<Eigen::Infinity>() < 1e3 * tol;
      break;
    }
    const Eigen::VectorXd g_new = numeric_gradient(f, x_new);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd yv = g_new - g;
    const double sy = s.dot(yv);
    const bool small_change = std::abs(fx - f_new) < 1e-14 * (1.0 + std::abs(fx));
    x = x_new;
    fx = f_new;
    g = g_new;
    if (sy > 1e-12) {
      const double rho = 1.0 / sy;
      const Eigen::MatrixXd ident = Eigen::MatrixXd::Identity(n, n);
      h_inv = (ident - rho * s * yv.transpose()) * h_inv * (ident - rho * yv * s.transpose()) +
              rho * s * s.transpose();
    }
    if (small_change && g.lpNorm<Eigen::Infinity>() < 1e2 * tol) {
      res.converged = true;
      break;
    }
  }
  res.x = x;
  res.value = fx;
  return res;
}

std::vector<std::string> with_intercept(const std::vector<std::string>& covariates) {
  std::vector<std::string> names{"(Intercept)"};
  names.insert(names.end(), covariates.begin(), covariates.end());
  return names;
}

// Newton search for the conditional mode of a subject intercept.
double subject_mode(std::span<const double> eta, std::span<const int> y, double sd, double start,
                    double* curvature) {
  double b = start;
  const double prec = 1.0 / (sd * sd);
  double h2 = 0.0;
  for (int it = 0; it < 100; ++it) {
    double g = -b * prec;
    h2 = -prec;
    for (std::size_t t = 0; t < eta.size(); ++t) {
      const double p = expit(eta[t] + b);
      g += static_cast<double>(y[t]) - p;
      h2 -= p * (1.0 - p);
    }
    const double step = -g / h2;
    b += step;
    if (std::abs(step) < 1e-10) break;
  }
  // curvature at the final point
  h2 = -prec;
  for (std::size_t t = 0; t < eta.size(); ++t) {
    const double p = expit(eta[t] + b);
    h2 -= p * (1.0 - p);
  }
  *curvature = -h2;
  return b;
}

}  // namespace

double expit(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double logit(double p) { return std::log(p / (1.0 - p)); }

GlmFit fit_logistic(const Eigen::MatrixXd& x, std::span<const int> y, double tol,
                    std::size_t max_iter) {
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (static_cast<std::size_t>(n) != y.size()) throw DataError("design and outcome lengths differ");
  GlmFit fit;
  fit.beta = Eigen::VectorXd::Zero(p);
  for (std::size_t it = 0; it < max_iter; ++it) {
    fit.iterations = it + 1;
    const Eigen::VectorXd eta = x * fit.beta;
    Eigen::VectorXd w(n);
    Eigen::VectorXd score = Eigen::VectorXd::Zero(p);
    for (Eigen::Index r = 0; r < n; ++r) {
      const double mu = expit(eta[r]);
      w[r] = std::max(mu * (1.0 - mu), 1e-12);
      score += (static_cast<double>(y[static_cast<std::size_t>(r)]) - mu) * x.row(r).transpose();
    }
    const Eigen::MatrixXd info = x.transpose() * w.asDiagonal() * x;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) throw ComputationError("logistic regression: singular information matrix");
    const Eigen::VectorXd step = ldlt.solve(score);
    fit.beta += step;
    if (fit.beta.lpNorm<Eigen::Infinity>() > kSeparationBound) {
      throw ComputationError("logistic regression: separation detected (coefficients diverge)");
    }
    if (step.lpNorm<Eigen::Infinity>() < tol) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) throw ComputationError("logistic regression did not converge");
  const Eigen::VectorXd eta = x * fit.beta;
  Eigen::VectorXd w(n);
  fit.log_likelihood = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mu = expit(eta[r]);
    w[r] = mu * (1.0 - mu);
    fit.log_likelihood += bernoulli_logit(y[static_cast<std::size_t>(r)], eta[r]);
  }
  fit.covariance = (x.transpose() * w.asDiagonal() * x).inverse();
  return fit;
}

Eigen::MatrixXd baseline_design(const PanelData& data, const std::vector<std::string>& covariates) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(data.n_obs()),
                    static_cast<Eigen::Index>(covariates.size() + 1));
  x.col(0).setOnes();
  for (std::size_t j = 0; j < covariates.size(); ++j) {
    const auto idx = data.covariate_index(covariates[j]);
    if (!idx) throw DataError("covariate '" + covariates[j] + "' is not in the panel");
    x.col(static_cast<Eigen::Index>(j + 1)) = data.covariates.col(static_cast<Eigen::Index>(*idx));
  }
  return x;
}

GeeFit fit_gee(const PanelData& data, const std::vector<std::string>& covariates,
               const GeeOptions& options) {
  const Eigen::MatrixXd x = baseline_design(data, covariates);
  const Eigen::Index p = x.cols();
  const auto n = static_cast<double>(data.n_obs());

  GeeFit fit;
  fit.names = with_intercept(covariates);
  fit.beta = fit_logistic(x, data.y).beta;

  std::size_t max_t = 1;
  double pair_count = 0.0;
  for (const auto& rows : data.rows_of_subject) {
    max_t = std::max(max_t, rows.size());
    pair_count += 0.5 * static_cast<double>(rows.size()) * static_cast<double>(rows.size() - 1);
  }
  const double alpha_lo = max_t > 1 ? -1.0 / static_cast<double>(max_t - 1) + 1e-6 : 0.0;
  const double alpha_hi = 1.0 - 1e-6;

  Eigen::MatrixXd info(p, p);
  for (std::size_t it = 0; it < options.max_iter; ++it) {
    fit.iterations = it + 1;
    const Eigen::VectorXd eta = x * fit.beta;
    Eigen::VectorXd mu(eta.size());
    Eigen::VectorXd resid(eta.size());
    double ss = 0.0;
    for (Eigen::Index r = 0; r < eta.size(); ++r) {
      mu[r] = expit(eta[r]);
      resid[r] = (static_cast<double>(data.y[static_cast<std::size_t>(r)]) - mu[r]) /
                 std::sqrt(mu[r] * (1.0 - mu[r]));
      ss += resid[r] * resid[r];
    }
    if (!options.independence && pair_count > static_cast<double>(p)) {
      const double phi = ss / (n - static_cast<double>(p));
      double cross = 0.0;
      for (const auto& rows : data.rows_of_subject) {
        double sum = 0.0;
        double sq = 0.0;
        for (std::size_t r : rows) {
          sum += resid[static_cast<Eigen::Index>(r)];
          sq += resid[static_cast<Eigen::Index>(r)] * resid[static_cast<Eigen::Index>(r)];
        }
        cross += 0.5 * (sum * sum - sq);
      }
      fit.alpha = std::clamp(cross / (phi * (pair_count - static_cast<double>(p))), alpha_lo, alpha_hi);
    } else {
      fit.alpha = 0.0;
    }

    info.setZero();
    Eigen::VectorXd score = Eigen::VectorXd::Zero(p);
    for (const auto& rows : data.rows_of_subject) {
      const auto t = static_cast<Eigen::Index>(rows.size());
      Eigen::MatrixXd xi(t, p);
      Eigen::VectorXd sqrt_v(t);
      Eigen::VectorXd ri(t);
      for (Eigen::Index k = 0; k < t; ++k) {
        const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]);
        xi.row(k) = x.row(r);
        sqrt_v[k] = std::sqrt(mu[r] * (1.0 - mu[r]));
        ri[k] = resid[r];
      }
      // R^{-1} for the exchangeable structure
      const double a = fit.alpha;
      const double c = a / (1.0 + static_cast<double>(t - 1) * a);
      Eigen::MatrixXd r_inv = Eigen::MatrixXd::Identity(t, t);
      r_inv.array() -= c;
      r_inv /= (1.0 - a);
      // D' V^{-1} = X' A^{1/2} R^{-1} A^{-1/2}; with D = A X this gives
      // D'V^{-1}D = X' A^{1/2} R^{-1} A^{1/2} X and D'V^{-1}(y - mu) = X' A^{1/2} R^{-1} r.
      const Eigen::MatrixXd xa = sqrt_v.asDiagonal() * xi;
      info += xa.transpose() * r_inv * xa;
      score += xa.transpose() * (r_inv * ri);
    }
    fit.equation_norms.push_back(score.norm());
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    if (ldlt.info() != Eigen::Success) throw ComputationError("GEE: singular information matrix");
    const Eigen::VectorXd step = ldlt.solve(score);
    fit.beta += step;
    if (fit.beta.lpNorm<Eigen::Infinity>() > kSeparationBound) {
      throw ComputationError("GEE: separation detected (coefficients diverge)");
    }
    if (step.lpNorm<Eigen::Infinity>() < options.tol) {
      fit.converged = true;
      break;
    }
  }
  if (!fit.converged) {
    std::ostringstream msg;
    msg << "GEE did not converge after " << options.max_iter << " iterations";
    throw ComputationError(msg.str());
  }

  // Sandwich covariance at the solution.
  const Eigen::VectorXd eta = x * fit.beta;
  Eigen::MatrixXd bread = Eigen::MatrixXd::Zero(p, p);
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(p, p);
  for (const auto& rows : data.rows_of_subject) {
    const auto t = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd xa(t, p);
    Eigen::VectorXd ri(t);
    for (Eigen::Index k = 0; k < t; ++k) {
      const auto r = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]);
      const double mu = expit(eta[r]);
      const double sv = std::sqrt(mu * (1.0 - mu));
      xa.row(k) = sv * x.row(r);
      ri[k] = (static_cast<double>(data.y[static_cast<std::size_t>(r)]) - mu) / sv;
    }
    const double a = fit.alpha;
    const double c = a / (1.0 + static_cast<double>(t - 1) * a);
    Eigen::MatrixXd r_inv = Eigen::MatrixXd::Identity(t, t);
    r_inv.array() -= c;
    r_inv /= (1.0 - a);
    bread += xa.transpose() * r_inv * xa;
    const Eigen::VectorXd u = xa.transpose() * (r_inv * ri);
    meat += u * u.transpose();
  }
  const Eigen::MatrixXd bread_inv = bread.inverse();
  fit.robust_covariance = bread_inv * meat * bread_inv;
  return fit;
}

void gauss_hermite(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights) {
  if (n < 1) throw ConfigError("Gauss-Hermite rule needs at least one node");
  // Golub-Welsch on the Jacobi matrix of the physicists' Hermite polynomials.
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (std::size_t k = 1; k < n; ++k) {
    const double off = std::sqrt(static_cast<double>(k) / 2.0);
    jac(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k - 1)) = off;
    jac(static_cast<Eigen::Index>(k - 1), static_cast<Eigen::Index>(k)) = off;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jac);
  nodes.resize(n);
  weights.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    nodes[k] = eig.eigenvalues()[static_cast<Eigen::Index>(k)];
    const double v0 = eig.eigenvectors()(0, static_cast<Eigen::Index>(k));
    weights[k] = std::sqrt(std::numbers::pi) * v0 * v0;
  }
}

double glmm_marginal_loglik(const PanelData& data, const Eigen::MatrixXd& x,
                            const Eigen::VectorXd& beta, double sd, std::size_t nodes,
                            Eigen::VectorXd* modes) {
  std::vector<double> gh_x;
  std::vector<double> gh_w;
  gauss_hermite(nodes, gh_x, gh_w);
  const Eigen::VectorXd eta = x * beta;
  if (modes) modes->resize(static_cast<Eigen::Index>(data.n_subjects()));
  const double log_norm = -std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
  double total = 0.0;
  std::vector<double> eta_i;
  std::vector<int> y_i;
  std::vector<double> terms(nodes);
  for (std::size_t s = 0; s < data.n_subjects(); ++s) {
    const auto& rows = data.rows_of_subject[s];
    eta_i.resize(rows.size());
    y_i.resize(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      eta_i[k] = eta[static_cast<Eigen::Index>(rows[k])];
      y_i[k] = data.y[rows[k]];
    }
    double curvature = 0.0;
    const double mode = subject_mode(eta_i, y_i, sd, 0.0, &curvature);
    if (modes) (*modes)[static_cast<Eigen::Index>(s)] = mode;
    const double scale = std::sqrt(2.0 / curvature);
    auto log_h = [&](double b) {
      double v = log_norm - 0.5 * (b / sd) * (b / sd);
      for (std::size_t k = 0; k < eta_i.size(); ++k) v += bernoulli_logit(y_i[k], eta_i[k] + b);
      return v;
    };
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < nodes; ++k) {
      terms[k] = std::log(gh_w[k]) + gh_x[k] * gh_x[k] + log_h(mode + scale * gh_x[k]);
      peak = std::max(peak, terms[k]);
    }
    double acc = 0.0;
    for (double tk : terms) acc += std::exp(tk - peak);
    total += peak + std::log(acc) + std::log(scale);
  }
  return total;
}

GlmmFit fit_glmm(const PanelData& data, const std::vector<std::string>& covariates,
                 const GlmmOptions& options) {
  const Eigen::MatrixXd x = baseline_design(data, covariates);
  const Eigen::Index p = x.cols();
  const GlmFit glm = fit_logistic(x, data.y);

  GlmmFit fit;
  fit.names = with_intercept(covariates);
  constexpr double kMinLogSd = -8.0;
  auto objective = [&](const Eigen::VectorXd& theta) {
    const double log_sd = std::max(theta[p], kMinLogSd);
    const double v = glmm_marginal_loglik(data, x, theta.head(p), std::exp(log_sd), options.nodes);
    return std::isfinite(v) ? -v : std::numeric_limits<double>::infinity();
  };

  Eigen::VectorXd start(p + 1);
  start.head(p) = glm.beta;
  start[p] = std::log(0.5);
  const BfgsResult res = bfgs_minimize(objective, start, options.tol * 1e2, options.max_iter);
  fit.iterations = res.iterations;
  fit.converged = res.converged;
  const double sd = std::exp(std::max(res.x[p], kMinLogSd));

  if (sd * sd < options.boundary_variance) {
    fit.boundary = true;
    fit.beta = glm.beta;
    fit.re_variance = 0.0;
    fit.log_likelihood = glm.log_likelihood;
    fit.covariance = Eigen::MatrixXd::Zero(p + 1, p + 1);
    fit.covariance.topLeftCorner(p, p) = glm.covariance;
    fit.modes = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.n_subjects()));
    fit.converged = true;
    return fit;
  }
  if (!fit.converged) throw ComputationError("GLMM optimizer did not converge");

  fit.beta = res.x.head(p);
  fit.re_variance = sd * sd;
  fit.log_likelihood = glmm_marginal_loglik(data, x, fit.beta, sd, options.nodes, &fit.modes);

  // observed information by central differences of the numeric gradient
  const Eigen::Index k = p + 1;
  Eigen::MatrixXd hess(k, k);
  const double h = 1e-4;
  for (Eigen::Index j = 0; j < k; ++j) {
    Eigen::VectorXd tp = res.x;
    Eigen::VectorXd tm = res.x;
    tp[j] += h;
    tm[j] -= h;
    hess.col(j) = (numeric_gradient(objective, tp) - numeric_gradient(objective, tm)) / (2.0 * h);
  }
  hess = 0.5 * (hess + hess.transpose());
  fit.covariance = hess.inverse();
  return fit;
}

namespace {
// same bounds as the Bayesian likelihood so every prediction stays in (0, 1)
double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }
}  // namespace

std::vector<double> baseline_predict(const GeeFit& fit, const PanelData& data) {
  std::vector<std::string> covariates(fit.names.begin() + 1, fit.names.end());
  const Eigen::VectorXd eta = baseline_design(data, covariates) * fit.beta;
  std::vector<double> out(static_cast<std::size_t>(eta.size()));
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = clamp_prob(expit(eta[static_cast<Eigen::Index>(r)]));
  return out;
}

std::vector<double> baseline_predict(const GlmmFit& fit, const PanelData& data) {
  std::vector<std::string> covariates(fit.names.begin() + 1, fit.names.end());
  const Eigen::MatrixXd x = baseline_design(data, covariates);
  Eigen::VectorXd modes = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.n_subjects()));
  if (!fit.boundary && fit.re_variance > 0.0) {
    glmm_marginal_loglik(data, x, fit.beta, std::sqrt(fit.re_variance), 1, &modes);
  }
  const Eigen::VectorXd eta = x * fit.beta;
  std::vector<double> out(data.n_obs());
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = clamp_prob(expit(eta[static_cast<Eigen::Index>(r)] + modes[static_cast<Eigen::Index>(data.subject[r])]));
  }
  return out;
}

}  // namespace latmom
