#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latmom/latent.hpp"

namespace latmom {

double expit(double x);
double logit(double p);

struct GlmFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd covariance;
  double log_likelihood = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
};

/// Logistic regression by iteratively reweighted least squares. Throws
/// ComputationError on separation (diverging coefficients) or non-convergence.
GlmFit fit_logistic(const Eigen::MatrixXd& x, std::span<const int> y, double tol = 1e-10,
                    std::size_t max_iter = 100);

/// Intercept plus the named panel covariates.
Eigen::MatrixXd baseline_design(const PanelData& data, const std::vector<std::string>& covariates);

struct GeeOptions {
  bool independence = false;  // fix the working correlation at 0
  double tol = 1e-8;
  std::size_t max_iter = 200;
};

struct GeeFit {
  std::vector<std::string> names;
  Eigen::VectorXd beta;
  Eigen::MatrixXd robust_covariance;
  double alpha = 0.0;
  bool converged = false;
  std::size_t iterations = 0;
  /// Norm of the estimating equations at the start of each iteration.
  std::vector<double> equation_norms;
};

/// Logit-link GEE with exchangeable working correlation, solved by Fisher
/// scoring with a moment update of alpha each iteration.
GeeFit fit_gee(const PanelData& data, const std::vector<std::string>& covariates,
               const GeeOptions& options = {});

struct GlmmOptions {
  std::size_t nodes = 15;  // adaptive Gauss-Hermite nodes; 1 gives Laplace
  double tol = 1e-7;
  std::size_t max_iter = 300;
  double boundary_variance = 1e-4;
};

struct GlmmFit {
  std::vector<std::string> names;
  Eigen::VectorXd beta;
  double re_variance = 0.0;
  Eigen::MatrixXd covariance;  // over (beta, log sd) from the observed information
  double log_likelihood = 0.0;
  bool converged = false;
  bool boundary = false;  // variance collapsed; beta is the plain GLM fit
  std::size_t iterations = 0;
  Eigen::VectorXd modes;  // conditional modes of the subject intercepts
};

/// Logistic random-intercept GLMM by adaptive Gauss-Hermite quadrature and BFGS.
GlmmFit fit_glmm(const PanelData& data, const std::vector<std::string>& covariates,
                 const GlmmOptions& options = {});

/// Marginal log-likelihood of the GLMM at (beta, sd) by adaptive quadrature.
double glmm_marginal_loglik(const PanelData& data, const Eigen::MatrixXd& x,
                            const Eigen::VectorXd& beta, double sd, std::size_t nodes,
                            Eigen::VectorXd* modes = nullptr);

/// Gauss-Hermite nodes and weights for weight function exp(-x^2).
void gauss_hermite(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights);

/// Marginal inverse-logit predictions.
std::vector<double> baseline_predict(const GeeFit& fit, const PanelData& data);
/// Conditional predictions at each subject's posterior-mode intercept.
std::vector<double> baseline_predict(const GlmmFit& fit, const PanelData& data);

}  // namespace latmom
