#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "latmom/baselines.hpp"
#include "latmom/errors.hpp"

using namespace latmom;

namespace {

// Logistic panel with covariates "a", "b" uniform on (-1, 1) and a normal
// subject intercept of standard deviation `sd`.
PanelData logistic_panel(std::size_t subjects, std::size_t times, const std::vector<double>& beta, double sd,
                         unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<std::string> ids;
  std::vector<double> t;
  std::vector<int> y;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(subjects * times), 2);
  for (std::size_t i = 0; i < subjects; ++i) {
    const double b = sd * z(rng);
    for (std::size_t k = 0; k < times; ++k) {
      const auto r = static_cast<Eigen::Index>(ids.size());
      x(r, 0) = u(rng);
      x(r, 1) = u(rng);
      const double eta = beta[0] + beta[1] * x(r, 0) + beta[2] * x(r, 1) + b;
      ids.push_back("S" + std::to_string(i));
      t.push_back(static_cast<double>(k));
      y.push_back(std::bernoulli_distribution(expit(eta))(rng) ? 1 : 0);
    }
  }
  return make_panel(ids, t, y, {"a", "b"}, x);
}

// Same rows with subjects listed in reverse and renamed.
PanelData relabeled(const PanelData& d) {
  std::vector<std::string> ids;
  std::vector<double> t;
  std::vector<int> y;
  Eigen::MatrixXd x(d.covariates.rows(), d.covariates.cols());
  for (std::size_t s = d.n_subjects(); s-- > 0;) {
    for (std::size_t r : d.rows_of_subject[s]) {
      x.row(static_cast<Eigen::Index>(ids.size())) = d.covariates.row(static_cast<Eigen::Index>(r));
      ids.push_back("renamed_" + std::to_string(s * 7 + 3));
      t.push_back(d.time[r]);
      y.push_back(d.y[r]);
    }
  }
  return make_panel(ids, t, y, d.covariate_names, x);
}

const std::vector<std::string> kCovs{"a", "b"};

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("logistic regression") {
  const PanelData d = logistic_panel(200, 4, {0.3, 1.0, -0.7}, 0.0, 1);
  const GlmFit g = fit_logistic(baseline_design(d, kCovs), d.y);
  CHECK(g.converged);
  // score is zero at the optimum
  const Eigen::MatrixXd x = baseline_design(d, kCovs);
  Eigen::VectorXd score = Eigen::VectorXd::Zero(3);
  for (Eigen::Index r = 0; r < x.rows(); ++r) score += x.row(r).transpose() * (d.y[r] - expit(x.row(r).dot(g.beta)));
  CHECK(score.norm() < 1e-8);

  // perfectly separated outcomes
  std::vector<int> sep(d.n_obs());
  for (std::size_t r = 0; r < sep.size(); ++r) sep[r] = d.covariates(static_cast<Eigen::Index>(r), 0) > 0;
  CHECK_THROWS_AS(fit_logistic(x, sep), ComputationError);
}

TEST_CASE("GEE independence reduces to the GLM") {
  const PanelData d = logistic_panel(150, 5, {-0.2, 0.8, 0.5}, 1.0, 2);
  GeeOptions o;
  o.independence = true;
  const GeeFit gee = fit_gee(d, kCovs, o);
  const GlmFit glm = fit_logistic(baseline_design(d, kCovs), d.y);
  CHECK(gee.alpha == 0.0);
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(std::abs(gee.beta[j] - glm.beta[j]) < 1e-6);
}

TEST_CASE("GEE detects correlation from duplicated rows") {
  const PanelData base = fixtures::random_panel(60, 4, 3);
  std::vector<std::string> ids;
  std::vector<double> t;
  std::vector<int> y;
  Eigen::MatrixXd x(2 * base.covariates.rows(), 2);
  for (std::size_t s = 0; s < base.n_subjects(); ++s) {
    for (std::size_t r : base.rows_of_subject[s]) {
      for (int copy = 0; copy < 2; ++copy) {
        x.row(static_cast<Eigen::Index>(ids.size())) = base.covariates.row(static_cast<Eigen::Index>(r));
        ids.push_back(base.subject_ids[s]);
        t.push_back(base.time[r] + 0.5 * copy);
        y.push_back(base.y[r]);
      }
    }
  }
  const GeeFit fit = fit_gee(make_panel(ids, t, y, kCovs, x), kCovs);
  CHECK(fit.converged);
  CHECK(fit.alpha > 0.0);
}

TEST_CASE("GEE estimating equations shrink") {
  for (unsigned seed = 10; seed < 15; ++seed) {
    const GeeFit fit = fit_gee(logistic_panel(100, 6, {0.1, 1.0, -1.0}, 1.0, seed), kCovs);
    CHECK(fit.converged);
    for (std::size_t k = 3; k + 1 < fit.equation_norms.size(); ++k) {
      CHECK(fit.equation_norms[k + 1] <= fit.equation_norms[k] + 1e-12);
    }
  }
}

TEST_CASE("GEE robust intervals cover the truth") {
  const std::vector<double> beta{-0.4, 0.9, -0.6};
  int covered = 0;
  for (unsigned seed = 0; seed < 100; ++seed) {
    const GeeFit fit = fit_gee(logistic_panel(500, 6, beta, 0.0, 1000 + seed), kCovs);
    bool all = fit.converged;
    for (Eigen::Index j = 0; j < 3; ++j) {
      all = all && std::abs(fit.beta[j] - beta[j]) <= 3 * std::sqrt(fit.robust_covariance(j, j));
    }
    covered += all;
  }
  CHECK(covered >= 95);
}

TEST_CASE("GLMM with no subject variation reduces to the GLM") {
  const PanelData d = logistic_panel(200, 6, {0.2, -0.8, 0.6}, 0.0, 4);
  const GlmmFit fit = fit_glmm(d, kCovs);
  const GlmFit glm = fit_logistic(baseline_design(d, kCovs), d.y);
  CHECK(fit.re_variance <= 1e-3);
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(std::abs(fit.beta[j] - glm.beta[j]) < 1e-3);
}

TEST_CASE("Laplace and adaptive quadrature agree") {
  const PanelData d = logistic_panel(200, 10, {0.3, 1.2, -0.8}, 1.0, 5);
  GlmmOptions laplace;
  laplace.nodes = 1;
  const GlmmFit a = fit_glmm(d, kCovs, laplace);
  const GlmmFit b = fit_glmm(d, kCovs);
  CHECK(a.converged);
  CHECK(b.converged);
  for (Eigen::Index j = 0; j < 3; ++j) CHECK(std::abs(a.beta[j] - b.beta[j]) <= 0.1 * std::abs(b.beta[j]));
  CHECK(std::abs(a.re_variance - b.re_variance) <= 0.1 * b.re_variance);
}

TEST_CASE("Gauss-Hermite rule") {
  std::vector<double> x, w;
  gauss_hermite(15, x, w);
  // exact for polynomials up to degree 29: E[Z^2k] = (2k-1)!! under N(0, 1/2) scaling
  for (int k = 0; k <= 7; ++k) {
    double q = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) q += w[i] * std::pow(x[i], 2 * k);
    double exact = std::sqrt(std::numbers::pi);
    for (int j = 1; j <= k; ++j) exact *= (2.0 * j - 1.0) / 2.0;
    CHECK(q == doctest::Approx(exact).epsilon(1e-10));
  }
}

TEST_CASE("GLMM recovers a unit subject variance") {
  int inside = 0, fits = 0;
  for (unsigned seed = 0; seed < 100; ++seed) {
    const GlmmFit fit = fit_glmm(logistic_panel(500, 6, {0.0, 1.0, -0.5}, 1.0, 5000 + seed), kCovs);
    fits += fit.converged;
    inside += fit.re_variance >= 0.5 && fit.re_variance <= 1.7;
  }
  CHECK(fits == 100);
  CHECK(inside == 100);
}

TEST_CASE("predictions") {
  const PanelData d = logistic_panel(30, 4, {0.5, 1.0, 1.0}, 1.0, 6);
  GeeFit zero;
  zero.names = {"(Intercept)", "a", "b"};
  zero.beta = Eigen::VectorXd::Zero(3);
  for (double p : baseline_predict(zero, d)) CHECK(p == 0.5);
  GlmmFit zero_mm;
  zero_mm.names = zero.names;
  zero_mm.beta = Eigen::VectorXd::Zero(3);
  zero_mm.modes = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d.n_subjects()));
  for (double p : baseline_predict(zero_mm, d)) CHECK(p == 0.5);

  GeeFit big = zero;
  big.beta << 40.0, 40.0, -40.0;
  for (double p : baseline_predict(big, d)) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
  const GlmmFit fit = fit_glmm(d, kCovs);
  for (double p : baseline_predict(fit, d)) {
    CHECK(p > 0.0);
    CHECK(p < 1.0);
  }
}

TEST_CASE("GLMM plug-in predictions track the posterior predictive") {
  // Three subjects with long histories, scored against the predictive mean
  // integrated over each intercept's posterior on a fine grid.
  const PanelData d = logistic_panel(3, 40, {0.2, 0.7, -0.4}, 1.0, 7);
  const GlmmFit fit = fit_glmm(d, kCovs);
  const std::vector<double> plug = baseline_predict(fit, d);
  const Eigen::MatrixXd x = baseline_design(d, kCovs);
  const double sd = std::sqrt(std::max(fit.re_variance, 1e-12));
  for (std::size_t s = 0; s < d.n_subjects(); ++s) {
    std::vector<double> grid, logw;
    for (int k = -4000; k <= 4000; ++k) {
      const double b = 8.0 * sd * k / 4000.0;
      double lw = -0.5 * b * b / (sd * sd);
      for (std::size_t r : d.rows_of_subject[s]) {
        const double p = expit(x.row(static_cast<Eigen::Index>(r)).dot(fit.beta) + b);
        lw += d.y[r] ? std::log(p) : std::log1p(-p);
      }
      grid.push_back(b);
      logw.push_back(lw);
    }
    const double top = *std::max_element(logw.begin(), logw.end());
    for (std::size_t r : d.rows_of_subject[s]) {
      const double eta = x.row(static_cast<Eigen::Index>(r)).dot(fit.beta);
      double num = 0.0, den = 0.0;
      for (std::size_t k = 0; k < grid.size(); ++k) {
        const double w = std::exp(logw[k] - top);
        num += w * expit(eta + grid[k]);
        den += w;
      }
      CHECK(std::abs(plug[r] - num / den) < 0.02);
    }
  }
}

TEST_CASE("relabeling subjects leaves the fits unchanged") {
  const PanelData d = logistic_panel(80, 5, {0.1, 0.9, -0.3}, 1.0, 8);
  const PanelData e = relabeled(d);
  const GeeFit g1 = fit_gee(d, kCovs), g2 = fit_gee(e, kCovs);
  const GlmmFit m1 = fit_glmm(d, kCovs), m2 = fit_glmm(e, kCovs);
  for (Eigen::Index j = 0; j < 3; ++j) {
    CHECK(g1.beta[j] == doctest::Approx(g2.beta[j]).epsilon(1e-8));
    CHECK(m1.beta[j] == doctest::Approx(m2.beta[j]).epsilon(1e-5));
  }
  CHECK(g1.alpha == doctest::Approx(g2.alpha).epsilon(1e-8));
  CHECK(m1.re_variance == doctest::Approx(m2.re_variance).epsilon(1e-5));
}

}
