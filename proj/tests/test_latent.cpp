#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "fixtures.hpp"
#include "latmom/errors.hpp"
#include "latmom/latent.hpp"
#include "latmom/model.hpp"

using namespace latmom;

namespace {

MomentCoefficients random_coefficients(const ModelDesign& design, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  MomentCoefficients c;
  for (Moment m : kAllMoments) {
    MomentBlock& b = c[m];
    b.beta = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(design.n_fixed(m)), [&] { return 0.3 * n01(rng); });
    b.effects = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(design.n_effects(m)), [&] { return 0.3 * n01(rng); });
    if (design.spec()[m].ar1) {
      b.ar_terms = Eigen::VectorXd::NullaryExpr(static_cast<Eigen::Index>(design.data().n_obs()), [&] { return 0.2 * n01(rng); });
    }
  }
  return c;
}

}  // namespace

TEST_SUITE("latent") {

TEST_CASE("linear predictor arithmetic") {
  const std::vector<std::string> ids{"A", "A"};
  const std::vector<double> t{1, 2};
  const std::vector<int> y{0, 1};
  Eigen::MatrixXd x(2, 1);
  x << 0.5, 0.0;
  const PanelData data = make_panel(ids, t, y, {"x"}, x);
  MomentSpec spec;
  spec[Moment::Location].columns = {"x"};
  spec[Moment::Location].effect = RandomEffect::Subject;
  const ModelDesign design(data, spec);
  MomentCoefficients c;
  for (Moment m : kAllMoments) c[m].beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(design.n_fixed(m)));
  c[Moment::Location].beta = Eigen::Vector2d(0.2, -0.4);
  c[Moment::Location].effects = Eigen::VectorXd::Constant(1, 0.1);
  CHECK(linear_predictor(design, c, Moment::Location, 0) == doctest::Approx(0.1).epsilon(1e-15));
  c[Moment::Location].effects.setZero();
  CHECK(linear_predictor(design, c, Moment::Location, 1) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("linear predictor matches a direct dot product") {
  PanelData data = fixtures::random_panel(7, 4, 1);
  fixtures::random_membership(data, 2);
  MomentSpec spec;
  spec[Moment::Location] = {true, 0.0, {"a", "b"}, RandomEffect::Subject, false};
  spec[Moment::Scale] = {false, 0.25, {"b"}, RandomEffect::Membership, false};
  spec[Moment::Skew] = {true, 0.0, {"a"}, RandomEffect::None, true};
  const ModelDesign design(data, spec);
  std::mt19937_64 rng(3);
  const MomentCoefficients c = random_coefficients(design, rng);
  for (std::size_t r = 0; r < data.n_obs(); ++r) {
    const auto i = static_cast<Eigen::Index>(data.subject[r]);
    const double a = data.covariates(static_cast<Eigen::Index>(r), 0);
    const double b = data.covariates(static_cast<Eigen::Index>(r), 1);
    const auto& L = c[Moment::Location];
    CHECK(linear_predictor(design, c, Moment::Location, r) ==
          doctest::Approx(L.beta[0] + L.beta[1] * a + L.beta[2] * b + L.effects[i]).epsilon(1e-13));
    const auto& S = c[Moment::Scale];
    double mm = 0.0;
    for (Eigen::Index g = 0; g < 3; ++g) mm += data.membership(i, g) * S.effects[g];
    CHECK(linear_predictor(design, c, Moment::Scale, r) == doctest::Approx(0.25 + S.beta[0] * b + mm).epsilon(1e-13));
    const auto& K = c[Moment::Skew];
    CHECK(linear_predictor(design, c, Moment::Skew, r) ==
          doctest::Approx(K.beta[0] + K.beta[1] * a + K.ar_terms[static_cast<Eigen::Index>(r)]).epsilon(1e-13));
  }
}

TEST_CASE("links") {
  const SasParams z = apply_links({0, 0, 0, 0});
  CHECK(z.mu == 0.0);
  CHECK(z.sigma == 1.0);
  CHECK(z.nu == 0.0);
  CHECK(z.tau == 1.0);
  const SasParams p = apply_links({1.5, std::log(2.0), -0.3, std::log(0.8)});
  CHECK(p.sigma == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(p.tau == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(apply_links({0, 50, 0, 0}).sigma == doctest::Approx(std::exp(50.0)));
  for (double v : {-1e6, -800.0, 800.0, 1e6}) {
    const SasParams q = apply_links({0, v, 0, v});
    CHECK(std::isfinite(q.sigma));
    CHECK(q.sigma > 0.0);
    CHECK(std::isfinite(q.tau));
    CHECK(q.tau > 0.0);
  }
}

TEST_CASE("multiple-membership effect") {
  const std::vector<double> gamma{0.4, -1.0, 2.5};
  CHECK(mm_effect(std::vector<double>{0, 1, 0}, gamma) == -1.0);
  CHECK(mm_effect(std::vector<double>{1.0 / 3, 1.0 / 3, 1.0 / 3}, gamma) == doctest::Approx((0.4 - 1.0 + 2.5) / 3));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < 20; ++k) {
    std::vector<double> w(5), g(5);
    double s = 0.0;
    for (int j = 0; j < 5; ++j) s += (w[j] = u(rng));
    double expect = 0.0;
    for (int j = 0; j < 5; ++j) {
      w[j] /= s;
      g[j] = u(rng) - 0.5;
      expect += w[j] * g[j];
    }
    CHECK(mm_effect(w, g) == doctest::Approx(expect).epsilon(1e-14));
  }
  CHECK_THROWS_AS(mm_effect(std::vector<double>{0.5, 0.3}, std::vector<double>{1, 2}), DataError);
}

TEST_CASE("membership with identity assignment equals plain random intercepts") {
  PanelData plain = fixtures::random_panel(5, 3, 9);
  PanelData grouped = plain;
  set_membership(grouped, plain.subject_ids, Eigen::MatrixXd::Identity(5, 5));
  MomentSpec a, b;
  a[Moment::Location] = {true, 0.0, {"a"}, RandomEffect::Subject, false};
  b[Moment::Location] = {true, 0.0, {"a"}, RandomEffect::Membership, false};
  const ModelDesign da(plain, a), db(grouped, b);
  std::mt19937_64 rng(5);
  const MomentCoefficients c = random_coefficients(da, rng);
  for (std::size_t r = 0; r < plain.n_obs(); ++r) {
    CHECK(linear_predictor(da, c, Moment::Location, r) == doctest::Approx(linear_predictor(db, c, Moment::Location, r)).epsilon(1e-14));
  }
}

TEST_CASE("AR(1) density and simulation") {
  const std::vector<double> path{0.3, -1.2, 0.8, 0.1};
  double iid = 0.0;
  for (double v : path) iid += -0.5 * std::log(2 * M_PI) - std::log(0.7) - 0.5 * (v / 0.7) * (v / 0.7);
  CHECK(ar1_logdensity(path, 0.0, 0.7) == doctest::Approx(iid).epsilon(1e-13));

  const double rho = -0.45, scale = 0.9;
  const std::vector<double> u3{0.4, -0.2, 1.1};
  Eigen::Matrix3d cov;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) cov(i, j) = scale * scale / (1 - rho * rho) * std::pow(rho, std::abs(i - j));
  }
  const Eigen::Vector3d v(u3[0], u3[1], u3[2]);
  const double dense = -1.5 * std::log(2 * M_PI) - 0.5 * std::log(cov.determinant()) - 0.5 * v.dot(cov.inverse() * v);
  CHECK(ar1_logdensity(u3, rho, scale) == doctest::Approx(dense).epsilon(1e-12));

  std::mt19937_64 rng(6);
  const auto sim = ar1_simulate(1000001, 0.6, 1.0, rng);
  double sxy = 0, sxx = 0, mean = 0;
  for (double s : sim) mean += s;
  mean /= static_cast<double>(sim.size());
  for (std::size_t t = 1; t < sim.size(); ++t) {
    sxy += (sim[t] - mean) * (sim[t - 1] - mean);
    sxx += (sim[t - 1] - mean) * (sim[t - 1] - mean);
  }
  CHECK(std::abs(sxy / sxx - 0.6) < 0.01);
}

TEST_CASE("assembled parameters") {
  PanelData data = fixtures::random_panel(6, 3, 7);
  MomentSpec spec;
  for (Moment m : kAllMoments) spec[m] = {true, 0.0, {"a", "b"}, RandomEffect::Subject, false};
  const ModelDesign design(data, spec);
  CHECK(design.fixed_effect_count() == 12);
  CHECK(design.random_effect_count() == 4 * data.n_subjects());

  MomentCoefficients zero;
  for (Moment m : kAllMoments) {
    zero[m].beta = Eigen::VectorXd::Zero(3);
    zero[m].effects = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.n_subjects()));
  }
  for (const SasParams& p : assemble_params(design, zero)) {
    CHECK(p.mu == 0.0);
    CHECK(p.sigma == 1.0);
    CHECK(p.nu == 0.0);
    CHECK(p.tau == 1.0);
  }

  std::mt19937_64 rng(8);
  const MomentCoefficients c = random_coefficients(design, rng);
  const auto params = assemble_params(design, c);
  for (std::size_t r = 0; r < data.n_obs(); ++r) {
    const auto i = static_cast<Eigen::Index>(data.subject[r]);
    std::array<double, 4> raw;
    for (Moment m : kAllMoments) {
      const auto& b = c[m];
      raw[index(m)] = b.beta[0] + b.beta[1] * data.covariates(static_cast<Eigen::Index>(r), 0) +
                      b.beta[2] * data.covariates(static_cast<Eigen::Index>(r), 1) + b.effects[i];
    }
    CHECK(params[r].mu == doctest::Approx(raw[0]).epsilon(1e-13));
    CHECK(params[r].sigma == doctest::Approx(std::exp(raw[1])).epsilon(1e-13));
    CHECK(params[r].nu == doctest::Approx(raw[2]).epsilon(1e-13));
    CHECK(params[r].tau == doctest::Approx(std::exp(raw[3])).epsilon(1e-13));
  }

  MomentSpec notail = spec;
  notail.variant = Variant::NoTail;
  const ModelDesign dn(data, notail);
  CHECK(dn.fixed_effect_count() == 6);
  MomentCoefficients cn = c;
  for (Moment m : {Moment::Skew, Moment::Tail}) {
    cn[m].beta.resize(0);
    cn[m].effects.resize(0);
  }
  for (const SasParams& p : assemble_params(dn, cn)) {
    CHECK(p.nu == 0.0);
    CHECK(p.tau == 1.0);
  }
  // Constraining an already constrained spec changes nothing.
  MomentSpec twice = notail;
  twice.variant = Variant::NoTail;
  CHECK(ModelDesign(data, twice).fixed_effect_count() == dn.fixed_effect_count());
  CHECK(ModelDesign(data, twice).random_effect_count() == dn.random_effect_count());
}

TEST_CASE("panel validation") {
  const std::vector<std::string> ids{"A", "A", "B"};
  const std::vector<double> t{1, 1, 1};
  const std::vector<int> y{0, 1, 1};
  CHECK_THROWS_AS(make_panel(ids, t, y, {}, Eigen::MatrixXd(3, 0)), DataError);
  const std::vector<int> bad{0, 2, 1};
  const std::vector<double> t2{1, 2, 1};
  CHECK_THROWS_AS(make_panel(ids, t2, bad, {}, Eigen::MatrixXd(3, 0)), DataError);
  const PanelData ok = make_panel(ids, std::vector<double>{2, 1, 1}, y, {}, Eigen::MatrixXd(3, 0));
  CHECK(ok.n_subjects() == 2);
  CHECK(ok.time[0] == 1.0);
  CHECK(ok.y[0] == 1);
  PanelData mm = ok;
  CHECK_THROWS_AS(set_membership(mm, {"g", "h"}, (Eigen::MatrixXd(2, 2) << 0.5, 0.3, 1, 0).finished()), DataError);
}

}
