#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "latmom/baselines.hpp"
#include "latmom/metrics.hpp"

using namespace latmom;

namespace {

double brute_auc(const std::vector<double>& p, const std::vector<int>& y) {
  double num = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (y[j]) continue;
      num += p[i] > p[j] ? 1.0 : (p[i] == p[j] ? 0.5 : 0.0);
      pairs += 1.0;
    }
  }
  return num / pairs;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("auc") {
  CHECK(*auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK_FALSE(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}).has_value());

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> p(10000);
  std::vector<int> y(10000);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p[i] = u(rng);
    y[i] = u(rng) < 0.4;
  }
  CHECK(std::abs(*auc(p, y) - 0.5) < 0.02);

  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> q(60);
    std::vector<int> z(60);
    for (std::size_t i = 0; i < q.size(); ++i) {
      q[i] = std::round(u(rng) * 10) / 10;  // ties on purpose
      z[i] = u(rng) < q[i];
    }
    if (std::count(z.begin(), z.end(), 1) % 60 == 0) continue;
    CHECK(*auc(q, z) == doctest::Approx(brute_auc(q, z)).epsilon(1e-12));
    std::vector<double> t(q.size());
    std::transform(q.begin(), q.end(), t.begin(), [](double v) { return std::exp(3 * v) - 7; });
    CHECK(*auc(t, z) == doctest::Approx(*auc(q, z)).epsilon(1e-12));
  }
}

TEST_CASE("brier and log loss") {
  const std::vector<int> y{1, 0, 1, 1, 0};
  CHECK(brier(std::vector<double>(5, 0.5), y) == doctest::Approx(0.25));
  CHECK(brier(std::vector<double>{1, 0, 1, 1, 0}, y) == 0.0);
  CHECK(log_loss(std::vector<double>(5, 0.5), y) == doctest::Approx(std::log(2.0)));
  CHECK(log_loss(std::vector<double>{1, 0, 1, 1, 0}, y) < 1e-12);

  const std::vector<double> p{0.3, 0.1, 0.85, 0.6, 0.45};
  double mse = 0.0, ll = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    mse += (p[i] - y[i]) * (p[i] - y[i]);
    ll += y[i] ? std::log(p[i]) : std::log(1 - p[i]);
  }
  CHECK(std::abs(brier(p, y) - mse / 5) < 1e-12);
  CHECK(5 * log_loss(p, y) == doctest::Approx(-ll).epsilon(1e-12));

  std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  std::vector<double> pp;
  std::vector<int> yy;
  for (auto i : perm) {
    pp.push_back(p[i]);
    yy.push_back(y[i]);
  }
  CHECK(brier(pp, yy) == doctest::Approx(brier(p, y)).epsilon(1e-14));
  CHECK(log_loss(pp, yy) == doctest::Approx(log_loss(p, y)).epsilon(1e-14));
  CHECK(*auc(pp, yy) == *auc(p, y));
}

TEST_CASE("calibration slope and intercept") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t n = 100000;
  std::vector<double> p(n), q(n);
  std::vector<int> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = expit(n01(rng));
    y[i] = u(rng) < p[i];
    q[i] = expit(2 * logit(p[i]));
  }
  const auto self = calibration(p, y);
  REQUIRE(self);
  CHECK(std::abs(self->slope - 1.0) < 0.05);
  CHECK(std::abs(self->intercept) < 0.05);
  const auto over = calibration(q, y);
  REQUIRE(over);
  CHECK(std::abs(over->slope - 0.5) < 0.03);
}

TEST_CASE("moment recovery") {
  const std::vector<double> truth{0.1, -0.4, 1.2, 0.0};
  std::vector<double> lo(4), hi(4), shifted(4);
  for (int i = 0; i < 4; ++i) {
    lo[i] = truth[i] - 0.5;
    hi[i] = truth[i] + 0.5;
    shifted[i] = truth[i] + 0.1;
  }
  const MomentRecovery exact = moment_recovery(truth, lo, hi, truth);
  CHECK(exact.bias == 0.0);
  CHECK(exact.rmse == 0.0);
  CHECK(exact.coverage == 100.0);
  const MomentRecovery off = moment_recovery(shifted, lo, hi, truth);
  CHECK(off.bias == doctest::Approx(0.1));
  CHECK(off.rmse == doctest::Approx(0.1));
}

TEST_CASE("per-time metrics and flattening") {
  const std::vector<double> p{0.2, 0.7, 0.4, 0.9, 0.3, 0.6};
  const std::vector<int> y{0, 1, 1, 1, 0, 0};
  const std::vector<double> t{1, 1, 2, 2, 3, 3};
  const auto by_time = metrics_by_time(p, y, t);
  REQUIRE(by_time.size() == 3);
  CHECK(by_time.at(1.0).brier == doctest::Approx(brier(std::vector<double>{0.2, 0.7}, std::vector<int>{0, 1})));
  const auto flat = flatten(predictive_metrics(p, y));
  std::vector<std::string> keys;
  for (const auto& [k, v] : flat) keys.push_back(k);
  CHECK(std::find(keys.begin(), keys.end(), "auc") != keys.end());
  CHECK(std::find(keys.begin(), keys.end(), "brier") != keys.end());
  CHECK(std::find(keys.begin(), keys.end(), "log_loss") != keys.end());
}

}
