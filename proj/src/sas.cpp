#include "latmom/sas.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/erf.hpp>

#include "latmom/errors.hpp"

namespace latmom {

namespace {

constexpr double kGuard = 700.0;
constexpr double kTailMass = 1e-12;
constexpr double kQuadTol = 1e-10;

}  // namespace

SasParams SasParams::make(double mu, double sigma, double nu, double tau) {
  SasParams p{mu, sigma, nu, tau};
  if (!p.valid()) {
    std::ostringstream msg;
    msg << "invalid SAS parameters (mu=" << mu << ", sigma=" << sigma
        << ", nu=" << nu << ", tau=" << tau << ")";
    throw std::invalid_argument(msg.str());
  }
  return p;
}

bool SasParams::valid() const noexcept {
  return std::isfinite(mu) && std::isfinite(sigma) && std::isfinite(nu) &&
         std::isfinite(tau) && sigma > 0.0 && tau > 0.0;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double normal_log_cdf(double x) {
  if (x > -30.0) return std::log(normal_cdf(x));
  // asymptotic Mills-ratio expansion for the far lower tail
  const double x2 = x * x;
  const double series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log(series);
}

double normal_quantile(double q) {
  if (!(q > 0.0 && q < 1.0)) {
    throw std::domain_error("normal_quantile: probability must lie in (0, 1)");
  }
  return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * q);
}

double stable_asinh(double x) {
  const double ax = std::abs(x);
  double r;
  if (ax > 1e8) {
    r = std::log(2.0) + std::log(ax);
  } else {
    r = std::log1p(ax + ax * ax / (1.0 + std::sqrt(1.0 + ax * ax)));
  }
  return std::copysign(r, x);
}

double guarded_sinh(double x) { return std::sinh(std::clamp(x, -kGuard, kGuard)); }

double guarded_cosh(double x) { return std::cosh(std::clamp(x, -kGuard, kGuard)); }

double sas_transform(double y, const SasParams& p) {
  return p.mu + p.sigma * guarded_sinh((stable_asinh(y) + p.nu) / p.tau);
}

double sas_cdf(double z, const SasParams& p) {
  const double a = stable_asinh((z - p.mu) / p.sigma);
  return normal_cdf(guarded_sinh(p.tau * a - p.nu));
}

double sas_pdf(double z, const SasParams& p) {
  const double x = (z - p.mu) / p.sigma;
  const double w = p.tau * stable_asinh(x) - p.nu;
  const double s = guarded_sinh(w);
  const double dens = normal_pdf(s);
  if (dens == 0.0) return 0.0;
  return dens * guarded_cosh(w) * p.tau / (p.sigma * std::sqrt(1.0 + x * x));
}

double sas_quantile(double q, const SasParams& p) {
  if (!(q > 0.0 && q < 1.0)) {
    throw std::domain_error("sas_quantile: probability must lie in (0, 1)");
  }
  return sas_transform(normal_quantile(q), p);
}

double sas_event_probit(const SasParams& p) {
  return guarded_sinh(p.tau * stable_asinh(p.mu / p.sigma) + p.nu);
}

double sas_event_prob(const SasParams& p) { return normal_cdf(sas_event_probit(p)); }

std::vector<double> sas_sample(std::size_t n, const SasParams& p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<double> out(n);
  for (auto& z : out) z = sas_draw(rng, p);
  return out;
}

SasMoments sas_numeric_moments(const SasParams& p) {
  using boost::math::quadrature::gauss_kronrod;
  const double lo = sas_quantile(kTailMass, p);
  const double hi = sas_quantile(1.0 - kTailMass, p);

  auto integrate = [&](auto&& f, const char* what) {
    double err = 0.0;
    const double value = gauss_kronrod<double, 61>::integrate(f, lo, hi, 25, kQuadTol, &err);
    if (!std::isfinite(value) || err > 1e-7 * std::max(1.0, std::abs(value))) {
      std::ostringstream msg;
      msg << "moment quadrature did not converge for " << what << " (error estimate " << err
          << ", tau=" << p.tau << ")";
      throw QuadratureError(msg.str());
    }
    return value;
  };

  const double mass = integrate([&](double z) { return sas_pdf(z, p); }, "mass");
  if (std::abs(mass - 1.0) > 1e-8) {
    throw QuadratureError("moment quadrature window lost probability mass");
  }
  const double mean = integrate([&](double z) { return z * sas_pdf(z, p); }, "mean") / mass;
  auto central = [&](int k, const char* what) {
    return integrate([&](double z) { return std::pow(z - mean, k) * sas_pdf(z, p); }, what) /
           mass;
  };
  const double m2 = central(2, "variance");
  const double m3 = central(3, "skewness");
  const double m4 = central(4, "kurtosis");
  return {mean, m2, m3 / std::pow(m2, 1.5), m4 / (m2 * m2)};
}

bool check_admissibility(const SasParams& p) {
  const SasMoments m = sas_numeric_moments(p);
  return m.kurtosis - (m.skewness * m.skewness + 1.0) > 1e-9;
}

}  // namespace latmom
