#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace latmom {

/// Location, scale, skewness and tail-weight of one sinh-arcsinh latent
/// distribution. Construct through `SasParams::make` to get validation.
struct SasParams {
  double mu = 0.0;
  double sigma = 1.0;
  double nu = 0.0;
  double tau = 1.0;

  /// Throws std::invalid_argument unless sigma, tau > 0 and all fields finite.
  static SasParams make(double mu, double sigma, double nu, double tau);
  bool valid() const noexcept;
};

double normal_cdf(double x);
double normal_pdf(double x);
double normal_log_cdf(double x);
/// Inverse of normal_cdf; q must lie in (0, 1).
double normal_quantile(double q);

/// asinh evaluated through log1p, finite for every finite argument.
double stable_asinh(double x);
/// sinh/cosh with the argument clamped to [-700, 700].
double guarded_sinh(double x);
double guarded_cosh(double x);

double sas_transform(double y, const SasParams& p);
double sas_cdf(double z, const SasParams& p);
double sas_pdf(double z, const SasParams& p);
double sas_quantile(double q, const SasParams& p);

/// Pr(Z > 0) for Z ~ SAS(p).
double sas_event_prob(const SasParams& p);

/// Probit-scale event index g with Pr(Z > 0) = Phi(g):
/// g = sinh(tau * asinh(mu / sigma) + nu).
double sas_event_probit(const SasParams& p);

std::vector<double> sas_sample(std::size_t n, const SasParams& p, std::uint64_t seed);

template <class Rng>
double sas_draw(Rng& rng, const SasParams& p) {
  std::normal_distribution<double> std_normal;
  return sas_transform(std_normal(rng), p);
}

struct SasMoments {
  double mean;
  double variance;
  double skewness;
  double kurtosis;
};

/// Moments of SAS(p) by adaptive Gauss-Kronrod quadrature of the density over
/// [quantile(1e-12), quantile(1 - 1e-12)]. Throws QuadratureError when the
/// error estimate cannot be brought under tolerance.
SasMoments sas_numeric_moments(const SasParams& p);

/// kurtosis > skewness^2 + 1 with margin 1e-9.
bool check_admissibility(const SasParams& p);

}  // namespace latmom
