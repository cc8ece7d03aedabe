#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "latmom/hmc.hpp"
#include "latmom/latent.hpp"
#include "latmom/model.hpp"

namespace latmom {

/// Posterior mean and central 95% interval of a per-row quantity.
struct IntervalSummary {
  std::vector<double> mean;
  std::vector<double> lower;
  std::vector<double> upper;
};

/// Event probabilities per row averaged over draws, evaluated through the
/// posterior's event model.
IntervalSummary posterior_event_probs(const PosteriorDraws& draws, const LogPosterior& posterior);

/// Posterior summaries of (mu, sigma, nu, tau) per row.
std::array<IntervalSummary, kMoments> posterior_moments(const PosteriorDraws& draws,
                                                        const LogPosterior& posterior);

/// Posterior-mean SAS density on `grid` for each observed time of `subject`:
/// one row per time, one column per grid point. Throws DataError for an
/// unknown subject.
Eigen::MatrixXd latent_density_trajectory(const PosteriorDraws& draws,
                                          const LogPosterior& posterior, std::size_t subject,
                                          std::span<const double> grid);

/// Column-wise posterior means of the raw draws.
Eigen::VectorXd posterior_mean(const PosteriorDraws& draws);

/// Empirical quantile with linear interpolation (type 7).
double empirical_quantile(std::vector<double> values, double q);

}  // namespace latmom
