#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "latmom/hmc.hpp"
#include "latmom/model.hpp"
#include "latmom/sas.hpp"

namespace latmom {

/// Bounding ranges of the moment box on the natural scale.
struct GridRanges {
  std::array<double, 2> mu{-4.0, 4.0};
  std::array<double, 2> sigma{0.2, 5.0};
  std::array<double, 2> nu{-2.0, 2.0};
  std::array<double, 2> tau{0.3, 3.0};
  void validate() const;
};

/// Surface coordinates: standardized location asinh(mu / sigma), log sigma,
/// nu and log tau. The location axis is standardized so that the knot
/// spacing resolves the event transition at every scale in the box.
using SurfaceCoords = std::array<double, 4>;

SurfaceCoords surface_coords(const SasParams& p);
/// Box of the surface coordinates implied by natural-scale ranges.
std::array<std::array<double, 2>, 4> coordinate_box(const GridRanges& ranges);

/// Tensor grid of moment combinations, uniform in surface coordinates
/// (log-spaced in sigma and tau).
struct MomentGrid {
  GridRanges ranges;
  std::array<std::vector<double>, 4> knots;  // surface coordinates
  std::size_t mc_draws = 10000;

  std::size_t size() const;
  std::array<std::size_t, 4> shape() const;
  /// Grid point by flat index (last coordinate varies fastest).
  SasParams point(std::size_t flat) const;
};

MomentGrid generate_grid(const GridRanges& ranges, std::array<std::size_t, 4> points_per_dim,
                         std::size_t mc_draws);
MomentGrid generate_grid(const GridRanges& ranges, std::size_t points_per_dim,
                         std::size_t mc_draws);

/// Monte Carlo Pr(Z > 0) per grid point from `mc_draws` SAS draws. Each point
/// owns a generator seeded from (seed, point index).
std::vector<double> simulate_probabilities(const MomentGrid& grid, std::uint64_t seed);

/// Binomial standard error of a Monte Carlo probability estimate.
double mc_standard_error(double p, std::size_t draws);

struct SurfaceFitOptions {
  std::vector<double> lambda_ladder{1e-3, 1e-2, 1e-1, 1.0, 10.0};
  /// Probabilities are clamped to [floor, 1 - floor] before the probit
  /// transform; <= 0 means 0.5 / (mc_draws + 1).
  double prob_floor = 0.0;
  std::size_t gcv_sweeps = 3;
  /// Refits treating estimates at the floor as censored bounds; 0 disables.
  std::size_t censored_iterations = 200;
};

/// Tensor-product cubic B-spline on the probit scale over surface
/// coordinates, with second-difference penalties per dimension.
class ProbabilitySurface {
 public:
  ProbabilitySurface() = default;

  /// Probit value at surface coordinates; coordinates outside the box are
  /// clamped onto it and `clamped` is set. `grad` receives the boundary
  /// gradient of the clamped surface: zero across each violated face.
  double probit_at(SurfaceCoords c, SurfaceCoords* grad, bool* clamped) const;

  const GridRanges& ranges() const { return ranges_; }
  const std::array<std::array<double, 2>, 4>& box() const { return box_; }
  const std::array<std::size_t, 4>& basis_counts() const { return counts_; }
  const std::array<double, 4>& lambda() const { return lambda_; }
  double probit_rmse() const { return rmse_; }
  double edf() const { return edf_; }
  std::size_t mc_draws() const { return mc_draws_; }
  const std::vector<double>& coefficients() const { return coef_; }

  /// Text artifact: magic, version, optional single-line metadata, ranges,
  /// basis counts, smoothing, then one coefficient per line.
  void save(std::ostream& out, std::string_view metadata = {}) const;
  static ProbabilitySurface load(std::istream& in);

 private:
  friend ProbabilitySurface fit_surface(const MomentGrid&, std::span<const double>,
                                        const SurfaceFitOptions&);
  GridRanges ranges_;
  std::array<std::array<double, 2>, 4> box_{};
  std::array<std::size_t, 4> counts_{};
  std::array<double, 4> lambda_{};
  double rmse_ = 0.0;
  double edf_ = 0.0;
  std::size_t mc_draws_ = 0;
  std::vector<double> coef_;  // last dimension fastest
};

/// Penalized least squares on the probit scale; smoothing parameters are
/// chosen per dimension by generalized cross-validation over the ladder.
/// Throws ComputationError for grids with fewer than 4 points per dimension.
ProbabilitySurface fit_surface(const MomentGrid& grid, std::span<const double> probabilities,
                               const SurfaceFitOptions& options = {});

/// Surface probability at theta (clamped into the box).
double surface_eval(const ProbabilitySurface& surface, const SasParams& theta,
                    bool* clamped = nullptr);
/// d probability / d(mu, sigma, nu, tau).
std::array<double, 4> surface_grad(const ProbabilitySurface& surface, const SasParams& theta);

/// EventModel backed by a probability surface.
class SurfaceEvents final : public EventModel {
 public:
  explicit SurfaceEvents(std::shared_ptr<const ProbabilitySurface> surface);
  double probit(const RawPredictors& raw, RawPredictors* grad, bool* clamped) const override;
  const ProbabilitySurface& surface() const { return *surface_; }

 private:
  std::shared_ptr<const ProbabilitySurface> surface_;
};

/// Bernoulli pseudo-log-likelihood with the surface in place of the CDF.
double pseudo_log_likelihood(const PanelData& data, std::span<const SasParams> params,
                             const ProbabilitySurface& surface);

struct QuadFit {
  PosteriorDraws draws;
  double clamp_rate = 0.0;  // fraction of row evaluations outside the box
  std::string warning;      // set when clamp_rate exceeds 1%
};

QuadFit quad_fit(const ModelDesign& design, const PriorConfig& prior,
                 std::shared_ptr<const ProbabilitySurface> surface, const SamplerConfig& cfg);

}  // namespace latmom
