#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace latmom {

class LogPosterior;

struct SamplerConfig {
  std::size_t chains = 4;
  std::size_t iterations = 2000;  // per chain, warmup included
  std::size_t warmup = 1000;
  double target_accept = 0.8;
  std::size_t max_leapfrog = 32;  // steps drawn uniformly from [1, max_leapfrog]
  std::uint64_t seed = 20240601;
  double init_radius = 2.0;  // initial values uniform on [-r, r]
  double max_divergent_fraction = 0.1;
  std::size_t threads = 1;  // chains run concurrently when > 1

  void validate() const;
};

/// Retained (post-warmup) draws of every chain, stacked chain by chain.
struct PosteriorDraws {
  std::vector<std::string> names;
  std::size_t chains = 0;
  std::size_t per_chain = 0;
  Eigen::MatrixXd values;           // (chains * per_chain) x dim
  std::vector<double> log_density;  // per retained draw
  std::size_t divergences = 0;      // post-warmup
  std::vector<double> step_size;    // adapted, per chain
  std::vector<double> accept_rate;  // mean post-warmup acceptance statistic, per chain
  std::vector<Eigen::VectorXd> inverse_metric;

  std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(values.cols()); }
  /// Column `param` restricted to one chain.
  Eigen::VectorXd chain_column(std::size_t chain, std::size_t param) const;
};

/// Log density with optional gradient output (resized by the callee).
using LogDensityFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

/// Static-trajectory HMC with jittered step count, dual-averaging step size
/// and windowed diagonal metric adaptation. Deterministic for a given seed.
/// Throws ComputationError when the divergent fraction exceeds the limit.
PosteriorDraws hmc_sample(const LogDensityFn& target, std::size_t dim,
                          std::vector<std::string> names, const SamplerConfig& cfg);

PosteriorDraws hmc_run(const LogPosterior& posterior, const SamplerConfig& cfg);

double split_rhat(std::span<const Eigen::VectorXd> chains);
double effective_sample_size(std::span<const Eigen::VectorXd> chains);

struct ParameterDiagnostic {
  std::string name;
  double rhat;
  double ess;
  bool flagged;  // rhat > 1.05
};

std::vector<ParameterDiagnostic> diagnostics(const PosteriorDraws& draws);

/// One row per retained draw: chain, draw, lp__, then named parameters.
void write_draws_csv(std::ostream& out, const PosteriorDraws& draws);

}  // namespace latmom
