#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latmom/latent.hpp"
#include "latmom/sas.hpp"

namespace latmom {

/// Maps raw moment predictors to the probit-scale event index g, with
/// Pr(Y = 1) = Phi(g). Implementations must be safe for concurrent reads.
class EventModel {
 public:
  virtual ~EventModel() = default;
  /// `grad` receives dg/d(raw) when non-null; `clamped` is set when the input
  /// fell outside the model's domain and was projected onto it.
  virtual double probit(const RawPredictors& raw, RawPredictors* grad, bool* clamped) const = 0;
  double probability(const RawPredictors& raw) const;
};

/// Closed-form sinh-arcsinh exceedance probability.
class ExactSasEvents final : public EventModel {
 public:
  double probit(const RawPredictors& raw, RawPredictors* grad, bool* clamped) const override;
};

/// Clamp bound for event probabilities inside every Bernoulli log-likelihood.
inline constexpr double kProbClamp = 1e-14;

/// y log p + (1 - y) log(1 - p) with p = Phi(g) clamped to [1e-14, 1 - 1e-14].
/// `dg` receives the derivative (zero inside the clamped region).
double bernoulli_probit_loglik(int y, double g, double* dg = nullptr);

/// Exact-CDF log-likelihood of a panel given one SasParams per row.
double log_likelihood(const PanelData& data, std::span<const SasParams> params);

struct PriorConfig {
  std::array<double, kMoments> beta_scale{5.0, 5.0, 5.0, 5.0};
  double effect_scale = 2.5;  // half-Cauchy scale for random-intercept SDs
  double mm_scale = 2.5;      // half-Cauchy scale for group-effect SDs
  double ar_scale = 2.5;      // half-Cauchy scale for AR(1) innovation SDs
  void validate() const;
};

double half_cauchy_logpdf(double x, double scale);

/// Positions of one moment's parameters in the unconstrained state vector.
struct MomentSlots {
  std::size_t beta = 0;
  std::size_t n_beta = 0;
  std::optional<std::size_t> log_effect_scale;
  std::size_t effects = 0;  // standardized effects (non-centered)
  std::size_t n_effects = 0;
  std::optional<std::size_t> atanh_rho;
  std::optional<std::size_t> log_ar_scale;
  std::size_t innovations = 0;  // standardized AR(1) innovations, one per row
  std::size_t n_innovations = 0;
};

/// Layout of the unconstrained parameter vector: log for scales, atanh for
/// AR coefficients, standardized random effects and innovations.
class ParameterLayout {
 public:
  explicit ParameterLayout(const ModelDesign& design);

  std::size_t dim() const { return names_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const MomentSlots& slots(Moment m) const { return slots_[index(m)]; }
  const ModelDesign& design() const { return *design_; }

  MomentCoefficients unpack(const Eigen::VectorXd& state) const;
  /// Inverse of unpack for states built from constrained values.
  Eigen::VectorXd pack(const MomentCoefficients& coef) const;

 private:
  const ModelDesign* design_;
  std::array<MomentSlots, kMoments> slots_;
  std::vector<std::string> names_;
};

/// Sum of log prior densities on the unconstrained scale, Jacobians included.
double log_prior(const ParameterLayout& layout, const Eigen::VectorXd& state,
                 const PriorConfig& prior, Eigen::VectorXd* grad = nullptr);

/// Log-posterior (likelihood through an EventModel plus priors) with its
/// analytic gradient.
class LogPosterior {
 public:
  LogPosterior(const ModelDesign& design, PriorConfig prior,
               std::shared_ptr<const EventModel> events);

  std::size_t dim() const { return layout_.dim(); }
  const ParameterLayout& layout() const { return layout_; }
  const ModelDesign& design() const { return *design_; }
  const EventModel& events() const { return *events_; }
  const PriorConfig& prior() const { return prior_; }

  /// Value; fills `grad` (resized to dim()) when non-null.
  double operator()(const Eigen::VectorXd& state, Eigen::VectorXd* grad = nullptr) const;
  double log_likelihood(const Eigen::VectorXd& state) const;

  /// Raw predictors per row at a given state.
  std::vector<RawPredictors> raw_predictors(const Eigen::VectorXd& state) const;

  /// Rows evaluated outside the event model's domain since construction.
  std::size_t clamped_rows() const { return clamped_.load(); }
  std::size_t evaluated_rows() const { return evaluated_.load(); }
  void reset_counters() const;

 private:
  double likelihood_part(const Eigen::VectorXd& state, Eigen::VectorXd* grad) const;

  const ModelDesign* design_;
  PriorConfig prior_;
  std::shared_ptr<const EventModel> events_;
  ParameterLayout layout_;
  mutable std::atomic<std::size_t> clamped_{0};
  mutable std::atomic<std::size_t> evaluated_{0};
};

}  // namespace latmom
