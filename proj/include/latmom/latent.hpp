#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "latmom/sas.hpp"

namespace latmom {

enum class Moment : int { Location = 0, Scale = 1, Skew = 2, Tail = 3 };
inline constexpr std::size_t kMoments = 4;
inline constexpr std::array<Moment, kMoments> kAllMoments{Moment::Location, Moment::Scale,
                                                          Moment::Skew, Moment::Tail};

constexpr std::size_t index(Moment m) { return static_cast<std::size_t>(m); }
std::string_view moment_name(Moment m);
Moment moment_from_name(std::string_view name);

/// Raw (pre-link) predictors for location, log-scale, skewness and log-tail.
using RawPredictors = std::array<double, kMoments>;

/// Long-format binary panel. Rows are grouped by subject (in order of first
/// appearance) and sorted by time within subject. Build through make_panel.
struct PanelData {
  std::vector<std::string> subject_ids;
  std::vector<std::size_t> subject;  // per row, index into subject_ids
  std::vector<double> time;
  std::vector<int> y;
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd covariates;  // rows x covariates
  std::vector<std::vector<std::size_t>> rows_of_subject;

  // multiple-membership weights, subjects x groups; empty when unused
  std::vector<std::string> group_ids;
  Eigen::MatrixXd membership;

  std::size_t n_obs() const { return y.size(); }
  std::size_t n_subjects() const { return subject_ids.size(); }
  bool has_membership() const { return membership.size() > 0; }
  std::optional<std::size_t> covariate_index(std::string_view name) const;
  std::optional<std::size_t> subject_index(std::string_view id) const;
};

/// Throws DataError on non-binary outcomes, non-finite covariates, ragged
/// input or duplicated (subject, time) pairs.
PanelData make_panel(std::span<const std::string> subject_ids, std::span<const double> times,
                     std::span<const int> y, std::vector<std::string> covariate_names,
                     const Eigen::MatrixXd& covariates);

/// Attaches membership weights (subjects x groups, rows in panel subject order).
/// Rows must be non-negative and sum to 1 within `tolerance`.
void set_membership(PanelData& data, std::vector<std::string> group_ids,
                    Eigen::MatrixXd weights, double tolerance = 1e-9);

enum class Variant { Full, NoSkew, NoTail };
enum class RandomEffect { None, Subject, Membership };

std::string_view variant_name(Variant v);
Variant variant_from_name(std::string_view name);

struct MomentRegression {
  bool intercept = true;
  double offset = 0.0;  // fixed term added to the linear predictor
  std::vector<std::string> columns;
  RandomEffect effect = RandomEffect::None;
  bool ar1 = false;
};

struct MomentSpec {
  std::array<MomentRegression, kMoments> moments;
  Variant variant = Variant::Full;

  MomentRegression& operator[](Moment m) { return moments[index(m)]; }
  const MomentRegression& operator[](Moment m) const { return moments[index(m)]; }

  /// NoSkew fixes nu = 0; NoTail fixes nu = 0 and tau = 1.
  bool active(Moment m) const;
};

/// Per-moment coefficient values on the constrained scale.
struct MomentBlock {
  Eigen::VectorXd beta;
  Eigen::VectorXd effects;  // b_i per subject, or gamma_g per group
  double effect_scale = 0.0;
  double ar_rho = 0.0;
  double ar_scale = 0.0;
  Eigen::VectorXd ar_terms;  // u_it per row when AR(1) is on
};

struct MomentCoefficients {
  std::array<MomentBlock, kMoments> moments;
  MomentBlock& operator[](Moment m) { return moments[index(m)]; }
  const MomentBlock& operator[](Moment m) const { return moments[index(m)]; }
};

/// A panel compiled against a MomentSpec: per-moment design matrices and
/// dimension bookkeeping. Holds a reference to the panel, which must outlive it.
class ModelDesign {
 public:
  ModelDesign(const PanelData& data, MomentSpec spec);

  const PanelData& data() const { return *data_; }
  const MomentSpec& spec() const { return spec_; }
  bool active(Moment m) const { return spec_.active(m); }
  const Eigen::MatrixXd& design(Moment m) const { return x_[index(m)]; }
  const std::vector<std::string>& column_names(Moment m) const { return names_[index(m)]; }
  std::size_t n_fixed(Moment m) const;
  std::size_t n_effects(Moment m) const;

  /// Sum over active moments of p_m.
  std::size_t fixed_effect_count() const;
  /// Subject or group effects over active moments (4N with plain random
  /// intercepts on every moment).
  std::size_t random_effect_count() const;

  /// Throws DataError if coefficient dimensions disagree with the design.
  void check(const MomentCoefficients& coef) const;

 private:
  const PanelData* data_;
  MomentSpec spec_;
  std::array<Eigen::MatrixXd, kMoments> x_;
  std::array<std::vector<std::string>, kMoments> names_;
};

/// x'beta + b_i + u_it for one moment at one row (pre-link).
double linear_predictor(const ModelDesign& design, const MomentCoefficients& coef, Moment m,
                        std::size_t row);

/// Identity links for mu and nu, log links for sigma and tau. Log-scale inputs
/// are clamped to [-700, 700] before exponentiation.
SasParams apply_links(const RawPredictors& raw);

/// sum_g w_g gamma_g. Throws DataError if the weights leave the simplex by
/// more than 1e-9.
double mm_effect(std::span<const double> weights, std::span<const double> gamma);

std::vector<double> ar1_simulate(std::size_t length, double rho, double scale,
                                 std::mt19937_64& rng);
/// Exact Gaussian joint log-density of a stationary AR(1) path.
double ar1_logdensity(std::span<const double> path, double rho, double scale);

/// One SasParams per row after links and variant constraints.
std::vector<SasParams> assemble_params(const ModelDesign& design, const MomentCoefficients& coef);

}  // namespace latmom
