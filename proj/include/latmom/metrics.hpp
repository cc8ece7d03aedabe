#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latmom/latent.hpp"

namespace latmom {

/// Mann-Whitney AUC with ties credited 0.5; empty when only one class is present.
std::optional<double> auc(std::span<const double> probs, std::span<const int> outcomes);

double brier(std::span<const double> probs, std::span<const int> outcomes);

struct Calibration {
  double slope = 1.0;
  double intercept = 0.0;
};

/// Logistic recalibration of outcomes on logit(probs); empty on separation,
/// non-convergence or a single outcome class.
std::optional<Calibration> calibration(std::span<const double> probs,
                                       std::span<const int> outcomes);

double log_loss(std::span<const double> probs, std::span<const int> outcomes);

struct MomentRecovery {
  double bias = 0.0;
  double rmse = 0.0;
  double coverage = 0.0;  // percent
};

MomentRecovery moment_recovery(std::span<const double> estimate, std::span<const double> lower,
                               std::span<const double> upper, std::span<const double> truth);

struct MetricSet {
  std::optional<double> auc;
  double brier = 0.0;
  std::optional<double> calibration_slope;
  std::optional<double> calibration_intercept;
  double log_loss = 0.0;
  std::array<std::optional<MomentRecovery>, kMoments> recovery;
};

MetricSet predictive_metrics(std::span<const double> probs, std::span<const int> outcomes);

/// Predictive metrics on the rows sharing each distinct time value.
std::map<double, MetricSet> metrics_by_time(std::span<const double> probs,
                                            std::span<const int> outcomes,
                                            std::span<const double> times);

/// Flat key-value pairs; missing values are omitted.
std::vector<std::pair<std::string, double>> flatten(const MetricSet& m);

}  // namespace latmom
