#include "latmom/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "latmom/baselines.hpp"
#include "latmom/errors.hpp"

namespace latmom {

namespace {

constexpr double kClamp = 1e-14;

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) throw DataError("probabilities and outcomes differ in length");
  if (a == 0) throw DataError("metrics need at least one observation");
}

}  // namespace

std::optional<double> auc(std::span<const double> probs, std::span<const int> outcomes) {
  check_lengths(probs.size(), outcomes.size());
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });

  // midranks over tied blocks
  double rank_sum = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && probs[order[j]] == probs[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (outcomes[order[k]] == 1) {
        rank_sum += mid;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = probs.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  return (rank_sum - np * (np + 1.0) / 2.0) / (np * static_cast<double>(n_neg));
}

double brier(std::span<const double> probs, std::span<const int> outcomes) {
  check_lengths(probs.size(), outcomes.size());
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double d = probs[i] - static_cast<double>(outcomes[i]);
    s += d * d;
  }
  return s / static_cast<double>(probs.size());
}

std::optional<Calibration> calibration(std::span<const double> probs,
                                       std::span<const int> outcomes) {
  check_lengths(probs.size(), outcomes.size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(probs.size()), 2);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    x(static_cast<Eigen::Index>(i), 0) = 1.0;
    x(static_cast<Eigen::Index>(i), 1) = logit(std::clamp(probs[i], kClamp, 1.0 - kClamp));
  }
  const bool has_pos = std::find(outcomes.begin(), outcomes.end(), 1) != outcomes.end();
  const bool has_neg = std::find(outcomes.begin(), outcomes.end(), 0) != outcomes.end();
  if (!has_pos || !has_neg) return std::nullopt;
  try {
    const GlmFit fit = fit_logistic(x, outcomes);
    return Calibration{fit.beta[1], fit.beta[0]};
  } catch (const ComputationError&) {
    return std::nullopt;
  }
}

double log_loss(std::span<const double> probs, std::span<const int> outcomes) {
  check_lengths(probs.size(), outcomes.size());
  double s = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], kClamp, 1.0 - kClamp);
    s -= outcomes[i] == 1 ? std::log(p) : std::log1p(-p);
  }
  return s / static_cast<double>(probs.size());
}

MomentRecovery moment_recovery(std::span<const double> estimate, std::span<const double> lower,
                               std::span<const double> upper, std::span<const double> truth) {
  const std::size_t n = truth.size();
  if (estimate.size() != n || lower.size() != n || upper.size() != n) {
    throw DataError("moment estimates and truth table are not aligned");
  }
  if (n == 0) throw DataError("empty truth table");
  MomentRecovery r;
  double covered = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = estimate[i] - truth[i];
    r.bias += d;
    r.rmse += d * d;
    if (truth[i] >= lower[i] && truth[i] <= upper[i]) covered += 1.0;
  }
  const double dn = static_cast<double>(n);
  r.bias /= dn;
  r.rmse = std::sqrt(r.rmse / dn);
  r.coverage = 100.0 * covered / dn;
  return r;
}

MetricSet predictive_metrics(std::span<const double> probs, std::span<const int> outcomes) {
  MetricSet m;
  m.auc = auc(probs, outcomes);
  m.brier = brier(probs, outcomes);
  m.log_loss = log_loss(probs, outcomes);
  if (const auto cal = calibration(probs, outcomes)) {
    m.calibration_slope = cal->slope;
    m.calibration_intercept = cal->intercept;
  }
  return m;
}

std::map<double, MetricSet> metrics_by_time(std::span<const double> probs,
                                            std::span<const int> outcomes,
                                            std::span<const double> times) {
  check_lengths(probs.size(), outcomes.size());
  if (times.size() != probs.size()) throw DataError("times and probabilities differ in length");
  std::map<double, std::pair<std::vector<double>, std::vector<int>>> groups;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    auto& g = groups[times[i]];
    g.first.push_back(probs[i]);
    g.second.push_back(outcomes[i]);
  }
  std::map<double, MetricSet> out;
  for (const auto& [t, g] : groups) out[t] = predictive_metrics(g.first, g.second);
  return out;
}

std::vector<std::pair<std::string, double>> flatten(const MetricSet& m) {
  std::vector<std::pair<std::string, double>> out;
  if (m.auc) out.emplace_back("auc", *m.auc);
  out.emplace_back("brier", m.brier);
  if (m.calibration_slope) out.emplace_back("calibration_slope", *m.calibration_slope);
  if (m.calibration_intercept) out.emplace_back("calibration_intercept", *m.calibration_intercept);
  out.emplace_back("log_loss", m.log_loss);
  for (Moment mo : kAllMoments) {
    const auto& r = m.recovery[index(mo)];
    if (!r) continue;
    const std::string name(moment_name(mo));
    out.emplace_back(name + "_bias", r->bias);
    out.emplace_back(name + "_rmse", r->rmse);
    out.emplace_back(name + "_coverage_95", r->coverage);
  }
  return out;
}

}  // namespace latmom
