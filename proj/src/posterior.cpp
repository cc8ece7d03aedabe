#include "latmom/posterior.hpp"

#include <algorithm>
#include <cmath>

#include "latmom/errors.hpp"

namespace latmom {

namespace {

// Accumulates one value per (row, draw) and summarizes per row.
class RowAccumulator {
 public:
  RowAccumulator(std::size_t rows, std::size_t draws) : values_(rows, std::vector<double>(draws)) {}
  void set(std::size_t row, std::size_t draw, double v) { values_[row][draw] = v; }

  IntervalSummary summarize() const {
    IntervalSummary out;
    for (const auto& v : values_) {
      double sum = 0.0;
      for (double x : v) sum += x;
      out.mean.push_back(sum / static_cast<double>(v.size()));
      out.lower.push_back(empirical_quantile(v, 0.025));
      out.upper.push_back(empirical_quantile(v, 0.975));
    }
    return out;
  }

 private:
  std::vector<std::vector<double>> values_;
};

}  // namespace

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) throw ComputationError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Eigen::VectorXd posterior_mean(const PosteriorDraws& draws) {
  return draws.values.colwise().mean().transpose();
}

IntervalSummary posterior_event_probs(const PosteriorDraws& draws, const LogPosterior& posterior) {
  const std::size_t rows = posterior.design().data().n_obs();
  RowAccumulator acc(rows, draws.size());
  for (std::size_t d = 0; d < draws.size(); ++d) {
    const Eigen::VectorXd state = draws.values.row(static_cast<Eigen::Index>(d)).transpose();
    const auto raw = posterior.raw_predictors(state);
    for (std::size_t r = 0; r < rows; ++r) acc.set(r, d, posterior.events().probability(raw[r]));
  }
  return acc.summarize();
}

std::array<IntervalSummary, kMoments> posterior_moments(const PosteriorDraws& draws,
                                                        const LogPosterior& posterior) {
  const std::size_t rows = posterior.design().data().n_obs();
  std::array<RowAccumulator, kMoments> acc{
      RowAccumulator(rows, draws.size()), RowAccumulator(rows, draws.size()),
      RowAccumulator(rows, draws.size()), RowAccumulator(rows, draws.size())};
  for (std::size_t d = 0; d < draws.size(); ++d) {
    const Eigen::VectorXd state = draws.values.row(static_cast<Eigen::Index>(d)).transpose();
    const auto raw = posterior.raw_predictors(state);
    for (std::size_t r = 0; r < rows; ++r) {
      const SasParams p = apply_links(raw[r]);
      acc[0].set(r, d, p.mu);
      acc[1].set(r, d, p.sigma);
      acc[2].set(r, d, p.nu);
      acc[3].set(r, d, p.tau);
    }
  }
  return {acc[0].summarize(), acc[1].summarize(), acc[2].summarize(), acc[3].summarize()};
}

Eigen::MatrixXd latent_density_trajectory(const PosteriorDraws& draws,
                                          const LogPosterior& posterior, std::size_t subject,
                                          std::span<const double> grid) {
  const PanelData& data = posterior.design().data();
  if (subject >= data.n_subjects()) throw DataError("unknown subject index");
  const auto& rows = data.rows_of_subject[subject];
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows.size()),
                                              static_cast<Eigen::Index>(grid.size()));
  for (std::size_t d = 0; d < draws.size(); ++d) {
    const Eigen::VectorXd state = draws.values.row(static_cast<Eigen::Index>(d)).transpose();
    const auto raw = posterior.raw_predictors(state);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const SasParams p = apply_links(raw[rows[k]]);
      for (std::size_t j = 0; j < grid.size(); ++j) {
        out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) += sas_pdf(grid[j], p);
      }
    }
  }
  return out / static_cast<double>(draws.size());
}

}  // namespace latmom
