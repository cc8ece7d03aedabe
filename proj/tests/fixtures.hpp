#pragma once

#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "latmom/latent.hpp"

namespace fixtures {

/// Random panel with covariates "a" and "b" uniform on (-1, 1) and fair-coin outcomes.
inline latmom::PanelData random_panel(std::size_t subjects, std::size_t times, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<std::string> ids;
  std::vector<double> t;
  std::vector<int> y;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(subjects * times), 2);
  for (std::size_t i = 0; i < subjects; ++i) {
    for (std::size_t k = 0; k < times; ++k) {
      const auto r = static_cast<Eigen::Index>(ids.size());
      ids.push_back("P" + std::to_string(i));
      t.push_back(static_cast<double>(k + 1));
      y.push_back(u(rng) > 0.0);
      x(r, 0) = u(rng);
      x(r, 1) = u(rng);
    }
  }
  return latmom::make_panel(ids, t, y, {"a", "b"}, x);
}

/// Membership of each subject in 3 groups with random weights summing to 1.
inline void random_membership(latmom::PanelData& data, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Eigen::MatrixXd w(static_cast<Eigen::Index>(data.n_subjects()), 3);
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index g = 0; g < 3; ++g) w(i, g) = u(rng);
    w.row(i) /= w.row(i).sum();
  }
  latmom::set_membership(data, {"G1", "G2", "G3"}, w);
}

}  // namespace fixtures
