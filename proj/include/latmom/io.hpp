#pragma once

#include <array>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "latmom/hmc.hpp"
#include "latmom/latent.hpp"
#include "latmom/posterior.hpp"
#include "latmom/simstudy.hpp"

namespace latmom {

/// Comma-separated table with a header row. Blank lines and lines starting
/// with '#' are skipped.
struct CsvTable {
  std::string source;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> line_numbers;  // 1-based source line of each row

  /// Column position; throws DataError naming the file when absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
  double number(std::size_t row, std::size_t col) const;
  std::string where(std::size_t row) const;
};

CsvTable read_csv(std::istream& in, std::string source);
CsvTable read_csv_file(const std::string& path);

/// Panel CSV: subject_id, time, y, then covariate columns. Every other column
/// becomes a covariate unless `covariates` names a subset.
PanelData read_panel(const CsvTable& table, const std::vector<std::string>& covariates = {});
PanelData load_panel(const std::string& path, const std::vector<std::string>& covariates = {});

/// Membership CSV: subject_id, group_id, weight. Rows whose weights sum to
/// within 1e-6 of 1 are renormalized; larger departures are rejected with the
/// subject named.
void load_membership(PanelData& data, const std::string& path);
void read_membership(PanelData& data, const CsvTable& table);

/// Z-score parameters for continuous covariates.
struct Standardization {
  std::vector<std::string> columns;
  std::vector<double> mean;
  std::vector<double> sd;
};

Standardization fit_standardization(const PanelData& data, const std::vector<std::string>& columns);
void apply_standardization(PanelData& data, const Standardization& s);
void write_standardization(std::ostream& out, const Standardization& s);
Standardization read_standardization(const CsvTable& table);

void write_panel(std::ostream& out, const PanelData& data);
void write_truth(std::ostream& out, const SimulatedPanel& panel);

/// Probabilities with optional interval columns, keyed by (subject_id, time).
void write_probs(std::ostream& out, const PanelData& data, const std::vector<double>& prob,
                 const std::vector<double>& lower = {}, const std::vector<double>& upper = {});
/// Reads the prob column aligned to the panel rows; throws DataError when a
/// panel row has no prediction.
std::vector<double> read_probs(const CsvTable& table, const PanelData& data);

void write_moments(std::ostream& out, const PanelData& data,
                   const std::array<IntervalSummary, kMoments>& moments);
std::array<IntervalSummary, kMoments> read_moments(const CsvTable& table, const PanelData& data);

/// Truth columns aligned to the panel rows.
TruthTable read_truth(const CsvTable& table, const PanelData& data, std::vector<int>* holdout_y);

/// Inverse of write_draws_csv. Per-chain adaptation details are not stored.
PosteriorDraws read_draws(const CsvTable& table);

}  // namespace latmom
