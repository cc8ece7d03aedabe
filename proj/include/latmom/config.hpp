#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "latmom/baselines.hpp"
#include "latmom/hmc.hpp"
#include "latmom/model.hpp"
#include "latmom/simstudy.hpp"
#include "latmom/surface.hpp"

namespace latmom {

inline constexpr std::string_view kToolName = "latmom";
inline constexpr std::string_view kToolVersion = "1.0.0";

struct DataConfig {
  std::string panel;
  std::string membership;
  /// Covariate columns to read; empty reads every non-key column.
  std::vector<std::string> covariates;
  /// Columns z-scored at load.
  std::vector<std::string> standardize;
  /// Saved transform to reuse instead of fitting one.
  std::string standardization;
  std::string truth;
  std::string probs;
  std::string moments;
  std::string draws;
};

struct SurfaceConfig {
  std::string path;
  GridRanges ranges;
  std::array<std::size_t, 4> points{40, 6, 12, 12};
  std::size_t mc_draws = 10000;
  SurfaceFitOptions fit;
};

struct ReplicateConfig {
  std::vector<std::string> estimators{"blas", "quad", "gee"};
  Scoring scoring = Scoring::Holdout;
  std::size_t threads = 1;
  bool per_time = false;
};

struct EvaluateConfig {
  Scoring scoring = Scoring::InSample;
  bool per_time = false;
};

struct ReportConfig {
  std::string subject;  // empty: first subject of the panel
  double z_min = -4.0;
  double z_max = 4.0;
  std::size_t z_points = 161;
};

/// Resolved settings for every command. Unset sections take the simulation
/// study defaults for the design.
struct RunConfig {
  std::uint64_t seed = 20240601;
  std::string output_dir = "run";
  SimDesign design;
  DataConfig data;
  std::string estimator = "blas";  // fit --model
  FitOptions fit;
  SurfaceConfig surface;
  ReplicateConfig replicate;
  EvaluateConfig evaluate;
  ReportConfig report;
};

/// Validates `j` against the schema (unknown keys, types, ranges) and
/// resolves defaults. Throws ConfigError naming the offending key.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

/// Fully resolved configuration in the input schema.
nlohmann::json to_json(const RunConfig& config);

/// Resolved configuration without file-system paths or thread counts: the
/// settings that determine results.
nlohmann::json canonical_config(const RunConfig& config);

/// FNV-1a 64 over the canonical dump of the resolved configuration with
/// file-system paths removed, so runs differing only in location agree.
std::uint64_t config_hash(const RunConfig& config);
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Sets a dotted key (e.g. "sampler.chains") in a JSON object, creating
/// intermediate objects. Values are parsed as JSON, falling back to a string.
void set_json_path(nlohmann::json& j, std::string_view dotted, std::string_view value);

}  // namespace latmom
