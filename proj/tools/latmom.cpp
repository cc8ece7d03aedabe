#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "latmom/baselines.hpp"
#include "latmom/config.hpp"
#include "latmom/errors.hpp"
#include "latmom/hmc.hpp"
#include "latmom/io.hpp"
#include "latmom/metrics.hpp"
#include "latmom/posterior.hpp"
#include "latmom/simstudy.hpp"
#include "latmom/surface.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace latmom;

namespace {

std::string slurp(const std::string& path, const char* role) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + std::string(role) + " '" + path + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Collects a command's outputs under temporary names and publishes them
// together, so a failed command leaves nothing half-written behind.
class RunOutputs {
 public:
  RunOutputs(const RunConfig& config, std::string command)
      : dir_(config.output_dir), command_(std::move(command)), seed_(config.seed),
        hash_(hex64(config_hash(config))), canonical_(canonical_config(config)) {}

  ~RunOutputs() {
    if (committed_) return;
    std::error_code ec;
    for (const auto& p : staged_) fs::remove(partial(p), ec);
    if (created_dir_) fs::remove(dir_, ec);  // only succeeds when empty
  }

  /// Reads an input file and records its digest in the metadata.
  std::string input(const std::string& role, const std::string& path) {
    if (path.empty()) throw ConfigError("no " + role + " file given (set data." + role + " or pass --" + role + ")");
    std::string bytes = slurp(path, role.c_str());
    inputs_[role] = hex64(fnv1a(bytes));
    input_paths_.push_back(fs::weakly_canonical(path));
    return bytes;
  }

  std::string csv_header() const {
    std::ostringstream s;
    s << "# " << kToolName << ' ' << kToolVersion << '\n'
      << "# command: " << command_ << '\n'
      << "# config_hash: " << hash_ << '\n'
      << "# seed: " << seed_ << '\n';
    return s.str();
  }

  std::string inline_metadata() const {
    return std::string(kToolName) + " " + std::string(kToolVersion) + " command=" + command_ +
           " config_hash=" + hash_ + " seed=" + std::to_string(seed_);
  }

  void add_meta(const std::string& key, json value) { extra_[key] = std::move(value); }

  void emit(const std::string& name, const std::string& content) {
    ensure_dir();
    const fs::path target = dir_ / name;
    for (const auto& in : input_paths_) {
      if (fs::weakly_canonical(target) == in) {
        throw ConfigError("output '" + target.string() + "' would overwrite an input of this command");
      }
    }
    std::ofstream out(partial(target), std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + target.string() + "'");
    staged_.push_back(target);
    out << content;
    out.close();
    if (!out) throw DataError("failed writing '" + target.string() + "'");
  }

  void commit() {
    json meta;
    meta["tool"] = kToolName;
    meta["version"] = kToolVersion;
    meta["command"] = command_;
    meta["config_hash"] = hash_;
    meta["seed"] = seed_;
    meta["inputs"] = inputs_;
    std::vector<std::string> names;
    for (const auto& p : staged_) names.push_back(p.filename().string());
    meta["outputs"] = names;
    for (const auto& [k, v] : extra_.items()) meta[k] = v;
    meta["config"] = canonical_;
    emit("metadata.json", meta.dump(2) + "\n");
    for (const auto& p : staged_) fs::rename(partial(p), p);
    committed_ = true;
    for (const auto& p : staged_) std::cout << p.string() << '\n';
  }

 private:
  static fs::path partial(const fs::path& p) { return fs::path(p.string() + ".partial"); }

  void ensure_dir() {
    if (fs::exists(dir_)) {
      if (!fs::is_directory(dir_)) throw ConfigError("output_dir '" + dir_.string() + "' is not a directory");
      return;
    }
    fs::create_directories(dir_);
    created_dir_ = true;
  }

  fs::path dir_;
  std::string command_;
  std::uint64_t seed_;
  std::string hash_;
  json canonical_;
  json inputs_ = json::object();
  json extra_ = json::object();
  std::vector<fs::path> input_paths_;
  std::vector<fs::path> staged_;
  bool created_dir_ = false;
  bool committed_ = false;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

struct LoadedPanel {
  PanelData data;
  std::optional<Standardization> fitted;  // set when the transform was fitted here
};

LoadedPanel load_input_panel(const RunConfig& c, RunOutputs& run) {
  LoadedPanel out;
  std::istringstream panel_in(run.input("panel", c.data.panel));
  out.data = read_panel(read_csv(panel_in, c.data.panel), c.data.covariates);
  if (!c.data.membership.empty()) {
    std::istringstream in(run.input("membership", c.data.membership));
    read_membership(out.data, read_csv(in, c.data.membership));
  }
  if (!c.data.standardization.empty()) {
    std::istringstream in(run.input("standardization", c.data.standardization));
    apply_standardization(out.data, read_standardization(read_csv(in, c.data.standardization)));
  } else if (!c.data.standardize.empty()) {
    out.fitted = fit_standardization(out.data, c.data.standardize);
    apply_standardization(out.data, *out.fitted);
  }
  return out;
}

std::shared_ptr<const ProbabilitySurface> load_surface(const RunConfig& c, RunOutputs& run) {
  if (c.surface.path.empty() || !fs::exists(c.surface.path)) {
    throw ConfigError("the quad estimator needs a probability surface; run build-surface first" +
                      (c.surface.path.empty() ? std::string(" and pass --surface")
                                              : " (no file at '" + c.surface.path + "')"));
  }
  std::istringstream in(run.input("surface", c.surface.path));
  return std::make_shared<const ProbabilitySurface>(ProbabilitySurface::load(in));
}

void cmd_simulate(const RunConfig& c) {
  RunOutputs run(c, "simulate");
  const SimulatedPanel panel = simulate(c.design, c.seed);
  std::ostringstream p, t;
  p << run.csv_header();
  write_panel(p, panel.data);
  t << run.csv_header();
  write_truth(t, panel);
  run.emit("panel.csv", p.str());
  run.emit("truth.csv", t.str());
  run.commit();
}

void cmd_build_surface(const RunConfig& c) {
  RunOutputs run(c, "build-surface");
  const MomentGrid grid = generate_grid(c.surface.ranges, c.surface.points, c.surface.mc_draws);
  std::cerr << "simulating " << grid.size() << " grid points x " << grid.mc_draws << " draws\n";
  const std::vector<double> probs = simulate_probabilities(grid, c.seed);
  const ProbabilitySurface surface = fit_surface(grid, probs, c.surface.fit);
  std::ostringstream s;
  surface.save(s, run.inline_metadata());
  run.emit("surface.bin", s.str());
  run.add_meta("surface", {{"probit_rmse", surface.probit_rmse()},
                           {"edf", surface.edf()},
                           {"lambda", surface.lambda()}});
  run.commit();
}

void cmd_fit(const RunConfig& c) {
  RunOutputs run(c, "fit");
  const EstimatorSpec estimator = estimator_from_name(c.estimator);
  FitOptions options = c.fit;
  if (estimator.kind == EstimatorKind::Quad) options.surface = load_surface(c, run);
  const LoadedPanel panel = load_input_panel(c, run);
  const EstimatorOutput out = fit_estimator(estimator, panel.data, options);
  for (const auto& w : out.warnings) std::cerr << "warning: " << w << '\n';

  const std::string header = run.csv_header();
  std::ostringstream probs;
  probs << header;
  if (out.prob_intervals) {
    write_probs(probs, panel.data, out.probs, out.prob_intervals->lower, out.prob_intervals->upper);
  } else {
    write_probs(probs, panel.data, out.probs);
  }
  run.emit("probs.csv", probs.str());

  if (out.draws) {
    std::ostringstream d, diag, mom;
    d << header;
    write_draws_csv(d, *out.draws);
    run.emit("draws.csv", d.str());
    diag << header << "parameter,rhat,ess,flagged\n";
    for (const auto& p : diagnostics(*out.draws)) {
      diag << p.name << ',' << fmt(p.rhat) << ',' << fmt(p.ess) << ',' << (p.flagged ? 1 : 0) << '\n';
    }
    run.emit("diagnostics.csv", diag.str());
    mom << header;
    write_moments(mom, panel.data, *out.moments);
    run.emit("moments.csv", mom.str());
    run.add_meta("sampler", {{"divergences", out.draws->divergences},
                             {"step_size", out.draws->step_size},
                             {"accept_rate", out.draws->accept_rate}});
  } else {
    std::ostringstream est;
    est << header << "parameter,estimate,std_error\n";
    auto rows = [&](const std::vector<std::string>& names, const Eigen::VectorXd& beta,
                    const Eigen::MatrixXd& cov) {
      for (Eigen::Index k = 0; k < beta.size(); ++k) {
        est << names[static_cast<std::size_t>(k)] << ',' << fmt(beta[k]) << ',' << fmt(std::sqrt(cov(k, k))) << '\n';
      }
    };
    if (out.gee) {
      rows(out.gee->names, out.gee->beta, out.gee->robust_covariance);
      est << "alpha," << fmt(out.gee->alpha) << ",\n";
    } else {
      rows(out.glmm->names, out.glmm->beta, out.glmm->covariance);
      est << "re_variance," << fmt(out.glmm->re_variance) << ",\n";
    }
    run.emit("estimates.csv", est.str());
  }
  if (panel.fitted) {
    std::ostringstream s;
    s << header;
    write_standardization(s, *panel.fitted);
    run.emit("standardization.csv", s.str());
  }
  run.add_meta("estimator", estimator.name());
  run.add_meta("warnings", out.warnings);
  run.commit();
}

json metric_json(const MetricSet& m, json j, const std::string& prefix = "") {
  for (const auto& [k, v] : flatten(m)) j[prefix + k] = v;
  return j;
}

void cmd_evaluate(const RunConfig& c) {
  RunOutputs run(c, "evaluate");
  std::istringstream panel_in(run.input("panel", c.data.panel));
  const PanelData data = read_panel(read_csv(panel_in, c.data.panel), c.data.covariates);
  std::istringstream probs_in(run.input("probs", c.data.probs));
  const std::vector<double> probs = read_probs(read_csv(probs_in, c.data.probs), data);

  std::optional<TruthTable> truth;
  std::vector<int> holdout;
  if (!c.data.truth.empty()) {
    std::istringstream in(run.input("truth", c.data.truth));
    truth = read_truth(read_csv(in, c.data.truth), data, &holdout);
  }
  std::vector<int> outcomes = data.y;
  if (c.evaluate.scoring == Scoring::Holdout) {
    if (!truth) throw ConfigError("holdout scoring needs a truth file with holdout_y (data.truth or --truth)");
    outcomes = holdout;
  }
  MetricSet metrics = predictive_metrics(probs, outcomes);
  if (!c.data.moments.empty()) {
    if (!truth) throw ConfigError("moment recovery needs a truth file (data.truth or --truth)");
    std::istringstream in(run.input("moments", c.data.moments));
    const auto moments = read_moments(read_csv(in, c.data.moments), data);
    const std::array<const std::vector<double>*, kMoments> truth_cols{&truth->mu, &truth->sigma, &truth->nu,
                                                                      &truth->tau};
    for (Moment m : kAllMoments) {
      const auto& tv = *truth_cols[index(m)];
      if (tv.empty() || !std::isfinite(tv[0])) continue;
      const auto& s = moments[index(m)];
      metrics.recovery[index(m)] = moment_recovery(s.mean, s.lower, s.upper, tv);
    }
  }
  json j = json::object();
  j["_tool"] = std::string(kToolName) + " " + std::string(kToolVersion);
  j["_config_hash"] = hex64(config_hash(c));
  j["_seed"] = c.seed;
  j["_scoring"] = c.evaluate.scoring == Scoring::Holdout ? "holdout" : "in_sample";
  j = metric_json(metrics, j);
  if (c.evaluate.per_time) {
    for (const auto& [t, m] : metrics_by_time(probs, outcomes, data.time)) {
      j = metric_json(m, j, "time=" + fmt(t) + ".");
    }
  }
  run.emit("metrics.json", j.dump(2) + "\n");
  run.commit();
}

void cmd_replicate(const RunConfig& c) {
  RunOutputs run(c, "replicate");
  std::vector<EstimatorSpec> estimators;
  ReplicationOptions options;
  options.fit = c.fit;
  for (const auto& name : c.replicate.estimators) {
    estimators.push_back(estimator_from_name(name));
    if (estimators.back().kind == EstimatorKind::Quad && !options.fit.surface) {
      options.fit.surface = load_surface(c, run);
    }
  }
  options.scoring = c.replicate.scoring;
  options.threads = c.replicate.threads;
  options.per_time = c.replicate.per_time;
  const ReplicationReport report = run_replications(c.design, estimators, options);

  std::ostringstream rows;
  rows << run.csv_header() << "replication,seed,estimator,metric,value\n";
  for (const auto& r : report.rows) {
    rows << r.replication << ',' << r.seed << ',' << r.estimator << ',' << r.metric << ',' << fmt(r.value) << '\n';
  }
  run.emit("replications.csv", rows.str());

  json summary = json::object();
  for (const auto& [est, metrics] : report.summary) {
    for (const auto& [metric, s] : metrics) {
      summary["summary"][est][metric] = {{"mean", s.mean}, {"mc_se", s.mc_se}, {"n", s.n}};
    }
  }
  summary["failure_counts"] = report.failure_counts;
  summary["failures"] = json::array();
  for (const auto& f : report.failures) {
    summary["failures"].push_back({{"replication", f.replication}, {"estimator", f.estimator}, {"message", f.message}});
  }
  summary["seeds"] = report.seeds;
  summary["tool"] = std::string(kToolName) + " " + std::string(kToolVersion);
  summary["config_hash"] = hex64(config_hash(c));
  summary["seed"] = c.seed;
  run.emit("summary.json", summary.dump(2) + "\n");
  for (const auto& f : report.failures) {
    std::cerr << "replication " << f.replication << " " << f.estimator << " failed: " << f.message << '\n';
  }
  run.commit();
}

void cmd_report(const RunConfig& c) {
  RunOutputs run(c, "report");
  const LoadedPanel panel = load_input_panel(c, run);
  std::istringstream draws_in(run.input("draws", c.data.draws));
  const PosteriorDraws draws = read_draws(read_csv(draws_in, c.data.draws));
  const ModelDesign design(panel.data, c.fit.spec);
  const LogPosterior posterior(design, c.fit.prior, std::make_shared<ExactSasEvents>());
  if (posterior.layout().names() != draws.names) {
    throw DataError(c.data.draws + ": parameter columns do not match the configured model");
  }
  std::size_t subject = 0;
  if (!c.report.subject.empty()) {
    const auto s = panel.data.subject_index(c.report.subject);
    if (!s) throw DataError("subject '" + c.report.subject + "' is not in the panel");
    subject = *s;
  }
  std::vector<double> grid(c.report.z_points);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    grid[j] = c.report.z_min + (c.report.z_max - c.report.z_min) * static_cast<double>(j) /
                                   static_cast<double>(grid.size() - 1);
  }
  const Eigen::MatrixXd density = latent_density_trajectory(draws, posterior, subject, grid);
  const auto& rows = panel.data.rows_of_subject[subject];
  std::ostringstream out;
  out << run.csv_header() << "subject_id,time,z,density\n";
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t j = 0; j < grid.size(); ++j) {
      out << panel.data.subject_ids[subject] << ',' << fmt(panel.data.time[rows[k]]) << ',' << fmt(grid[j]) << ','
          << fmt(density(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j))) << '\n';
    }
  }
  run.emit("report.csv", out.str());
  run.commit();
}

// Command-line flags: each maps onto one configuration key.
struct Flag {
  std::string name;
  std::string key;
  bool is_string;
  std::string help;
};

int run_main(int argc, char** argv) {
  CLI::App app{"Latent-moment models for recurrent binary outcomes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolName) + " " + std::string(kToolVersion));

  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;

  const std::vector<Flag> common{{"--out", "output_dir", true, "run directory"},
                                 {"--seed", "seed", false, "master seed"}};
  const std::map<std::string, std::vector<Flag>> flags{
      {"simulate",
       {{"--n-subjects", "design.n_subjects", false, "subjects"},
        {"--n-times", "design.n_times", false, "time points per subject"},
        {"--scenario", "design.scenario", true, "sas, skew_t or mixture"}}},
      {"build-surface",
       {{"--mc-draws", "surface.mc_draws", false, "Monte Carlo draws per grid point"}}},
      {"fit",
       {{"--model", "fit.estimator", true, "blas, quad, gee or glmm (optionally _noskew/_notail)"},
        {"--panel", "data.panel", true, "panel CSV"},
        {"--membership", "data.membership", true, "membership CSV"},
        {"--surface", "surface.path", true, "surface artifact"},
        {"--chains", "sampler.chains", false, "chains"},
        {"--iterations", "sampler.iterations", false, "iterations per chain"},
        {"--warmup", "sampler.warmup", false, "warmup iterations"}}},
      {"evaluate",
       {{"--panel", "data.panel", true, "panel CSV"},
        {"--probs", "data.probs", true, "probs.csv from fit"},
        {"--truth", "data.truth", true, "truth.csv from simulate"},
        {"--moments", "data.moments", true, "moments.csv from fit"},
        {"--scoring", "evaluate.scoring", true, "in_sample or holdout"}}},
      {"replicate",
       {{"--replications", "design.replications", false, "replications"},
        {"--threads", "replicate.threads", false, "concurrent replications"},
        {"--surface", "surface.path", true, "surface artifact"},
        {"--scenario", "design.scenario", true, "sas, skew_t or mixture"}}},
      {"report",
       {{"--panel", "data.panel", true, "panel CSV"},
        {"--draws", "data.draws", true, "draws.csv from fit"},
        {"--subject", "report.subject", true, "subject id"}}},
      {"config", {}}};
  const std::map<std::string, std::string> descriptions{
      {"simulate", "simulate a panel and its true moments"},
      {"build-surface", "simulate and fit the event-probability surface"},
      {"fit", "fit one estimator to a panel"},
      {"evaluate", "score predicted probabilities"},
      {"replicate", "run the simulation study"},
      {"report", "latent density trajectories of one subject"},
      {"config", "print the resolved configuration"}};

  std::vector<std::string> estimators;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, list] : flags) {
    CLI::App* sub = app.add_subcommand(name, descriptions.at(name));
    subs[name] = sub;
    sub->add_option("--config,-c", config_path, "JSON configuration")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "override a configuration key: key.path=value");
    std::vector<Flag> all = common;
    all.insert(all.end(), list.begin(), list.end());
    for (const auto& f : all) sub->add_option(f.name, values[name + " " + f.name], f.help);
    if (name == "replicate") sub->add_option("--estimators", estimators, "estimators to compare");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }

  json j = json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(config_path + ": invalid JSON: " + e.what());
    }
  }
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key.path=value, got '" + s + "'");
    set_json_path(j, s.substr(0, eq), s.substr(eq + 1));
  }
  std::vector<Flag> all = common;
  all.insert(all.end(), flags.at(command).begin(), flags.at(command).end());
  for (const auto& f : all) {
    const std::string& v = values[command + " " + f.name];
    if (subs[command]->count(f.name) == 0) continue;
    if (f.is_string) {
      set_json_path(j, f.key, json(v).dump());
    } else {
      set_json_path(j, f.key, v);
    }
  }
  if (!estimators.empty()) j["replicate"]["estimators"] = estimators;

  const RunConfig config = parse_config(j);
  if (command == "config") {
    std::cout << to_json(config).dump(2) << '\n';
  } else if (command == "simulate") {
    cmd_simulate(config);
  } else if (command == "build-surface") {
    cmd_build_surface(config);
  } else if (command == "fit") {
    cmd_fit(config);
  } else if (command == "evaluate") {
    cmd_evaluate(config);
  } else if (command == "replicate") {
    cmd_replicate(config);
  } else if (command == "report") {
    cmd_report(config);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_main(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const ComputationError& e) {
    std::cerr << "computation failed: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
}
