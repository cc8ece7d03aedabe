#include "latmom/simstudy.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <thread>

#include <boost/math/distributions/students_t.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "latmom/errors.hpp"
#include "latmom/rng.hpp"

namespace latmom {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string subject_label(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "S%05zu", i + 1);
  return buf;
}

// Shared covariate and predictor skeleton of all three scenarios.
struct Skeleton {
  std::vector<std::string> ids;
  std::vector<double> time;
  Eigen::MatrixXd x;
  std::vector<RawPredictors> raw;
};

Skeleton build_skeleton(const SimDesign& d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  std::normal_distribution<double> normal;
  const std::size_t rows = d.n_subjects * d.n_times;
  Skeleton sk;
  sk.ids.reserve(rows);
  sk.time.reserve(rows);
  sk.x.resize(static_cast<Eigen::Index>(rows), 3);
  sk.raw.reserve(rows);
  const double t_mean = 0.5 * static_cast<double>(d.n_times + 1);
  const double t_sd = std::sqrt((static_cast<double>(d.n_times * d.n_times) - 1.0) / 12.0);
  std::size_t r = 0;
  for (std::size_t i = 0; i < d.n_subjects; ++i) {
    const double xs = unif(rng);
    RawPredictors effect{};
    for (std::size_t m = 0; m < kMoments; ++m) effect[m] = d.effect_sd[m] * normal(rng);
    for (std::size_t t = 1; t <= d.n_times; ++t, ++r) {
      const double xv = unif(rng);
      const double ts = (static_cast<double>(t) - t_mean) / t_sd;
      const auto ri = static_cast<Eigen::Index>(r);
      sk.x(ri, 0) = xs;
      sk.x(ri, 1) = xv;
      sk.x(ri, 2) = ts;
      RawPredictors raw{};
      for (std::size_t m = 0; m < kMoments; ++m) {
        const auto& b = d.beta[m];
        raw[m] = b[0] + b[1] * xs + b[2] * xv + d.time_trend[m] * ts + effect[m];
      }
      sk.ids.push_back(subject_label(i));
      sk.time.push_back(static_cast<double>(t));
      sk.raw.push_back(raw);
    }
  }
  return sk;
}

constexpr std::uint64_t kHoldoutStream = 0x484f4c44;

SimulatedPanel finish(const Skeleton& sk, const std::vector<int>& y, std::vector<int> holdout,
                      TruthTable truth) {
  return {make_panel(sk.ids, sk.time, y, kSimCovariates, sk.x), std::move(truth), std::move(holdout)};
}

double skew_t_draw(std::mt19937_64& rng, double slant, double df) {
  std::normal_distribution<double> normal;
  std::chi_squared_distribution<double> chi2(df);
  const double delta = slant / std::sqrt(1.0 + slant * slant);
  const double z0 = delta * std::abs(normal(rng)) + std::sqrt(1.0 - delta * delta) * normal(rng);
  return z0 / std::sqrt(chi2(rng) / df);
}

double mixture_draw(std::mt19937_64& rng, double mu, double weight, const MixtureParams& p) {
  std::bernoulli_distribution pick(weight);
  std::normal_distribution<double> normal;
  return pick(rng) ? p.m1 + mu + p.s1 * normal(rng) : p.m2 + mu + p.s2 * normal(rng);
}

}  // namespace

std::string_view scenario_name(Scenario s) {
  switch (s) {
    case Scenario::Sas: return "sas";
    case Scenario::SkewT: return "skew_t";
    case Scenario::Mixture: return "mixture";
  }
  return "sas";
}

Scenario scenario_from_name(std::string_view name) {
  if (name == "sas") return Scenario::Sas;
  if (name == "skew_t") return Scenario::SkewT;
  if (name == "mixture") return Scenario::Mixture;
  throw ConfigError("unknown scenario '" + std::string(name) + "' (expected sas, skew_t or mixture)");
}

void SimDesign::validate() const {
  if (n_subjects < 2) throw ConfigError("design needs at least 2 subjects");
  if (n_times < 2) throw ConfigError("design needs at least 2 time points");
  if (replications < 1) throw ConfigError("replication count must be at least 1");
  for (double sd : effect_sd) {
    if (!(sd >= 0.0) || !std::isfinite(sd)) throw ConfigError("random-effect SDs must be finite and >= 0");
  }
  if (scenario == Scenario::SkewT && !(skew_t.df > 2.0)) {
    throw ConfigError("skew-t degrees of freedom must exceed 2");
  }
  if (scenario == Scenario::Mixture && !(mixture.s1 > 0.0 && mixture.s2 > 0.0)) {
    throw ConfigError("mixture component SDs must be positive");
  }
}

double skew_t_event_prob(double mu, double sigma, double slant, double df) {
  if (!(df > 0.0) || !(sigma > 0.0)) throw ConfigError("skew-t needs df > 0 and sigma > 0");
  const boost::math::students_t_distribution<double> t_df(df);
  const boost::math::students_t_distribution<double> t_df1(df + 1.0);
  auto density = [&](double u) {
    if (!std::isfinite(u)) return 0.0;
    const double arg = slant * u * std::sqrt((df + 1.0) / (u * u + df));
    return 2.0 * boost::math::pdf(t_df, u) * boost::math::cdf(t_df1, arg);
  };
  const double c = -mu / sigma;
  const double inf = std::numeric_limits<double>::infinity();
  // integrate over the shorter tail for accuracy
  if (c >= 0.0) {
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(density, c, inf, 15, 1e-12);
  }
  return 1.0 - boost::math::quadrature::gauss_kronrod<double, 61>::integrate(density, -inf, c, 15, 1e-12);
}

double mixture_event_prob(double mu, double weight, const MixtureParams& p) {
  return weight * normal_cdf((p.m1 + mu) / p.s1) + (1.0 - weight) * normal_cdf((p.m2 + mu) / p.s2);
}

SimulatedPanel simulate_panel(const SimDesign& design, std::uint64_t seed) {
  design.validate();
  std::mt19937_64 rng(seed);
  const Skeleton sk = build_skeleton(design, rng);
  std::mt19937_64 holdout_rng(derive_seed(seed, kHoldoutStream));
  TruthTable truth;
  std::vector<int> y;
  std::vector<int> holdout;
  for (const auto& raw : sk.raw) {
    const SasParams p = apply_links(raw);
    truth.mu.push_back(p.mu);
    truth.sigma.push_back(p.sigma);
    truth.nu.push_back(p.nu);
    truth.tau.push_back(p.tau);
    truth.event_prob.push_back(sas_event_prob(p));
    y.push_back(sas_draw(rng, p) > 0.0 ? 1 : 0);
    holdout.push_back(sas_draw(holdout_rng, p) > 0.0 ? 1 : 0);
  }
  return finish(sk, y, std::move(holdout), std::move(truth));
}

SimulatedPanel simulate_skew_t(const SimDesign& design, const SkewTParams& params,
                               std::uint64_t seed) {
  design.validate();
  if (!(params.df > 2.0)) throw ConfigError("skew-t degrees of freedom must exceed 2");
  std::mt19937_64 rng(seed);
  const Skeleton sk = build_skeleton(design, rng);
  std::mt19937_64 holdout_rng(derive_seed(seed, kHoldoutStream));
  TruthTable truth;
  std::vector<int> y;
  std::vector<int> holdout;
  for (std::size_t r = 0; r < sk.raw.size(); ++r) {
    const double mu = sk.raw[r][0];
    const double sigma = std::exp(std::clamp(sk.raw[r][1], -700.0, 700.0));
    const double slant = params.slant0 + params.slant1 * sk.time[r];
    truth.mu.push_back(mu);
    truth.sigma.push_back(sigma);
    truth.nu.push_back(slant);
    truth.tau.push_back(params.df);
    truth.event_prob.push_back(skew_t_event_prob(mu, sigma, slant, params.df));
    y.push_back(mu + sigma * skew_t_draw(rng, slant, params.df) > 0.0 ? 1 : 0);
    holdout.push_back(mu + sigma * skew_t_draw(holdout_rng, slant, params.df) > 0.0 ? 1 : 0);
  }
  return finish(sk, y, std::move(holdout), std::move(truth));
}

SimulatedPanel simulate_mixture(const SimDesign& design, const MixtureParams& params,
                                std::uint64_t seed) {
  design.validate();
  if (!(params.s1 > 0.0 && params.s2 > 0.0)) throw ConfigError("mixture component SDs must be positive");
  std::mt19937_64 rng(seed);
  const Skeleton sk = build_skeleton(design, rng);
  std::mt19937_64 holdout_rng(derive_seed(seed, kHoldoutStream));
  TruthTable truth;
  std::vector<int> y;
  std::vector<int> holdout;
  for (std::size_t r = 0; r < sk.raw.size(); ++r) {
    const double mu = sk.raw[r][0];
    const double w = expit(params.c0 + params.c1 * sk.time[r]);
    truth.mu.push_back(mu);
    truth.sigma.push_back(kNaN);
    truth.nu.push_back(kNaN);
    truth.tau.push_back(kNaN);
    truth.event_prob.push_back(mixture_event_prob(mu, w, params));
    y.push_back(mixture_draw(rng, mu, w, params) > 0.0 ? 1 : 0);
    holdout.push_back(mixture_draw(holdout_rng, mu, w, params) > 0.0 ? 1 : 0);
  }
  return finish(sk, y, std::move(holdout), std::move(truth));
}

SimulatedPanel simulate(const SimDesign& design, std::uint64_t seed) {
  switch (design.scenario) {
    case Scenario::Sas: return simulate_panel(design, seed);
    case Scenario::SkewT: return simulate_skew_t(design, design.skew_t, seed);
    case Scenario::Mixture: return simulate_mixture(design, design.mixture, seed);
  }
  return simulate_panel(design, seed);
}

std::string EstimatorSpec::name() const {
  std::string base;
  switch (kind) {
    case EstimatorKind::Blas: base = "blas"; break;
    case EstimatorKind::Quad: base = "quad"; break;
    case EstimatorKind::Gee: base = "gee"; break;
    case EstimatorKind::Glmm: base = "glmm"; break;
  }
  if (variant != Variant::Full) base += "_" + std::string(variant_name(variant));
  return base;
}

EstimatorSpec estimator_from_name(std::string_view name) {
  EstimatorSpec e;
  std::string_view base = name;
  if (const auto pos = name.find('_'); pos != std::string_view::npos) {
    base = name.substr(0, pos);
    e.variant = variant_from_name(name.substr(pos + 1));
  }
  if (base == "blas") e.kind = EstimatorKind::Blas;
  else if (base == "quad") e.kind = EstimatorKind::Quad;
  else if (base == "gee") e.kind = EstimatorKind::Gee;
  else if (base == "glmm") e.kind = EstimatorKind::Glmm;
  else throw ConfigError("unknown estimator '" + std::string(name) + "' (expected blas, quad, gee or glmm)");
  if ((e.kind == EstimatorKind::Gee || e.kind == EstimatorKind::Glmm) && e.variant != Variant::Full) {
    throw ConfigError("variants apply only to blas and quad");
  }
  return e;
}

MomentSpec default_fit_spec(double scale_anchor) {
  MomentSpec spec;
  for (Moment m : kAllMoments) spec[m].columns = {"x_static", "x_varying"};
  spec[Moment::Location].effect = RandomEffect::Subject;
  spec[Moment::Scale].intercept = false;
  spec[Moment::Scale].offset = scale_anchor;
  return spec;
}

FitOptions default_study_options(const SimDesign& design) {
  FitOptions o;
  o.spec = default_fit_spec(design.beta[index(Moment::Scale)][0]);
  for (Moment m : kAllMoments) {
    if (design.time_trend[index(m)] != 0.0) o.spec[m].columns.push_back("time_std");
  }
  o.prior.beta_scale = {1.0, 0.5, 0.5, 0.25};
  o.sampler.chains = 4;
  o.sampler.iterations = 1000;
  o.sampler.warmup = 500;
  o.baseline_covariates = {"x_static", "x_varying"};
  return o;
}

EstimatorOutput fit_estimator(const EstimatorSpec& estimator, const PanelData& data,
                              const FitOptions& options) {
  EstimatorOutput out;
  switch (estimator.kind) {
    case EstimatorKind::Gee: {
      out.gee = fit_gee(data, options.baseline_covariates, options.gee);
      out.probs = baseline_predict(*out.gee, data);
      return out;
    }
    case EstimatorKind::Glmm: {
      out.glmm = fit_glmm(data, options.baseline_covariates, options.glmm);
      if (out.glmm->boundary) out.warnings.push_back("GLMM variance at boundary; plain GLM used");
      out.probs = baseline_predict(*out.glmm, data);
      return out;
    }
    case EstimatorKind::Blas:
    case EstimatorKind::Quad: break;
  }
  MomentSpec spec = options.spec;
  spec.variant = estimator.variant;
  const ModelDesign design(data, spec);
  std::shared_ptr<EventModel> events;
  if (estimator.kind == EstimatorKind::Quad) {
    if (!options.surface) {
      throw ConfigError("the quad estimator needs a probability surface; run build-surface first");
    }
    events = std::make_shared<SurfaceEvents>(options.surface);
  } else {
    events = std::make_shared<ExactSasEvents>();
  }
  const LogPosterior posterior(design, options.prior, events);
  out.draws = hmc_run(posterior, options.sampler);
  if (estimator.kind == EstimatorKind::Quad && posterior.evaluated_rows() > 0) {
    const double rate = static_cast<double>(posterior.clamped_rows()) /
                        static_cast<double>(posterior.evaluated_rows());
    if (rate > 0.01) {
      out.warnings.push_back("surface clamp rate " + std::to_string(100.0 * rate) +
                             "% exceeds 1%");
    }
  }
  for (const auto& d : diagnostics(*out.draws)) {
    if (d.flagged) {
      out.warnings.push_back("R-hat above 1.05 for " + d.name);
      break;
    }
  }
  out.prob_intervals = posterior_event_probs(*out.draws, posterior);
  out.probs = out.prob_intervals->mean;
  out.moments = posterior_moments(*out.draws, posterior);
  return out;
}

std::uint64_t replication_seed(std::uint64_t master, std::size_t replication) {
  return derive_seed(master, kReplicationStream, replication);
}

namespace {

struct ReplicationResult {
  std::vector<ReplicationRow> rows;
  std::vector<ReplicationFailure> failures;
};

ReplicationResult run_one(const SimDesign& design, const std::vector<EstimatorSpec>& estimators,
                          const ReplicationOptions& options, std::size_t rep) {
  ReplicationResult res;
  const std::uint64_t seed = replication_seed(design.seed, rep);
  SimulatedPanel panel;
  try {
    panel = simulate(design, derive_seed(seed, 1));
  } catch (const std::exception& e) {
    for (const auto& est : estimators) res.failures.push_back({rep, est.name(), e.what()});
    return res;
  }
  const std::array<const std::vector<double>*, kMoments> truth{
      &panel.truth.mu, &panel.truth.sigma, &panel.truth.nu, &panel.truth.tau};
  for (std::size_t e = 0; e < estimators.size(); ++e) {
    const EstimatorSpec& est = estimators[e];
    FitOptions fit = options.fit;
    fit.sampler.seed = derive_seed(seed, 2, e);
    try {
      const EstimatorOutput out = fit_estimator(est, panel.data, fit);
      const std::vector<int>& scored =
          options.scoring == Scoring::Holdout ? panel.holdout_y : panel.data.y;
      MetricSet metrics = predictive_metrics(out.probs, scored);
      if (design.scenario == Scenario::Sas && out.moments) {
        MomentSpec spec = fit.spec;
        spec.variant = est.variant;
        for (Moment m : kAllMoments) {
          if (!spec.active(m)) continue;
          const auto& s = (*out.moments)[index(m)];
          metrics.recovery[index(m)] = moment_recovery(s.mean, s.lower, s.upper, *truth[index(m)]);
        }
      }
      for (const auto& [name, value] : flatten(metrics)) {
        res.rows.push_back({rep, seed, est.name(), name, value});
      }
      if (options.per_time) {
        for (const auto& [t, mt] : metrics_by_time(out.probs, scored, panel.data.time)) {
          char suffix[32];
          std::snprintf(suffix, sizeof suffix, "@t%g", t);
          for (const auto& [name, value] : flatten(mt)) {
            res.rows.push_back({rep, seed, est.name(), name + suffix, value});
          }
        }
      }
    } catch (const std::exception& ex) {
      res.failures.push_back({rep, est.name(), ex.what()});
    }
  }
  return res;
}

}  // namespace

ReplicationReport run_replications(const SimDesign& design,
                                   const std::vector<EstimatorSpec>& estimators,
                                   const ReplicationOptions& options) {
  design.validate();
  if (estimators.empty()) throw ConfigError("no estimators requested");
  std::vector<ReplicationResult> results(design.replications);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t r = next++; r < design.replications; r = next++) {
      results[r] = run_one(design, estimators, options, r);
    }
  };
  const std::size_t n_threads = std::clamp<std::size_t>(options.threads, 1, design.replications);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ReplicationReport report;
  for (std::size_t r = 0; r < design.replications; ++r) {
    report.seeds.push_back(replication_seed(design.seed, r));
    auto& res = results[r];
    report.rows.insert(report.rows.end(), res.rows.begin(), res.rows.end());
    report.failures.insert(report.failures.end(), res.failures.begin(), res.failures.end());
  }
  for (const auto& est : estimators) report.failure_counts[est.name()] = 0;
  for (const auto& f : report.failures) ++report.failure_counts[f.estimator];

  std::map<std::string, std::map<std::string, std::vector<double>>> values;
  for (const auto& row : report.rows) values[row.estimator][row.metric].push_back(row.value);
  for (const auto& [est, metrics] : values) {
    for (const auto& [metric, v] : metrics) {
      MetricSummary s;
      s.n = v.size();
      for (double x : v) s.mean += x;
      s.mean /= static_cast<double>(s.n);
      if (s.n > 1) {
        double ss = 0.0;
        for (double x : v) ss += (x - s.mean) * (x - s.mean);
        s.mc_se = std::sqrt(ss / static_cast<double>(s.n - 1) / static_cast<double>(s.n));
      }
      report.summary[est][metric] = s;
    }
  }
  return report;
}

}  // namespace latmom
