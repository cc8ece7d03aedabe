#include "latmom/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "latmom/errors.hpp"

namespace latmom {

using nlohmann::json;

namespace {

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(label() + " must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::optional<Section> child(const std::string& key) {
    if (!j_.contains(key)) return std::nullopt;
    used_.insert(key);
    return Section(j_.at(key), key_path(key));
  }

  void get(const std::string& key, double& out) {
    if (const json* v = take(key)) out = as_double(*v, key_path(key));
  }
  void get(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) throw ConfigError(key_path(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void get(const std::string& key, std::string& out) {
    if (const json* v = take(key)) out = as_string(*v, key_path(key));
  }
  void get(const std::string& key, std::size_t& out) {
    if (const json* v = take(key)) out = static_cast<std::size_t>(as_unsigned(*v, key_path(key)));
  }
  void get(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) throw ConfigError(key_path(key) + " must be an array of strings");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        out.push_back(as_string((*v)[i], key_path(key) + "[" + std::to_string(i) + "]"));
      }
    }
  }
  void get(const std::string& key, std::vector<double>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array()) throw ConfigError(key_path(key) + " must be an array of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        out.push_back(as_double((*v)[i], key_path(key) + "[" + std::to_string(i) + "]"));
      }
    }
  }
  template <std::size_t N>
  void get(const std::string& key, std::array<double, N>& out) {
    std::vector<double> v(out.begin(), out.end());
    get(key, v);
    if (v.size() != N) throw ConfigError(key_path(key) + " must have " + std::to_string(N) + " entries");
    std::copy(v.begin(), v.end(), out.begin());
  }
  template <std::size_t N>
  void get(const std::string& key, std::array<std::size_t, N>& out) {
    if (const json* v = take(key)) {
      if (!v->is_array() || v->size() != N) {
        throw ConfigError(key_path(key) + " must be an array of " + std::to_string(N) + " counts");
      }
      for (std::size_t i = 0; i < N; ++i) {
        out[i] = static_cast<std::size_t>(as_unsigned((*v)[i], key_path(key) + "[" + std::to_string(i) + "]"));
      }
    }
  }
  /// Object keyed by moment name.
  void get_moments(const std::string& key, std::array<double, kMoments>& out) {
    if (auto s = child(key)) {
      for (Moment m : kAllMoments) s->get(std::string(moment_name(m)), out[index(m)]);
      s->finish();
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("unknown configuration key '" + key_path(it.key()) + "'");
    }
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  std::string label() const { return path_.empty() ? "configuration" : "'" + path_ + "'"; }

  const json* take(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  static double as_double(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path + " must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(path + " must be finite");
    return d;
  }
  static std::string as_string(const json& v, const std::string& path) {
    if (!v.is_string()) throw ConfigError(path + " must be a string");
    return v.get<std::string>();
  }
  static std::uint64_t as_unsigned(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ConfigError(path + " must be a non-negative integer");
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

RandomEffect effect_from_name(const std::string& name, const std::string& path) {
  if (name == "none") return RandomEffect::None;
  if (name == "subject") return RandomEffect::Subject;
  if (name == "membership") return RandomEffect::Membership;
  throw ConfigError(path + " must be none, subject or membership");
}

std::string_view effect_name(RandomEffect e) {
  switch (e) {
    case RandomEffect::None: return "none";
    case RandomEffect::Subject: return "subject";
    case RandomEffect::Membership: return "membership";
  }
  return "none";
}

Scoring scoring_from_name(const std::string& name, const std::string& path) {
  if (name == "holdout") return Scoring::Holdout;
  if (name == "in_sample") return Scoring::InSample;
  throw ConfigError(path + " must be holdout or in_sample");
}

std::string_view scoring_name(Scoring s) { return s == Scoring::Holdout ? "holdout" : "in_sample"; }

json moments_json(const std::array<double, kMoments>& v) {
  json j = json::object();
  for (Moment m : kAllMoments) j[std::string(moment_name(m))] = v[index(m)];
  return j;
}

void read_design(Section& s, SimDesign& d) {
  s.get("n_subjects", d.n_subjects);
  s.get("n_times", d.n_times);
  s.get("replications", d.replications);
  if (auto b = s.child("beta")) {
    for (Moment m : kAllMoments) b->get(std::string(moment_name(m)), d.beta[index(m)]);
    b->finish();
  }
  s.get_moments("time_trend", d.time_trend);
  s.get_moments("effect_sd", d.effect_sd);
  std::string scenario(scenario_name(d.scenario));
  s.get("scenario", scenario);
  d.scenario = scenario_from_name(scenario);
  if (auto t = s.child("skew_t")) {
    t->get("df", d.skew_t.df);
    t->get("slant0", d.skew_t.slant0);
    t->get("slant1", d.skew_t.slant1);
    t->finish();
  }
  if (auto m = s.child("mixture")) {
    m->get("m1", d.mixture.m1);
    m->get("m2", d.mixture.m2);
    m->get("s1", d.mixture.s1);
    m->get("s2", d.mixture.s2);
    m->get("c0", d.mixture.c0);
    m->get("c1", d.mixture.c1);
    m->finish();
  }
  s.finish();
}

void read_model(Section& s, MomentSpec& spec) {
  std::string variant(variant_name(spec.variant));
  s.get("variant", variant);
  spec.variant = variant_from_name(variant);
  if (auto ms = s.child("moments")) {
    // A listed moments block replaces the default regressions; unlisted
    // moments become intercept-only.
    for (Moment m : kAllMoments) {
      MomentRegression reg;
      if (auto r = ms->child(std::string(moment_name(m)))) {
        r->get("intercept", reg.intercept);
        r->get("offset", reg.offset);
        r->get("columns", reg.columns);
        std::string effect(effect_name(reg.effect));
        r->get("effect", effect);
        reg.effect = effect_from_name(effect, r->key_path("effect"));
        r->get("ar1", reg.ar1);
        r->finish();
      }
      spec[m] = reg;
    }
    ms->finish();
  }
  s.finish();
}

void read_surface(Section& s, SurfaceConfig& c) {
  s.get("path", c.path);
  s.get("points", c.points);
  s.get("mc_draws", c.mc_draws);
  if (auto r = s.child("ranges")) {
    r->get("mu", c.ranges.mu);
    r->get("sigma", c.ranges.sigma);
    r->get("nu", c.ranges.nu);
    r->get("tau", c.ranges.tau);
    r->finish();
  }
  s.get("lambda_ladder", c.fit.lambda_ladder);
  s.get("prob_floor", c.fit.prob_floor);
  s.get("gcv_sweeps", c.fit.gcv_sweeps);
  s.get("censored_iterations", c.fit.censored_iterations);
  s.finish();
}

void validate(const RunConfig& c) {
  c.design.validate();
  c.fit.prior.validate();
  c.fit.sampler.validate();
  c.surface.ranges.validate();
  if (c.output_dir.empty()) throw ConfigError("output_dir must not be empty");
  for (std::size_t p : c.surface.points) {
    if (p < 4) throw ConfigError("surface.points needs at least 4 points per dimension");
  }
  if (c.surface.mc_draws < 1) throw ConfigError("surface.mc_draws must be positive");
  if (c.surface.fit.lambda_ladder.empty()) throw ConfigError("surface.lambda_ladder must not be empty");
  for (double l : c.surface.fit.lambda_ladder) {
    if (!(l > 0.0)) throw ConfigError("surface.lambda_ladder entries must be positive");
  }
  estimator_from_name(c.estimator);
  if (c.replicate.estimators.empty()) throw ConfigError("replicate.estimators must not be empty");
  std::set<std::string> seen;
  for (const auto& e : c.replicate.estimators) {
    estimator_from_name(e);
    if (!seen.insert(e).second) throw ConfigError("replicate.estimators lists '" + e + "' twice");
  }
  if (c.replicate.threads < 1) throw ConfigError("replicate.threads must be at least 1");
  if (c.fit.glmm.nodes < 1) throw ConfigError("baselines.glmm.nodes must be at least 1");
  if (!(c.report.z_max > c.report.z_min)) throw ConfigError("report.z_max must exceed report.z_min");
  if (c.report.z_points < 2) throw ConfigError("report.z_points must be at least 2");
}

}  // namespace

RunConfig parse_config(const json& j) {
  Section root(j, "");
  RunConfig c;
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  if (auto s = root.child("design")) read_design(*s, c.design);
  c.design.seed = c.seed;

  c.fit = default_study_options(c.design);
  c.fit.sampler.seed = c.seed;
  if (auto s = root.child("model")) read_model(*s, c.fit.spec);
  if (auto s = root.child("prior")) {
    s->get_moments("beta_scale", c.fit.prior.beta_scale);
    s->get("effect_scale", c.fit.prior.effect_scale);
    s->get("mm_scale", c.fit.prior.mm_scale);
    s->get("ar_scale", c.fit.prior.ar_scale);
    s->finish();
  }
  if (auto s = root.child("sampler")) {
    auto& sm = c.fit.sampler;
    s->get("chains", sm.chains);
    s->get("iterations", sm.iterations);
    s->get("warmup", sm.warmup);
    s->get("target_accept", sm.target_accept);
    s->get("max_leapfrog", sm.max_leapfrog);
    s->get("init_radius", sm.init_radius);
    s->get("max_divergent_fraction", sm.max_divergent_fraction);
    s->get("threads", sm.threads);
    s->finish();
  }
  if (auto s = root.child("surface")) read_surface(*s, c.surface);
  if (auto s = root.child("baselines")) {
    s->get("covariates", c.fit.baseline_covariates);
    if (auto g = s->child("gee")) {
      g->get("independence", c.fit.gee.independence);
      g->get("tol", c.fit.gee.tol);
      g->get("max_iter", c.fit.gee.max_iter);
      g->finish();
    }
    if (auto g = s->child("glmm")) {
      g->get("nodes", c.fit.glmm.nodes);
      g->get("tol", c.fit.glmm.tol);
      g->get("max_iter", c.fit.glmm.max_iter);
      g->get("boundary_variance", c.fit.glmm.boundary_variance);
      g->finish();
    }
    s->finish();
  }
  if (auto s = root.child("data")) {
    s->get("panel", c.data.panel);
    s->get("membership", c.data.membership);
    s->get("covariates", c.data.covariates);
    s->get("standardize", c.data.standardize);
    s->get("standardization", c.data.standardization);
    s->get("truth", c.data.truth);
    s->get("probs", c.data.probs);
    s->get("moments", c.data.moments);
    s->get("draws", c.data.draws);
    s->finish();
  }
  if (auto s = root.child("fit")) {
    s->get("estimator", c.estimator);
    s->finish();
  }
  if (auto s = root.child("replicate")) {
    s->get("estimators", c.replicate.estimators);
    std::string scoring(scoring_name(c.replicate.scoring));
    s->get("scoring", scoring);
    c.replicate.scoring = scoring_from_name(scoring, "replicate.scoring");
    s->get("threads", c.replicate.threads);
    s->get("per_time", c.replicate.per_time);
    s->finish();
  }
  if (auto s = root.child("evaluate")) {
    std::string scoring(scoring_name(c.evaluate.scoring));
    s->get("scoring", scoring);
    c.evaluate.scoring = scoring_from_name(scoring, "evaluate.scoring");
    s->get("per_time", c.evaluate.per_time);
    s->finish();
  }
  if (auto s = root.child("report")) {
    s->get("subject", c.report.subject);
    s->get("z_min", c.report.z_min);
    s->get("z_max", c.report.z_max);
    s->get("z_points", c.report.z_points);
    s->finish();
  }
  root.finish();
  validate(c);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON: " + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;

  const SimDesign& d = c.design;
  json beta = json::object();
  for (Moment m : kAllMoments) beta[std::string(moment_name(m))] = d.beta[index(m)];
  j["design"] = {{"n_subjects", d.n_subjects},
                 {"n_times", d.n_times},
                 {"replications", d.replications},
                 {"beta", beta},
                 {"time_trend", moments_json(d.time_trend)},
                 {"effect_sd", moments_json(d.effect_sd)},
                 {"scenario", scenario_name(d.scenario)},
                 {"skew_t", {{"df", d.skew_t.df}, {"slant0", d.skew_t.slant0}, {"slant1", d.skew_t.slant1}}},
                 {"mixture",
                  {{"m1", d.mixture.m1},
                   {"m2", d.mixture.m2},
                   {"s1", d.mixture.s1},
                   {"s2", d.mixture.s2},
                   {"c0", d.mixture.c0},
                   {"c1", d.mixture.c1}}}};

  json moments = json::object();
  for (Moment m : kAllMoments) {
    const MomentRegression& r = c.fit.spec[m];
    moments[std::string(moment_name(m))] = {{"intercept", r.intercept},
                                            {"offset", r.offset},
                                            {"columns", r.columns},
                                            {"effect", effect_name(r.effect)},
                                            {"ar1", r.ar1}};
  }
  j["model"] = {{"variant", variant_name(c.fit.spec.variant)}, {"moments", moments}};

  const PriorConfig& p = c.fit.prior;
  j["prior"] = {{"beta_scale", moments_json(p.beta_scale)},
                {"effect_scale", p.effect_scale},
                {"mm_scale", p.mm_scale},
                {"ar_scale", p.ar_scale}};

  const SamplerConfig& s = c.fit.sampler;
  j["sampler"] = {{"chains", s.chains},
                  {"iterations", s.iterations},
                  {"warmup", s.warmup},
                  {"target_accept", s.target_accept},
                  {"max_leapfrog", s.max_leapfrog},
                  {"init_radius", s.init_radius},
                  {"max_divergent_fraction", s.max_divergent_fraction},
                  {"threads", s.threads}};

  const SurfaceConfig& sf = c.surface;
  j["surface"] = {{"path", sf.path},
                  {"points", sf.points},
                  {"mc_draws", sf.mc_draws},
                  {"ranges",
                   {{"mu", sf.ranges.mu}, {"sigma", sf.ranges.sigma}, {"nu", sf.ranges.nu}, {"tau", sf.ranges.tau}}},
                  {"lambda_ladder", sf.fit.lambda_ladder},
                  {"prob_floor", sf.fit.prob_floor},
                  {"gcv_sweeps", sf.fit.gcv_sweeps},
                  {"censored_iterations", sf.fit.censored_iterations}};

  j["baselines"] = {{"covariates", c.fit.baseline_covariates},
                    {"gee",
                     {{"independence", c.fit.gee.independence},
                      {"tol", c.fit.gee.tol},
                      {"max_iter", c.fit.gee.max_iter}}},
                    {"glmm",
                     {{"nodes", c.fit.glmm.nodes},
                      {"tol", c.fit.glmm.tol},
                      {"max_iter", c.fit.glmm.max_iter},
                      {"boundary_variance", c.fit.glmm.boundary_variance}}}};

  j["data"] = {{"panel", c.data.panel},
               {"membership", c.data.membership},
               {"covariates", c.data.covariates},
               {"standardize", c.data.standardize},
               {"standardization", c.data.standardization},
               {"truth", c.data.truth},
               {"probs", c.data.probs},
               {"moments", c.data.moments},
               {"draws", c.data.draws}};
  j["fit"] = {{"estimator", c.estimator}};
  j["replicate"] = {{"estimators", c.replicate.estimators},
                    {"scoring", scoring_name(c.replicate.scoring)},
                    {"threads", c.replicate.threads},
                    {"per_time", c.replicate.per_time}};
  j["evaluate"] = {{"scoring", scoring_name(c.evaluate.scoring)}, {"per_time", c.evaluate.per_time}};
  j["report"] = {{"subject", c.report.subject},
                 {"z_min", c.report.z_min},
                 {"z_max", c.report.z_max},
                 {"z_points", c.report.z_points}};
  return j;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json canonical_config(const RunConfig& config) {
  json j = to_json(config);
  j.erase("output_dir");
  for (const char* key : {"panel", "membership", "standardization", "truth", "probs", "moments", "draws"}) {
    j["data"].erase(key);
  }
  j["surface"].erase("path");
  // Thread counts change scheduling, never results.
  j["sampler"].erase("threads");
  j["replicate"].erase("threads");
  return j;
}

std::uint64_t config_hash(const RunConfig& config) { return fnv1a(canonical_config(config).dump()); }

void set_json_path(json& j, std::string_view dotted, std::string_view value) {
  if (dotted.empty()) throw ConfigError("empty configuration key");
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key(dotted.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (key.empty()) throw ConfigError("malformed configuration key '" + std::string(dotted) + "'");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("'" + std::string(dotted) + "' does not name an object path");
      *node = json::object();
    }
    if (dot == std::string_view::npos) {
      json parsed = json::parse(std::string(value), nullptr, false);
      (*node)[key] = parsed.is_discarded() ? json(std::string(value)) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

}  // namespace latmom
