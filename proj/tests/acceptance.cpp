// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "latmom/config.hpp"
#include "latmom/hmc.hpp"
#include "latmom/model.hpp"
#include "latmom/sas.hpp"
#include "latmom/simstudy.hpp"
#include "latmom/surface.hpp"

using namespace latmom;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Reference normal functions, independent of the library's.
const boost::math::normal_distribution<long double> kStd;
double ref_cdf(double x) { return static_cast<double>(boost::math::cdf(kStd, static_cast<long double>(x))); }
double ref_pdf(double x) { return static_cast<double>(boost::math::pdf(kStd, static_cast<long double>(x))); }
double ref_quantile(double q) { return static_cast<double>(boost::math::quantile(kStd, static_cast<long double>(q))); }

SasParams random_params(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return SasParams::make(-2.0 + 4.0 * u(rng), 0.3 * std::pow(10.0, u(rng)), -1.5 + 3.0 * u(rng),
                         0.4 * std::pow(6.0, u(rng)));
}

Outcome sas_exactness() {
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double normal_err = 0.0, roundtrip = 0.0, fd = 0.0;
  for (int k = 0; k < 200; ++k) {
    const double mu = -3 + 6 * u(rng), sigma = 0.2 + 4 * u(rng);
    const SasParams p = SasParams::make(mu, sigma, 0.0, 1.0);
    const double z = mu + sigma * (-6 + 12 * u(rng));
    const double q = 1e-6 + (1 - 2e-6) * u(rng);
    const double x = (z - mu) / sigma;
    normal_err = std::max({normal_err, std::abs(sas_cdf(z, p) - ref_cdf(x)),
                           std::abs(sas_pdf(z, p) - ref_pdf(x) / sigma) * sigma,
                           std::abs(sas_quantile(q, p) - (mu + sigma * ref_quantile(q))) /
                               std::max(1.0, std::abs(mu + sigma * ref_quantile(q)))});
  }
  for (int k = 0; k < 500; ++k) {
    const SasParams p = random_params(rng);
    const double q = 1e-4 + (1 - 2e-4) * u(rng);
    const double z = sas_quantile(q, p);
    roundtrip = std::max({roundtrip, std::abs(sas_cdf(z, p) - q),
                          std::abs(sas_quantile(sas_cdf(z, p), p) - z) / std::max(1.0, std::abs(z))});
    const double zc = sas_quantile(0.01 + 0.98 * u(rng), p);
    const double h = 1e-5 * p.sigma;
    const double num = (sas_cdf(zc + h, p) - sas_cdf(zc - h, p)) / (2 * h);
    fd = std::max(fd, std::abs(num - sas_pdf(zc, p)) / sas_pdf(zc, p));
  }
  return {normal_err <= 1e-12 && roundtrip <= 1e-10 && fd <= 1e-6,
          fmt("normal reduction %.2e, roundtrip %.2e, finite-difference density %.2e", normal_err, roundtrip, fd)};
}

Outcome event_probability_oracle() {
  std::mt19937_64 pick(202);
  int worst_k = 0;
  double worst = 0.0;
  for (int k = 0; k < 20; ++k) {
    const SasParams p = random_params(pick);
    std::mt19937_64 rng(3000 + k);
    std::normal_distribution<double> z;
    constexpr std::size_t n = 10000000;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      hits += p.mu + p.sigma * std::sinh((std::asinh(z(rng)) + p.nu) / p.tau) > 0.0;
    }
    const double mc = static_cast<double>(hits) / n;
    const double exact = sas_event_prob(p);
    const double se = std::sqrt(exact * (1 - exact) / n);
    const double zscore = std::abs(mc - exact) / se;
    if (zscore > worst) {
      worst = zscore;
      worst_k = k;
    }
  }
  return {worst < 4.0, fmt("largest deviation %.2f SE (point %d of 20)", worst, worst_k)};
}

std::shared_ptr<const ProbabilitySurface> default_surface() {
  static const auto s = [] {
    const RunConfig c = parse_config(nlohmann::json::object());
    const MomentGrid grid = generate_grid(c.surface.ranges, c.surface.points, c.surface.mc_draws);
    return std::make_shared<const ProbabilitySurface>(
        fit_surface(grid, simulate_probabilities(grid, c.seed), c.surface.fit));
  }();
  return s;
}

Outcome gradient_check() {
  SimDesign d;
  d.n_subjects = 10;
  const SimulatedPanel panel = simulate_panel(d, 303);
  const FitOptions opts = default_study_options(d);
  const ModelDesign design(panel.data, opts.spec);
  const LogPosterior blas(design, opts.prior, std::make_shared<ExactSasEvents>());
  const LogPosterior quad(design, opts.prior, std::make_shared<SurfaceEvents>(default_surface()));
  std::mt19937_64 rng(304);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst[2] = {0.0, 0.0};
  const LogPosterior* lps[2] = {&blas, &quad};
  for (int k = 0; k < 20; ++k) {
    Eigen::VectorXd x(static_cast<Eigen::Index>(blas.dim()));
    for (auto& v : x) v = u(rng);
    for (int m = 0; m < 2; ++m) {
      Eigen::VectorXd g;
      (*lps[m])(x, &g);
      for (Eigen::Index j = 0; j < x.size(); ++j) {
        const double h = 1e-6;
        Eigen::VectorXd a = x, b = x;
        a[j] += h;
        b[j] -= h;
        const double num = ((*lps[m])(a) - (*lps[m])(b)) / (2 * h);
        worst[m] = std::max(worst[m], std::abs(num - g[j]) / std::max(1.0, std::abs(num)));
      }
    }
  }
  return {worst[0] < 1e-5 && worst[1] < 1e-5,
          fmt("max relative error %.2e exact likelihood, %.2e pseudo-likelihood (dim %zu)", worst[0], worst[1],
              blas.dim())};
}

Outcome surface_fidelity() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& s = *default_surface();
  const double build = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const GridRanges& r = s.ranges();
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0, total = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const SasParams p = SasParams::make(r.mu[0] + (r.mu[1] - r.mu[0]) * u(rng),
                                        r.sigma[0] * std::pow(r.sigma[1] / r.sigma[0], u(rng)),
                                        r.nu[0] + (r.nu[1] - r.nu[0]) * u(rng),
                                        r.tau[0] * std::pow(r.tau[1] / r.tau[0], u(rng)));
    const double e = std::abs(surface_eval(s, p) - sas_event_prob(p));
    worst = std::max(worst, e);
    total += e;
  }
  return {total / 1000 < 0.005 && worst < 0.02,
          fmt("mean abs error %.5f, max %.5f (surface built in %.0f s)", total / 1000, worst, build)};
}

Outcome sampler_sanity() {
  Eigen::Vector2d mean(1.0, -2.0);
  Eigen::Matrix2d cov;
  cov << 1.0, 0.5, 0.5, 1.0;
  const Eigen::Matrix2d prec = cov.inverse();
  auto target = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    const Eigen::Vector2d d = x - mean;
    if (g) *g = -prec * d;
    return -0.5 * d.dot(prec * d);
  };
  SamplerConfig cfg;
  cfg.chains = 4;
  cfg.iterations = 2000;
  cfg.warmup = 1000;
  cfg.seed = 505;
  const PosteriorDraws d = hmc_sample(target, 2, {"x", "y"}, cfg);
  const Eigen::RowVector2d m = d.values.colwise().mean();
  const Eigen::MatrixXd c = d.values.rowwise() - m;
  const Eigen::Matrix2d s = c.transpose() * c / (d.size() - 1.0);
  double rhat = 0.0, ess = 1e300;
  for (const auto& p : diagnostics(d)) {
    rhat = std::max(rhat, p.rhat);
    ess = std::min(ess, p.ess);
  }
  const double mean_err = (m.transpose() - mean).cwiseAbs().maxCoeff();
  const double cov_err = (s - cov).cwiseAbs().maxCoeff();
  return {d.size() == 4000 && mean_err < 0.05 && cov_err < 0.1 && rhat < 1.05,
          fmt("%zu draws, mean error %.3f, covariance error %.3f, split R-hat %.4f, min ESS %.0f", d.size(), mean_err,
              cov_err, rhat, ess)};
}

double mean_of(const ReplicationReport& r, const std::string& est, const std::string& metric) {
  const auto e = r.summary.find(est);
  if (e == r.summary.end()) return std::nan("");
  const auto m = e->second.find(metric);
  return m == e->second.end() ? std::nan("") : m->second.mean;
}

std::string failures_of(const ReplicationReport& r) {
  std::string s;
  for (const auto& [est, n] : r.failure_counts) {
    if (n > 0) s += fmt(", %s failed %zu", est.c_str(), n);
  }
  return s;
}

ReplicationReport study(const SimDesign& d, const std::vector<std::string>& names) {
  ReplicationOptions o;
  o.fit = default_study_options(d);
  o.fit.surface = default_surface();
  std::vector<EstimatorSpec> est;
  for (const auto& n : names) est.push_back(estimator_from_name(n));
  return run_replications(d, est, o);
}

const ReplicationReport& table_study() {
  static const ReplicationReport r = [] {
    SimDesign d;
    d.n_subjects = 250;
    d.n_times = 6;
    d.replications = 20;
    return study(d, {"blas", "quad", "gee"});
  }();
  return r;
}

Outcome table2_ordering() {
  const auto& r = table_study();
  const double ab = mean_of(r, "blas", "auc"), aq = mean_of(r, "quad", "auc"), ag = mean_of(r, "gee", "auc");
  const double slope = mean_of(r, "blas", "calibration_slope");
  const double bb = mean_of(r, "blas", "brier"), bg = mean_of(r, "gee", "brier");
  const bool pass = ab >= aq - 0.01 && aq - 0.01 >= ag + 0.01 && slope >= 0.85 && slope <= 1.10 && bb < bg;
  return {pass, fmt("AUC blas %.4f quad %.4f gee %.4f; blas slope %.3f (quad %.3f, gee %.3f); Brier blas %.4f gee "
                    "%.4f%s",
                    ab, aq, ag, slope, mean_of(r, "quad", "calibration_slope"),
                    mean_of(r, "gee", "calibration_slope"), bb, bg, failures_of(r).c_str())};
}

Outcome table3_recovery() {
  const auto& r = table_study();
  const double bias = mean_of(r, "blas", "mu_bias");
  const double cmu = mean_of(r, "blas", "mu_coverage_95"), csig = mean_of(r, "blas", "sigma_coverage_95");
  const double cnu = mean_of(r, "blas", "nu_coverage_95"), ctau = mean_of(r, "blas", "tau_coverage_95");
  const bool pass = std::abs(bias) < 0.1 && cmu >= 80 && cmu <= 100 && csig >= 80 && csig <= 100 && cnu > 70 &&
                    ctau > 70;
  return {pass, fmt("blas mu bias %.4f, coverage mu %.1f%% sigma %.1f%% nu %.1f%% tau %.1f%% (quad mu bias %.4f, "
                    "coverage %.1f%%)",
                    bias, cmu, csig, cnu, ctau, mean_of(r, "quad", "mu_bias"), mean_of(r, "quad", "mu_coverage_95"))};
}

Outcome misspecification() {
  SimDesign d;
  d.n_subjects = 250;
  d.replications = 10;
  d.scenario = Scenario::SkewT;
  const ReplicationReport r = study(d, {"quad", "gee"});
  const double sq = mean_of(r, "quad", "calibration_slope"), sg = mean_of(r, "gee", "calibration_slope");
  return {sq > sg && sg < 0.9, fmt("calibration slope quad %.3f gee %.3f; AUC quad %.4f gee %.4f%s", sq, sg,
                                   mean_of(r, "quad", "auc"), mean_of(r, "gee", "auc"), failures_of(r).c_str())};
}

Outcome variant_check() {
  SimDesign d;
  d.n_subjects = 250;
  d.replications = 10;
  d.time_trend[index(Moment::Skew)] = 0.3;
  const ReplicationReport r = study(d, {"blas", "blas_notail"});
  const double full = mean_of(r, "blas", "auc"), notail = mean_of(r, "blas_notail", "auc");
  return {full - notail >= 0.01,
          fmt("AUC full %.4f notail %.4f, difference %.4f%s", full, notail, full - notail, failures_of(r).c_str())};
}

int sh(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    files[fs::relative(e.path(), root).string()] = buf.str();
  }
  return files;
}

Outcome cli_determinism() {
  const fs::path base = fs::temp_directory_path() / ("latmom_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(base);
  const std::string cli = LATMOM_CLI;
  const std::vector<std::string> steps{
      "simulate --n-subjects 40 --n-times 4 --seed 5 --out sim",
      "build-surface --set surface.points=[8,4,6,5] --mc-draws 500 --out surf",
      "fit --model blas --panel sim/panel.csv --chains 2 --iterations 300 --warmup 150 --out fit_blas",
      "fit --model quad --panel sim/panel.csv --surface surf/surface.bin --chains 2 --iterations 300 --warmup 150 "
      "--out fit_quad",
      "fit --model gee --panel sim/panel.csv --out fit_gee",
      "fit --model glmm --panel sim/panel.csv --out fit_glmm",
      "evaluate --panel sim/panel.csv --probs fit_blas/probs.csv --truth sim/truth.csv --moments "
      "fit_blas/moments.csv --out eval",
      "replicate --replications 2 --estimators blas quad gee glmm --surface surf/surface.bin --set "
      "design.n_subjects=40 --set design.n_times=4 --set sampler.chains=2 --set sampler.iterations=200 --set "
      "sampler.warmup=100 --out rep",
      "report --panel sim/panel.csv --draws fit_blas/draws.csv --out report",
      "config --seed 9 > config.json",
  };
  std::vector<std::map<std::string, std::string>> runs;
  for (int run = 0; run < 2; ++run) {
    const fs::path dir = base / ("run" + std::to_string(run));
    fs::create_directories(dir);
    for (const auto& s : steps) {
      const std::string quiet = s.find('>') == std::string::npos ? " > /dev/null" : "";
      if (sh("cd " + dir.string() + " && " + cli + " " + s + quiet + " 2>> stderr.log") != 0) {
        fs::remove_all(base);
        return {false, "command failed: latmom " + s};
      }
    }
    fs::remove(dir / "stderr.log");
    runs.push_back(snapshot(dir));
  }
  fs::remove_all(base);
  std::vector<std::string> differing;
  for (const auto& [name, bytes] : runs[0]) {
    const auto it = runs[1].find(name);
    if (it == runs[1].end() || it->second != bytes) differing.push_back(name);
  }
  const bool same_set = runs[0].size() == runs[1].size();
  std::string detail = fmt("%zu files across %zu commands", runs[0].size(), steps.size());
  for (const auto& d : differing) detail += ", differs: " + d;
  return {same_set && differing.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"SAS exactness", sas_exactness},
      {"event-probability oracle", event_probability_oracle},
      {"gradient correctness", gradient_check},
      {"surface fidelity", surface_fidelity},
      {"sampler sanity", sampler_sanity},
      {"predictive ordering", table2_ordering},
      {"moment recovery", table3_recovery},
      {"misspecification robustness", misspecification},
      {"variant check", variant_check},
      {"CLI determinism", cli_determinism},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %-28s %s  %s [%.0f s]\n", id, criteria[k].first, o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
