#include "latmom/hmc.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <thread>

#include "latmom/errors.hpp"
#include "latmom/model.hpp"
#include "latmom/rng.hpp"

namespace latmom {

namespace {

constexpr double kDivergenceEnergy = 1000.0;

// Stan-style dual averaging of log step size.
class DualAveraging {
 public:
  explicit DualAveraging(double delta) : delta_(delta) {}

  void restart(double epsilon) {
    mu_ = std::log(10.0 * epsilon);
    s_bar_ = 0.0;
    x_bar_ = 0.0;
    counter_ = 0;
  }

  double update(double accept_stat) {
    ++counter_;
    const double n = static_cast<double>(counter_);
    const double eta = 1.0 / (n + kT0);
    s_bar_ = (1.0 - eta) * s_bar_ + eta * (delta_ - accept_stat);
    const double x = mu_ - s_bar_ * std::sqrt(n) / kGamma;
    const double w = std::pow(n, -kKappa);
    x_bar_ = w * x + (1.0 - w) * x_bar_;
    return std::exp(x);
  }

  double final_step() const { return std::exp(x_bar_); }

 private:
  static constexpr double kGamma = 0.05;
  static constexpr double kT0 = 10.0;
  static constexpr double kKappa = 0.75;
  double delta_;
  double mu_ = 0.0;
  double s_bar_ = 0.0;
  double x_bar_ = 0.0;
  std::size_t counter_ = 0;
};

// Slow-window schedule for metric adaptation (75 / 25-doubling / 50).
struct WindowSchedule {
  std::size_t init_buffer = 0;
  std::size_t term_buffer = 0;
  std::size_t base_window = 0;
  bool adapt_metric = false;

  explicit WindowSchedule(std::size_t warmup) {
    if (warmup < 20) return;
    adapt_metric = true;
    init_buffer = 75;
    term_buffer = 50;
    base_window = 25;
    if (init_buffer + term_buffer + base_window > warmup) {
      init_buffer = static_cast<std::size_t>(0.15 * static_cast<double>(warmup));
      term_buffer = static_cast<std::size_t>(0.1 * static_cast<double>(warmup));
      base_window = warmup - init_buffer - term_buffer;
    }
  }
};

struct ChainResult {
  Eigen::MatrixXd draws;
  std::vector<double> log_density;
  std::size_t divergences = 0;
  double step_size = 0.0;
  double accept_rate = 0.0;
  Eigen::VectorXd inverse_metric;
  std::string error;
};

class Chain {
 public:
  Chain(const LogDensityFn& target, std::size_t dim, const SamplerConfig& cfg, std::uint64_t seed)
      : target_(target),
        dim_(static_cast<Eigen::Index>(dim)),
        cfg_(cfg),
        rng_(seed),
        inv_metric_(Eigen::VectorXd::Ones(dim_)),
        dual_(cfg.target_accept) {}

  ChainResult run() {
    ChainResult out;
    initialize();
    epsilon_ = find_initial_step();
    dual_.restart(epsilon_);

    const WindowSchedule sched(cfg_.warmup);
    std::size_t window_size = sched.base_window;
    std::size_t window_end = sched.init_buffer + window_size;
    if (sched.adapt_metric && window_end + sched.term_buffer + 2 * window_size > cfg_.warmup) {
      window_end = cfg_.warmup - sched.term_buffer;
    }
    Eigen::VectorXd w_mean = Eigen::VectorXd::Zero(dim_);
    Eigen::VectorXd w_m2 = Eigen::VectorXd::Zero(dim_);
    std::size_t w_count = 0;

    const std::size_t kept = cfg_.iterations - cfg_.warmup;
    out.draws.resize(static_cast<Eigen::Index>(kept), dim_);
    out.log_density.reserve(kept);
    double accept_sum = 0.0;

    for (std::size_t it = 0; it < cfg_.iterations; ++it) {
      bool divergent = false;
      const double accept_stat = transition(divergent);
      if (it < cfg_.warmup) {
        epsilon_ = dual_.update(accept_stat);
        if (sched.adapt_metric && it >= sched.init_buffer && it < cfg_.warmup - sched.term_buffer) {
          ++w_count;
          const Eigen::VectorXd delta = q_ - w_mean;
          w_mean += delta / static_cast<double>(w_count);
          w_m2 += delta.cwiseProduct(q_ - w_mean);
          if (it + 1 == window_end) {
            const double n = static_cast<double>(w_count);
            const Eigen::VectorXd var = w_m2 / std::max(n - 1.0, 1.0);
            inv_metric_ = (n / (n + 5.0)) * var.array() + 1e-3 * (5.0 / (n + 5.0));
            w_mean.setZero();
            w_m2.setZero();
            w_count = 0;
            window_size *= 2;
            window_end = it + 1 + window_size;
            if (window_end + sched.term_buffer + 2 * window_size > cfg_.warmup) {
              window_end = cfg_.warmup - sched.term_buffer;
            }
            epsilon_ = find_initial_step();
            dual_.restart(epsilon_);
          }
        }
        if (it + 1 == cfg_.warmup) epsilon_ = dual_.final_step();
      } else {
        const auto row = static_cast<Eigen::Index>(it - cfg_.warmup);
        out.draws.row(row) = q_.transpose();
        out.log_density.push_back(logp_);
        accept_sum += accept_stat;
        if (divergent) ++out.divergences;
      }
    }
    if (cfg_.warmup == 0) epsilon_ = std::max(epsilon_, 1e-12);
    out.step_size = epsilon_;
    out.accept_rate = kept > 0 ? accept_sum / static_cast<double>(kept) : 0.0;
    out.inverse_metric = inv_metric_;
    return out;
  }

 private:
  void initialize() {
    std::uniform_real_distribution<double> unif(-cfg_.init_radius, cfg_.init_radius);
    for (int attempt = 0; attempt < 100; ++attempt) {
      q_.resize(dim_);
      for (Eigen::Index j = 0; j < dim_; ++j) q_[j] = unif(rng_);
      logp_ = target_(q_, &grad_);
      if (std::isfinite(logp_) && grad_.allFinite()) return;
    }
    throw ComputationError("could not find a finite initial point for the sampler");
  }

  double hamiltonian(const Eigen::VectorXd& p, double logp) const {
    return -logp + 0.5 * p.cwiseProduct(inv_metric_).dot(p);
  }

  Eigen::VectorXd draw_momentum() {
    std::normal_distribution<double> z;
    Eigen::VectorXd p(dim_);
    for (Eigen::Index j = 0; j < dim_; ++j) p[j] = z(rng_) / std::sqrt(inv_metric_[j]);
    return p;
  }

  // One leapfrog step in place; returns false on a non-finite density.
  bool leapfrog(Eigen::VectorXd& q, Eigen::VectorXd& p, Eigen::VectorXd& grad, double& logp,
                double eps) const {
    p += 0.5 * eps * grad;
    q += eps * inv_metric_.cwiseProduct(p);
    logp = target_(q, &grad);
    if (!std::isfinite(logp) || !grad.allFinite()) return false;
    p += 0.5 * eps * grad;
    return true;
  }

  double find_initial_step() {
    double eps = epsilon_ > 0.0 ? epsilon_ : 1.0;
    auto trial = [&](double e) {
      Eigen::VectorXd q = q_;
      Eigen::VectorXd p = draw_momentum();
      Eigen::VectorXd g = grad_;
      double lp = logp_;
      const double h0 = hamiltonian(p, logp_);
      if (!leapfrog(q, p, g, lp, e)) return -std::numeric_limits<double>::infinity();
      const double h = hamiltonian(p, lp);
      return std::isfinite(h) ? h0 - h : -std::numeric_limits<double>::infinity();
    };
    double delta_h = trial(eps);
    const int direction = delta_h > std::log(0.8) ? 1 : -1;
    for (int k = 0; k < 60; ++k) {
      eps = direction == 1 ? 2.0 * eps : 0.5 * eps;
      delta_h = trial(eps);
      if (direction == 1 && !(delta_h > std::log(0.8))) break;
      if (direction == -1 && delta_h > std::log(0.8)) break;
      if (eps < 1e-10 || eps > 1e7) break;
    }
    return eps;
  }

  double transition(bool& divergent) {
    std::uniform_int_distribution<std::size_t> steps(1, cfg_.max_leapfrog);
    const std::size_t n_steps = steps(rng_);
    Eigen::VectorXd p = draw_momentum();
    Eigen::VectorXd q = q_;
    Eigen::VectorXd g = grad_;
    double lp = logp_;
    const double h0 = hamiltonian(p, logp_);
    divergent = false;
    for (std::size_t s = 0; s < n_steps; ++s) {
      if (!leapfrog(q, p, g, lp, epsilon_)) {
        divergent = true;
        break;
      }
      if (hamiltonian(p, lp) - h0 > kDivergenceEnergy) {
        divergent = true;
        break;
      }
    }
    if (divergent) return 0.0;
    const double h = hamiltonian(p, lp);
    const double accept_stat = std::min(1.0, std::exp(h0 - h));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    if (unif(rng_) < accept_stat) {
      q_ = std::move(q);
      grad_ = std::move(g);
      logp_ = lp;
    }
    return accept_stat;
  }

  const LogDensityFn& target_;
  Eigen::Index dim_;
  const SamplerConfig& cfg_;
  std::mt19937_64 rng_;
  Eigen::VectorXd inv_metric_;
  DualAveraging dual_;
  Eigen::VectorXd q_;
  Eigen::VectorXd grad_;
  double logp_ = 0.0;
  double epsilon_ = 0.0;
};

// Autocovariances up to `max_lag` (biased estimator, divisor n).
std::vector<double> autocovariance(const Eigen::VectorXd& x, std::size_t max_lag) {
  const auto n = x.size();
  const double mean = x.mean();
  std::vector<double> acov(max_lag + 1, 0.0);
  for (std::size_t lag = 0; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (Eigen::Index t = 0; t + static_cast<Eigen::Index>(lag) < n; ++t) {
      acc += (x[t] - mean) * (x[t + static_cast<Eigen::Index>(lag)] - mean);
    }
    acov[lag] = acc / static_cast<double>(n);
  }
  return acov;
}

double variance(const Eigen::VectorXd& x) {
  if (x.size() < 2) return 0.0;
  return (x.array() - x.mean()).square().sum() / static_cast<double>(x.size() - 1);
}

}  // namespace

void SamplerConfig::validate() const {
  if (chains < 1) throw ConfigError("sampler needs at least one chain");
  if (!(warmup < iterations)) throw ConfigError("warmup must be smaller than iterations");
  if (!(target_accept > 0.0 && target_accept < 1.0)) {
    throw ConfigError("target acceptance must lie in (0, 1)");
  }
  if (max_leapfrog < 1) throw ConfigError("max_leapfrog must be at least 1");
  if (!(init_radius > 0.0)) throw ConfigError("init_radius must be positive");
}

Eigen::VectorXd PosteriorDraws::chain_column(std::size_t chain, std::size_t param) const {
  return values.block(static_cast<Eigen::Index>(chain * per_chain), static_cast<Eigen::Index>(param),
                      static_cast<Eigen::Index>(per_chain), 1);
}

PosteriorDraws hmc_sample(const LogDensityFn& target, std::size_t dim,
                          std::vector<std::string> names, const SamplerConfig& cfg) {
  cfg.validate();
  if (names.size() != dim) throw ConfigError("parameter names do not match the dimension");
  std::vector<ChainResult> results(cfg.chains);
  auto run_chain = [&](std::size_t c) {
    try {
      Chain chain(target, dim, cfg, derive_seed(cfg.seed, 0x484d43, c));
      results[c] = chain.run();
    } catch (const std::exception& e) {
      results[c].error = e.what();
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(cfg.threads, cfg.chains));
  if (threads == 1) {
    for (std::size_t c = 0; c < cfg.chains; ++c) run_chain(c);
  } else {
    for (std::size_t start = 0; start < cfg.chains; start += threads) {
      std::vector<std::thread> pool;
      for (std::size_t c = start; c < std::min(cfg.chains, start + threads); ++c) {
        pool.emplace_back(run_chain, c);
      }
      for (auto& t : pool) t.join();
    }
  }

  PosteriorDraws out;
  out.names = std::move(names);
  out.chains = cfg.chains;
  out.per_chain = cfg.iterations - cfg.warmup;
  out.values.resize(static_cast<Eigen::Index>(out.chains * out.per_chain),
                    static_cast<Eigen::Index>(dim));
  for (std::size_t c = 0; c < cfg.chains; ++c) {
    if (!results[c].error.empty()) {
      throw ComputationError("chain " + std::to_string(c + 1) + " failed: " + results[c].error);
    }
    out.values.block(static_cast<Eigen::Index>(c * out.per_chain), 0,
                     static_cast<Eigen::Index>(out.per_chain), static_cast<Eigen::Index>(dim)) =
        results[c].draws;
    out.log_density.insert(out.log_density.end(), results[c].log_density.begin(),
                           results[c].log_density.end());
    out.divergences += results[c].divergences;
    out.step_size.push_back(results[c].step_size);
    out.accept_rate.push_back(results[c].accept_rate);
    out.inverse_metric.push_back(results[c].inverse_metric);
  }
  const double total = static_cast<double>(out.chains * out.per_chain);
  if (static_cast<double>(out.divergences) > cfg.max_divergent_fraction * total) {
    std::ostringstream msg;
    msg << out.divergences << " of " << out.chains * out.per_chain
        << " post-warmup transitions diverged";
    throw ComputationError(msg.str());
  }
  return out;
}

PosteriorDraws hmc_run(const LogPosterior& posterior, const SamplerConfig& cfg) {
  LogDensityFn target = [&posterior](const Eigen::VectorXd& q, Eigen::VectorXd* grad) {
    return posterior(q, grad);
  };
  return hmc_sample(target, posterior.dim(), posterior.layout().names(), cfg);
}

double split_rhat(std::span<const Eigen::VectorXd> chains) {
  std::vector<Eigen::VectorXd> halves;
  for (const auto& c : chains) {
    const Eigen::Index half = c.size() / 2;
    if (half < 2) throw ConfigError("split R-hat needs at least 4 draws per chain");
    halves.emplace_back(c.head(half));
    halves.emplace_back(c.segment(c.size() - half, half));
  }
  const double m = static_cast<double>(halves.size());
  const double n = static_cast<double>(halves.front().size());
  double grand = 0.0;
  for (const auto& h : halves) grand += h.mean();
  grand /= m;
  double between = 0.0;
  double within = 0.0;
  for (const auto& h : halves) {
    between += (h.mean() - grand) * (h.mean() - grand);
    within += variance(h);
  }
  between *= n / (m - 1.0);
  within /= m;
  if (within <= 0.0) return between <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double var_plus = (n - 1.0) / n * within + between / n;
  return std::sqrt(var_plus / within);
}

double effective_sample_size(std::span<const Eigen::VectorXd> chains) {
  const std::size_t m = chains.size();
  const std::size_t n = static_cast<std::size_t>(chains.front().size());
  if (n < 4) return static_cast<double>(m * n);
  std::vector<double> means(m);
  std::vector<double> vars(m);
  for (std::size_t c = 0; c < m; ++c) {
    means[c] = chains[c].mean();
    vars[c] = variance(chains[c]);
  }
  double grand = 0.0;
  for (double v : means) grand += v;
  grand /= static_cast<double>(m);
  double within = 0.0;
  double between = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    within += vars[c];
    between += (means[c] - grand) * (means[c] - grand);
  }
  within /= static_cast<double>(m);
  const double dn = static_cast<double>(n);
  between = m > 1 ? between * dn / static_cast<double>(m - 1) : 0.0;
  const double var_plus = (dn - 1.0) / dn * within + between / dn;
  if (!(var_plus > 0.0)) return static_cast<double>(m * n);

  // Geyer's initial monotone sequence on paired autocorrelations, computed
  // lazily in blocks so short-memory chains stay cheap.
  std::vector<std::vector<double>> acov(m);
  std::size_t computed = 0;
  auto rho_at = [&](std::size_t lag) {
    if (lag > computed || computed == 0) {
      const std::size_t target = std::min(n - 1, std::max<std::size_t>(2 * lag + 16, 64));
      for (std::size_t c = 0; c < m; ++c) acov[c] = autocovariance(chains[c], target);
      computed = target;
    }
    double mean_acov = 0.0;
    for (std::size_t c = 0; c < m; ++c) mean_acov += acov[c][lag];
    mean_acov /= static_cast<double>(m);
    return 1.0 - (within - mean_acov * dn / (dn - 1.0)) / var_plus;
  };

  double tau = -1.0;
  double prev_pair = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = rho_at(2 * k) + rho_at(2 * k + 1);
    if (pair < 0.0) break;
    pair = std::min(pair, prev_pair);
    prev_pair = pair;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / std::log10(static_cast<double>(m * n)));
  return static_cast<double>(m * n) / tau;
}

std::vector<ParameterDiagnostic> diagnostics(const PosteriorDraws& draws) {
  if (draws.chains < 2) throw ConfigError("diagnostics need at least two chains");
  std::vector<ParameterDiagnostic> out;
  out.reserve(draws.dim());
  std::vector<Eigen::VectorXd> chains(draws.chains);
  for (std::size_t j = 0; j < draws.dim(); ++j) {
    for (std::size_t c = 0; c < draws.chains; ++c) chains[c] = draws.chain_column(c, j);
    const double rhat = split_rhat(chains);
    out.push_back({draws.names[j], rhat, effective_sample_size(chains), rhat > 1.05});
  }
  return out;
}

void write_draws_csv(std::ostream& out, const PosteriorDraws& draws) {
  out << "chain,draw,lp__";
  for (const auto& name : draws.names) out << ',' << name;
  out << '\n';
  out << std::setprecision(17);
  for (std::size_t c = 0; c < draws.chains; ++c) {
    for (std::size_t d = 0; d < draws.per_chain; ++d) {
      const auto row = static_cast<Eigen::Index>(c * draws.per_chain + d);
      out << c + 1 << ',' << d + 1 << ',' << draws.log_density[static_cast<std::size_t>(row)];
      for (Eigen::Index j = 0; j < draws.values.cols(); ++j) out << ',' << draws.values(row, j);
      out << '\n';
    }
  }
}

}  // namespace latmom
