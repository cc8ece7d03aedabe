#include "latmom/latent.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "latmom/errors.hpp"

namespace latmom {

namespace {

constexpr double kLogClamp = 700.0;

}  // namespace

std::string_view moment_name(Moment m) {
  switch (m) {
    case Moment::Location: return "mu";
    case Moment::Scale: return "sigma";
    case Moment::Skew: return "nu";
    case Moment::Tail: return "tau";
  }
  return "?";
}

Moment moment_from_name(std::string_view name) {
  for (Moment m : kAllMoments) {
    if (moment_name(m) == name) return m;
  }
  throw ConfigError("unknown moment '" + std::string(name) + "' (expected mu, sigma, nu or tau)");
}

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::Full: return "full";
    case Variant::NoSkew: return "noskew";
    case Variant::NoTail: return "notail";
  }
  return "?";
}

Variant variant_from_name(std::string_view name) {
  if (name == "full") return Variant::Full;
  if (name == "noskew") return Variant::NoSkew;
  if (name == "notail") return Variant::NoTail;
  throw ConfigError("unknown variant '" + std::string(name) + "' (expected full, noskew, notail)");
}

std::optional<std::size_t> PanelData::covariate_index(std::string_view name) const {
  auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
  if (it == covariate_names.end()) return std::nullopt;
  return static_cast<std::size_t>(it - covariate_names.begin());
}

std::optional<std::size_t> PanelData::subject_index(std::string_view id) const {
  auto it = std::find(subject_ids.begin(), subject_ids.end(), id);
  if (it == subject_ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - subject_ids.begin());
}

PanelData make_panel(std::span<const std::string> subject_ids, std::span<const double> times,
                     std::span<const int> y, std::vector<std::string> covariate_names,
                     const Eigen::MatrixXd& covariates) {
  const std::size_t n = subject_ids.size();
  if (times.size() != n || y.size() != n || static_cast<std::size_t>(covariates.rows()) != n) {
    throw DataError("panel columns have different lengths");
  }
  if (static_cast<std::size_t>(covariates.cols()) != covariate_names.size()) {
    throw DataError("covariate matrix width does not match the covariate names");
  }
  if (n == 0) throw DataError("panel has no observations");

  PanelData out;
  std::unordered_map<std::string, std::size_t> first_seen;
  std::vector<std::size_t> subj(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto [it, inserted] = first_seen.try_emplace(subject_ids[r], out.subject_ids.size());
    if (inserted) out.subject_ids.push_back(subject_ids[r]);
    subj[r] = it->second;
    if (y[r] != 0 && y[r] != 1) {
      std::ostringstream msg;
      msg << "row " << r + 1 << ": outcome must be 0 or 1, got " << y[r];
      throw DataError(msg.str());
    }
    if (!std::isfinite(times[r])) {
      std::ostringstream msg;
      msg << "row " << r + 1 << ": time is not finite";
      throw DataError(msg.str());
    }
    for (Eigen::Index c = 0; c < covariates.cols(); ++c) {
      if (!std::isfinite(covariates(static_cast<Eigen::Index>(r), c))) {
        std::ostringstream msg;
        msg << "row " << r + 1 << ": covariate '" << covariate_names[c] << "' is not finite";
        throw DataError(msg.str());
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (subj[a] != subj[b]) return subj[a] < subj[b];
    return times[a] < times[b];
  });

  out.covariate_names = std::move(covariate_names);
  out.covariates.resize(static_cast<Eigen::Index>(n), covariates.cols());
  out.subject.resize(n);
  out.time.resize(n);
  out.y.resize(n);
  out.rows_of_subject.assign(out.subject_ids.size(), {});
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t src = order[r];
    out.subject[r] = subj[src];
    out.time[r] = times[src];
    out.y[r] = y[src];
    out.covariates.row(static_cast<Eigen::Index>(r)) =
        covariates.row(static_cast<Eigen::Index>(src));
    if (r > 0 && out.subject[r] == out.subject[r - 1] && out.time[r] == out.time[r - 1]) {
      throw DataError("subject '" + out.subject_ids[out.subject[r]] +
                      "' has two observations at the same time");
    }
    out.rows_of_subject[out.subject[r]].push_back(r);
  }
  return out;
}

void set_membership(PanelData& data, std::vector<std::string> group_ids, Eigen::MatrixXd weights,
                    double tolerance) {
  if (static_cast<std::size_t>(weights.rows()) != data.n_subjects() ||
      static_cast<std::size_t>(weights.cols()) != group_ids.size()) {
    throw DataError("membership matrix must be subjects x groups");
  }
  for (Eigen::Index i = 0; i < weights.rows(); ++i) {
    if ((weights.row(i).array() < 0.0).any() || !weights.row(i).allFinite()) {
      throw DataError("membership weights for subject '" + data.subject_ids[i] +
                      "' must be finite and non-negative");
    }
    const double total = weights.row(i).sum();
    if (std::abs(total - 1.0) > tolerance) {
      std::ostringstream msg;
      msg << "membership weights for subject '" << data.subject_ids[i] << "' sum to " << total
          << ", expected 1";
      throw DataError(msg.str());
    }
  }
  data.group_ids = std::move(group_ids);
  data.membership = std::move(weights);
}

bool MomentSpec::active(Moment m) const {
  switch (m) {
    case Moment::Location:
    case Moment::Scale: return true;
    case Moment::Skew: return variant == Variant::Full;
    case Moment::Tail: return variant != Variant::NoTail;
  }
  return false;
}

ModelDesign::ModelDesign(const PanelData& data, MomentSpec spec)
    : data_(&data), spec_(std::move(spec)) {
  const auto n = static_cast<Eigen::Index>(data.n_obs());
  for (Moment m : kAllMoments) {
    const MomentRegression& reg = spec_[m];
    auto& names = names_[index(m)];
    auto& x = x_[index(m)];
    if (!active(m)) {
      x.resize(n, 0);
      continue;
    }
    const auto p = static_cast<Eigen::Index>(reg.columns.size() + (reg.intercept ? 1 : 0));
    x.resize(n, p);
    Eigen::Index col = 0;
    if (reg.intercept) {
      x.col(col++).setOnes();
      names.emplace_back("(Intercept)");
    }
    for (const auto& name : reg.columns) {
      auto idx = data.covariate_index(name);
      if (!idx) {
        throw DataError("covariate '" + name + "' requested for moment " +
                        std::string(moment_name(m)) + " is not in the panel");
      }
      x.col(col++) = data.covariates.col(static_cast<Eigen::Index>(*idx));
      names.push_back(name);
    }
    if (reg.effect == RandomEffect::Membership && !data.has_membership()) {
      throw ConfigError("moment " + std::string(moment_name(m)) +
                        " uses multiple-membership effects but the panel has no weights");
    }
  }
}

std::size_t ModelDesign::n_fixed(Moment m) const {
  return static_cast<std::size_t>(x_[index(m)].cols());
}

std::size_t ModelDesign::n_effects(Moment m) const {
  if (!active(m)) return 0;
  switch (spec_[m].effect) {
    case RandomEffect::None: return 0;
    case RandomEffect::Subject: return data_->n_subjects();
    case RandomEffect::Membership: return data_->group_ids.size();
  }
  return 0;
}

std::size_t ModelDesign::fixed_effect_count() const {
  std::size_t total = 0;
  for (Moment m : kAllMoments) total += n_fixed(m);
  return total;
}

std::size_t ModelDesign::random_effect_count() const {
  std::size_t total = 0;
  for (Moment m : kAllMoments) total += n_effects(m);
  return total;
}

void ModelDesign::check(const MomentCoefficients& coef) const {
  for (Moment m : kAllMoments) {
    if (!active(m)) continue;
    const MomentBlock& b = coef[m];
    auto fail = [&](const char* what) {
      throw DataError(std::string("coefficient dimension mismatch for moment ") +
                      std::string(moment_name(m)) + ": " + what);
    };
    if (static_cast<std::size_t>(b.beta.size()) != n_fixed(m)) fail("fixed effects");
    if (static_cast<std::size_t>(b.effects.size()) != n_effects(m)) fail("random effects");
    if (spec_[m].ar1) {
      if (static_cast<std::size_t>(b.ar_terms.size()) != data_->n_obs()) fail("AR(1) terms");
      if (!(std::abs(b.ar_rho) < 1.0)) fail("AR(1) coefficient outside (-1, 1)");
    }
  }
}

double linear_predictor(const ModelDesign& design, const MomentCoefficients& coef, Moment m,
                        std::size_t row) {
  if (!design.active(m)) return 0.0;
  const MomentBlock& b = coef[m];
  const auto& x = design.design(m);
  if (b.beta.size() != x.cols()) {
    throw DataError("coefficient dimension mismatch for moment " +
                    std::string(moment_name(m)));
  }
  const auto r = static_cast<Eigen::Index>(row);
  double eta = design.spec()[m].offset + x.row(r).dot(b.beta);
  const PanelData& data = design.data();
  switch (design.spec()[m].effect) {
    case RandomEffect::None: break;
    case RandomEffect::Subject: eta += b.effects[static_cast<Eigen::Index>(data.subject[row])]; break;
    case RandomEffect::Membership: {
      const auto s = static_cast<Eigen::Index>(data.subject[row]);
      Eigen::VectorXd w = data.membership.row(s).transpose();
      eta += mm_effect(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())),
                       std::span<const double>(b.effects.data(),
                                               static_cast<std::size_t>(b.effects.size())));
      break;
    }
  }
  if (design.spec()[m].ar1) eta += b.ar_terms[r];
  return eta;
}

SasParams apply_links(const RawPredictors& raw) {
  SasParams p;
  p.mu = raw[0];
  p.sigma = std::exp(std::clamp(raw[1], -kLogClamp, kLogClamp));
  p.nu = raw[2];
  p.tau = std::exp(std::clamp(raw[3], -kLogClamp, kLogClamp));
  return p;
}

double mm_effect(std::span<const double> weights, std::span<const double> gamma) {
  if (weights.size() != gamma.size()) {
    throw DataError("membership weights and group effects differ in length");
  }
  double total = 0.0;
  double acc = 0.0;
  for (std::size_t g = 0; g < weights.size(); ++g) {
    if (weights[g] < 0.0) throw DataError("negative membership weight");
    total += weights[g];
    acc += weights[g] * gamma[g];
  }
  if (std::abs(total - 1.0) > 1e-9) {
    std::ostringstream msg;
    msg << "membership weights sum to " << total << ", expected 1";
    throw DataError(msg.str());
  }
  return acc;
}

std::vector<double> ar1_simulate(std::size_t length, double rho, double scale,
                                 std::mt19937_64& rng) {
  if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("AR(1) requires |rho| < 1");
  if (!(scale > 0.0)) throw std::invalid_argument("AR(1) requires scale > 0");
  std::normal_distribution<double> z;
  std::vector<double> u(length);
  if (length == 0) return u;
  u[0] = scale / std::sqrt(1.0 - rho * rho) * z(rng);
  for (std::size_t t = 1; t < length; ++t) u[t] = rho * u[t - 1] + scale * z(rng);
  return u;
}

double ar1_logdensity(std::span<const double> path, double rho, double scale) {
  if (!(std::abs(rho) < 1.0)) throw std::invalid_argument("AR(1) requires |rho| < 1");
  if (!(scale > 0.0)) throw std::invalid_argument("AR(1) requires scale > 0");
  if (path.empty()) return 0.0;
  const double log_2pi = std::log(2.0 * std::numbers::pi);
  auto normal_lpdf = [&](double x, double sd) {
    return -0.5 * log_2pi - std::log(sd) - 0.5 * (x / sd) * (x / sd);
  };
  double lp = normal_lpdf(path[0], scale / std::sqrt(1.0 - rho * rho));
  for (std::size_t t = 1; t < path.size(); ++t) {
    lp += normal_lpdf(path[t] - rho * path[t - 1], scale);
  }
  return lp;
}

std::vector<SasParams> assemble_params(const ModelDesign& design, const MomentCoefficients& coef) {
  design.check(coef);
  const std::size_t n = design.data().n_obs();
  std::vector<SasParams> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    RawPredictors raw{};
    for (Moment m : kAllMoments) raw[index(m)] = linear_predictor(design, coef, m, r);
    out[r] = apply_links(raw);
  }
  return out;
}

}  // namespace latmom
