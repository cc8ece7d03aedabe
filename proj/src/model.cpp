#include "latmom/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "latmom/errors.hpp"

namespace latmom {

namespace {

const double kLogSqrt2Pi = 0.5 * std::log(2.0 * std::numbers::pi);
const double kProbitClamp = -normal_quantile(kProbClamp);

double std_normal_logpdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

// log(1 - tanh(x)^2), finite for large |x|
double log1m_tanh_sq(double x) {
  const double ax = std::abs(x);
  return std::log(4.0) - 2.0 * ax - 2.0 * std::log1p(std::exp(-2.0 * ax));
}

// log HC(e^k; s) + k and its derivative in k
// written through d = k - log s so that huge k stays finite
double log_scale_prior(double k, double s, double* dk) {
  const double y = 2.0 * (k - std::log(s));
  const double softplus = y > 0.0 ? y + std::log1p(std::exp(-y)) : std::log1p(std::exp(y));
  if (dk) *dk = 1.0 - 2.0 / (1.0 + std::exp(-y));
  return std::log(2.0 / (std::numbers::pi * s)) - softplus + k;
}

std::string indexed(std::string_view stem, Moment m, std::string_view label) {
  std::string out(stem);
  out += '_';
  out += moment_name(m);
  out += '[';
  out += label;
  out += ']';
  return out;
}

}  // namespace

double EventModel::probability(const RawPredictors& raw) const {
  return normal_cdf(probit(raw, nullptr, nullptr));
}

double ExactSasEvents::probit(const RawPredictors& raw, RawPredictors* grad,
                              bool* clamped) const {
  if (clamped) *clamped = false;
  const SasParams p = apply_links(raw);
  const double r = p.mu / p.sigma;
  const double a = stable_asinh(r);
  const double w = p.tau * a + p.nu;
  const double g = guarded_sinh(w);
  if (grad) {
    const double c = std::abs(w) < 700.0 ? std::cosh(w) : 0.0;
    const double h = std::hypot(1.0, r);
    (*grad)[0] = c * p.tau / (p.sigma * h);
    (*grad)[1] = -c * p.tau * r / h;
    (*grad)[2] = c;
    (*grad)[3] = c * p.tau * a;
  }
  return g;
}

double bernoulli_probit_loglik(int y, double g, double* dg) {
  const double signed_g = y == 1 ? g : -g;
  if (signed_g < -kProbitClamp) {
    if (dg) *dg = 0.0;
    return std::log(kProbClamp);
  }
  if (signed_g > kProbitClamp) {
    if (dg) *dg = 0.0;
    return std::log1p(-kProbClamp);
  }
  const double cdf = normal_cdf(signed_g);
  if (dg) {
    const double mills = normal_pdf(signed_g) / cdf;
    *dg = y == 1 ? mills : -mills;
  }
  return std::log(cdf);
}

double log_likelihood(const PanelData& data, std::span<const SasParams> params) {
  if (params.size() != data.n_obs()) {
    throw DataError("parameter table does not match the panel");
  }
  double ll = 0.0;
  for (std::size_t r = 0; r < params.size(); ++r) {
    ll += bernoulli_probit_loglik(data.y[r], sas_event_probit(params[r]));
  }
  return ll;
}

void PriorConfig::validate() const {
  for (double s : beta_scale) {
    if (!(s > 0.0)) throw ConfigError("prior scales for fixed effects must be positive");
  }
  if (!(effect_scale > 0.0) || !(mm_scale > 0.0) || !(ar_scale > 0.0)) {
    throw ConfigError("half-Cauchy prior scales must be positive");
  }
}

double half_cauchy_logpdf(double x, double scale) {
  if (x < 0.0) return -std::numeric_limits<double>::infinity();
  const double u = x / scale;
  return std::log(2.0 / (std::numbers::pi * scale)) - std::log1p(u * u);
}

ParameterLayout::ParameterLayout(const ModelDesign& design) : design_(&design) {
  const PanelData& data = design.data();
  for (Moment m : kAllMoments) {
    if (!design.active(m)) continue;
    MomentSlots& s = slots_[index(m)];
    s.beta = names_.size();
    s.n_beta = design.n_fixed(m);
    for (const auto& col : design.column_names(m)) names_.push_back(indexed("beta", m, col));

    const MomentRegression& reg = design.spec()[m];
    if (reg.effect != RandomEffect::None) {
      const bool by_group = reg.effect == RandomEffect::Membership;
      s.log_effect_scale = names_.size();
      names_.push_back(std::string(by_group ? "log_theta_" : "log_psi_") +
                       std::string(moment_name(m)));
      s.effects = names_.size();
      s.n_effects = design.n_effects(m);
      const auto& labels = by_group ? data.group_ids : data.subject_ids;
      for (const auto& id : labels) names_.push_back(indexed(by_group ? "zg" : "z", m, id));
    }
    if (reg.ar1) {
      s.atanh_rho = names_.size();
      names_.push_back("atanh_rho_" + std::string(moment_name(m)));
      s.log_ar_scale = names_.size();
      names_.push_back("log_omega_" + std::string(moment_name(m)));
      s.innovations = names_.size();
      s.n_innovations = data.n_obs();
      for (std::size_t r = 0; r < data.n_obs(); ++r) {
        std::ostringstream label;
        label << data.subject_ids[data.subject[r]] << '@' << data.time[r];
        names_.push_back(indexed("e", m, label.str()));
      }
    }
  }
}

MomentCoefficients ParameterLayout::unpack(const Eigen::VectorXd& state) const {
  if (static_cast<std::size_t>(state.size()) != dim()) {
    throw DataError("state vector has the wrong dimension");
  }
  const PanelData& data = design_->data();
  MomentCoefficients coef;
  for (Moment m : kAllMoments) {
    if (!design_->active(m)) continue;
    const MomentSlots& s = slots_[index(m)];
    MomentBlock& b = coef[m];
    b.beta = state.segment(static_cast<Eigen::Index>(s.beta), static_cast<Eigen::Index>(s.n_beta));
    if (s.log_effect_scale) {
      b.effect_scale = std::exp(state[static_cast<Eigen::Index>(*s.log_effect_scale)]);
      b.effects = b.effect_scale * state.segment(static_cast<Eigen::Index>(s.effects),
                                                 static_cast<Eigen::Index>(s.n_effects));
    }
    if (s.atanh_rho) {
      b.ar_rho = std::tanh(state[static_cast<Eigen::Index>(*s.atanh_rho)]);
      b.ar_scale = std::exp(state[static_cast<Eigen::Index>(*s.log_ar_scale)]);
      const double s0 = b.ar_scale / std::sqrt(1.0 - b.ar_rho * b.ar_rho);
      b.ar_terms.resize(static_cast<Eigen::Index>(data.n_obs()));
      for (const auto& rows : data.rows_of_subject) {
        for (std::size_t k = 0; k < rows.size(); ++k) {
          const auto r = static_cast<Eigen::Index>(rows[k]);
          const double e = state[static_cast<Eigen::Index>(s.innovations) + r];
          b.ar_terms[r] = k == 0 ? s0 * e
                                 : b.ar_rho * b.ar_terms[static_cast<Eigen::Index>(rows[k - 1])] +
                                       b.ar_scale * e;
        }
      }
    }
  }
  return coef;
}

Eigen::VectorXd ParameterLayout::pack(const MomentCoefficients& coef) const {
  design_->check(coef);
  const PanelData& data = design_->data();
  Eigen::VectorXd state = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim()));
  for (Moment m : kAllMoments) {
    if (!design_->active(m)) continue;
    const MomentSlots& s = slots_[index(m)];
    const MomentBlock& b = coef[m];
    state.segment(static_cast<Eigen::Index>(s.beta), static_cast<Eigen::Index>(s.n_beta)) = b.beta;
    if (s.log_effect_scale) {
      if (!(b.effect_scale > 0.0)) throw DataError("random-effect scale must be positive");
      state[static_cast<Eigen::Index>(*s.log_effect_scale)] = std::log(b.effect_scale);
      state.segment(static_cast<Eigen::Index>(s.effects), static_cast<Eigen::Index>(s.n_effects)) =
          b.effects / b.effect_scale;
    }
    if (s.atanh_rho) {
      if (!(b.ar_scale > 0.0)) throw DataError("AR(1) innovation scale must be positive");
      state[static_cast<Eigen::Index>(*s.atanh_rho)] = std::atanh(b.ar_rho);
      state[static_cast<Eigen::Index>(*s.log_ar_scale)] = std::log(b.ar_scale);
      const double s0 = b.ar_scale / std::sqrt(1.0 - b.ar_rho * b.ar_rho);
      for (const auto& rows : data.rows_of_subject) {
        for (std::size_t k = 0; k < rows.size(); ++k) {
          const auto r = static_cast<Eigen::Index>(rows[k]);
          const double e =
              k == 0 ? b.ar_terms[r] / s0
                     : (b.ar_terms[r] -
                        b.ar_rho * b.ar_terms[static_cast<Eigen::Index>(rows[k - 1])]) /
                           b.ar_scale;
          state[static_cast<Eigen::Index>(s.innovations) + r] = e;
        }
      }
    }
  }
  return state;
}

double log_prior(const ParameterLayout& layout, const Eigen::VectorXd& state,
                 const PriorConfig& prior, Eigen::VectorXd* grad) {
  const ModelDesign& design = layout.design();
  if (grad) grad->setZero(static_cast<Eigen::Index>(layout.dim()));
  double lp = 0.0;
  auto standard_block = [&](std::size_t start, std::size_t count) {
    for (std::size_t j = start; j < start + count; ++j) {
      const double z = state[static_cast<Eigen::Index>(j)];
      lp += std_normal_logpdf(z);
      if (grad) (*grad)[static_cast<Eigen::Index>(j)] -= z;
    }
  };
  auto scale_param = [&](std::size_t j, double s) {
    double dk = 0.0;
    lp += log_scale_prior(state[static_cast<Eigen::Index>(j)], s, grad ? &dk : nullptr);
    if (grad) (*grad)[static_cast<Eigen::Index>(j)] += dk;
  };

  for (Moment m : kAllMoments) {
    if (!design.active(m)) continue;
    const MomentSlots& s = layout.slots(m);
    const double lambda = prior.beta_scale[index(m)];
    for (std::size_t j = s.beta; j < s.beta + s.n_beta; ++j) {
      const double b = state[static_cast<Eigen::Index>(j)];
      lp += std_normal_logpdf(b / lambda) - std::log(lambda);
      if (grad) (*grad)[static_cast<Eigen::Index>(j)] -= b / (lambda * lambda);
    }
    if (s.log_effect_scale) {
      const bool by_group = design.spec()[m].effect == RandomEffect::Membership;
      scale_param(*s.log_effect_scale, by_group ? prior.mm_scale : prior.effect_scale);
      standard_block(s.effects, s.n_effects);
    }
    if (s.atanh_rho) {
      const double eta = state[static_cast<Eigen::Index>(*s.atanh_rho)];
      lp += std::log(0.5) + log1m_tanh_sq(eta);
      if (grad) (*grad)[static_cast<Eigen::Index>(*s.atanh_rho)] -= 2.0 * std::tanh(eta);
      scale_param(*s.log_ar_scale, prior.ar_scale);
      standard_block(s.innovations, s.n_innovations);
    }
  }
  return lp;
}

LogPosterior::LogPosterior(const ModelDesign& design, PriorConfig prior,
                           std::shared_ptr<const EventModel> events)
    : design_(&design), prior_(prior), events_(std::move(events)), layout_(design) {
  prior_.validate();
  if (!events_) throw ConfigError("log-posterior needs an event model");
}

void LogPosterior::reset_counters() const {
  clamped_ = 0;
  evaluated_ = 0;
}

std::vector<RawPredictors> LogPosterior::raw_predictors(const Eigen::VectorXd& state) const {
  const MomentCoefficients coef = layout_.unpack(state);
  const std::size_t n = design_->data().n_obs();
  std::vector<RawPredictors> out(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (Moment m : kAllMoments) out[r][index(m)] = linear_predictor(*design_, coef, m, r);
  }
  return out;
}

double LogPosterior::likelihood_part(const Eigen::VectorXd& state, Eigen::VectorXd* grad) const {
  const PanelData& data = design_->data();
  const auto n = static_cast<Eigen::Index>(data.n_obs());
  const auto n_subj = static_cast<Eigen::Index>(data.n_subjects());

  std::array<Eigen::VectorXd, kMoments> eta;
  std::array<Eigen::VectorXd, kMoments> subject_effect;
  std::array<Eigen::VectorXd, kMoments> group_effect;
  std::array<Eigen::VectorXd, kMoments> ar_terms;
  std::array<double, kMoments> scale{};
  std::array<double, kMoments> rho{};
  std::array<double, kMoments> omega{};

  for (Moment m : kAllMoments) {
    const std::size_t k = index(m);
    if (!design_->active(m)) continue;
    const MomentSlots& s = layout_.slots(m);
    const MomentRegression& reg = design_->spec()[m];
    eta[k] = design_->design(m) *
             state.segment(static_cast<Eigen::Index>(s.beta), static_cast<Eigen::Index>(s.n_beta));
    eta[k].array() += reg.offset;
    if (s.log_effect_scale) {
      scale[k] = std::exp(state[static_cast<Eigen::Index>(*s.log_effect_scale)]);
      const Eigen::VectorXd effects =
          scale[k] * state.segment(static_cast<Eigen::Index>(s.effects),
                                   static_cast<Eigen::Index>(s.n_effects));
      if (reg.effect == RandomEffect::Membership) {
        group_effect[k] = effects;
        subject_effect[k] = data.membership * effects;
      } else {
        subject_effect[k] = effects;
      }
      for (Eigen::Index r = 0; r < n; ++r) {
        eta[k][r] += subject_effect[k][static_cast<Eigen::Index>(data.subject[r])];
      }
    }
    if (s.atanh_rho) {
      rho[k] = std::tanh(state[static_cast<Eigen::Index>(*s.atanh_rho)]);
      omega[k] = std::exp(state[static_cast<Eigen::Index>(*s.log_ar_scale)]);
      const double s0 = omega[k] / std::sqrt(1.0 - rho[k] * rho[k]);
      ar_terms[k].resize(n);
      for (const auto& rows : data.rows_of_subject) {
        for (std::size_t t = 0; t < rows.size(); ++t) {
          const auto r = static_cast<Eigen::Index>(rows[t]);
          const double e = state[static_cast<Eigen::Index>(s.innovations) + r];
          ar_terms[k][r] =
              t == 0 ? s0 * e
                     : rho[k] * ar_terms[k][static_cast<Eigen::Index>(rows[t - 1])] + omega[k] * e;
        }
      }
      eta[k] += ar_terms[k];
    }
  }

  std::array<Eigen::VectorXd, kMoments> adj;
  if (grad) {
    for (Moment m : kAllMoments) {
      if (design_->active(m)) adj[index(m)] = Eigen::VectorXd::Zero(n);
    }
  }

  double ll = 0.0;
  std::size_t clamped_here = 0;
  for (Eigen::Index r = 0; r < n; ++r) {
    RawPredictors raw{};
    for (Moment m : kAllMoments) {
      if (design_->active(m)) raw[index(m)] = eta[index(m)][r];
    }
    RawPredictors dg{};
    bool clamped = false;
    const double g = events_->probit(raw, grad ? &dg : nullptr, &clamped);
    if (clamped) ++clamped_here;
    double dll = 0.0;
    ll += bernoulli_probit_loglik(data.y[static_cast<std::size_t>(r)], g, grad ? &dll : nullptr);
    if (grad) {
      for (Moment m : kAllMoments) {
        if (design_->active(m)) adj[index(m)][r] = dll * dg[index(m)];
      }
    }
  }
  clamped_ += clamped_here;
  evaluated_ += static_cast<std::size_t>(n);
  if (!grad) return ll;

  for (Moment m : kAllMoments) {
    const std::size_t k = index(m);
    if (!design_->active(m)) continue;
    const MomentSlots& s = layout_.slots(m);
    const MomentRegression& reg = design_->spec()[m];
    grad->segment(static_cast<Eigen::Index>(s.beta), static_cast<Eigen::Index>(s.n_beta)) +=
        design_->design(m).transpose() * adj[k];

    if (s.log_effect_scale) {
      Eigen::VectorXd d_subject = Eigen::VectorXd::Zero(n_subj);
      for (Eigen::Index r = 0; r < n; ++r) {
        d_subject[static_cast<Eigen::Index>(data.subject[r])] += adj[k][r];
      }
      const Eigen::VectorXd d_effects =
          reg.effect == RandomEffect::Membership
              ? Eigen::VectorXd(data.membership.transpose() * d_subject)
              : d_subject;
      const Eigen::VectorXd& effects =
          reg.effect == RandomEffect::Membership ? group_effect[k] : subject_effect[k];
      grad->segment(static_cast<Eigen::Index>(s.effects), static_cast<Eigen::Index>(s.n_effects)) +=
          scale[k] * d_effects;
      (*grad)[static_cast<Eigen::Index>(*s.log_effect_scale)] += d_effects.dot(effects);
    }

    if (s.atanh_rho) {
      const double one_m_rho2 = 1.0 - rho[k] * rho[k];
      const double s0 = omega[k] / std::sqrt(one_m_rho2);
      double d_rho = 0.0;
      double d_log_omega = 0.0;
      for (const auto& rows : data.rows_of_subject) {
        double lambda = 0.0;
        for (std::size_t t = rows.size(); t-- > 0;) {
          const auto r = static_cast<Eigen::Index>(rows[t]);
          lambda = adj[k][r] + rho[k] * lambda;
          d_log_omega += adj[k][r] * ar_terms[k][r];
          const Eigen::Index e_idx = static_cast<Eigen::Index>(s.innovations) + r;
          if (t == 0) {
            (*grad)[e_idx] += s0 * lambda;
            d_rho += lambda * state[e_idx] * s0 * rho[k] / one_m_rho2;
          } else {
            (*grad)[e_idx] += omega[k] * lambda;
            d_rho += lambda * ar_terms[k][static_cast<Eigen::Index>(rows[t - 1])];
          }
        }
      }
      (*grad)[static_cast<Eigen::Index>(*s.atanh_rho)] += d_rho * one_m_rho2;
      (*grad)[static_cast<Eigen::Index>(*s.log_ar_scale)] += d_log_omega;
    }
  }
  return ll;
}

double LogPosterior::log_likelihood(const Eigen::VectorXd& state) const {
  return likelihood_part(state, nullptr);
}

double LogPosterior::operator()(const Eigen::VectorXd& state, Eigen::VectorXd* grad) const {
  if (static_cast<std::size_t>(state.size()) != dim()) {
    throw DataError("state vector has the wrong dimension");
  }
  const double lp = log_prior(layout_, state, prior_, grad);
  return lp + likelihood_part(state, grad);
}

}  // namespace latmom
