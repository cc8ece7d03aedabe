#include "latmom/surface.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include "latmom/errors.hpp"
#include "latmom/rng.hpp"

namespace latmom {

namespace {

constexpr const char* kMagic = "LATMOM-SURFACE";
constexpr int kFormatVersion = 1;
constexpr std::uint64_t kGridStream = 0x53555246;

// Uniform cubic B-spline basis with `count` functions on [lo, hi].
struct CubicBasis {
  double lo;
  double hi;
  std::size_t count;

  double spacing() const { return (hi - lo) / static_cast<double>(count - 3); }

  // First basis index and the four values / derivatives at x (x inside box).
  std::size_t eval(double x, std::array<double, 4>& b, std::array<double, 4>* db) const {
    const double h = spacing();
    const std::size_t intervals = count - 3;
    double s = (x - lo) / h;
    auto i = static_cast<std::size_t>(std::clamp(std::floor(s), 0.0, static_cast<double>(intervals - 1)));
    const double u = s - static_cast<double>(i);
    const double v = 1.0 - u;
    b[0] = v * v * v / 6.0;
    b[1] = (3.0 * u * u * u - 6.0 * u * u + 4.0) / 6.0;
    b[2] = (-3.0 * u * u * u + 3.0 * u * u + 3.0 * u + 1.0) / 6.0;
    b[3] = u * u * u / 6.0;
    if (db) {
      (*db)[0] = -0.5 * v * v / h;
      (*db)[1] = (1.5 * u * u - 2.0 * u) / h;
      (*db)[2] = (-1.5 * u * u + u + 0.5) / h;
      (*db)[3] = 0.5 * u * u / h;
    }
    return i;
  }

  Eigen::MatrixXd collocation(const std::vector<double>& xs) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(xs.size()),
                                                static_cast<Eigen::Index>(count));
    std::array<double, 4> b{};
    for (std::size_t r = 0; r < xs.size(); ++r) {
      const std::size_t first = eval(xs[r], b, nullptr);
      for (std::size_t k = 0; k < 4; ++k) {
        out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(first + k)) = b[k];
      }
    }
    return out;
  }
};

// Product of a 4-way tensor with matrix `a` along mode `mode`.
std::vector<double> mode_product(const std::vector<double>& in, std::array<std::size_t, 4>& dims,
                                 std::size_t mode, const Eigen::MatrixXd& a) {
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t d = 0; d < mode; ++d) outer *= dims[d];
  for (std::size_t d = mode + 1; d < 4; ++d) inner *= dims[d];
  const std::size_t n_in = dims[mode];
  const auto n_out = static_cast<std::size_t>(a.rows());
  std::vector<double> out(outer * n_out * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < n_out; ++j) {
      double* dst = &out[(o * n_out + j) * inner];
      for (std::size_t k = 0; k < n_in; ++k) {
        const double w = a(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
        if (w == 0.0) continue;
        const double* src = &in[(o * n_in + k) * inner];
        for (std::size_t i = 0; i < inner; ++i) dst[i] += w * src[i];
      }
    }
  }
  dims[mode] = n_out;
  return out;
}

// Per-dimension reparametrization that diagonalizes B'B and the penalty.
struct DimensionFactor {
  Eigen::MatrixXd to_spectral;  // Q = U' R^{-T} B'   (K x n)
  Eigen::MatrixXd to_coef;      // T = R^{-1} U       (K x K)
  Eigen::VectorXd eigen;        // penalty eigenvalues
};

DimensionFactor factor_dimension(const Eigen::MatrixXd& basis) {
  const Eigen::Index k = basis.cols();
  Eigen::MatrixXd diff = Eigen::MatrixXd::Zero(k - 2, k);
  for (Eigen::Index r = 0; r < k - 2; ++r) {
    diff(r, r) = 1.0;
    diff(r, r + 1) = -2.0;
    diff(r, r + 2) = 1.0;
  }
  const Eigen::MatrixXd gram = basis.transpose() * basis;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw ComputationError("singular spline fit: too few grid points per dimension");
  }
  const Eigen::MatrixXd upper = llt.matrixU();
  const Eigen::MatrixXd r_inv =
      upper.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::MatrixXd pen = r_inv.transpose() * (diff.transpose() * diff) * r_inv;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (pen + pen.transpose()));
  DimensionFactor f;
  f.eigen = eig.eigenvalues().cwiseMax(0.0);
  f.to_coef = r_inv * eig.eigenvectors();
  f.to_spectral = eig.eigenvectors().transpose() * r_inv.transpose() * basis.transpose();
  return f;
}

void write_range(std::ostream& out, const char* name, const std::array<double, 2>& r) {
  out << name << ' ' << r[0] << ' ' << r[1] << '\n';
}

std::array<double, 2> read_range(std::istream& in, const char* name) {
  std::string key;
  std::array<double, 2> r{};
  if (!(in >> key >> r[0] >> r[1]) || key != name) {
    throw DataError(std::string("surface artifact: expected '") + name + "' line");
  }
  return r;
}

}  // namespace

void GridRanges::validate() const {
  auto check = [](const std::array<double, 2>& r, const char* what, bool positive) {
    if (!(r[0] < r[1]) || !std::isfinite(r[0]) || !std::isfinite(r[1])) {
      throw ConfigError(std::string("grid range for ") + what + " is inverted or empty");
    }
    if (positive && !(r[0] > 0.0)) {
      throw ConfigError(std::string("grid range for ") + what + " must be positive");
    }
  };
  check(mu, "mu", false);
  check(sigma, "sigma", true);
  check(nu, "nu", false);
  check(tau, "tau", true);
}

SurfaceCoords surface_coords(const SasParams& p) {
  return {stable_asinh(p.mu / p.sigma), std::log(p.sigma), p.nu, std::log(p.tau)};
}

std::array<std::array<double, 2>, 4> coordinate_box(const GridRanges& ranges) {
  const double smin = ranges.sigma[0];
  return {{{stable_asinh(ranges.mu[0] / smin), stable_asinh(ranges.mu[1] / smin)},
           {std::log(ranges.sigma[0]), std::log(ranges.sigma[1])},
           {ranges.nu[0], ranges.nu[1]},
           {std::log(ranges.tau[0]), std::log(ranges.tau[1])}}};
}

std::size_t MomentGrid::size() const {
  std::size_t n = 1;
  for (const auto& k : knots) n *= k.size();
  return n;
}

std::array<std::size_t, 4> MomentGrid::shape() const {
  return {knots[0].size(), knots[1].size(), knots[2].size(), knots[3].size()};
}

SasParams MomentGrid::point(std::size_t flat) const {
  std::array<double, 4> c{};
  for (std::size_t d = 4; d-- > 0;) {
    c[d] = knots[d][flat % knots[d].size()];
    flat /= knots[d].size();
  }
  const double sigma = std::exp(c[1]);
  return SasParams{sigma * std::sinh(c[0]), sigma, c[2], std::exp(c[3])};
}

MomentGrid generate_grid(const GridRanges& ranges, std::array<std::size_t, 4> points_per_dim,
                         std::size_t mc_draws) {
  ranges.validate();
  if (mc_draws < 1) throw ConfigError("grid needs at least one Monte Carlo draw per point");
  MomentGrid grid;
  grid.ranges = ranges;
  grid.mc_draws = mc_draws;
  const auto box = coordinate_box(ranges);
  for (std::size_t d = 0; d < 4; ++d) {
    const std::size_t n = points_per_dim[d];
    if (n < 2) throw ConfigError("grid needs at least 2 points per dimension");
    grid.knots[d].resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      grid.knots[d][k] =
          box[d][0] + (box[d][1] - box[d][0]) * static_cast<double>(k) / static_cast<double>(n - 1);
    }
  }
  return grid;
}

MomentGrid generate_grid(const GridRanges& ranges, std::size_t points_per_dim,
                         std::size_t mc_draws) {
  return generate_grid(ranges, {points_per_dim, points_per_dim, points_per_dim, points_per_dim},
                       mc_draws);
}

std::vector<double> simulate_probabilities(const MomentGrid& grid, std::uint64_t seed) {
  std::vector<double> out(grid.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const SasParams p = grid.point(i);
    std::mt19937_64 rng(derive_seed(seed, kGridStream, i));
    std::size_t hits = 0;
    for (std::size_t d = 0; d < grid.mc_draws; ++d) {
      if (sas_draw(rng, p) > 0.0) ++hits;
    }
    out[i] = static_cast<double>(hits) / static_cast<double>(grid.mc_draws);
  }
  return out;
}

double mc_standard_error(double p, std::size_t draws) {
  return std::sqrt(p * (1.0 - p) / static_cast<double>(draws));
}

ProbabilitySurface fit_surface(const MomentGrid& grid, std::span<const double> probabilities,
                               const SurfaceFitOptions& options) {
  if (probabilities.size() != grid.size()) {
    throw DataError("probability vector does not match the grid");
  }
  for (const auto& k : grid.knots) {
    if (k.size() < 4) throw ComputationError("singular spline fit: fewer than 4 points per dimension");
  }
  if (options.lambda_ladder.empty()) throw ConfigError("smoothing ladder is empty");

  const double floor =
      options.prob_floor > 0.0 ? options.prob_floor : 0.5 / (static_cast<double>(grid.mc_draws) + 1.0);
  std::vector<double> y(probabilities.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = normal_quantile(std::clamp(probabilities[i], floor, 1.0 - floor));
  }

  const auto box = coordinate_box(grid.ranges);
  std::array<CubicBasis, 4> bases{};
  std::array<DimensionFactor, 4> factors;
  for (std::size_t d = 0; d < 4; ++d) {
    bases[d] = CubicBasis{box[d][0], box[d][1], grid.knots[d].size()};
    factors[d] = factor_dimension(bases[d].collocation(grid.knots[d]));
  }

  std::array<Eigen::MatrixXd, 4> colloc;
  for (std::size_t d = 0; d < 4; ++d) colloc[d] = bases[d].collocation(grid.knots[d]);
  const std::array<std::size_t, 4> shape = grid.shape();
  const double n = static_cast<double>(y.size());

  auto penalty_at = [&](std::size_t flat, const std::array<double, 4>& lam) {
    double s = 0.0;
    for (std::size_t d = 4; d-- > 0;) {
      s += lam[d] * factors[d].eigen[static_cast<Eigen::Index>(flat % shape[d])];
      flat /= shape[d];
    }
    return s;
  };
  auto to_spectral = [&](const std::vector<double>& target) {
    auto dims = shape;
    std::vector<double> out = target;
    for (std::size_t d = 0; d < 4; ++d) out = mode_product(out, dims, d, factors[d].to_spectral);
    return out;
  };
  auto solve = [&](std::vector<double> spectral, const std::array<double, 4>& lam) {
    for (std::size_t i = 0; i < spectral.size(); ++i) spectral[i] /= 1.0 + penalty_at(i, lam);
    auto dims = shape;
    for (std::size_t d = 0; d < 4; ++d) spectral = mode_product(spectral, dims, d, factors[d].to_coef);
    return spectral;
  };
  auto fitted = [&](std::vector<double> coef) {
    auto dims = shape;
    for (std::size_t d = 0; d < 4; ++d) coef = mode_product(coef, dims, d, colloc[d]);
    return coef;
  };

  auto select_lambda = [&](const std::vector<double>& target) {
    const std::vector<double> spectral = to_spectral(target);
    double y_norm = 0.0;
    for (double v : target) y_norm += v * v;
    double spec_norm = 0.0;
    for (double v : spectral) spec_norm += v * v;
    const double outside = std::max(0.0, y_norm - spec_norm);
    auto gcv = [&](const std::array<double, 4>& lam) {
      double rss = outside;
      double edf = 0.0;
      for (std::size_t i = 0; i < spectral.size(); ++i) {
        const double s = penalty_at(i, lam);
        const double shrink = s / (1.0 + s);
        rss += spectral[i] * spectral[i] * shrink * shrink;
        edf += 1.0 / (1.0 + s);
      }
      const double denom = n - edf;
      if (denom <= 1e-9 * n) return std::numeric_limits<double>::infinity();
      return n * rss / (denom * denom);
    };
    // Isotropic start, then coordinate-wise refinement.
    std::array<double, 4> best{};
    double best_score = std::numeric_limits<double>::infinity();
    for (double lam : options.lambda_ladder) {
      const std::array<double, 4> trial{lam, lam, lam, lam};
      const double score = gcv(trial);
      if (score < best_score) {
        best_score = score;
        best = trial;
      }
    }
    if (!std::isfinite(best_score)) best.fill(options.lambda_ladder.front());
    for (std::size_t sweep = 0; sweep < options.gcv_sweeps; ++sweep) {
      for (std::size_t d = 0; d < 4; ++d) {
        for (double lam : options.lambda_ladder) {
          std::array<double, 4> trial = best;
          trial[d] = lam;
          const double score = gcv(trial);
          if (score < best_score) {
            best_score = score;
            best = trial;
          }
        }
      }
    }
    return best;
  };

  // Estimates at the Monte Carlo floor only bound the probit from one side.
  // They are treated as censored: the target follows the fit wherever the fit
  // lies beyond the bound, which keeps the plateau from forcing a kink.
  const double bound = normal_quantile(1.0 - floor);
  constexpr double kCensoredReach = 2.0;
  std::vector<double> target = y;
  std::array<double, 4> lam = select_lambda(target);
  std::vector<double> coef = solve(to_spectral(target), lam);
  for (std::size_t round = 0; round < 2; ++round) {
    for (std::size_t it = 0; it < options.censored_iterations; ++it) {
      const std::vector<double> fit = fitted(coef);
      double change = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) {
        double next = y[i];
        if (y[i] >= bound) next = std::clamp(fit[i], bound, bound + kCensoredReach);
        else if (y[i] <= -bound) next = std::clamp(fit[i], -bound - kCensoredReach, -bound);
        change = std::max(change, std::abs(next - target[i]));
        target[i] = next;
      }
      coef = solve(to_spectral(target), lam);
      if (change < 1e-6) break;
    }
    if (round == 0) {
      lam = select_lambda(target);
      coef = solve(to_spectral(target), lam);
    }
  }

  ProbabilitySurface out;
  {
    const std::vector<double> fit = fitted(coef);
    double rss = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      double r = fit[i] - y[i];
      if (y[i] >= bound) r = std::min(r, 0.0);
      else if (y[i] <= -bound) r = std::max(r, 0.0);
      rss += r * r;
    }
    out.rmse_ = std::sqrt(rss / n);
    double edf = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) edf += 1.0 / (1.0 + penalty_at(i, lam));
    out.edf_ = edf;
  }
  out.ranges_ = grid.ranges;
  out.box_ = box;
  out.counts_ = grid.shape();
  out.lambda_ = lam;
  out.mc_draws_ = grid.mc_draws;
  out.coef_ = std::move(coef);
  return out;
}

double ProbabilitySurface::probit_at(SurfaceCoords c, SurfaceCoords* grad, bool* clamped) const {
  if (coef_.empty()) throw ComputationError("probability surface is empty");
  bool any = false;
  std::array<bool, 4> outside{};
  std::array<std::array<double, 4>, 4> b{};
  std::array<std::array<double, 4>, 4> db{};
  std::array<std::size_t, 4> first{};
  for (std::size_t d = 0; d < 4; ++d) {
    if (!(c[d] >= box_[d][0] && c[d] <= box_[d][1])) {
      any = true;
      outside[d] = true;
      c[d] = std::isnan(c[d]) ? box_[d][0] : std::clamp(c[d], box_[d][0], box_[d][1]);
    }
    const CubicBasis basis{box_[d][0], box_[d][1], counts_[d]};
    first[d] = basis.eval(c[d], b[d], grad ? &db[d] : nullptr);
  }
  if (clamped) *clamped = any;

  const std::size_t s1 = counts_[1] * counts_[2] * counts_[3];
  const std::size_t s2 = counts_[2] * counts_[3];
  const std::size_t s3 = counts_[3];
  double value = 0.0;
  SurfaceCoords g{};
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      const double bij = b[0][i] * b[1][j];
      for (std::size_t k = 0; k < 4; ++k) {
        const std::size_t base = (first[0] + i) * s1 + (first[1] + j) * s2 + (first[2] + k) * s3 + first[3];
        const double* a = &coef_[base];
        double sum_l = 0.0;
        double dsum_l = 0.0;
        for (std::size_t l = 0; l < 4; ++l) {
          sum_l += a[l] * b[3][l];
          if (grad) dsum_l += a[l] * db[3][l];
        }
        value += bij * b[2][k] * sum_l;
        if (grad) {
          g[0] += db[0][i] * b[1][j] * b[2][k] * sum_l;
          g[1] += b[0][i] * db[1][j] * b[2][k] * sum_l;
          g[2] += bij * db[2][k] * sum_l;
          g[3] += bij * b[2][k] * dsum_l;
        }
      }
    }
  }
  if (grad) {
    // the clamped surface is flat across the box face
    for (std::size_t d = 0; d < 4; ++d) {
      if (outside[d]) g[d] = 0.0;
    }
    *grad = g;
  }
  return value;
}

void ProbabilitySurface::save(std::ostream& out, std::string_view metadata) const {
  out << kMagic << '\n' << "version " << kFormatVersion << '\n';
  if (!metadata.empty()) out << "metadata " << metadata << '\n';
  out << std::setprecision(17);
  out << "coordinates asinh_standardized_location log_sigma nu log_tau\n";
  write_range(out, "mu", ranges_.mu);
  write_range(out, "sigma", ranges_.sigma);
  write_range(out, "nu", ranges_.nu);
  write_range(out, "tau", ranges_.tau);
  out << "basis " << counts_[0] << ' ' << counts_[1] << ' ' << counts_[2] << ' ' << counts_[3] << '\n';
  out << "lambda " << lambda_[0] << ' ' << lambda_[1] << ' ' << lambda_[2] << ' ' << lambda_[3] << '\n';
  out << "probit_rmse " << rmse_ << '\n' << "edf " << edf_ << '\n';
  out << "mc_draws " << mc_draws_ << '\n';
  out << "coefficients " << coef_.size() << '\n';
  for (double v : coef_) out << v << '\n';
}

ProbabilitySurface ProbabilitySurface::load(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMagic) {
    throw DataError("not a probability surface artifact (bad magic string)");
  }
  std::string key;
  int version = 0;
  if (!(in >> key >> version) || key != "version" || version != kFormatVersion) {
    throw DataError("unsupported surface artifact version");
  }
  std::getline(in, line);
  std::getline(in, line);
  if (line.rfind("metadata", 0) == 0) std::getline(in, line);  // coordinates line follows
  ProbabilitySurface s;
  s.ranges_.mu = read_range(in, "mu");
  s.ranges_.sigma = read_range(in, "sigma");
  s.ranges_.nu = read_range(in, "nu");
  s.ranges_.tau = read_range(in, "tau");
  s.ranges_.validate();
  if (!(in >> key) || key != "basis") throw DataError("surface artifact: expected 'basis' line");
  for (auto& c : s.counts_) {
    if (!(in >> c) || c < 4) throw DataError("surface artifact: bad basis count");
  }
  if (!(in >> key) || key != "lambda") throw DataError("surface artifact: expected 'lambda' line");
  for (auto& l : s.lambda_) in >> l;
  if (!(in >> key >> s.rmse_) || key != "probit_rmse") throw DataError("surface artifact: expected 'probit_rmse'");
  if (!(in >> key >> s.edf_) || key != "edf") throw DataError("surface artifact: expected 'edf'");
  if (!(in >> key >> s.mc_draws_) || key != "mc_draws") throw DataError("surface artifact: expected 'mc_draws'");
  std::size_t n = 0;
  if (!(in >> key >> n) || key != "coefficients") throw DataError("surface artifact: expected 'coefficients'");
  if (n != s.counts_[0] * s.counts_[1] * s.counts_[2] * s.counts_[3]) {
    throw DataError("surface artifact: coefficient count does not match the basis");
  }
  s.coef_.resize(n);
  for (auto& v : s.coef_) {
    if (!(in >> v) || !std::isfinite(v)) throw DataError("surface artifact: truncated or malformed coefficients");
  }
  s.box_ = coordinate_box(s.ranges_);
  return s;
}

double surface_eval(const ProbabilitySurface& surface, const SasParams& theta, bool* clamped) {
  return normal_cdf(surface.probit_at(surface_coords(theta), nullptr, clamped));
}

std::array<double, 4> surface_grad(const ProbabilitySurface& surface, const SasParams& theta) {
  SurfaceCoords dc{};
  const double g = surface.probit_at(surface_coords(theta), &dc, nullptr);
  const double dens = normal_pdf(g);
  const double r = theta.mu / theta.sigma;
  const double h = std::hypot(1.0, r);
  return {dens * dc[0] / (theta.sigma * h),
          dens * (dc[0] * (-r / (theta.sigma * h)) + dc[1] / theta.sigma),
          dens * dc[2],
          dens * dc[3] / theta.tau};
}

SurfaceEvents::SurfaceEvents(std::shared_ptr<const ProbabilitySurface> surface)
    : surface_(std::move(surface)) {
  if (!surface_) throw ConfigError("surface event model needs a surface");
}

double SurfaceEvents::probit(const RawPredictors& raw, RawPredictors* grad, bool* clamped) const {
  const SasParams p = apply_links(raw);
  SurfaceCoords dc{};
  const double g = surface_->probit_at(surface_coords(p), grad ? &dc : nullptr, clamped);
  if (grad) {
    const double r = p.mu / p.sigma;
    const double h = std::hypot(1.0, r);
    (*grad)[0] = dc[0] / (p.sigma * h);
    (*grad)[1] = -dc[0] * r / h + dc[1];
    (*grad)[2] = dc[2];
    (*grad)[3] = dc[3];
  }
  return g;
}

double pseudo_log_likelihood(const PanelData& data, std::span<const SasParams> params,
                             const ProbabilitySurface& surface) {
  if (params.size() != data.n_obs()) throw DataError("parameter table does not match the panel");
  double ll = 0.0;
  for (std::size_t r = 0; r < params.size(); ++r) {
    ll += bernoulli_probit_loglik(data.y[r], surface.probit_at(surface_coords(params[r]), nullptr, nullptr));
  }
  return ll;
}

QuadFit quad_fit(const ModelDesign& design, const PriorConfig& prior,
                 std::shared_ptr<const ProbabilitySurface> surface, const SamplerConfig& cfg) {
  LogPosterior posterior(design, prior, std::make_shared<SurfaceEvents>(std::move(surface)));
  QuadFit out;
  out.draws = hmc_run(posterior, cfg);
  const std::size_t evaluated = posterior.evaluated_rows();
  out.clamp_rate = evaluated > 0 ? static_cast<double>(posterior.clamped_rows()) /
                                       static_cast<double>(evaluated)
                                 : 0.0;
  if (out.clamp_rate > 0.01) {
    std::ostringstream msg;
    msg << "surface clamp rate " << out.clamp_rate * 100.0
        << "% exceeds 1%: moments left the surface box during sampling";
    out.warning = msg.str();
  }
  return out;
}

}  // namespace latmom
