#include "cinla/hyperposterior.hpp"

#include "cinla/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

namespace cinla {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool is_fixed(const std::vector<std::size_t>& set, std::size_t i) {
  return std::find(set.begin(), set.end(), i) != set.end();
}

HyperParams theta_at(const HyperPosterior& hp, const std::vector<int>& lattice) {
  Vector z(static_cast<Eigen::Index>(hp.dim));
  for (std::size_t a = 0; a < hp.dim; ++a) z[static_cast<Eigen::Index>(a)] = hp.dz * lattice[a];
  return HyperParams(hp.theta_star.values + hp.z_to_theta * z);
}

GridPoint to_grid_point(std::vector<int> lattice, ThetaEvaluation&& ev) {
  GridPoint g;
  g.lattice = std::move(lattice);
  g.theta = std::move(ev.theta);
  g.log_uncorrected = ev.value.uncorrected;
  g.correction_raw = ev.correction.raw;
  g.correction = ev.value.correction;
  g.log_corrected = ev.value.corrected;
  g.correction_clamped = ev.correction.clamped;
  g.mode = std::move(ev.mode);
  g.sd = std::move(ev.sd);
  g.marginals = std::move(ev.marginals);
  return g;
}

GridPoint failed_point(std::vector<int> lattice, HyperParams theta) {
  GridPoint g;
  g.lattice = std::move(lattice);
  g.theta = std::move(theta);
  g.log_uncorrected = kNegInf;
  g.log_corrected = kNegInf;
  return g;
}

/// Lagrange weights for interpolating at t from up to four consecutive
/// integer nodes in [lo, hi].
void lagrange_stencil(double t, int lo, int hi, int& first, std::vector<double>& w) {
  const int count = std::min(4, hi - lo + 1);
  first = static_cast<int>(std::floor(t)) - (count == 4 ? 1 : 0);
  first = std::clamp(first, lo, hi - count + 1);
  w.assign(static_cast<std::size_t>(count), 1.0);
  for (int a = 0; a < count; ++a) {
    for (int b = 0; b < count; ++b) {
      if (a != b) w[static_cast<std::size_t>(a)] *= (t - (first + b)) / static_cast<double>(a - b);
    }
  }
}

/// Dense log-density lattice over the explored box.
class LatticeField {
 public:
  explicit LatticeField(const HyperPosterior& hp) : lower_(hp.lower), upper_(hp.upper) {
    const std::size_t p = hp.dim;
    extent_.resize(p);
    std::size_t total = 1;
    for (std::size_t a = 0; a < p; ++a) {
      extent_[a] = static_cast<std::size_t>(upper_[a] - lower_[a] + 1);
      total *= extent_[a];
    }
    values_.assign(total, kNegInf);
    double floor_value = std::numeric_limits<double>::infinity();
    for (const auto& g : hp.points) {
      values_[offset(g.lattice)] = g.log_corrected;
      if (std::isfinite(g.log_corrected)) floor_value = std::min(floor_value, g.log_corrected);
    }
    // failed evaluations sit well below everything that was evaluated
    for (auto& v : values_) {
      if (!std::isfinite(v)) v = floor_value - 20.0;
    }
  }

  double interpolate(const std::vector<double>& t) const {
    const std::size_t p = t.size();
    std::vector<int> first(p);
    std::vector<std::vector<double>> w(p);
    for (std::size_t a = 0; a < p; ++a) lagrange_stencil(t[a], lower_[a], upper_[a], first[a], w[a]);
    std::vector<std::size_t> idx(p, 0);
    std::vector<int> node(p);
    double sum = 0.0;
    while (true) {
      double weight = 1.0;
      for (std::size_t a = 0; a < p; ++a) {
        node[a] = first[a] + static_cast<int>(idx[a]);
        weight *= w[a][idx[a]];
      }
      sum += weight * values_[offset(node)];
      std::size_t a = 0;
      for (; a < p; ++a) {
        if (++idx[a] < w[a].size()) break;
        idx[a] = 0;
      }
      if (a == p) break;
    }
    return sum;
  }

 private:
  std::size_t offset(const std::vector<int>& lattice) const {
    std::size_t off = 0;
    for (std::size_t a = lattice.size(); a-- > 0;) {
      off = off * extent_[a] + static_cast<std::size_t>(lattice[a] - lower_[a]);
    }
    return off;
  }

  std::vector<int> lower_;
  std::vector<int> upper_;
  std::vector<std::size_t> extent_;
  std::vector<double> values_;
};

struct Optimum {
  Vector theta;
  double value = kNegInf;
  Vector latent_mode;
  int iterations = 0;
  bool converged = false;
  double grad_norm = 0.0;
  std::size_t evaluations = 0;
};

/// Quasi-Newton (BFGS) maximisation of the log posterior with central
/// finite-difference gradients.
Optimum maximize(const ModelSpec& spec, const Vector& y, const CorrectionConfig& cfg, const Vector& start,
                 double h) {
  Optimum opt;
  const auto p = start.size();
  std::optional<Vector> warm;
  auto f = [&](const Vector& t) {
    ++opt.evaluations;
    try {
      ThetaEvaluation ev = evaluate_theta(spec, y, HyperParams(t), cfg, false, warm);
      if (!std::isfinite(ev.value.corrected)) return kNegInf;
      warm = ev.mode;
      return ev.value.corrected;
    } catch (const std::runtime_error&) {
      return kNegInf;
    }
  };
  auto grad = [&](const Vector& t) {
    Vector g(p);
    for (Eigen::Index k = 0; k < p; ++k) {
      Vector tp = t;
      Vector tm = t;
      tp[k] += h;
      tm[k] -= h;
      g[k] = (f(tp) - f(tm)) / (2.0 * h);
    }
    return g;
  };

  Vector x = start;
  double fx = f(x);
  if (!std::isfinite(fx)) throw ModelError("log posterior is not finite at the starting hyperparameters");
  opt.latent_mode = *warm;
  Vector g = grad(x);
  Matrix B = Matrix::Identity(p, p);  // inverse Hessian of -f
  constexpr int kMaxIter = 200;
  int it = 0;
  for (; it < kMaxIter; ++it) {
    if (!g.allFinite()) break;
    if (g.lpNorm<Eigen::Infinity>() < 1e-5) {
      opt.converged = true;
      break;
    }
    Vector dir = B * g;  // ascent direction
    if (dir.dot(g) <= 0) {
      B.setIdentity();
      dir = g;
    }
    const double len = dir.norm();
    if (len > 2.0) dir *= 2.0 / len;
    double t = 1.0;
    Vector x_new;
    double f_new = kNegInf;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = x + t * dir;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new >= fx + 1e-4 * t * g.dot(dir)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    const Vector s = x_new - x;
    const Vector g_new = grad(x_new);
    const Vector yk = g - g_new;  // gradient change of -f
    const double sy = s.dot(yk);
    const double df = f_new - fx;
    x = x_new;
    fx = f_new;
    opt.latent_mode = *warm;
    if (sy > 1e-12) {
      const double rho = 1.0 / sy;
      const Matrix I = Matrix::Identity(p, p);
      B = (I - rho * s * yk.transpose()) * B * (I - rho * yk * s.transpose()) + rho * s * s.transpose();
    }
    g = g_new;
    if (std::abs(df) < 1e-11 * (1.0 + std::abs(fx)) && s.norm() < 1e-7) {
      opt.converged = true;
      break;
    }
  }
  opt.theta = x;
  opt.value = fx;
  opt.iterations = it;
  opt.grad_norm = g.lpNorm<Eigen::Infinity>();
  return opt;
}

}  // namespace

ThetaEvaluation evaluate_theta(const ModelSpec& spec, const Vector& y, const HyperParams& theta,
                               const CorrectionConfig& cfg, bool with_marginals,
                               const std::optional<Vector>& warm_start) {
  const GaussianApprox ga = fit_gaussian_approx(spec, y, theta, warm_start);
  ThetaEvaluation ev;
  ev.theta = theta;
  const Vector r = ga.mode - spec.prior_mean();
  ev.value.uncorrected = log_prior_hyper(spec, theta) + 0.5 * ga.prior.log_det - 0.5 * r.dot(ga.prior.Q * r) +
                         log_likelihood(spec, y, ga.eta) - 0.5 * ga.log_det;
  const auto& J = spec.fixed_index_set;
  if (with_marginals || cfg.mode != CorrectionMode::None) {
    ev.marginals.reserve(J.size());
    for (std::size_t i : J) ev.marginals.push_back(improved_marginal(spec, y, ga, i));
  }
  ev.correction = compute_correction(ga, ev.marginals, J, cfg);
  ev.value.correction = ev.correction.thresholded;
  ev.value.corrected = ev.value.uncorrected + ev.value.correction;
  ev.mode = ga.mode;
  ev.sd = ga.marginal_sd;
  return ev;
}

LogPosteriorValue log_posterior_at(const ModelSpec& spec, const Vector& y, const HyperParams& theta,
                                   const CorrectionConfig& cfg) {
  return evaluate_theta(spec, y, theta, cfg).value;
}

std::size_t HyperPosterior::argmax() const {
  std::size_t best = 0;
  for (std::size_t k = 1; k < points.size(); ++k) {
    if (points[k].log_corrected > points[best].log_corrected) best = k;
  }
  return best;
}

void normalize_weights(HyperPosterior& hp) {
  double top = kNegInf;
  for (const auto& g : hp.points) top = std::max(top, g.log_corrected);
  double total = 0.0;
  for (auto& g : hp.points) {
    g.weight = std::isfinite(g.log_corrected) ? std::exp(g.log_corrected - top) : 0.0;
    total += g.weight;
  }
  for (auto& g : hp.points) g.weight /= total;
  // cell volume in theta space: dz^p |det z_to_theta|
  const double log_cell = static_cast<double>(hp.dim) * std::log(hp.dz) +
                          (hp.dim > 0 ? std::log(std::abs(hp.z_to_theta.determinant())) : 0.0);
  hp.log_normalizer = top + std::log(total) + log_cell;
}

HyperPosterior explore(const ModelSpec& spec, const Vector& y, const CorrectionConfig& cfg,
                       const ExploreOptions& opts) {
  if (!(cfg.xi > 0)) throw ModelError("xi must be positive");
  check_observations(spec, y);
  const std::size_t p = spec.n_hyper;
  if (p > 3) throw ModelError("exploration supports at most 3 hyperparameters");

  HyperPosterior hp;
  hp.config = cfg;
  hp.dim = p;
  hp.dz = opts.dz;
  hp.fixed_index_set = spec.fixed_index_set;
  hp.lower.assign(p, 0);
  hp.upper.assign(p, 0);

  if (p == 0) {
    hp.theta_star = HyperParams(Vector(0));
    hp.z_to_theta = Matrix(0, 0);
    hp.hessian = Matrix(0, 0);
    hp.points.push_back(to_grid_point({}, evaluate_theta(spec, y, hp.theta_star, cfg, true)));
    hp.mode = hp.theta_star;
    hp.diagnostics.optimizer_converged = true;
    hp.diagnostics.evaluations = 1;
    normalize_weights(hp);
    return hp;
  }

  const Vector start = opts.initial ? opts.initial->values : Vector::Zero(static_cast<Eigen::Index>(p));
  const Optimum opt = maximize(spec, y, cfg, start, opts.gradient_step);
  hp.diagnostics.optimizer_iterations = opt.iterations;
  hp.diagnostics.optimizer_converged = opt.converged;
  hp.diagnostics.gradient_norm = opt.grad_norm;
  hp.theta_star = HyperParams(opt.theta);
  const Vector warm = opt.latent_mode;

  // finite-difference Hessian of the log posterior at the optimum
  const double h = opts.hessian_step;
  auto value_at = [&](const Vector& t) {
    ++hp.diagnostics.evaluations;
    return evaluate_theta(spec, y, HyperParams(t), cfg, false, warm).value.corrected;
  };
  const auto pp = static_cast<Eigen::Index>(p);
  Matrix H(pp, pp);
  const double f0 = opt.value;
  for (Eigen::Index a = 0; a < pp; ++a) {
    Vector tp = opt.theta;
    Vector tm = opt.theta;
    tp[a] += h;
    tm[a] -= h;
    H(a, a) = (value_at(tp) - 2.0 * f0 + value_at(tm)) / (h * h);
    for (Eigen::Index b = 0; b < a; ++b) {
      Vector tpp = opt.theta, tpm = opt.theta, tmp = opt.theta, tmm = opt.theta;
      tpp[a] += h, tpp[b] += h;
      tpm[a] += h, tpm[b] -= h;
      tmp[a] -= h, tmp[b] += h;
      tmm[a] -= h, tmm[b] -= h;
      H(a, b) = H(b, a) = (value_at(tpp) - value_at(tpm) - value_at(tmp) + value_at(tmm)) / (4.0 * h * h);
    }
  }
  hp.hessian = H;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(-H);
  Vector lambda = eig.eigenvalues();
  const double lmax = std::max(lambda.maxCoeff(), 1e-8);
  for (Eigen::Index a = 0; a < pp; ++a) {
    if (lambda[a] < 1e-6 * lmax) {
      lambda[a] = 1e-6 * lmax;
      hp.diagnostics.hessian_regularized = true;
    }
  }
  hp.z_to_theta = eig.eigenvectors() * lambda.cwiseSqrt().cwiseInverse().asDiagonal();

  std::map<std::vector<int>, GridPoint> evaluated;
  auto evaluate_point = [&](const std::vector<int>& lattice) {
    HyperParams theta = theta_at(hp, lattice);
    try {
      return to_grid_point(lattice, evaluate_theta(spec, y, theta, cfg, true, warm));
    } catch (const std::runtime_error&) {
      return failed_point(lattice, std::move(theta));
    }
  };
  const std::vector<int> origin(p, 0);
  evaluated.emplace(origin, evaluate_point(origin));
  const double top = evaluated.at(origin).log_corrected;
  if (!std::isfinite(top)) throw ModelError("log posterior is not finite at the mode");

  // walk each axis until the log posterior drops by more than dpi
  const int cap = p <= 2 ? 20 : 4;
  for (std::size_t a = 0; a < p; ++a) {
    for (int dir : {-1, 1}) {
      int k = 1;
      for (; k <= cap; ++k) {
        std::vector<int> lattice(p, 0);
        lattice[a] = dir * k;
        GridPoint g = evaluate_point(lattice);
        const double drop = top - g.log_corrected;
        evaluated.emplace(lattice, std::move(g));
        if (!(drop <= opts.dpi)) break;
      }
      k = std::min(k, cap);
      (dir < 0 ? hp.lower[a] : hp.upper[a]) = dir * k;
    }
  }

  // full product grid over the box
  std::vector<std::vector<int>> box;
  std::vector<int> cur(hp.lower);
  while (true) {
    box.push_back(cur);
    std::size_t a = 0;
    for (; a < p; ++a) {
      if (++cur[a] <= hp.upper[a]) break;
      cur[a] = hp.lower[a];
    }
    if (a == p) break;
  }
  if (box.size() > opts.max_points) {
    std::ostringstream os;
    os << "hyperparameter grid needs " << box.size() << " points (limit " << opts.max_points
       << "); the posterior is too diffuse";
    throw ModelError(os.str());
  }
  std::vector<std::vector<int>> missing;
  for (const auto& l : box) {
    if (!evaluated.count(l)) missing.push_back(l);
  }
  std::vector<GridPoint> fresh(missing.size());
  parallel_for(missing.size(), opts.threads, [&](std::size_t k) { fresh[k] = evaluate_point(missing[k]); });
  for (std::size_t k = 0; k < missing.size(); ++k) evaluated.emplace(missing[k], std::move(fresh[k]));

  hp.diagnostics.evaluations += opt.evaluations + evaluated.size();
  hp.points.reserve(box.size());
  for (const auto& l : box) hp.points.push_back(std::move(evaluated.at(l)));
  hp.mode = hp.points[hp.argmax()].theta;
  normalize_weights(hp);
  return hp;
}

// ---------------------------------------------------------------------------
// Marginals

double PosteriorMarginal::cdf(double t) const {
  if (x.empty()) return 0.0;
  if (t <= x.front()) return 0.0;
  if (t >= x.back()) return 1.0;
  double acc = 0.0;
  for (std::size_t k = 1; k < x.size(); ++k) {
    const double h = x[k] - x[k - 1];
    if (t <= x[k]) {
      const double u = t - x[k - 1];
      const double slope = (density[k] - density[k - 1]) / h;
      return acc + u * (density[k - 1] + 0.5 * slope * u);
    }
    acc += 0.5 * h * (density[k] + density[k - 1]);
  }
  return 1.0;
}

double PosteriorMarginal::quantile(double p) const {
  if (x.empty()) throw ModelError("empty marginal");
  double acc = 0.0;
  for (std::size_t k = 1; k < x.size(); ++k) {
    const double h = x[k] - x[k - 1];
    const double mass = 0.5 * h * (density[k] + density[k - 1]);
    if (acc + mass >= p && mass > 0) {
      // invert the quadratic cumulative of the linear density on this segment
      const double target = p - acc;
      const double a = 0.5 * (density[k] - density[k - 1]) / h;
      const double b = density[k - 1];
      double u;
      if (std::abs(a) < 1e-300 || std::abs(a * h) < 1e-12 * std::abs(b)) {
        u = target / b;
      } else {
        const double disc = std::max(0.0, b * b + 4.0 * a * target);
        u = 2.0 * target / (b + std::sqrt(disc));
      }
      return x[k - 1] + std::clamp(u, 0.0, h);
    }
    acc += mass;
  }
  return x.back();
}

PosteriorMarginal::Summary PosteriorMarginal::transformed(const std::function<double(double)>& g) const {
  Summary s;
  std::vector<double> gx(x.size());
  std::transform(x.begin(), x.end(), gx.begin(), g);
  double m1 = 0.0;
  double m2 = 0.0;
  for (std::size_t k = 1; k < x.size(); ++k) {
    const double h = 0.5 * (x[k] - x[k - 1]);
    m1 += h * (gx[k] * density[k] + gx[k - 1] * density[k - 1]);
    m2 += h * (gx[k] * gx[k] * density[k] + gx[k - 1] * gx[k - 1] * density[k - 1]);
  }
  s.mean = m1;
  s.sd = std::sqrt(std::max(0.0, m2 - m1 * m1));
  const bool increasing = gx.back() >= gx.front();
  s.q50 = g(quantile(0.5));
  s.q025 = g(quantile(increasing ? 0.025 : 0.975));
  s.q975 = g(quantile(increasing ? 0.975 : 0.025));
  return s;
}

PosteriorMarginal make_marginal(std::vector<double> x, std::vector<double> density) {
  if (x.size() != density.size() || x.size() < 2) throw ModelError("marginal needs at least two abscissae");
  PosteriorMarginal m;
  m.x = std::move(x);
  m.density = std::move(density);
  double total = 0.0;
  for (std::size_t k = 1; k < m.x.size(); ++k) {
    total += 0.5 * (m.x[k] - m.x[k - 1]) * (m.density[k] + m.density[k - 1]);
  }
  if (!(total > 0)) throw ModelError("marginal density has no mass");
  for (auto& d : m.density) d /= total;
  const auto s = m.transformed([](double t) { return t; });
  m.mean = s.mean;
  m.sd = s.sd;
  m.q025 = s.q025;
  m.q50 = s.q50;
  m.q975 = s.q975;
  return m;
}

PosteriorMarginal hyper_marginal(const HyperPosterior& hp, std::size_t j) {
  const std::size_t p = hp.dim;
  if (j >= p) throw ModelError("hyperparameter index out of range");
  const LatticeField field(hp);
  constexpr std::size_t kPoints = 200;
  const auto jj = static_cast<Eigen::Index>(j);
  const double centre = hp.theta_star[j];

  if (p == 1) {
    const double scale = hp.dz * hp.z_to_theta(0, 0);
    std::vector<double> x(kPoints);
    std::vector<double> logd(kPoints);
    for (std::size_t k = 0; k < kPoints; ++k) {
      const double t = hp.lower[0] + (hp.upper[0] - hp.lower[0]) * static_cast<double>(k) / (kPoints - 1);
      x[k] = centre + scale * t;
      logd[k] = field.interpolate({t});
    }
    if (scale < 0) {
      std::reverse(x.begin(), x.end());
      std::reverse(logd.begin(), logd.end());
    }
    const double top = *std::max_element(logd.begin(), logd.end());
    std::vector<double> d(kPoints);
    for (std::size_t k = 0; k < kPoints; ++k) d[k] = std::exp(logd[k] - top);
    return make_marginal(std::move(x), std::move(d));
  }

  // p >= 2: integrate the interpolated density on a refined lattice and bin
  // by theta_j.
  constexpr int kRefine = 8;
  std::vector<double> row(p);
  for (std::size_t a = 0; a < p; ++a) row[a] = hp.dz * hp.z_to_theta(jj, static_cast<Eigen::Index>(a));
  double lo = centre;
  double hi = centre;
  double max_step = 0.0;
  for (std::size_t a = 0; a < p; ++a) {
    lo += std::min(row[a] * hp.lower[a], row[a] * hp.upper[a]);
    hi += std::max(row[a] * hp.lower[a], row[a] * hp.upper[a]);
    max_step = std::max(max_step, std::abs(row[a]) / kRefine);
  }
  std::vector<int> count(p);
  std::size_t total = 1;
  for (std::size_t a = 0; a < p; ++a) {
    count[a] = (hp.upper[a] - hp.lower[a]) * kRefine + 1;
    total *= static_cast<std::size_t>(count[a]);
  }
  std::vector<double> logv(total);
  std::vector<double> tj(total);
  std::vector<double> t(p);
  std::vector<int> idx(p, 0);
  for (std::size_t n = 0; n < total; ++n) {
    std::size_t rem = n;
    double th = centre;
    for (std::size_t a = 0; a < p; ++a) {
      idx[a] = static_cast<int>(rem % static_cast<std::size_t>(count[a]));
      rem /= static_cast<std::size_t>(count[a]);
      t[a] = hp.lower[a] + static_cast<double>(idx[a]) / kRefine;
      th += row[a] * t[a];
    }
    logv[n] = field.interpolate(t);
    tj[n] = th;
  }
  const double top = *std::max_element(logv.begin(), logv.end());
  const double width = (hi - lo) / (kPoints - 1);
  std::vector<double> binned(kPoints, 0.0);
  for (std::size_t n = 0; n < total; ++n) {
    const double w = std::exp(logv[n] - top);
    const double pos = (tj[n] - lo) / width;
    const auto k0 = static_cast<std::size_t>(std::clamp(std::floor(pos), 0.0, static_cast<double>(kPoints - 2)));
    const double frac = std::clamp(pos - static_cast<double>(k0), 0.0, 1.0);
    binned[k0] += w * (1.0 - frac);
    binned[k0 + 1] += w * frac;
  }
  const double bw = std::max(width, max_step);
  std::vector<double> x(kPoints);
  std::vector<double> d(kPoints, 0.0);
  for (std::size_t k = 0; k < kPoints; ++k) x[k] = lo + width * static_cast<double>(k);
  for (std::size_t k = 0; k < kPoints; ++k) {
    for (std::size_t m = 0; m < kPoints; ++m) {
      const double u = (x[k] - x[m]) / bw;
      if (std::abs(u) < 6.0) d[k] += binned[m] * std::exp(-0.5 * u * u);
    }
  }
  return make_marginal(std::move(x), std::move(d));
}

PosteriorMarginal latent_marginal(const ModelSpec& spec, const HyperPosterior& hp, std::size_t i) {
  if (i >= spec.n_latent()) throw ModelError("latent index out of range");
  const auto ii = static_cast<Eigen::Index>(i);
  const bool fixed = is_fixed(hp.fixed_index_set, i);
  std::size_t slot = 0;
  if (fixed) {
    slot = static_cast<std::size_t>(
        std::find(hp.fixed_index_set.begin(), hp.fixed_index_set.end(), i) - hp.fixed_index_set.begin());
  }

  struct Component {
    double weight;
    double centre;
    double sd;
    const SkewNormalMarginal* sn;
  };
  std::vector<Component> comps;
  for (const auto& g : hp.points) {
    if (!(g.weight > 0)) continue;
    const SkewNormalMarginal* sn = fixed && slot < g.marginals.size() ? &g.marginals[slot] : nullptr;
    comps.push_back({g.weight, sn ? sn->improved_mean : g.mode[ii], g.sd[ii], sn});
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& c : comps) {
    lo = std::min(lo, c.centre - 5.0 * c.sd);
    hi = std::max(hi, c.centre + 5.0 * c.sd);
  }
  constexpr std::size_t kPoints = 400;
  std::vector<double> x(kPoints);
  std::vector<double> d(kPoints, 0.0);
  for (std::size_t k = 0; k < kPoints; ++k) {
    x[k] = lo + (hi - lo) * static_cast<double>(k) / (kPoints - 1);
    for (const auto& c : comps) {
      const double lp = c.sn ? c.sn->logpdf(x[k]) : normal_logpdf((x[k] - c.centre) / c.sd) - std::log(c.sd);
      d[k] += c.weight * std::exp(lp);
    }
  }
  return make_marginal(std::move(x), std::move(d));
}

void write_marginal_csv(const PosteriorMarginal& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot open " + path + " for writing");
  out << "x,density\n" << std::setprecision(17);
  for (std::size_t k = 0; k < m.x.size(); ++k) out << m.x[k] << ',' << m.density[k] << '\n';
}

}  // namespace cinla
