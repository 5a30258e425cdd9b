#include "cinla/model.hpp"

#include "cinla/detail/overloaded.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace cinla {

namespace {

using detail::overloaded;

double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double logistic(double t) {
  if (t >= 0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double log_choose(int m, int y) {
  return std::lgamma(m + 1.0) - std::lgamma(y + 1.0) - std::lgamma(m - y + 1.0);
}

void require_theta(const HyperParams& theta, std::size_t k) {
  if (k >= theta.size()) {
    std::ostringstream os;
    os << "hyperparameter index " << k << " out of range (p = " << theta.size() << ")";
    throw ModelError(os.str());
  }
}

}  // namespace

std::size_t LatentBlock::size() const {
  return std::visit(overloaded{[](const FixedEffects& b) { return b.count; },
                               [](const IidNormal& b) { return b.clusters; },
                               [](const BivariateIid& b) { return 2 * b.clusters; },
                               [](const AR1& b) { return b.length; }},
                    kind);
}

std::string family_name(Family f) {
  switch (f) {
    case Family::BernoulliLogit: return "bernoulli";
    case Family::BinomialLogit: return "binomial";
    case Family::PoissonLog: return "poisson";
    case Family::GaussianIdentity: return "gaussian";
  }
  return "unknown";
}

Family family_from_name(const std::string& name) {
  if (name == "bernoulli") return Family::BernoulliLogit;
  if (name == "binomial") return Family::BinomialLogit;
  if (name == "poisson") return Family::PoissonLog;
  if (name == "gaussian") return Family::GaussianIdentity;
  throw ModelError("unknown likelihood family '" + name + "'");
}

std::size_t ModelSpec::n_latent() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.size();
  return n;
}

std::vector<std::size_t> derive_fixed_index_set(const std::vector<LatentBlock>& blocks) {
  std::vector<std::size_t> out;
  for (const auto& b : blocks) {
    const bool fixed = std::holds_alternative<FixedEffects>(b.kind);
    const bool length_one = !fixed && b.size() == 1;
    if (fixed || length_one) {
      for (std::size_t k = 0; k < b.size(); ++k) out.push_back(b.offset + k);
    }
  }
  return out;
}

void ModelSpec::finalize() {
  std::size_t off = 0;
  for (auto& b : blocks) {
    b.offset = off;
    off += b.size();
  }
  fixed_index_set = derive_fixed_index_set(blocks);
}

void ModelSpec::validate() const {
  const std::size_t n = n_latent();
  std::size_t off = 0;
  std::size_t n_fixed = 0;
  for (const auto& b : blocks) {
    if (b.offset != off) throw ModelError("latent blocks are not contiguous; call finalize()");
    off += b.size();
    if (b.size() == 0) throw ModelError("empty latent block");
    std::visit(overloaded{[&](const FixedEffects& f) { n_fixed += f.count; },
                          [&](const IidNormal& r) {
                            if (r.precision >= n_hyper) throw ModelError("iid precision index out of range");
                          },
                          [&](const BivariateIid& r) {
                            if (r.log_prec0 >= n_hyper || r.log_prec1 >= n_hyper || r.corr >= n_hyper)
                              throw ModelError("bivariate hyperparameter index out of range");
                          },
                          [&](const AR1& r) {
                            if (r.log_kappa >= n_hyper || r.corr >= n_hyper)
                              throw ModelError("ar1 hyperparameter index out of range");
                          }},
               b.kind);
  }
  if (fixed_prior.size() != n_fixed) {
    std::ostringstream os;
    os << "fixed_prior has " << fixed_prior.size() << " entries but the model has " << n_fixed
       << " fixed effects";
    throw ModelError(os.str());
  }
  for (const auto& p : fixed_prior) {
    if (!(p.variance > 0) || !std::isfinite(p.mean)) throw ModelError("fixed-effect prior variance must be > 0");
  }
  for (std::size_t j = 0; j < design.size(); ++j) {
    if (design[j].empty()) throw ModelError("observation " + std::to_string(j) + " has an empty design row");
    for (const auto& e : design[j]) {
      if (e.latent >= n) throw ModelError("design references latent index " + std::to_string(e.latent) +
                                          " but n = " + std::to_string(n));
      if (!std::isfinite(e.coef)) throw ModelError("non-finite design coefficient");
    }
  }
  if (!trials.empty() && trials.size() != design.size()) throw ModelError("trials length differs from observation count");
  for (int m : trials) {
    if (m < 1) throw ModelError("binomial trials must be >= 1");
  }
  for (const auto& hp : hyper_priors) {
    std::visit(overloaded{[&](const GammaOnPrecision& g) {
                            if (!(g.shape > 0 && g.rate > 0)) throw ModelError("gamma prior needs shape, rate > 0");
                            if (g.theta >= n_hyper) throw ModelError("gamma prior index out of range");
                          },
                          [&](const GaussianOnInternal& g) {
                            if (!(g.variance > 0)) throw ModelError("gaussian prior needs variance > 0");
                            if (g.theta >= n_hyper) throw ModelError("gaussian prior index out of range");
                          },
                          [&](const WishartOnPrecision2x2& w) {
                            if (!(w.df > 1 && w.scale0 > 0 && w.scale1 > 0))
                              throw ModelError("wishart prior needs df > 1 and positive scales");
                            bool attached = false;
                            for (const auto& b : blocks) {
                              if (const auto* bi = std::get_if<BivariateIid>(&b.kind)) {
                                attached |= bi->log_prec0 == w.log_prec0 && bi->log_prec1 == w.log_prec1 &&
                                            bi->corr == w.corr;
                              }
                            }
                            if (!attached) throw ModelError("wishart prior must target a bivariate iid block");
                          }},
               hp);
  }
  const auto expected = derive_fixed_index_set(blocks);
  if (fixed_index_set != expected) throw ModelError("fixed_index_set does not match the latent blocks");
}

Vector ModelSpec::linear_predictor(const Vector& x) const {
  Vector eta(static_cast<Eigen::Index>(design.size()));
  for (std::size_t j = 0; j < design.size(); ++j) {
    double s = 0.0;
    for (const auto& e : design[j]) s += e.coef * x[static_cast<Eigen::Index>(e.latent)];
    eta[static_cast<Eigen::Index>(j)] = s;
  }
  return eta;
}

Vector ModelSpec::prior_mean() const {
  Vector m = Vector::Zero(static_cast<Eigen::Index>(n_latent()));
  std::size_t f = 0;
  for (const auto& b : blocks) {
    if (std::holds_alternative<FixedEffects>(b.kind)) {
      for (std::size_t k = 0; k < b.size(); ++k) m[static_cast<Eigen::Index>(b.offset + k)] = fixed_prior[f++].mean;
    }
  }
  return m;
}

Eigen::Matrix2d bivariate_covariance(double log_prec0, double log_prec1, double corr_internal) {
  const double v0 = std::exp(-log_prec0);
  const double v1 = std::exp(-log_prec1);
  const double rho = rho_from_internal(corr_internal);
  Eigen::Matrix2d S;
  S << v0, rho * std::sqrt(v0 * v1), rho * std::sqrt(v0 * v1), v1;
  return S;
}

Matrix ar1_unit_precision(std::size_t length, double rho) {
  const auto n = static_cast<Eigen::Index>(length);
  Matrix R = Matrix::Zero(n, n);
  if (n == 1) {
    R(0, 0) = 1.0;
    return R;
  }
  const double tau = 1.0 / (1.0 - rho * rho);
  for (Eigen::Index i = 0; i < n; ++i) {
    R(i, i) = (i == 0 || i == n - 1) ? tau : tau * (1.0 + rho * rho);
    if (i + 1 < n) {
      R(i, i + 1) = -rho * tau;
      R(i + 1, i) = -rho * tau;
    }
  }
  return R;
}

PriorPrecision build_prior_precision(const ModelSpec& spec, const HyperParams& theta) {
  if (theta.size() != spec.n_hyper) {
    throw ModelError("theta has dimension " + std::to_string(theta.size()) + ", model expects " +
                     std::to_string(spec.n_hyper));
  }
  if (!theta.all_finite()) throw ModelError("non-finite hyperparameter");

  const auto n = static_cast<Eigen::Index>(spec.n_latent());
  PriorPrecision out{Matrix::Zero(n, n), 0.0};
  std::size_t f = 0;
  for (const auto& b : spec.blocks) {
    const auto off = static_cast<Eigen::Index>(b.offset);
    std::visit(overloaded{[&](const FixedEffects& fe) {
                            for (std::size_t k = 0; k < fe.count; ++k) {
                              const double prec = 1.0 / spec.fixed_prior[f++].variance;
                              out.Q(off + static_cast<Eigen::Index>(k), off + static_cast<Eigen::Index>(k)) = prec;
                              out.log_det += std::log(prec);
                            }
                          },
                          [&](const IidNormal& r) {
                            require_theta(theta, r.precision);
                            const double lp = theta[r.precision];
                            for (std::size_t k = 0; k < r.clusters; ++k) {
                              const auto i = off + static_cast<Eigen::Index>(k);
                              out.Q(i, i) = std::exp(lp);
                            }
                            out.log_det += static_cast<double>(r.clusters) * lp;
                          },
                          [&](const BivariateIid& r) {
                            require_theta(theta, r.log_prec0);
                            require_theta(theta, r.log_prec1);
                            require_theta(theta, r.corr);
                            const Eigen::Matrix2d S =
                                bivariate_covariance(theta[r.log_prec0], theta[r.log_prec1], theta[r.corr]);
                            const double det = S.determinant();
                            if (!(det > 0)) throw ModelError("bivariate covariance is not positive definite");
                            const Eigen::Matrix2d W = S.inverse();
                            for (std::size_t k = 0; k < r.clusters; ++k) {
                              const auto i = off + 2 * static_cast<Eigen::Index>(k);
                              out.Q.block<2, 2>(i, i) = W;
                            }
                            out.log_det -= static_cast<double>(r.clusters) * std::log(det);
                          },
                          [&](const AR1& r) {
                            require_theta(theta, r.log_kappa);
                            require_theta(theta, r.corr);
                            const double rho = rho_from_internal(theta[r.corr]);
                            if (!(std::abs(rho) < 1.0)) throw ModelError("ar1 correlation outside (-1, 1)");
                            const double kappa = std::exp(theta[r.log_kappa]);
                            const auto len = static_cast<Eigen::Index>(r.length);
                            out.Q.block(off, off, len, len) = kappa * ar1_unit_precision(r.length, rho);
                            // |Q| = kappa * tau^(n-1), tau = kappa / (1 - rho^2)
                            out.log_det += theta[r.log_kappa] +
                                           static_cast<double>(r.length - 1) *
                                               (theta[r.log_kappa] - std::log1p(-rho * rho));
                          }},
               b.kind);
  }
  return out;
}

void check_observation(const LikelihoodFamily& family, double y, int trials) {
  if (!std::isfinite(y)) throw ModelError("non-finite observation");
  switch (family.kind) {
    case Family::BernoulliLogit:
      if (y != 0.0 && y != 1.0) throw ModelError("bernoulli observation must be 0 or 1, got " + std::to_string(y));
      break;
    case Family::BinomialLogit:
      if (y < 0 || y > trials || y != std::floor(y))
        throw ModelError("binomial observation must be an integer in [0, m], got " + std::to_string(y));
      break;
    case Family::PoissonLog:
      if (y < 0 || y != std::floor(y))
        throw ModelError("poisson observation must be a non-negative integer, got " + std::to_string(y));
      break;
    case Family::GaussianIdentity: break;
  }
}

LoglikTerms loglik_terms(const LikelihoodFamily& family, double eta, double y, int trials) {
  LoglikTerms t;
  switch (family.kind) {
    case Family::BernoulliLogit:
    case Family::BinomialLogit: {
      const int m = family.kind == Family::BernoulliLogit ? 1 : trials;
      const double p = logistic(eta);
      const double v = p * (1.0 - p);
      t.value = y * eta - m * softplus(eta) + (m > 1 ? log_choose(m, static_cast<int>(y)) : 0.0);
      t.d1 = y - m * p;
      t.d2 = -m * v;
      t.d3 = -m * v * (1.0 - 2.0 * p);
      break;
    }
    case Family::PoissonLog: {
      const double mu = std::exp(eta);
      t.value = y * eta - mu - std::lgamma(y + 1.0);
      t.d1 = y - mu;
      t.d2 = -mu;
      t.d3 = -mu;
      break;
    }
    case Family::GaussianIdentity: {
      const double prec = family.gaussian_precision;
      const double r = y - eta;
      t.value = 0.5 * std::log(prec / (2.0 * std::numbers::pi)) - 0.5 * prec * r * r;
      t.d1 = prec * r;
      t.d2 = -prec;
      t.d3 = 0.0;
      break;
    }
  }
  return t;
}

double loglik_value(const LikelihoodFamily& family, double eta, double y, int trials) {
  switch (family.kind) {
    case Family::BernoulliLogit:
      return y * eta - softplus(eta);
    case Family::BinomialLogit:
      return y * eta - trials * softplus(eta) + (trials > 1 ? log_choose(trials, static_cast<int>(y)) : 0.0);
    case Family::PoissonLog:
      return y * eta - std::exp(eta) - std::lgamma(y + 1.0);
    case Family::GaussianIdentity: {
      const double r = y - eta;
      return 0.5 * std::log(family.gaussian_precision / (2.0 * std::numbers::pi)) -
             0.5 * family.gaussian_precision * r * r;
    }
  }
  return 0.0;
}

double log_prior_single(const HyperPrior& prior, const HyperParams& theta) {
  return std::visit(
      overloaded{[&](const GammaOnPrecision& g) {
                   require_theta(theta, g.theta);
                   const double t = theta[g.theta];
                   // Gamma(a, b) density of exp(t) times the Jacobian exp(t)
                   return g.shape * std::log(g.rate) - std::lgamma(g.shape) + g.shape * t - g.rate * std::exp(t);
                 },
                 [&](const GaussianOnInternal& g) {
                   require_theta(theta, g.theta);
                   const double d = theta[g.theta] - g.mean;
                   return -0.5 * std::log(2.0 * std::numbers::pi * g.variance) - 0.5 * d * d / g.variance;
                 },
                 [&](const WishartOnPrecision2x2& w) {
                   require_theta(theta, w.log_prec0);
                   require_theta(theta, w.log_prec1);
                   require_theta(theta, w.corr);
                   const double a = std::exp(-theta[w.log_prec0]);
                   const double c = std::exp(-theta[w.log_prec1]);
                   const double rho = rho_from_internal(theta[w.corr]);
                   const double one_m_r2 = 1.0 - rho * rho;
                   const double det_s = a * c * one_m_r2;
                   // W = S^{-1}
                   const double w11 = 1.0 / (a * one_m_r2);
                   const double w22 = 1.0 / (c * one_m_r2);
                   const double r = w.df;
                   const double log_det_w = -std::log(det_s);
                   const double log_wishart = 0.5 * (r - 3.0) * log_det_w - 0.5 * (w.scale0 * w11 + w.scale1 * w22) +
                                              0.5 * r * std::log(w.scale0 * w.scale1) - r * std::log(2.0) -
                                              0.5 * std::log(std::numbers::pi) - std::lgamma(0.5 * r) -
                                              std::lgamma(0.5 * (r - 1.0));
                   // theta -> (a, c, rho) -> S -> W
                   const double log_jac = -3.0 * std::log(det_s) + 0.5 * std::log(a * c) + std::log(a) + std::log(c) +
                                          std::log(0.5 * one_m_r2);
                   return log_wishart + log_jac;
                 }},
      prior);
}

double log_prior_hyper(const ModelSpec& spec, const HyperParams& theta) {
  if (!theta.all_finite()) throw ModelError("non-finite hyperparameter");
  double s = 0.0;
  for (const auto& p : spec.hyper_priors) s += log_prior_single(p, theta);
  return s;
}

double log_latent_prior(const ModelSpec& spec, const PriorPrecision& prior, const Vector& x) {
  const Vector d = x - spec.prior_mean();
  const double n = static_cast<double>(x.size());
  return -0.5 * n * std::log(2.0 * std::numbers::pi) + 0.5 * prior.log_det - 0.5 * d.dot(prior.Q * d);
}

double log_likelihood(const ModelSpec& spec, const Vector& y, const Vector& eta) {
  double s = 0.0;
  for (std::size_t j = 0; j < spec.n_obs(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    s += loglik_terms(spec.likelihood, eta[jj], y[jj], spec.trials_at(j)).value;
  }
  return s;
}

void check_observations(const ModelSpec& spec, const Vector& y) {
  if (static_cast<std::size_t>(y.size()) != spec.n_obs()) {
    throw ModelError("expected " + std::to_string(spec.n_obs()) + " observations, got " + std::to_string(y.size()));
  }
  const int m_default = 1;
  for (std::size_t j = 0; j < spec.n_obs(); ++j) {
    check_observation(spec.likelihood, y[static_cast<Eigen::Index>(j)],
                      spec.trials.empty() ? m_default : spec.trials[j]);
  }
}

}  // namespace cinla
