#include "cinla/mcmc.hpp"

#include "cinla/detail/overloaded.hpp"
#include "cinla/parallel.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>

namespace cinla {

using detail::overloaded;

void ChainConfig::validate() const {
  if (n_iter == 0) throw ModelError("n_iter must be positive");
  if (burn_in >= n_iter) throw ModelError("burn_in must be smaller than n_iter");
  if (thin == 0) throw ModelError("thin must be at least 1");
  if (n_chains == 0) throw ModelError("n_chains must be at least 1");
  if (adapt_batch == 0) throw ModelError("adapt_batch must be at least 1");
}

const std::vector<double>& PosteriorSamples::latent_draws(std::size_t latent) const {
  const auto it = std::find(latent_index.begin(), latent_index.end(), latent);
  if (it == latent_index.end()) throw ModelError("latent " + std::to_string(latent) + " was not tracked");
  return this->latent[static_cast<std::size_t>(it - latent_index.begin())];
}

double gibbs_precision(double shape, double rate, std::size_t k, double sum_sq, std::mt19937_64& rng) {
  std::gamma_distribution<double> g(shape + 0.5 * static_cast<double>(k), 1.0 / (rate + 0.5 * sum_sq));
  return g(rng);
}

Eigen::Matrix2d gibbs_wishart(double df, const Eigen::Matrix2d& inv_scale, std::mt19937_64& rng) {
  const Eigen::Matrix2d V = inv_scale.inverse();
  const Eigen::Matrix2d L = V.llt().matrixL();
  std::chi_squared_distribution<double> c0(df);
  std::chi_squared_distribution<double> c1(df - 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::Matrix2d A = Eigen::Matrix2d::Zero();
  A(0, 0) = std::sqrt(c0(rng));
  A(1, 1) = std::sqrt(c1(rng));
  A(1, 0) = z(rng);
  const Eigen::Matrix2d LA = L * A;
  return LA * LA.transpose();
}

namespace {

// adaptive proposal scale with batch acceptance bookkeeping
struct Proposal {
  double log_step = 0.0;
  std::size_t batch_acc = 0;
  std::size_t batch_tries = 0;
  std::size_t acc = 0;
  std::size_t tries = 0;

  double step() const { return std::exp(log_step); }
  void record(bool accepted, bool adapting) {
    if (adapting) {
      ++batch_tries;
      batch_acc += accepted ? 1 : 0;
    } else {
      ++tries;
      acc += accepted ? 1 : 0;
    }
  }
  void adapt(std::size_t batch_no, double target) {
    if (batch_tries == 0) return;
    const double rate = static_cast<double>(batch_acc) / static_cast<double>(batch_tries);
    const double delta = std::min(0.5, 1.0 / std::sqrt(static_cast<double>(batch_no)));
    log_step += rate > target ? delta : -delta;
    batch_acc = 0;
    batch_tries = 0;
  }
};

struct ShiftMove {
  std::size_t fixed_latent = 0;
  std::size_t block = 0;
};

class Sampler {
 public:
  Sampler(const ModelSpec& spec, const Vector& y, const ChainConfig& cfg, std::uint64_t seed)
      : spec_(spec), y_(y), cfg_(cfg), rng_(seed) {
    const std::size_t n = spec.n_latent();
    obs_of_.resize(n);
    for (std::size_t j = 0; j < spec.n_obs(); ++j) {
      for (const auto& e : spec.design[j]) obs_of_[e.latent].push_back({j, e.coef});
    }
    block_of_.resize(n);
    prior_mean_ = spec.prior_mean();
    fixed_prec_ = Vector::Zero(static_cast<Eigen::Index>(n));
    std::size_t f = 0;
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
      const auto& blk = spec.blocks[b];
      for (std::size_t k = 0; k < blk.size(); ++k) block_of_[blk.offset + k] = b;
      if (const auto* fe = std::get_if<FixedEffects>(&blk.kind)) {
        for (std::size_t k = 0; k < fe->count; ++k) {
          fixed_prec_[static_cast<Eigen::Index>(blk.offset + k)] = 1.0 / spec.fixed_prior[f++].variance;
        }
      }
    }
    classify_hyper_updates();
    find_shift_moves();
  }

  void set_state(const Vector& x, const Vector& theta) {
    x_ = x;
    theta_ = HyperParams(theta);
    refresh_likelihood();
    init_steps();
  }

  void default_start() {
    std::normal_distribution<double> z(0.0, 1.0);
    Vector theta(static_cast<Eigen::Index>(spec_.n_hyper));
    for (Eigen::Index j = 0; j < theta.size(); ++j) theta[j] = 0.5 * z(rng_);
    set_state(prior_mean_, theta);
  }

  void iterate(bool adapting) {
    latent_sweep(adapting);
    hyper_updates(adapting);
    if (cfg_.extra_moves) {
      scale_moves(adapting);
      shift_moves(adapting);
    }
  }

  void adapt(std::size_t batch_no) {
    for (auto& p : latent_prop_) p.adapt(batch_no, 0.44);
    for (auto& p : hyper_prop_) p.adapt(batch_no, 0.44);
    for (auto& p : scale_prop_) p.adapt(batch_no, 0.44);
    for (auto& p : shift_prop_) p.adapt(batch_no, 0.44);
  }

  const Vector& x() const { return x_; }
  const HyperParams& theta() const { return theta_; }

  std::vector<AcceptanceRate> acceptance() const {
    std::vector<AcceptanceRate> out;
    auto rate = [](const std::vector<Proposal>& ps) {
      std::size_t a = 0;
      std::size_t t = 0;
      for (const auto& p : ps) {
        a += p.acc;
        t += p.tries;
      }
      return t ? static_cast<double>(a) / static_cast<double>(t) : 0.0;
    };
    out.push_back({"latent", rate(latent_prop_)});
    for (std::size_t j = 0; j < hyper_prop_.size(); ++j) {
      if (hyper_method_[j] == HyperMethod::RandomWalk) {
        out.push_back({"theta[" + std::to_string(j) + "]", rate({hyper_prop_[j]})});
      }
    }
    if (!scale_prop_.empty()) out.push_back({"scale", rate(scale_prop_)});
    if (!shift_prop_.empty()) out.push_back({"shift", rate(shift_prop_)});
    return out;
  }

 private:
  enum class HyperMethod { RandomWalk, GammaIid, GammaAr1, Wishart };

  struct Obs {
    std::size_t j;
    double coef;
  };

  double ll(std::size_t j, double eta) const {
    return loglik_value(spec_.likelihood, eta, y_[static_cast<Eigen::Index>(j)], spec_.trials_at(j));
  }

  void refresh_likelihood() {
    eta_ = spec_.linear_predictor(x_);
    ll_.resize(eta_.size());
    for (Eigen::Index j = 0; j < eta_.size(); ++j) ll_[j] = ll(static_cast<std::size_t>(j), eta_[j]);
  }

  // -1/2 q (x_k - m_k)^2 - off (x_k - m_k) is the x_k-dependent part of log pi(x | theta)
  void prior_row(std::size_t k, double& q, double& off) const {
    const auto& blk = spec_.blocks[block_of_[k]];
    const std::size_t i = k - blk.offset;
    off = 0.0;
    std::visit(overloaded{[&](const FixedEffects&) { q = fixed_prec_[static_cast<Eigen::Index>(k)]; },
                          [&](const IidNormal& r) { q = std::exp(theta_[r.precision]); },
                          [&](const BivariateIid& r) {
                            const Eigen::Matrix2d W =
                                bivariate_covariance(theta_[r.log_prec0], theta_[r.log_prec1], theta_[r.corr])
                                    .inverse();
                            const std::size_t a = i % 2;
                            const std::size_t partner = a == 0 ? k + 1 : k - 1;
                            q = W(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a));
                            off = W(0, 1) * x_[static_cast<Eigen::Index>(partner)];
                          },
                          [&](const AR1& r) {
                            const double kappa = std::exp(theta_[r.log_kappa]);
                            if (r.length == 1) {
                              q = kappa;
                              return;
                            }
                            const double rho = rho_from_internal(theta_[r.corr]);
                            const double tau = kappa / (1.0 - rho * rho);
                            const bool end = i == 0 || i + 1 == r.length;
                            q = end ? tau : tau * (1.0 + rho * rho);
                            double nb = 0.0;
                            if (i > 0) nb += x_[static_cast<Eigen::Index>(k - 1)];
                            if (i + 1 < r.length) nb += x_[static_cast<Eigen::Index>(k + 1)];
                            off = -tau * rho * nb;
                          }},
               blk.kind);
  }

  void init_steps() {
    const std::size_t n = spec_.n_latent();
    latent_prop_.assign(n, Proposal{});
    for (std::size_t k = 0; k < n; ++k) {
      double q = 0.0;
      double off = 0.0;
      prior_row(k, q, off);
      double info = q;
      for (const auto& o : obs_of_[k]) {
        double w = 0.25;
        switch (spec_.likelihood.kind) {
          case Family::BernoulliLogit: w = 0.25; break;
          case Family::BinomialLogit: w = 0.25 * spec_.trials_at(o.j); break;
          case Family::PoissonLog: w = std::max(1.0, y_[static_cast<Eigen::Index>(o.j)]); break;
          case Family::GaussianIdentity: w = spec_.likelihood.gaussian_precision; break;
        }
        info += o.coef * o.coef * w;
      }
      latent_prop_[k].log_step = std::log(2.4 / std::sqrt(std::max(info, 1e-8)));
    }
    hyper_prop_.assign(spec_.n_hyper, Proposal{std::log(0.5)});
    scale_prop_.assign(scale_blocks_.size(), Proposal{std::log(0.1)});
    shift_prop_.assign(shifts_.size(), Proposal{std::log(0.1)});
  }

  void latent_sweep(bool adapting) {
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const std::size_t n = spec_.n_latent();
    for (std::size_t k = 0; k < n; ++k) {
      auto& prop = latent_prop_[k];
      const double delta = prop.step() * z(rng_);
      double q = 0.0;
      double off = 0.0;
      prior_row(k, q, off);
      const double d = x_[static_cast<Eigen::Index>(k)] - prior_mean_[static_cast<Eigen::Index>(k)];
      double log_ratio = -0.5 * q * ((d + delta) * (d + delta) - d * d) - off * delta;
      scratch_.clear();
      for (const auto& o : obs_of_[k]) {
        const double eta_new = eta_[static_cast<Eigen::Index>(o.j)] + o.coef * delta;
        const double l_new = ll(o.j, eta_new);
        log_ratio += l_new - ll_[static_cast<Eigen::Index>(o.j)];
        scratch_.push_back(l_new);
      }
      const bool accept = std::log(u(rng_)) < log_ratio;
      if (accept) {
        x_[static_cast<Eigen::Index>(k)] += delta;
        std::size_t s = 0;
        for (const auto& o : obs_of_[k]) {
          eta_[static_cast<Eigen::Index>(o.j)] += o.coef * delta;
          ll_[static_cast<Eigen::Index>(o.j)] = scratch_[s++];
        }
      }
      prop.record(accept, adapting);
    }
  }

  // log pi(block | theta) up to constants not involving theta
  double block_log_density(const LatentBlock& blk, const HyperParams& theta) const {
    const auto off = static_cast<Eigen::Index>(blk.offset);
    return std::visit(
        overloaded{[&](const FixedEffects&) { return 0.0; },
                   [&](const IidNormal& r) {
                     const double ss = x_.segment(off, static_cast<Eigen::Index>(r.clusters)).squaredNorm();
                     return 0.5 * static_cast<double>(r.clusters) * theta[r.precision] -
                            0.5 * std::exp(theta[r.precision]) * ss;
                   },
                   [&](const BivariateIid& r) {
                     const Eigen::Matrix2d S =
                         bivariate_covariance(theta[r.log_prec0], theta[r.log_prec1], theta[r.corr]);
                     const Eigen::Matrix2d W = S.inverse();
                     double quad = 0.0;
                     for (std::size_t c = 0; c < r.clusters; ++c) {
                       const Eigen::Vector2d b = x_.segment<2>(off + 2 * static_cast<Eigen::Index>(c));
                       quad += b.dot(W * b);
                     }
                     return -0.5 * static_cast<double>(r.clusters) * std::log(S.determinant()) - 0.5 * quad;
                   },
                   [&](const AR1& r) {
                     const double kappa = std::exp(theta[r.log_kappa]);
                     const double rho = rho_from_internal(theta[r.corr]);
                     const auto len = static_cast<double>(r.length);
                     const double quad = ar1_quadratic(blk, r, rho);
                     return 0.5 * len * theta[r.log_kappa] - 0.5 * (len - 1.0) * std::log1p(-rho * rho) -
                            0.5 * kappa * quad;
                   }},
        blk.kind);
  }

  // u' R u for the unit-marginal-precision AR1 matrix R
  double ar1_quadratic(const LatentBlock& blk, const AR1& r, double rho) const {
    const auto off = static_cast<Eigen::Index>(blk.offset);
    const auto n = static_cast<Eigen::Index>(r.length);
    if (n == 1) return x_[off] * x_[off];
    double s = x_[off] * x_[off] + x_[off + n - 1] * x_[off + n - 1];
    double inner = 0.0;
    double cross = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (i > 0 && i + 1 < n) inner += x_[off + i] * x_[off + i];
      if (i + 1 < n) cross += x_[off + i] * x_[off + i + 1];
    }
    s += (1.0 + rho * rho) * inner - 2.0 * rho * cross;
    return s / (1.0 - rho * rho);
  }

  void classify_hyper_updates() {
    const std::size_t p = spec_.n_hyper;
    std::vector<int> owners(p, 0);
    auto own = [&](std::size_t j) {
      if (j < p) ++owners[j];
    };
    for (const auto& blk : spec_.blocks) {
      std::visit(overloaded{[&](const FixedEffects&) {}, [&](const IidNormal& r) { own(r.precision); },
                            [&](const BivariateIid& r) {
                              own(r.log_prec0);
                              own(r.log_prec1);
                              own(r.corr);
                            },
                            [&](const AR1& r) {
                              own(r.log_kappa);
                              own(r.corr);
                            }},
                 blk.kind);
    }
    std::vector<int> priors_on(p, 0);
    for (const auto& pr : spec_.hyper_priors) {
      std::visit(overloaded{[&](const GammaOnPrecision& g) { ++priors_on[g.theta]; },
                            [&](const GaussianOnInternal& g) { ++priors_on[g.theta]; },
                            [&](const WishartOnPrecision2x2& w) {
                              ++priors_on[w.log_prec0];
                              ++priors_on[w.log_prec1];
                              ++priors_on[w.corr];
                            }},
                 pr);
    }
    hyper_method_.assign(p, HyperMethod::RandomWalk);
    hyper_owner_.assign(p, 0);
    for (std::size_t b = 0; b < spec_.blocks.size(); ++b) {
      const auto& blk = spec_.blocks[b];
      auto single = [&](std::size_t j) { return owners[j] == 1 && priors_on[j] == 1; };
      if (const auto* r = std::get_if<IidNormal>(&blk.kind)) {
        if (single(r->precision) && gamma_prior_on(r->precision)) hyper_method_[r->precision] = HyperMethod::GammaIid;
        hyper_owner_[r->precision] = b;
      } else if (const auto* a = std::get_if<AR1>(&blk.kind)) {
        if (single(a->log_kappa) && gamma_prior_on(a->log_kappa)) hyper_method_[a->log_kappa] = HyperMethod::GammaAr1;
        hyper_owner_[a->log_kappa] = b;
        hyper_owner_[a->corr] = b;
      } else if (const auto* v = std::get_if<BivariateIid>(&blk.kind)) {
        hyper_owner_[v->log_prec0] = hyper_owner_[v->log_prec1] = hyper_owner_[v->corr] = b;
        for (const auto& pr : spec_.hyper_priors) {
          const auto* w = std::get_if<WishartOnPrecision2x2>(&pr);
          if (w && w->log_prec0 == v->log_prec0 && w->log_prec1 == v->log_prec1 && w->corr == v->corr &&
              single(v->log_prec0) && single(v->log_prec1) && single(v->corr)) {
            hyper_method_[v->log_prec0] = hyper_method_[v->log_prec1] = hyper_method_[v->corr] = HyperMethod::Wishart;
          }
        }
      }
    }
    // scale moves for scalar-precision blocks with a single owner
    for (std::size_t b = 0; b < spec_.blocks.size(); ++b) {
      const auto& blk = spec_.blocks[b];
      if (const auto* r = std::get_if<IidNormal>(&blk.kind)) {
        if (owners[r->precision] == 1) scale_blocks_.push_back({b, r->precision});
      } else if (const auto* a = std::get_if<AR1>(&blk.kind)) {
        if (owners[a->log_kappa] == 1) scale_blocks_.push_back({b, a->log_kappa});
      }
    }
  }

  const GammaOnPrecision* gamma_prior_on(std::size_t j) const {
    for (const auto& pr : spec_.hyper_priors) {
      if (const auto* g = std::get_if<GammaOnPrecision>(&pr); g && g->theta == j) return g;
    }
    return nullptr;
  }

  // an intercept-like fixed effect entering every observation of an iid
  // block with coefficient 1 can trade level with that block
  void find_shift_moves() {
    for (std::size_t b = 0; b < spec_.blocks.size(); ++b) {
      const auto& blk = spec_.blocks[b];
      if (!std::holds_alternative<IidNormal>(blk.kind)) continue;
      for (std::size_t f : spec_.fixed_index_set) {
        if (!std::holds_alternative<FixedEffects>(spec_.blocks[block_of_[f]].kind)) continue;
        bool ok = spec_.n_obs() > 0;
        for (std::size_t j = 0; j < spec_.n_obs() && ok; ++j) {
          int in_block = 0;
          bool has_f = false;
          for (const auto& e : spec_.design[j]) {
            if (e.latent >= blk.offset && e.latent < blk.offset + blk.size()) {
              ++in_block;
              ok = ok && e.coef == 1.0;
            }
            if (e.latent == f) {
              has_f = true;
              ok = ok && e.coef == 1.0;
            }
          }
          ok = ok && has_f && in_block == 1;
        }
        if (ok) {
          shifts_.push_back({f, b});
          break;
        }
      }
    }
  }

  void hyper_updates(bool adapting) {
    const std::size_t p = spec_.n_hyper;
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<bool> done(p, false);
    for (std::size_t j = 0; j < p; ++j) {
      if (done[j]) continue;
      const auto& blk = spec_.blocks[hyper_owner_[j]];
      const auto off = static_cast<Eigen::Index>(blk.offset);
      switch (hyper_method_[j]) {
        case HyperMethod::GammaIid: {
          const auto& r = std::get<IidNormal>(blk.kind);
          const auto* g = gamma_prior_on(j);
          const double ss = x_.segment(off, static_cast<Eigen::Index>(r.clusters)).squaredNorm();
          theta_.values[static_cast<Eigen::Index>(j)] = std::log(gibbs_precision(g->shape, g->rate, r.clusters, ss, rng_));
          break;
        }
        case HyperMethod::GammaAr1: {
          const auto& r = std::get<AR1>(blk.kind);
          const auto* g = gamma_prior_on(j);
          const double quad = ar1_quadratic(blk, r, rho_from_internal(theta_[r.corr]));
          theta_.values[static_cast<Eigen::Index>(j)] = std::log(gibbs_precision(g->shape, g->rate, r.length, quad, rng_));
          break;
        }
        case HyperMethod::Wishart: {
          const auto& r = std::get<BivariateIid>(blk.kind);
          const WishartOnPrecision2x2* w = nullptr;
          for (const auto& pr : spec_.hyper_priors) {
            if (const auto* c = std::get_if<WishartOnPrecision2x2>(&pr); c && c->log_prec0 == r.log_prec0) w = c;
          }
          Eigen::Matrix2d inv_scale = Eigen::Vector2d(w->scale0, w->scale1).asDiagonal();
          for (std::size_t c = 0; c < r.clusters; ++c) {
            const Eigen::Vector2d b = x_.segment<2>(off + 2 * static_cast<Eigen::Index>(c));
            inv_scale += b * b.transpose();
          }
          const Eigen::Matrix2d W = gibbs_wishart(w->df + static_cast<double>(r.clusters), inv_scale, rng_);
          const Eigen::Matrix2d S = W.inverse();
          const double rho = std::clamp(S(0, 1) / std::sqrt(S(0, 0) * S(1, 1)), -1.0 + 1e-15, 1.0 - 1e-15);
          theta_.values[static_cast<Eigen::Index>(r.log_prec0)] = -std::log(S(0, 0));
          theta_.values[static_cast<Eigen::Index>(r.log_prec1)] = -std::log(S(1, 1));
          theta_.values[static_cast<Eigen::Index>(r.corr)] = internal_from_rho(rho);
          done[r.log_prec0] = done[r.log_prec1] = done[r.corr] = true;
          break;
        }
        case HyperMethod::RandomWalk: {
          auto target = [&](const HyperParams& t) {
            double v = log_prior_hyper(spec_, t);
            for (const auto& b : spec_.blocks) {
              if (block_uses(b, j)) v += block_log_density(b, t);
            }
            return v;
          };
          auto& prop = hyper_prop_[j];
          HyperParams next = theta_;
          next.values[static_cast<Eigen::Index>(j)] += prop.step() * z(rng_);
          const double log_ratio = target(next) - target(theta_);
          const bool accept = std::log(u(rng_)) < log_ratio;
          if (accept) theta_ = next;
          prop.record(accept, adapting);
          break;
        }
      }
      done[j] = true;
    }
  }

  static bool block_uses(const LatentBlock& blk, std::size_t j) {
    return std::visit(overloaded{[&](const FixedEffects&) { return false; },
                                 [&](const IidNormal& r) { return r.precision == j; },
                                 [&](const BivariateIid& r) {
                                   return r.log_prec0 == j || r.log_prec1 == j || r.corr == j;
                                 },
                                 [&](const AR1& r) { return r.log_kappa == j || r.corr == j; }},
                      blk.kind);
  }

  // u -> c u, log precision -> log precision - 2 log c; the latent prior
  // ratio cancels the Jacobian, leaving likelihood and hyperprior
  void scale_moves(bool adapting) {
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t s = 0; s < scale_blocks_.size(); ++s) {
      const auto [b, j] = scale_blocks_[s];
      const auto& blk = spec_.blocks[b];
      auto& prop = scale_prop_[s];
      const double log_c = prop.step() * z(rng_);
      const double c = std::exp(log_c);
      eta_trial_ = eta_;
      for (std::size_t k = blk.offset; k < blk.offset + blk.size(); ++k) {
        const double dx = (c - 1.0) * x_[static_cast<Eigen::Index>(k)];
        for (const auto& o : obs_of_[k]) eta_trial_[static_cast<Eigen::Index>(o.j)] += o.coef * dx;
      }
      touched_.clear();
      mark_.assign(spec_.n_obs(), 0);
      double log_ratio = 0.0;
      ll_trial_ = ll_;
      for (std::size_t k = blk.offset; k < blk.offset + blk.size(); ++k) {
        for (const auto& o : obs_of_[k]) {
          if (mark_[o.j]) continue;
          mark_[o.j] = 1;
          touched_.push_back(o.j);
          const auto jj = static_cast<Eigen::Index>(o.j);
          ll_trial_[jj] = ll(o.j, eta_trial_[jj]);
          log_ratio += ll_trial_[jj] - ll_[jj];
        }
      }
      HyperParams next = theta_;
      next.values[static_cast<Eigen::Index>(j)] -= 2.0 * log_c;
      log_ratio += log_prior_hyper(spec_, next) - log_prior_hyper(spec_, theta_);
      const bool accept = std::log(u(rng_)) < log_ratio;
      if (accept) {
        theta_ = next;
        x_.segment(static_cast<Eigen::Index>(blk.offset), static_cast<Eigen::Index>(blk.size())) *= c;
        for (std::size_t o : touched_) {
          eta_[static_cast<Eigen::Index>(o)] = eta_trial_[static_cast<Eigen::Index>(o)];
          ll_[static_cast<Eigen::Index>(o)] = ll_trial_[static_cast<Eigen::Index>(o)];
        }
      }
      prop.record(accept, adapting);
    }
  }

  // beta_f += c, u -= c leaves every linear predictor unchanged
  void shift_moves(bool adapting) {
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t s = 0; s < shifts_.size(); ++s) {
      const auto& sh = shifts_[s];
      const auto& blk = spec_.blocks[sh.block];
      const auto& r = std::get<IidNormal>(blk.kind);
      auto& prop = shift_prop_[s];
      const double c = prop.step() * z(rng_);
      const auto off = static_cast<Eigen::Index>(blk.offset);
      const auto k = static_cast<Eigen::Index>(r.clusters);
      const double tau = std::exp(theta_[r.precision]);
      const double sum_u = x_.segment(off, k).sum();
      const auto f = static_cast<Eigen::Index>(sh.fixed_latent);
      const double d = x_[f] - prior_mean_[f];
      double log_ratio = -0.5 * tau * (static_cast<double>(k) * c * c - 2.0 * c * sum_u);
      log_ratio += -0.5 * fixed_prec_[f] * ((d + c) * (d + c) - d * d);
      const bool accept = std::log(u(rng_)) < log_ratio;
      if (accept) {
        x_[f] += c;
        x_.segment(off, k).array() -= c;
      }
      prop.record(accept, adapting);
    }
  }

  const ModelSpec& spec_;
  const Vector& y_;
  const ChainConfig& cfg_;
  std::mt19937_64 rng_;
  std::vector<std::vector<Obs>> obs_of_;
  std::vector<std::size_t> block_of_;
  Vector prior_mean_;
  Vector fixed_prec_;
  std::vector<HyperMethod> hyper_method_;
  std::vector<std::size_t> hyper_owner_;
  std::vector<std::pair<std::size_t, std::size_t>> scale_blocks_;  // (block, theta index)
  std::vector<ShiftMove> shifts_;

  Vector x_;
  HyperParams theta_;
  Vector eta_;
  Vector ll_;
  Vector eta_trial_;
  Vector ll_trial_;
  std::vector<double> scratch_;
  std::vector<std::size_t> touched_;
  std::vector<char> mark_;
  std::vector<Proposal> latent_prop_;
  std::vector<Proposal> hyper_prop_;
  std::vector<Proposal> scale_prop_;
  std::vector<Proposal> shift_prop_;
};

struct ChainOutput {
  std::vector<std::vector<double>> latent;
  std::vector<std::vector<double>> theta;
  Vector sum;
  Vector sum_sq;
  std::size_t count = 0;
  std::vector<AcceptanceRate> acceptance;
  ChainState final_state;
};

ChainOutput run_chain(const ModelSpec& spec, const Vector& y, const ChainConfig& cfg, std::size_t chain,
                      const std::optional<ChainState>& initial) {
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed & 0xffffffffu), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(chain), 0x5eedu};
  std::array<std::uint32_t, 2> s{};
  seq.generate(s.begin(), s.end());
  Sampler sampler(spec, y, cfg, (static_cast<std::uint64_t>(s[0]) << 32) | s[1]);
  std::uint64_t start_iter = 0;
  if (initial) {
    if (static_cast<std::size_t>(initial->latent.size()) != spec.n_latent() ||
        static_cast<std::size_t>(initial->theta.size()) != spec.n_hyper) {
      throw ModelError("initial chain state does not match the model dimensions");
    }
    sampler.set_state(initial->latent, initial->theta);
    start_iter = initial->iteration;
  } else {
    sampler.default_start();
  }

  ChainOutput out;
  const auto& J = spec.fixed_index_set;
  const std::size_t keep = (cfg.n_iter - cfg.burn_in + cfg.thin - 1) / cfg.thin;
  out.latent.assign(J.size(), {});
  out.theta.assign(spec.n_hyper, {});
  for (auto& v : out.latent) v.reserve(keep);
  for (auto& v : out.theta) v.reserve(keep);
  const auto n = static_cast<Eigen::Index>(spec.n_latent());
  out.sum = Vector::Zero(n);
  out.sum_sq = Vector::Zero(n);

  std::size_t batch_no = 0;
  for (std::size_t it = 0; it < cfg.n_iter; ++it) {
    const bool adapting = it < cfg.burn_in;
    sampler.iterate(adapting);
    if (adapting && (it + 1) % cfg.adapt_batch == 0) sampler.adapt(++batch_no);
    if (!adapting && (it - cfg.burn_in) % cfg.thin == 0) {
      const Vector& x = sampler.x();
      for (std::size_t k = 0; k < J.size(); ++k) out.latent[k].push_back(x[static_cast<Eigen::Index>(J[k])]);
      for (std::size_t j = 0; j < spec.n_hyper; ++j) out.theta[j].push_back(sampler.theta()[j]);
      out.sum += x;
      out.sum_sq += x.cwiseProduct(x);
      ++out.count;
    }
  }
  out.acceptance = sampler.acceptance();
  out.final_state = {sampler.x(), sampler.theta().values, start_iter + cfg.n_iter};
  return out;
}

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int k = 0; k < 4; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(v >> (8 * k));
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64(std::istream& is, int bytes) {
  unsigned char b[8] = {};
  is.read(reinterpret_cast<char*>(b), bytes);
  if (!is) throw ModelError("truncated checkpoint");
  std::uint64_t v = 0;
  for (int k = bytes - 1; k >= 0; --k) v = (v << 8) | b[k];
  return v;
}

constexpr char kMagic[8] = {'C', 'I', 'N', 'L', 'A', 'C', 'H', 'K'};

}  // namespace

PosteriorSamples run_mcmc(const ModelSpec& spec, const Vector& y, const ChainConfig& cfg,
                          const std::optional<ChainState>& initial) {
  cfg.validate();
  spec.validate();
  check_observations(spec, y);
  std::vector<ChainOutput> chains(cfg.n_chains);
  parallel_for(cfg.n_chains, cfg.threads, [&](std::size_t c) { chains[c] = run_chain(spec, y, cfg, c, initial); });

  PosteriorSamples out;
  out.latent_index = spec.fixed_index_set;
  out.n_hyper = spec.n_hyper;
  out.n_chains = cfg.n_chains;
  out.per_chain = chains.front().count;
  out.latent.assign(out.latent_index.size(), {});
  out.theta.assign(spec.n_hyper, {});
  const auto n = static_cast<Eigen::Index>(spec.n_latent());
  Vector sum = Vector::Zero(n);
  Vector sum_sq = Vector::Zero(n);
  std::size_t count = 0;
  for (auto& ch : chains) {
    for (std::size_t k = 0; k < out.latent.size(); ++k) {
      out.latent[k].insert(out.latent[k].end(), ch.latent[k].begin(), ch.latent[k].end());
    }
    for (std::size_t j = 0; j < out.theta.size(); ++j) {
      out.theta[j].insert(out.theta[j].end(), ch.theta[j].begin(), ch.theta[j].end());
    }
    sum += ch.sum;
    sum_sq += ch.sum_sq;
    count += ch.count;
    out.final_states.push_back(ch.final_state);
  }
  out.latent_mean = sum / static_cast<double>(count);
  out.latent_sd = (sum_sq / static_cast<double>(count) - out.latent_mean.cwiseProduct(out.latent_mean))
                      .cwiseMax(0.0)
                      .cwiseSqrt();
  // acceptance averaged over chains
  out.acceptance = chains.front().acceptance;
  for (std::size_t a = 0; a < out.acceptance.size(); ++a) {
    double total = 0.0;
    for (const auto& ch : chains) total += ch.acceptance[a].rate;
    out.acceptance[a].rate = total / static_cast<double>(chains.size());
  }
  if (!cfg.checkpoint_path.empty()) {
    for (std::size_t c = 0; c < chains.size(); ++c) {
      write_checkpoint(chains[c].final_state, cfg.checkpoint_path + "." + std::to_string(c));
    }
  }
  return out;
}

double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw ModelError("quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

SampleSummary summarize(std::span<const double> draws) {
  if (draws.empty()) throw ModelError("cannot summarize an empty sample");
  SampleSummary s;
  const double n = static_cast<double>(draws.size());
  s.mean = std::accumulate(draws.begin(), draws.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : draws) ss += (v - s.mean) * (v - s.mean);
  s.sd = draws.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::vector<double> sorted(draws.begin(), draws.end());
  std::sort(sorted.begin(), sorted.end());
  s.q025 = quantile_sorted(sorted, 0.025);
  s.q50 = quantile_sorted(sorted, 0.5);
  s.q975 = quantile_sorted(sorted, 0.975);
  return s;
}

double effective_sample_size(std::span<const double> draws) {
  const std::size_t n = draws.size();
  if (n < 4) return static_cast<double>(n);
  const double mean = std::accumulate(draws.begin(), draws.end(), 0.0) / static_cast<double>(n);
  std::vector<double> c(draws.size());
  for (std::size_t t = 0; t < n; ++t) c[t] = draws[t] - mean;
  auto autocov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) s += c[t] * c[t + lag];
    return s / static_cast<double>(n);
  };
  const double g0 = autocov(0);
  if (!(g0 > 0)) return static_cast<double>(n);
  // Geyer: sum pairs Gamma_m = rho(2m) + rho(2m+1) while positive and decreasing
  double tau = -1.0;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    double pair = (autocov(2 * m) + autocov(2 * m + 1)) / g0;
    if (pair <= 0) break;
    pair = std::min(pair, prev);
    tau += 2.0 * pair;
    prev = pair;
  }
  return static_cast<double>(n) / std::max(tau, 1e-12);
}

double gelman_rubin(const std::vector<std::span<const double>>& chains) {
  const std::size_t m = chains.size();
  if (m < 2) throw ModelError("Gelman-Rubin needs at least two chains");
  const std::size_t n = chains.front().size();
  if (n < 2) throw ModelError("Gelman-Rubin needs at least two draws per chain");
  std::vector<double> means(m);
  double w = 0.0;
  for (std::size_t c = 0; c < m; ++c) {
    if (chains[c].size() != n) throw ModelError("chains must have equal length");
    means[c] = std::accumulate(chains[c].begin(), chains[c].end(), 0.0) / static_cast<double>(n);
    double ss = 0.0;
    for (double v : chains[c]) ss += (v - means[c]) * (v - means[c]);
    w += ss / static_cast<double>(n - 1);
  }
  w /= static_cast<double>(m);
  const double grand = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(m);
  double b = 0.0;
  for (double mu : means) b += (mu - grand) * (mu - grand);
  b *= static_cast<double>(n) / static_cast<double>(m - 1);
  const double var_plus = (static_cast<double>(n - 1) / static_cast<double>(n)) * w + b / static_cast<double>(n);
  return std::sqrt(var_plus / w);
}

void write_histogram_csv(std::span<const double> draws, std::size_t bins, const std::string& path) {
  if (draws.empty() || bins == 0) throw ModelError("histogram needs draws and at least one bin");
  const auto [lo_it, hi_it] = std::minmax_element(draws.begin(), draws.end());
  const double lo = *lo_it;
  const double hi = *hi_it > lo ? *hi_it : lo + 1.0;
  const double width = (hi - lo) / static_cast<double>(bins);
  std::vector<std::size_t> counts(bins, 0);
  for (double v : draws) {
    auto k = static_cast<std::size_t>((v - lo) / width);
    counts[std::min(k, bins - 1)]++;
  }
  std::ofstream out(path);
  if (!out) throw ModelError("cannot open " + path + " for writing");
  out << "lower,upper,count,density\n" << std::setprecision(17);
  for (std::size_t k = 0; k < bins; ++k) {
    const double a = lo + width * static_cast<double>(k);
    out << a << ',' << a + width << ',' << counts[k] << ','
        << static_cast<double>(counts[k]) / (static_cast<double>(draws.size()) * width) << '\n';
  }
}

void write_checkpoint(const ChainState& state, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ModelError("cannot open " + path + " for writing");
  out.write(kMagic, 8);
  put_u32(out, 1);
  put_u32(out, static_cast<std::uint32_t>(state.latent.size()));
  put_u32(out, static_cast<std::uint32_t>(state.theta.size()));
  put_u64(out, state.iteration);
  auto put_vec = [&](const Vector& v) {
    for (Eigen::Index k = 0; k < v.size(); ++k) put_u64(out, std::bit_cast<std::uint64_t>(v[k]));
  };
  put_vec(state.latent);
  put_vec(state.theta);
  if (!out) throw ModelError("failed writing " + path);
}

ChainState read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ModelError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) throw ModelError(path + " is not a chain checkpoint");
  const auto version = get_u64(in, 4);
  if (version != 1) throw ModelError("unsupported checkpoint version " + std::to_string(version));
  ChainState s;
  const auto n = static_cast<Eigen::Index>(get_u64(in, 4));
  const auto p = static_cast<Eigen::Index>(get_u64(in, 4));
  s.iteration = get_u64(in, 8);
  s.latent.resize(n);
  s.theta.resize(p);
  for (Eigen::Index k = 0; k < n; ++k) s.latent[k] = std::bit_cast<double>(get_u64(in, 8));
  for (Eigen::Index k = 0; k < p; ++k) s.theta[k] = std::bit_cast<double>(get_u64(in, 8));
  return s;
}

}  // namespace cinla
