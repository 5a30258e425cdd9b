// Small model builders and numerical oracles shared by the test binaries.
#pragma once

#include "cinla/gaussian_approx.hpp"
#include "cinla/model.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

namespace cinla::test {

// y_i ~ F(beta + u_i), u_i ~ N(0, 1/tau); beta ~ N(0, beta_var), tau ~ Gamma(a, b)
inline ModelSpec random_intercept(std::size_t n, Family family, double beta_var = 1.0, double a = 1.0,
                                  double b = 1.0) {
  ModelSpec s;
  s.blocks = {{FixedEffects{1}, 0}, {IidNormal{n, 0}, 1}};
  s.n_hyper = 1;
  s.likelihood.kind = family;
  s.fixed_prior = {GaussianPrior{0.0, beta_var}};
  s.hyper_priors = {GammaOnPrecision{a, b, 0}};
  for (std::size_t i = 0; i < n; ++i) s.design.push_back({{0, 1.0}, {1 + i, 1.0}});
  s.finalize();
  return s;
}

// y_j = x_0 + t_j x_1 + noise, fixed effects only
inline ModelSpec gaussian_regression(std::size_t n, double noise_prec) {
  ModelSpec s;
  s.blocks = {{FixedEffects{2}, 0}};
  s.n_hyper = 0;
  s.likelihood = {Family::GaussianIdentity, noise_prec};
  s.fixed_prior = {GaussianPrior{0.5, 4.0}, GaussianPrior{-1.0, 2.0}};
  for (std::size_t j = 0; j < n; ++j) {
    const double t = -1.0 + 2.0 * static_cast<double>(j) / static_cast<double>(n - 1);
    s.design.push_back({{0, 1.0}, {1, t}});
  }
  s.finalize();
  return s;
}

inline Matrix random_spd(std::size_t n, std::mt19937_64& rng, double ridge = 0.5) {
  std::normal_distribution<double> nd;
  Matrix a(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = nd(rng);
  return a * a.transpose() + ridge * Matrix::Identity(a.rows(), a.cols());
}

// A GaussianApprox carrying only a precision matrix and a mean.
inline GaussianApprox approx_from_precision(const Matrix& q, const Vector& mean) {
  GaussianApprox ga;
  ga.mode = mean;
  ga.precision = q;
  ga.chol.compute(q);
  ga.covariance = ga.chol.solve(Matrix::Identity(q.rows(), q.cols()));
  ga.marginal_sd = ga.covariance.diagonal().array().sqrt();
  ga.log_det = 2.0 * ga.chol.matrixLLT().diagonal().array().log().sum();
  return ga;
}

// Composite Simpson rule on [a, b] with an even number of panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int panels = 2000) {
  if (panels % 2) ++panels;
  const double h = (b - a) / panels;
  double s = f(a) + f(b);
  for (int k = 1; k < panels; ++k) s += (k % 2 ? 4.0 : 2.0) * f(a + k * h);
  return s * h / 3.0;
}

// log of int prod_j p(y_j | beta + u) N(u; 0, 1/tau) du, by the trapezoid rule on +-9 sd
inline double cluster_log_marginal(const LikelihoodFamily& fam, const std::vector<double>& ys, double beta,
                                   double tau, int nodes = 161) {
  const double sd = 1.0 / std::sqrt(tau);
  const double h = 18.0 / (nodes - 1);
  std::vector<double> lv(static_cast<std::size_t>(nodes));
  double top = -1e300;
  for (int k = 0; k < nodes; ++k) {
    const double z = -9.0 + h * k;
    double l = -0.5 * z * z;
    for (double y : ys) l += loglik_value(fam, beta + sd * z, y);
    lv[static_cast<std::size_t>(k)] = l;
    top = std::max(top, l);
  }
  double s = 0.0;
  for (double l : lv) s += std::exp(l - top);
  return top + std::log(s * h / std::sqrt(2.0 * std::numbers::pi));
}

struct GridMoments {
  double mean_beta = 0.0;
  double sd_beta = 0.0;
  double mean_theta = 0.0;
  double sd_theta = 0.0;
};

// Exact posterior moments of (beta, log tau) for a random-intercept model
// with one observation per cluster, by tensor quadrature.
inline GridMoments exact_random_intercept(const ModelSpec& spec, const Vector& y, double b_lo, double b_hi,
                                          double t_lo, double t_hi, int nb = 161, int nt = 161) {
  const auto& fixed = spec.fixed_prior[0];
  const auto& g = std::get<GammaOnPrecision>(spec.hyper_priors[0]);
  std::vector<double> lp(static_cast<std::size_t>(nb * nt));
  double top = -1e300;
  for (int a = 0; a < nt; ++a) {
    const double t = t_lo + (t_hi - t_lo) * a / (nt - 1);
    for (int b = 0; b < nb; ++b) {
      const double beta = b_lo + (b_hi - b_lo) * b / (nb - 1);
      double l = -0.5 * (beta - fixed.mean) * (beta - fixed.mean) / fixed.variance + g.shape * t - g.rate * std::exp(t);
      for (Eigen::Index j = 0; j < y.size(); ++j)
        l += cluster_log_marginal(spec.likelihood, {y[j]}, beta, std::exp(t), 81);
      lp[static_cast<std::size_t>(a * nb + b)] = l;
      top = std::max(top, l);
    }
  }
  double z = 0, mb = 0, mb2 = 0, mt = 0, mt2 = 0;
  for (int a = 0; a < nt; ++a) {
    const double t = t_lo + (t_hi - t_lo) * a / (nt - 1);
    for (int b = 0; b < nb; ++b) {
      const double beta = b_lo + (b_hi - b_lo) * b / (nb - 1);
      const double w = std::exp(lp[static_cast<std::size_t>(a * nb + b)] - top);
      z += w;
      mb += w * beta;
      mb2 += w * beta * beta;
      mt += w * t;
      mt2 += w * t * t;
    }
  }
  GridMoments m;
  m.mean_beta = mb / z;
  m.sd_beta = std::sqrt(mb2 / z - m.mean_beta * m.mean_beta);
  m.mean_theta = mt / z;
  m.sd_theta = std::sqrt(mt2 / z - m.mean_theta * m.mean_theta);
  return m;
}

// y_ij = beta + u_i + e_ij with known noise precision
inline ModelSpec gaussian_clusters(std::size_t clusters, std::size_t per, double noise_prec) {
  ModelSpec s;
  s.blocks = {{FixedEffects{1}, 0}, {IidNormal{clusters, 0}, 1}};
  s.n_hyper = 1;
  s.likelihood = {Family::GaussianIdentity, noise_prec};
  s.fixed_prior = {GaussianPrior{0.3, 2.0}};
  s.hyper_priors = {GammaOnPrecision{1.0, 0.5, 0}};
  for (std::size_t i = 0; i < clusters; ++i)
    for (std::size_t k = 0; k < per; ++k) s.design.push_back({{0, 1.0}, {1 + i, 1.0}});
  s.finalize();
  return s;
}

inline Matrix design_matrix(const ModelSpec& s) {
  Matrix A = Matrix::Zero(static_cast<Eigen::Index>(s.n_obs()), static_cast<Eigen::Index>(s.n_latent()));
  for (std::size_t j = 0; j < s.n_obs(); ++j)
    for (const auto& e : s.design[j]) A(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(e.latent)) += e.coef;
  return A;
}

// exact log pi(theta | y) up to a constant: y ~ N(A m, A Q^{-1} A' + I / prec)
inline double exact_gaussian_log_post(const ModelSpec& s, const Vector& y, const HyperParams& theta) {
  const auto prior = build_prior_precision(s, theta);
  const Matrix A = design_matrix(s);
  const Matrix cov = A * prior.Q.inverse() * A.transpose() +
                     Matrix::Identity(A.rows(), A.rows()) / s.likelihood.gaussian_precision;
  const Vector r = y - A * s.prior_mean();
  Eigen::LLT<Matrix> llt(cov);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return log_prior_hyper(s, theta) - 0.5 * logdet - 0.5 * r.dot(llt.solve(r));
}

inline double exact_gaussian_log_post(const ModelSpec& s, const Vector& y, double theta) {
  return exact_gaussian_log_post(s, y, HyperParams{theta});
}

// E[x | theta, y] for the gaussian model
inline Vector exact_conditional_mean(const ModelSpec& s, const Vector& y, const HyperParams& theta) {
  const auto prior = build_prior_precision(s, theta);
  const Matrix A = design_matrix(s);
  const double p = s.likelihood.gaussian_precision;
  const Matrix Q = prior.Q + p * A.transpose() * A;
  return Q.ldlt().solve(prior.Q * s.prior_mean() + p * A.transpose() * y);
}


}  // namespace cinla::test
