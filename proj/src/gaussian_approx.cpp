#include "cinla/gaussian_approx.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace cinla {

namespace {

constexpr int kMaxIterations = 100;
constexpr int kMaxHalvings = 30;
constexpr double kGradTol = 1e-8;
constexpr double kRelObjTol = 1e-12;

}  // namespace

Matrix curvature_at(const ModelSpec& spec, const Matrix& prior_q, const Vector& y, const Vector& eta) {
  Matrix H = prior_q;
  for (std::size_t j = 0; j < spec.n_obs(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double w = -loglik_terms(spec.likelihood, eta[jj], y[jj], spec.trials_at(j)).d2;
    const auto& row = spec.design[j];
    for (const auto& a : row) {
      const auto ia = static_cast<Eigen::Index>(a.latent);
      for (const auto& b : row) H(ia, static_cast<Eigen::Index>(b.latent)) += w * a.coef * b.coef;
    }
  }
  return H;
}

Vector log_joint_gradient(const ModelSpec& spec, const PriorPrecision& prior, const Vector& y, const Vector& x,
                          const Vector& eta) {
  Vector g = -(prior.Q * (x - spec.prior_mean()));
  for (std::size_t j = 0; j < spec.n_obs(); ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const double d1 = loglik_terms(spec.likelihood, eta[jj], y[jj], spec.trials_at(j)).d1;
    for (const auto& a : spec.design[j]) g[static_cast<Eigen::Index>(a.latent)] += a.coef * d1;
  }
  return g;
}

double log_joint_latent(const ModelSpec& spec, const PriorPrecision& prior, const Vector& y, const Vector& x) {
  return log_latent_prior(spec, prior, x) + log_likelihood(spec, y, spec.linear_predictor(x));
}

GaussianApprox fit_gaussian_approx(const ModelSpec& spec, const Vector& y, const HyperParams& theta,
                                   const std::optional<Vector>& warm_start) {
  if (!theta.all_finite()) throw ModelError("non-finite hyperparameter");
  GaussianApprox ga;
  ga.theta = theta;
  ga.prior = build_prior_precision(spec, theta);
  const auto n = static_cast<Eigen::Index>(spec.n_latent());

  Vector x = warm_start && warm_start->size() == n ? *warm_start : spec.prior_mean();
  Vector eta = spec.linear_predictor(x);
  double f = log_latent_prior(spec, ga.prior, x) + log_likelihood(spec, y, eta);
  Vector g = log_joint_gradient(spec, ga.prior, y, x, eta);

  int it = 0;
  bool converged = g.lpNorm<Eigen::Infinity>() < kGradTol;
  while (!converged && it < kMaxIterations) {
    const Matrix H = curvature_at(spec, ga.prior.Q, y, eta);
    Eigen::LLT<Matrix> llt(H);
    if (llt.info() != Eigen::Success) {
      throw NewtonError("curvature matrix is not positive definite", theta, g.lpNorm<Eigen::Infinity>());
    }
    const Vector delta = llt.solve(g);
    double step = 1.0;
    Vector x_new = x + delta;
    Vector eta_new = spec.linear_predictor(x_new);
    double f_new = log_latent_prior(spec, ga.prior, x_new) + log_likelihood(spec, y, eta_new);
    for (int h = 0; h < kMaxHalvings && !(f_new >= f); ++h) {
      step *= 0.5;
      x_new = x + step * delta;
      eta_new = spec.linear_predictor(x_new);
      f_new = log_latent_prior(spec, ga.prior, x_new) + log_likelihood(spec, y, eta_new);
    }
    ++it;
    const double change = std::abs(f_new - f);
    if (f_new >= f) {
      x = std::move(x_new);
      eta = std::move(eta_new);
      f = f_new;
    }
    g = log_joint_gradient(spec, ga.prior, y, x, eta);
    converged = g.lpNorm<Eigen::Infinity>() < kGradTol || change <= kRelObjTol * std::max(1.0, std::abs(f));
  }
  ga.grad_norm = g.lpNorm<Eigen::Infinity>();
  if (!converged) {
    std::ostringstream os;
    os << "Newton iteration did not converge after " << kMaxIterations << " iterations (|grad| = " << ga.grad_norm
       << ")";
    throw NewtonError(os.str(), theta, ga.grad_norm);
  }

  ga.iterations = it;
  ga.mode = std::move(x);
  ga.eta = std::move(eta);
  ga.precision = curvature_at(spec, ga.prior.Q, y, ga.eta);
  ga.chol.compute(ga.precision);
  if (ga.chol.info() != Eigen::Success) {
    throw NewtonError("curvature matrix at the mode is not positive definite", theta, ga.grad_norm);
  }
  const Matrix& L = ga.chol.matrixLLT();
  ga.log_det = 2.0 * L.diagonal().array().log().sum();
  ga.covariance = ga.chol.solve(Matrix::Identity(n, n));
  ga.marginal_sd = ga.covariance.diagonal().array().sqrt();
  return ga;
}

Vector marginal_variances(const GaussianApprox& ga) {
  if (ga.covariance.size() > 0) return ga.covariance.diagonal();
  const auto n = ga.precision.rows();
  return ga.chol.solve(Matrix::Identity(n, n)).diagonal();
}

Vector conditional_mean_given_one(const GaussianApprox& ga, std::size_t i, double x_i) {
  const auto n = static_cast<Eigen::Index>(ga.size());
  const auto ii = static_cast<Eigen::Index>(i);
  if (ii >= n) throw ModelError("conditioning index out of range");
  Vector e = Vector::Zero(n);
  e[ii] = 1.0;
  // column i of Q^{-1}
  const Vector s = ga.chol.solve(e);
  const Vector full = ga.mode + s * ((x_i - ga.mode[ii]) / s[ii]);
  Vector out(n - 1);
  out.head(ii) = full.head(ii);
  out.tail(n - 1 - ii) = full.tail(n - 1 - ii);
  return out;
}

}  // namespace cinla
