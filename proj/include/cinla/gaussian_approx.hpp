// Gaussian approximation to pi(x | theta, y) by matching mode and curvature.
#pragma once

#include "cinla/model.hpp"

#include <optional>

namespace cinla {

struct NewtonError : std::runtime_error {
  NewtonError(const std::string& what, HyperParams theta, double grad_norm)
      : std::runtime_error(what), theta(std::move(theta)), grad_norm(grad_norm) {}
  HyperParams theta;
  double grad_norm;
};

struct GaussianApprox {
  HyperParams theta;
  Vector mode;
  Matrix precision;
  Eigen::LLT<Matrix> chol;
  double log_det = 0.0;  // log|Q(theta)|
  Vector marginal_sd;
  Matrix covariance;     // Q(theta)^{-1}
  PriorPrecision prior;
  Vector eta;            // linear predictor at the mode
  int iterations = 0;
  double grad_norm = 0.0;

  std::size_t size() const { return static_cast<std::size_t>(mode.size()); }
};

/// Curvature matrix Q_prior + A' diag(-l'') A at latent value x.
Matrix curvature_at(const ModelSpec& spec, const Matrix& prior_q, const Vector& y, const Vector& eta);

/// Gradient of log pi(x, theta, y) with respect to x.
Vector log_joint_gradient(const ModelSpec& spec, const PriorPrecision& prior, const Vector& y, const Vector& x,
                          const Vector& eta);

/// log pi(x | theta) + log pi(y | x), without the hyperprior.
double log_joint_latent(const ModelSpec& spec, const PriorPrecision& prior, const Vector& y, const Vector& x);

GaussianApprox fit_gaussian_approx(const ModelSpec& spec, const Vector& y, const HyperParams& theta,
                                   const std::optional<Vector>& warm_start = std::nullopt);

/// Diagonal of Q^{-1}.
Vector marginal_variances(const GaussianApprox& ga);

/// E_G[x_{-i} | x_i] under the Gaussian approximation (length n-1, i removed).
Vector conditional_mean_given_one(const GaussianApprox& ga, std::size_t i, double x_i);

}  // namespace cinla
