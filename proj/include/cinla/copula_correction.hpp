// Gaussian-copula correction to the Laplace approximation of pi(theta | y).
//
// The Gaussian approximation pi_G(x | theta, y) is pushed through marginal
// transformations so that its fixed-effect marginals match the improved
// skew-normal marginals while keeping the Gaussian dependence structure.
// Evaluated at x = mu(theta), the change in log pi(theta | y) is C(theta)
// (mean shift only) or C_skew(theta) (mean and skewness).
#pragma once

#include "cinla/gaussian_approx.hpp"
#include "cinla/marginal_improve.hpp"

#include <span>
#include <vector>

namespace cinla {

enum class CorrectionMode { None, MeanOnly, MeanAndSkew };

std::string correction_name(CorrectionMode mode);
CorrectionMode correction_from_name(const std::string& name);

struct CorrectionConfig {
  CorrectionMode mode = CorrectionMode::None;
  double xi = 10.0;
};

struct CorrectionResult {
  double raw = 0.0;
  double thresholded = 0.0;
  double u = 0.0;
  std::vector<double> per_effect;
  bool clamped = false;  // a probability hit the [1e-12, 1 - 1e-12] clamp
};

/// Q_J = (Sigma_J)^{-1}, the precision of the fixed effects after
/// marginalising the rest of the latent field.
Matrix fixed_effect_precision(const GaussianApprox& ga, std::span<const std::size_t> index_set);

/// 1/2 (mu - tilde mu)' Q_J (mu - tilde mu).
double correction_mean_only(const Vector& mu, const Vector& mu_tilde, const Matrix& q_fixed);

/// u * tanh(C / u) with u = n_f * xi.
double soft_threshold(double c, std::size_t n_fixed, double xi);

/// Skewness-aware correction restricted to the fixed effects.
CorrectionResult correction_skew(const std::vector<SkewNormalMarginal>& marginals, const Matrix& q_fixed);

/// Full correction for one theta: C or C_skew, then soft thresholding.
CorrectionResult compute_correction(const GaussianApprox& ga, const std::vector<SkewNormalMarginal>& marginals,
                                    std::span<const std::size_t> index_set, const CorrectionConfig& cfg);

}  // namespace cinla
