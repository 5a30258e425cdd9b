// Improved (skew-normal) marginals pi_SN(x_i | theta, y) for the fixed effects.
#pragma once

#include "cinla/gaussian_approx.hpp"
#include "cinla/skew_normal.hpp"

#include <vector>

namespace cinla {

inline constexpr double kSkewnessClamp = 0.99;

/// Skew-normal marginal with mean improved_mean, variance sd^2 and shape alpha.
struct SkewNormalMarginal {
  std::size_t index = 0;
  double gaussian_mean = 0.0;  // mu_i(theta)
  double improved_mean = 0.0;  // tilde mu_i(theta)
  double sd = 0.0;             // sigma_i(theta)
  double skewness = 0.0;       // target skewness after clamping
  double raw_skewness = 0.0;   // skewness of the evaluated grid
  StandardizedSkewNormal standardized{0.0};

  double alpha() const { return standardized.alpha(); }
  /// Skew-normal location and scale on the x scale.
  double location() const { return improved_mean + sd * standardized.location(); }
  double scale() const { return sd * standardized.scale(); }

  double logpdf(double x) const;
  double cdf(double x) const;
  double quantile(double p) const;
  double mean() const;
  double variance() const;
};

/// Builds a skew-normal marginal from (mean, sd, skewness); |skewness| is
/// clamped to kSkewnessClamp.
SkewNormalMarginal skew_normal_from_moments(std::size_t index, double gaussian_mean, double mean, double sd,
                                            double skewness);

struct MarginalGrid {
  std::vector<double> s;        // standardized offsets (x_i - mu_i) / sigma_i
  std::vector<double> log_dens; // unnormalised log density
};

/// Standardized evaluation offsets: -4, -3.5, ..., 4.
std::vector<double> improvement_grid();

/// Laplace-style log marginal of x_i evaluated along the Gaussian
/// conditional-mean line x(s) = mu + s * Sigma[:, i] / sigma_i.
MarginalGrid laplace_marginal_grid(const ModelSpec& spec, const Vector& y, const GaussianApprox& ga, std::size_t i);

SkewNormalMarginal improved_marginal(const ModelSpec& spec, const Vector& y, const GaussianApprox& ga,
                                     std::size_t i);

}  // namespace cinla
