// Normal and skew-normal distribution utilities.
//
// The skew-normal SN(alpha) has density 2 phi(z) Phi(alpha z); with
// delta = alpha / sqrt(1 + alpha^2) and b = delta sqrt(2/pi) its mean is b,
// its variance 1 - b^2 and its skewness (4 - pi)/2 * b^3 / (1 - b^2)^{3/2}.
#pragma once

namespace cinla {

double normal_cdf(double z);
double normal_logpdf(double z);
/// log Phi(z), accurate far into the lower tail.
double normal_logcdf(double z);
double normal_quantile(double p);

/// Owen's T function T(h, a), by adaptive Gauss-Kronrod quadrature.
double owens_t(double h, double a);

/// Standard skew-normal (location 0, scale 1) with shape alpha.
double sn_cdf(double z, double alpha);
double sn_logpdf(double z, double alpha);
double sn_quantile(double p, double alpha);

double sn_mean(double alpha);
double sn_variance(double alpha);
double sn_skewness(double alpha);

/// Largest attainable |skewness| of the skew-normal family.
double sn_max_skewness();

/// Inverse of sn_skewness. |gamma| must be below sn_max_skewness().
double sn_shape_from_skewness(double gamma);

/// Skew-normal rescaled to mean 0 and variance 1.
class StandardizedSkewNormal {
 public:
  explicit StandardizedSkewNormal(double alpha);

  double alpha() const { return alpha_; }
  double location() const { return location_; }
  double scale() const { return scale_; }

  double cdf(double z) const;
  double logpdf(double z) const;
  double quantile(double p) const;

 private:
  double alpha_;
  double location_;
  double scale_;
};

}  // namespace cinla
