#include "cinla/marginal_improve.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cinla {

double SkewNormalMarginal::logpdf(double x) const {
  return standardized.logpdf((x - improved_mean) / sd) - std::log(sd);
}

double SkewNormalMarginal::cdf(double x) const { return standardized.cdf((x - improved_mean) / sd); }

double SkewNormalMarginal::quantile(double p) const { return improved_mean + sd * standardized.quantile(p); }

double SkewNormalMarginal::mean() const { return location() + scale() * sn_mean(alpha()); }

double SkewNormalMarginal::variance() const {
  const double w = scale();
  return w * w * sn_variance(alpha());
}

SkewNormalMarginal skew_normal_from_moments(std::size_t index, double gaussian_mean, double mean, double sd,
                                            double skewness) {
  SkewNormalMarginal m;
  m.index = index;
  m.gaussian_mean = gaussian_mean;
  m.improved_mean = mean;
  m.sd = sd;
  m.raw_skewness = skewness;
  m.skewness = std::clamp(skewness, -kSkewnessClamp, kSkewnessClamp);
  m.standardized = StandardizedSkewNormal(sn_shape_from_skewness(m.skewness));
  return m;
}

std::vector<double> improvement_grid() {
  std::vector<double> s;
  for (int k = -8; k <= 8; ++k) s.push_back(0.5 * k);
  return s;
}

MarginalGrid laplace_marginal_grid(const ModelSpec& spec, const Vector& y, const GaussianApprox& ga, std::size_t i) {
  const auto n = static_cast<Eigen::Index>(ga.size());
  const auto ii = static_cast<Eigen::Index>(i);
  if (ii >= n) throw ModelError("marginal index out of range");

  const double sd = ga.marginal_sd[ii];
  const Vector v = ga.covariance.col(ii) / sd;  // x(s) = mu + s v
  const Vector d = spec.linear_predictor(v);
  const Vector r = ga.mode - spec.prior_mean();
  const Vector Qv = ga.prior.Q * v;
  const double q0 = r.dot(ga.prior.Q * r);
  const double q1 = v.dot(ga.prior.Q * r);
  const double q2 = v.dot(Qv);

  MarginalGrid out;
  out.s = improvement_grid();
  out.log_dens.reserve(out.s.size());
  Vector e = Vector::Zero(n);
  e[ii] = 1.0;
  for (double s : out.s) {
    const Vector eta = ga.eta + s * d;
    double value = -0.5 * (q0 + 2.0 * s * q1 + s * s * q2) + log_likelihood(spec, y, eta);
    // log|H_{-i,-i}| = log|H| + log (H^{-1})_{ii}
    double log_det_minus_i = 0.0;
    if (s == 0.0) {
      log_det_minus_i = ga.log_det + std::log(ga.covariance(ii, ii));
    } else {
      const Matrix H = curvature_at(spec, ga.prior.Q, y, eta);
      Eigen::LLT<Matrix> llt(H);
      if (llt.info() != Eigen::Success) throw ModelError("conditional curvature is not positive definite");
      const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
      log_det_minus_i = log_det + std::log(llt.solve(e)[ii]);
    }
    value -= 0.5 * log_det_minus_i;
    out.log_dens.push_back(value);
  }
  return out;
}

SkewNormalMarginal improved_marginal(const ModelSpec& spec, const Vector& y, const GaussianApprox& ga,
                                     std::size_t i) {
  const MarginalGrid grid = laplace_marginal_grid(spec, y, ga, i);
  const std::size_t k = grid.s.size();
  const double top = *std::max_element(grid.log_dens.begin(), grid.log_dens.end());

  std::vector<double> w(k);
  double total = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double trap = (j == 0 || j + 1 == k) ? 0.5 : 1.0;
    w[j] = trap * std::exp(grid.log_dens[j] - top);
    total += w[j];
  }
  std::size_t carrying = 0;
  for (double wj : w) carrying += wj / total >= 1e-3 ? 1 : 0;
  if (carrying < 3) {
    std::ostringstream os;
    os << "marginal grid for latent " << i << " has its mass in " << carrying
       << " point(s); the Gaussian scale looks wrong";
    throw ModelError(os.str());
  }

  double m1 = 0.0;
  for (std::size_t j = 0; j < k; ++j) m1 += w[j] * grid.s[j];
  m1 /= total;
  double m2 = 0.0;
  double m3 = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double c = grid.s[j] - m1;
    m2 += w[j] * c * c;
    m3 += w[j] * c * c * c;
  }
  m2 /= total;
  m3 /= total;
  double gamma = m2 > 0 ? m3 / std::pow(m2, 1.5) : 0.0;
  // roundoff-level skewness would turn into a visible shape through the cube root
  if (std::abs(gamma) < 1e-12) gamma = 0.0;

  const auto ii = static_cast<Eigen::Index>(i);
  const double sd = ga.marginal_sd[ii];
  return skew_normal_from_moments(i, ga.mode[ii], ga.mode[ii] + sd * m1, sd, gamma);
}

}  // namespace cinla
