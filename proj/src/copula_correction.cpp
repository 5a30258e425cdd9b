#include "cinla/copula_correction.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cinla {

namespace {
constexpr double kProbClamp = 1e-12;
}

std::string correction_name(CorrectionMode mode) {
  switch (mode) {
    case CorrectionMode::None: return "none";
    case CorrectionMode::MeanOnly: return "mean";
    case CorrectionMode::MeanAndSkew: return "skew";
  }
  return "none";
}

CorrectionMode correction_from_name(const std::string& name) {
  if (name == "none") return CorrectionMode::None;
  if (name == "mean") return CorrectionMode::MeanOnly;
  if (name == "skew") return CorrectionMode::MeanAndSkew;
  throw ModelError("unknown correction '" + name + "' (expected none, mean or skew)");
}

Matrix fixed_effect_precision(const GaussianApprox& ga, std::span<const std::size_t> index_set) {
  const auto n = static_cast<Eigen::Index>(ga.size());
  const auto nf = static_cast<Eigen::Index>(index_set.size());
  if (nf == 0) throw ModelError("fixed-effect index set is empty");
  Matrix E = Matrix::Zero(n, nf);
  for (Eigen::Index c = 0; c < nf; ++c) {
    const auto k = static_cast<Eigen::Index>(index_set[static_cast<std::size_t>(c)]);
    if (k >= n) throw ModelError("fixed-effect index out of range");
    E(k, c) = 1.0;
  }
  const Matrix S = ga.chol.solve(E);
  Matrix sigma_j(nf, nf);
  for (Eigen::Index r = 0; r < nf; ++r) sigma_j.row(r) = S.row(static_cast<Eigen::Index>(index_set[static_cast<std::size_t>(r)]));
  sigma_j = 0.5 * (sigma_j + sigma_j.transpose());

  Eigen::LLT<Matrix> llt(sigma_j);
  const double rcond = llt.info() == Eigen::Success ? llt.rcond() : 0.0;
  if (!(rcond > 1e-13)) {
    std::ostringstream os;
    os << "fixed-effect covariance is numerically singular (reciprocal condition " << rcond
       << "); fixed effects may be collinear";
    throw ModelError(os.str());
  }
  Matrix q = llt.solve(Matrix::Identity(nf, nf));
  return 0.5 * (q + q.transpose());
}

double correction_mean_only(const Vector& mu, const Vector& mu_tilde, const Matrix& q_fixed) {
  if (mu.size() != mu_tilde.size() || mu.size() != q_fixed.rows()) throw ModelError("correction dimension mismatch");
  const Vector d = mu - mu_tilde;
  return std::max(0.0, 0.5 * d.dot(q_fixed * d));
}

double soft_threshold(double c, std::size_t n_fixed, double xi) {
  if (!(xi > 0)) throw ModelError("xi must be positive");
  const double u = static_cast<double>(n_fixed) * xi;
  // u f(C/u) with f(t) = 2 / (1 + exp(-2t)) - 1 = tanh(t)
  const double t = u * std::tanh(c / u);
  // tanh rounds to 1 for large arguments; keep the bound strict
  const double below = std::nextafter(u, 0.0);
  return std::clamp(t, -below, below);
}

CorrectionResult correction_skew(const std::vector<SkewNormalMarginal>& marginals, const Matrix& q_fixed) {
  const auto nf = static_cast<Eigen::Index>(marginals.size());
  if (q_fixed.rows() != nf) throw ModelError("correction dimension mismatch");
  CorrectionResult res;
  Vector z(nf);
  Vector sd(nf);
  std::vector<double> log_terms(static_cast<std::size_t>(nf));
  for (Eigen::Index k = 0; k < nf; ++k) {
    const auto& m = marginals[static_cast<std::size_t>(k)];
    const double d = (m.gaussian_mean - m.improved_mean) / m.sd;
    double p = m.standardized.cdf(d);
    if (p < kProbClamp || p > 1.0 - kProbClamp) {
      res.clamped = true;
      p = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
    }
    z[k] = normal_quantile(p);
    sd[k] = m.sd;
    // -log of the Jacobian dx/dx~ of the marginal transformation
    log_terms[static_cast<std::size_t>(k)] = normal_logpdf(z[k]) - m.standardized.logpdf(d);
  }
  const Vector w = sd.cwiseProduct(z);
  const Vector qw = q_fixed * w;
  res.per_effect.resize(static_cast<std::size_t>(nf));
  for (Eigen::Index k = 0; k < nf; ++k) {
    const double c = 0.5 * w[k] * qw[k] + log_terms[static_cast<std::size_t>(k)];
    res.per_effect[static_cast<std::size_t>(k)] = c;
    res.raw += c;
  }
  return res;
}

CorrectionResult compute_correction(const GaussianApprox& ga, const std::vector<SkewNormalMarginal>& marginals,
                                    std::span<const std::size_t> index_set, const CorrectionConfig& cfg) {
  CorrectionResult res;
  const std::size_t nf = index_set.size();
  res.u = static_cast<double>(nf) * cfg.xi;
  if (cfg.mode == CorrectionMode::None || nf == 0) {
    res.per_effect.assign(nf, 0.0);
    return res;
  }
  if (marginals.size() != nf) throw ModelError("need one improved marginal per fixed effect");
  const Matrix q = fixed_effect_precision(ga, index_set);
  if (cfg.mode == CorrectionMode::MeanOnly) {
    Vector mu(static_cast<Eigen::Index>(nf));
    Vector mt(static_cast<Eigen::Index>(nf));
    for (std::size_t k = 0; k < nf; ++k) {
      mu[static_cast<Eigen::Index>(k)] = marginals[k].gaussian_mean;
      mt[static_cast<Eigen::Index>(k)] = marginals[k].improved_mean;
    }
    res.raw = correction_mean_only(mu, mt, q);
    const Vector d = mu - mt;
    const Vector qd = q * d;
    res.per_effect.resize(nf);
    for (std::size_t k = 0; k < nf; ++k) {
      res.per_effect[k] = 0.5 * d[static_cast<Eigen::Index>(k)] * qd[static_cast<Eigen::Index>(k)];
    }
  } else {
    const CorrectionResult skew = correction_skew(marginals, q);
    res.raw = skew.raw;
    res.per_effect = skew.per_effect;
    res.clamped = skew.clamped;
  }
  res.thresholded = soft_threshold(res.raw, nf, cfg.xi);
  return res;
}

}  // namespace cinla
