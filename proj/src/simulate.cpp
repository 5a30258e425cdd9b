#include "cinla/simulate.hpp"

#include "cinla/detail/overloaded.hpp"

#include <cmath>
#include <random>

namespace cinla {

using detail::overloaded;

SimulatedData simulate_dataset(const ModelSpec& spec, const TrueValues& truth, std::uint64_t seed) {
  std::size_t n_fixed = 0;
  for (const auto& b : spec.blocks) {
    if (std::holds_alternative<FixedEffects>(b.kind)) n_fixed += b.size();
  }
  if (static_cast<std::size_t>(truth.fixed.size()) != n_fixed) {
    throw ModelError("true fixed effects have dimension " + std::to_string(truth.fixed.size()) + ", model has " +
                     std::to_string(n_fixed));
  }
  if (truth.theta.size() != spec.n_hyper) throw ModelError("true hyperparameters have the wrong dimension");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto& theta = truth.theta;

  SimulatedData out;
  out.latent = Vector::Zero(static_cast<Eigen::Index>(spec.n_latent()));
  Eigen::Index f = 0;
  for (const auto& b : spec.blocks) {
    const auto off = static_cast<Eigen::Index>(b.offset);
    std::visit(overloaded{[&](const FixedEffects& fe) {
                            for (std::size_t k = 0; k < fe.count; ++k) out.latent[off + static_cast<Eigen::Index>(k)] = truth.fixed[f++];
                          },
                          [&](const IidNormal& r) {
                            const double sd = std::exp(-0.5 * theta[r.precision]);
                            for (std::size_t k = 0; k < r.clusters; ++k)
                              out.latent[off + static_cast<Eigen::Index>(k)] = sd * normal(rng);
                          },
                          [&](const BivariateIid& r) {
                            const Eigen::Matrix2d S =
                                bivariate_covariance(theta[r.log_prec0], theta[r.log_prec1], theta[r.corr]);
                            const Eigen::Matrix2d L = S.llt().matrixL();
                            for (std::size_t k = 0; k < r.clusters; ++k) {
                              Eigen::Vector2d z(normal(rng), normal(rng));
                              out.latent.segment<2>(off + 2 * static_cast<Eigen::Index>(k)) = L * z;
                            }
                          },
                          [&](const AR1& r) {
                            const double kappa = std::exp(theta[r.log_kappa]);
                            const double rho = rho_from_internal(theta[r.corr]);
                            const double tau = kappa / (1.0 - rho * rho);
                            double u = normal(rng) / std::sqrt(kappa);
                            out.latent[off] = u;
                            for (std::size_t k = 1; k < r.length; ++k) {
                              u = rho * u + normal(rng) / std::sqrt(tau);
                              out.latent[off + static_cast<Eigen::Index>(k)] = u;
                            }
                          }},
               b.kind);
  }

  const Vector eta = spec.linear_predictor(out.latent);
  out.y.resize(eta.size());
  for (Eigen::Index j = 0; j < eta.size(); ++j) {
    switch (spec.likelihood.kind) {
      case Family::BernoulliLogit: {
        std::bernoulli_distribution d(1.0 / (1.0 + std::exp(-eta[j])));
        out.y[j] = d(rng) ? 1.0 : 0.0;
        break;
      }
      case Family::BinomialLogit: {
        std::binomial_distribution<int> d(spec.trials_at(static_cast<std::size_t>(j)), 1.0 / (1.0 + std::exp(-eta[j])));
        out.y[j] = d(rng);
        break;
      }
      case Family::PoissonLog: {
        std::poisson_distribution<long> d(std::exp(eta[j]));
        out.y[j] = static_cast<double>(d(rng));
        break;
      }
      case Family::GaussianIdentity:
        out.y[j] = eta[j] + normal(rng) / std::sqrt(spec.likelihood.gaussian_precision);
        break;
    }
  }
  return out;
}

}  // namespace cinla
