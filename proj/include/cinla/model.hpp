// Latent Gaussian model definitions: latent blocks, linear-predictor design,
// likelihood families and hyperparameter priors.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace cinla {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct ModelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Hyperparameters on the internal (unconstrained) scale.
/// Precisions enter as log-precisions, correlations as log((1+rho)/(1-rho)).
struct HyperParams {
  Vector values;

  HyperParams() = default;
  explicit HyperParams(Vector v) : values(std::move(v)) {}
  HyperParams(std::initializer_list<double> v)
      : values(Eigen::Map<const Vector>(v.begin(), static_cast<Eigen::Index>(v.size()))) {}

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
  double operator[](std::size_t k) const { return values[static_cast<Eigen::Index>(k)]; }
  bool all_finite() const { return values.allFinite(); }
};

inline double rho_from_internal(double t) { return std::tanh(0.5 * t); }
inline double internal_from_rho(double rho) { return std::log((1.0 + rho) / (1.0 - rho)); }

// ---------------------------------------------------------------------------
// Latent blocks

struct FixedEffects {
  std::size_t count = 0;
};

/// iid N(0, exp(-theta[precision])) effects.
struct IidNormal {
  std::size_t clusters = 0;
  std::size_t precision = 0;
};

/// iid bivariate normal pairs (b0_i, b1_i), stored interleaved per cluster.
/// Hyperparameters: log sigma0^-2, log sigma1^-2, log((1+rho)/(1-rho)).
struct BivariateIid {
  std::size_t clusters = 0;
  std::size_t log_prec0 = 0;
  std::size_t log_prec1 = 0;
  std::size_t corr = 0;
};

/// Stationary AR(1) with marginal precision kappa = exp(theta[log_kappa])
/// and lag-one correlation rho = tanh(theta[corr] / 2).
struct AR1 {
  std::size_t length = 0;
  std::size_t log_kappa = 0;
  std::size_t corr = 0;
};

using BlockKind = std::variant<FixedEffects, IidNormal, BivariateIid, AR1>;

struct LatentBlock {
  BlockKind kind;
  std::size_t offset = 0;

  std::size_t size() const;
};

// ---------------------------------------------------------------------------
// Priors

struct GammaOnPrecision {
  double shape = 1.0;
  double rate = 1.0;
  std::size_t theta = 0;
};

struct GaussianOnInternal {
  double mean = 0.0;
  double variance = 1.0;
  std::size_t theta = 0;
};

/// Wishart prior on a 2x2 precision W with density
///   |W|^{(df-3)/2} exp(-tr(R W) / 2),  R = diag(scale0, scale1),
/// so that E[W] = df * R^{-1}.
struct WishartOnPrecision2x2 {
  double df = 3.0;
  double scale0 = 1.0;
  double scale1 = 1.0;
  std::size_t log_prec0 = 0;
  std::size_t log_prec1 = 1;
  std::size_t corr = 2;
};

using HyperPrior = std::variant<GammaOnPrecision, GaussianOnInternal, WishartOnPrecision2x2>;

struct GaussianPrior {
  double mean = 0.0;
  double variance = 1.0;
};

// ---------------------------------------------------------------------------
// Likelihood

enum class Family { BernoulliLogit, BinomialLogit, PoissonLog, GaussianIdentity };

struct LikelihoodFamily {
  Family kind = Family::BernoulliLogit;
  double gaussian_precision = 1.0;  // GaussianIdentity only
};

std::string family_name(Family f);
Family family_from_name(const std::string& name);

/// Value and first three eta-derivatives of log p(y | eta).
struct LoglikTerms {
  double value = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double d3 = 0.0;
};

/// One non-zero entry of the observation -> latent incidence map.
struct DesignEntry {
  std::size_t latent = 0;
  double coef = 0.0;
};

class ModelSpec {
 public:
  std::vector<LatentBlock> blocks;
  /// design[j] lists the latent entries whose weighted sum is eta_j.
  std::vector<std::vector<DesignEntry>> design;
  LikelihoodFamily likelihood;
  std::vector<int> trials;  // binomial only; empty means m = 1
  std::vector<HyperPrior> hyper_priors;
  std::vector<GaussianPrior> fixed_prior;  // one per fixed effect, in latent order
  std::vector<std::size_t> fixed_index_set;
  std::size_t n_hyper = 0;

  std::size_t n_latent() const;
  std::size_t n_obs() const { return design.size(); }
  int trials_at(std::size_t j) const { return trials.empty() ? 1 : trials[j]; }

  /// Recomputes block offsets and the fixed-effect index set from the blocks.
  void finalize();
  /// Throws ModelError when an invariant is violated.
  void validate() const;

  Vector linear_predictor(const Vector& x) const;
  /// Mean vector of the latent prior (non-zero only for fixed effects).
  Vector prior_mean() const;
};

/// Fixed effects plus every random-effect block of length one.
std::vector<std::size_t> derive_fixed_index_set(const std::vector<LatentBlock>& blocks);

struct PriorPrecision {
  Matrix Q;
  double log_det = 0.0;
};

PriorPrecision build_prior_precision(const ModelSpec& spec, const HyperParams& theta);

/// Covariance matrix of a 2x2 bivariate block from its internal parameters.
Eigen::Matrix2d bivariate_covariance(double log_prec0, double log_prec1, double corr_internal);

/// Unit-marginal-variance AR(1) precision of the given length (kappa = 1).
Matrix ar1_unit_precision(std::size_t length, double rho);

LoglikTerms loglik_terms(const LikelihoodFamily& family, double eta, double y, int trials = 1);

/// log p(y | eta) only; cheaper than loglik_terms for samplers.
double loglik_value(const LikelihoodFamily& family, double eta, double y, int trials = 1);

/// Throws ModelError if y is outside the family's support.
void check_observation(const LikelihoodFamily& family, double y, int trials);

double log_prior_hyper(const ModelSpec& spec, const HyperParams& theta);

double log_prior_single(const HyperPrior& prior, const HyperParams& theta);

/// log pi(x | theta) including the normalising constant.
double log_latent_prior(const ModelSpec& spec, const PriorPrecision& prior, const Vector& x);

/// Sum over observations of log p(y_j | eta_j).
double log_likelihood(const ModelSpec& spec, const Vector& y, const Vector& eta);

/// Validates observation count and support against the spec.
void check_observations(const ModelSpec& spec, const Vector& y);

}  // namespace cinla
