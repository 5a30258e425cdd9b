// Laplace approximation of pi(theta | y), theta-space exploration and
// numerical integration for hyperparameter and latent marginals.
#pragma once

#include "cinla/copula_correction.hpp"
#include "cinla/gaussian_approx.hpp"
#include "cinla/marginal_improve.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace cinla {

struct LogPosteriorValue {
  double uncorrected = 0.0;
  double correction = 0.0;  // thresholded
  double corrected = 0.0;
};

/// Everything computed for one theta point.
struct ThetaEvaluation {
  HyperParams theta;
  LogPosteriorValue value;
  CorrectionResult correction;
  Vector mode;
  Vector sd;
  std::vector<SkewNormalMarginal> marginals;  // one per fixed effect; empty if not requested
};

/// Fits the Gaussian approximation at theta and evaluates the (corrected)
/// log posterior up to one shared constant. Improved marginals are always
/// built when a correction is requested; `with_marginals` forces them.
ThetaEvaluation evaluate_theta(const ModelSpec& spec, const Vector& y, const HyperParams& theta,
                               const CorrectionConfig& cfg, bool with_marginals = false,
                               const std::optional<Vector>& warm_start = std::nullopt);

LogPosteriorValue log_posterior_at(const ModelSpec& spec, const Vector& y, const HyperParams& theta,
                                   const CorrectionConfig& cfg);

struct ExploreOptions {
  double dz = 0.75;
  double dpi = 4.5;
  double gradient_step = 1e-4;
  double hessian_step = 1e-3;
  std::size_t max_points = 10000;
  int threads = 1;
  std::optional<HyperParams> initial;
};

struct GridPoint {
  std::vector<int> lattice;  // integer z-coordinates, z = dz * lattice
  HyperParams theta;
  double log_uncorrected = 0.0;
  double correction_raw = 0.0;
  double correction = 0.0;
  double log_corrected = 0.0;
  double weight = 0.0;
  bool correction_clamped = false;
  Vector mode;
  Vector sd;
  std::vector<SkewNormalMarginal> marginals;
};

struct ExploreDiagnostics {
  int optimizer_iterations = 0;
  bool optimizer_converged = false;
  double gradient_norm = 0.0;
  bool hessian_regularized = false;
  std::size_t evaluations = 0;
};

struct HyperPosterior {
  CorrectionConfig config;
  std::size_t dim = 0;
  double dz = 0.75;
  std::vector<GridPoint> points;
  HyperParams mode;
  Matrix hessian;           // of the log posterior at the optimizer mode
  Matrix z_to_theta;        // theta = theta_star + z_to_theta * z
  HyperParams theta_star;   // centre of the lattice
  std::vector<int> lower;   // lattice extent per axis (negative side, <= 0)
  std::vector<int> upper;
  double log_normalizer = 0.0;
  ExploreDiagnostics diagnostics;
  std::vector<std::size_t> fixed_index_set;

  std::size_t argmax() const;
};

HyperPosterior explore(const ModelSpec& spec, const Vector& y, const CorrectionConfig& cfg,
                       const ExploreOptions& opts = {});

/// Renormalises weights after changing log_corrected values.
void normalize_weights(HyperPosterior& hp);

struct PosteriorMarginal {
  std::vector<double> x;
  std::vector<double> density;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;

  double cdf(double t) const;
  double quantile(double p) const;
  /// Summaries of g(X) for a monotone transformation g.
  struct Summary {
    double mean = 0.0;
    double sd = 0.0;
    double q025 = 0.0;
    double q50 = 0.0;
    double q975 = 0.0;
  };
  Summary transformed(const std::function<double(double)>& g) const;
};

/// Normalises the density by the trapezoid rule and fills in the summaries.
PosteriorMarginal make_marginal(std::vector<double> x, std::vector<double> density);

PosteriorMarginal hyper_marginal(const HyperPosterior& hp, std::size_t j);

PosteriorMarginal latent_marginal(const ModelSpec& spec, const HyperPosterior& hp, std::size_t i);

void write_marginal_csv(const PosteriorMarginal& m, const std::string& path);

}  // namespace cinla
