// Reference posterior sampler: adaptive single-site random-walk Metropolis
// on the latent field, conjugate Gibbs for precisions where the prior allows
// it, random-walk Metropolis on the remaining internal hyperparameters.
#pragma once

#include "cinla/model.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cinla {

struct ChainConfig {
  std::size_t n_iter = 120000;  // per chain, burn-in included
  std::size_t burn_in = 20000;
  std::size_t thin = 1;
  std::size_t n_chains = 1;
  std::uint64_t seed = 1;
  std::size_t adapt_batch = 50;
  int threads = 1;
  bool extra_moves = true;  // joint scale / shift moves for random-effect blocks
  std::string checkpoint_path;  // final chain states are written here when set (".<chain>" appended)

  void validate() const;
};

/// Position of one chain, enough to resume it.
struct ChainState {
  Vector latent;
  Vector theta;
  std::uint64_t iteration = 0;
};

struct AcceptanceRate {
  std::string move;
  double rate = 0.0;
};

struct PosteriorSamples {
  std::vector<std::size_t> latent_index;   // tracked latent coordinates (the fixed effects)
  std::size_t n_hyper = 0;
  std::size_t n_chains = 0;
  std::size_t per_chain = 0;
  std::vector<std::vector<double>> latent;  // [tracked][chain * per_chain + t]
  std::vector<std::vector<double>> theta;   // [j][chain * per_chain + t]
  Vector latent_mean;                       // every latent coordinate, pooled
  Vector latent_sd;
  std::vector<AcceptanceRate> acceptance;
  std::vector<ChainState> final_states;

  std::span<const double> chain_of(const std::vector<double>& draws, std::size_t c) const {
    return std::span<const double>(draws).subspan(c * per_chain, per_chain);
  }
  /// Draws of a tracked latent coordinate, by latent index.
  const std::vector<double>& latent_draws(std::size_t latent) const;
};

/// `initial` overrides the default starting point of every chain.
PosteriorSamples run_mcmc(const ModelSpec& spec, const Vector& y, const ChainConfig& cfg,
                          const std::optional<ChainState>& initial = std::nullopt);

// ---------------------------------------------------------------------------
// Summaries and diagnostics

struct SampleSummary {
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q50 = 0.0;
  double q975 = 0.0;
};

SampleSummary summarize(std::span<const double> draws);

/// Type-7 (linear interpolation) quantile of sorted data.
double quantile_sorted(std::span<const double> sorted, double p);

/// Effective sample size by Geyer's initial positive sequence.
double effective_sample_size(std::span<const double> draws);

/// Potential scale reduction factor over equal-length chains.
double gelman_rubin(const std::vector<std::span<const double>>& chains);

void write_histogram_csv(std::span<const double> draws, std::size_t bins, const std::string& path);

/// Flat little-endian checkpoint: "CINLACHK", uint32 version, uint32
/// n_latent, uint32 n_hyper, uint64 iteration, then the raw doubles of the
/// latent vector and theta.
void write_checkpoint(const ChainState& state, const std::string& path);
ChainState read_checkpoint(const std::string& path);

// Conjugate update helpers, exposed for testing.

/// Gamma(a + k/2, b + ss/2) draw of a precision.
double gibbs_precision(double shape, double rate, std::size_t k, double sum_sq, std::mt19937_64& rng);

/// Wishart(df, (R + S)^{-1}) draw by the Bartlett decomposition.
Eigen::Matrix2d gibbs_wishart(double df, const Eigen::Matrix2d& inv_scale, std::mt19937_64& rng);

}  // namespace cinla
