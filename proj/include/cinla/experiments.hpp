// Simulation harness: model templates, replicate runs comparing INLA-style
// fits with the MCMC reference, aggregated comparison reports and sweeps.
#pragma once

#include "cinla/hyperposterior.hpp"
#include "cinla/io.hpp"
#include "cinla/mcmc.hpp"
#include "cinla/simulate.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cinla {

inline constexpr const char* kVersion = "0.3.0";

enum class TemplateId { Minimal, Model07, Model08, Toenail, Poisson, Ar1, Misspecified };

std::string template_name(TemplateId t);
TemplateId template_from_name(const std::string& name);

enum class Transform { Identity, Variance, StdDev, Correlation, Exp };

double apply_transform(Transform t, double internal);
std::string transform_name(Transform t);

/// A reported quantity: a latent coordinate, or a transformed hyperparameter.
struct ParameterDef {
  std::string name;
  bool latent = false;
  std::size_t index = 0;
  Transform transform = Transform::Identity;
};

struct BuiltModel {
  ModelSpec spec;
  TrueValues truth;
  std::vector<ParameterDef> parameters;
  std::vector<ToenailRecord> toenail;  // covariate layout, toenail-like template only
};

struct ExperimentPlan {
  TemplateId model = TemplateId::Minimal;
  std::size_t replicates = 1;
  std::uint64_t seed = 1;
  std::vector<CorrectionMode> variants{CorrectionMode::None, CorrectionMode::MeanOnly, CorrectionMode::MeanAndSkew};
  double xi = 10.0;
  ChainConfig mcmc;
  bool run_mcmc = true;
  int trials = 0;               // binomial m; 0 picks the template default
  std::size_t per_cluster = 0;  // n_i; 0 picks the template default
  std::size_t clusters = 0;     // 0 picks the template default
  std::optional<std::vector<double>> fixed;  // true fixed effects
  std::optional<std::vector<double>> theta;  // true hyperparameters, internal scale
  int threads = 1;
  ExploreOptions explore;

  void validate() const;
};

ExperimentPlan plan_from_json(const nlohmann::json& j);
nlohmann::json plan_to_json(const ExperimentPlan& plan);

/// The model that is fitted. Covariates that are random (toenail-like
/// treatment and visit times) are drawn from `plan.seed` only, so they stay
/// fixed across replicates.
BuiltModel build_fit_model(const ExperimentPlan& plan);

/// The model data are simulated from; differs from the fit model only for
/// the misspecified template.
BuiltModel build_generating_model(const ExperimentPlan& plan);

/// Per-replicate seeds, derived deterministically from the plan seed.
std::uint64_t replicate_seed(std::uint64_t seed, std::size_t replicate, std::uint64_t stream);

struct SummaryRow {
  std::size_t replicate = 0;
  std::string method;  // "none", "mean", "skew" or "mcmc"
  std::string parameter;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  double coverage = 0.0;  // share of MCMC draws inside the 95% interval; NaN for mcmc rows
};

struct ReplicateResult {
  std::size_t replicate = 0;
  bool ok = false;
  std::string error;
  std::vector<SummaryRow> rows;
  std::vector<std::pair<std::string, double>> seconds;  // per method wall time
};

struct FitOutput {
  HyperPosterior hp;
  std::vector<PosteriorMarginal> hyper;  // one per theta component
  std::vector<SummaryRow> rows;          // coverage left at NaN
};

/// Explores one correction variant and summarizes every reported parameter.
FitOutput fit_variant(const BuiltModel& model, const Vector& y, CorrectionMode mode, double xi,
                      const ExploreOptions& opts);

std::vector<SummaryRow> summarize_mcmc(const BuiltModel& model, const PosteriorSamples& samples);

/// Fraction of draws inside [lo, hi].
double coverage_of(std::span<const double> draws, double lo, double hi);

/// Draws of a reported parameter on its reporting scale.
std::vector<double> parameter_draws(const ParameterDef& p, const PosteriorSamples& samples);

/// One replicate: simulate, fit all variants, run MCMC, compare. When
/// export_dir is non-empty, hyperparameter marginals and MCMC histograms
/// are written there.
ReplicateResult run_replicate(const ExperimentPlan& plan, std::size_t replicate, const std::string& export_dir = "");

struct ReportRow {
  std::string method;
  std::string parameter;
  std::size_t replicates = 0;
  double avg_mean = 0.0;
  double avg_mcmc_mean = 0.0;
  double scaled_gap = 0.0;      // average of (E_method - E_MCMC) / sd_MCMC
  double variance_ratio = 0.0;  // average of Var_method / Var_MCMC
  double coverage = 0.0;        // average coverage
};

struct ComparisonReport {
  std::vector<ReportRow> rows;
  std::size_t replicates = 0;
  std::vector<std::size_t> failed;
  std::uint64_t seed = 0;
  bool too_many_failures = false;

  const ReportRow& find(const std::string& method, const std::string& parameter) const;
};

/// Deterministic aggregation over replicate rows (ordered by replicate).
ComparisonReport aggregate(const std::vector<ReplicateResult>& results, std::uint64_t seed);

struct ExperimentResult {
  ComparisonReport report;
  std::vector<ReplicateResult> replicates;
};

/// Runs all replicates. With a non-empty out_dir writes
/// replicates/rep_NNNN.csv, report.csv and manifest.json.
ExperimentResult run_experiment(const ExperimentPlan& plan, const std::string& out_dir = "");

void write_replicate_csv(const ReplicateResult& r, const std::string& path);
ReplicateResult read_replicate_csv(const std::string& path);
void write_report_csv(const ComparisonReport& report, const std::string& path);

/// Re-aggregates stored replicate CSVs from `dir`/replicates.
ComparisonReport table_from_directory(const std::string& dir, std::uint64_t seed);

/// Self-comparison: scaled gaps of rows against themselves.
std::vector<ReportRow> compare_rows(const std::vector<SummaryRow>& method, const std::vector<SummaryRow>& reference);

struct SweepPoint {
  double value = 0.0;
  std::vector<std::pair<std::string, double>> gap;  // method -> average scaled gap of the log precision
  double mcmc_mean = 0.0;
  double mcmc_sd = 0.0;
  bool under_correction = false;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  double gap_of(std::size_t point, const std::string& method) const;
};

/// Toenail-like data at several random-effect standard deviations.
SweepResult toenail_sweep(const std::vector<double>& sigmas, const ExperimentPlan& base, const std::string& out_dir = "");

/// Poisson template at several intercepts.
SweepResult poisson_sweep(const std::vector<double>& betas, const ExperimentPlan& base, const std::string& out_dir = "");

/// FNV-1a hash of a string, used for config hashes in run manifests.
std::uint64_t fnv1a(const std::string& s);

}  // namespace cinla
