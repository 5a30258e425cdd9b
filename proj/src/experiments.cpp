#include "cinla/experiments.hpp"

#include "cinla/parallel.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>

namespace cinla {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct TemplateInfo {
  TemplateId id;
  const char* name;
};

constexpr TemplateInfo kTemplates[] = {
    {TemplateId::Minimal, "minimal"}, {TemplateId::Model07, "model07"},   {TemplateId::Model08, "model08"},
    {TemplateId::Toenail, "toenail"}, {TemplateId::Poisson, "poisson"},   {TemplateId::Ar1, "ar1"},
    {TemplateId::Misspecified, "misspecified"},
};

std::vector<double> sampling_times(std::size_t n) {
  if (n == 1) return {0.0};
  std::vector<double> t(n);
  for (std::size_t j = 0; j < n; ++j) t[j] = -3.0 + 6.0 * static_cast<double>(j) / static_cast<double>(n - 1);
  return t;
}

int default_trials(TemplateId t) {
  return t == TemplateId::Model08 || t == TemplateId::Misspecified ? 2 : 1;
}

std::size_t default_clusters(TemplateId t) {
  switch (t) {
    case TemplateId::Minimal: return 100;
    case TemplateId::Poisson: return 300;
    case TemplateId::Ar1: return 100;
    case TemplateId::Toenail: return 294;
    default: return 100;
  }
}

std::size_t default_per_cluster(TemplateId t) {
  switch (t) {
    case TemplateId::Model07:
    case TemplateId::Model08:
    case TemplateId::Misspecified:
    case TemplateId::Toenail: return 7;
    default: return 1;
  }
}

void add_hyper(std::vector<ParameterDef>& ps, const std::string& name, std::size_t j, Transform t) {
  ps.push_back({name, false, j, t});
}

Family binary_family(int m) { return m > 1 ? Family::BinomialLogit : Family::BernoulliLogit; }

// model07: logit p_ij = b0 + b1 t_j + b2 x_i + b3 t_j x_i + u_i
BuiltModel model07(const ExperimentPlan& plan) {
  const std::size_t clusters = plan.clusters ? plan.clusters : default_clusters(TemplateId::Model07);
  const std::size_t ni = plan.per_cluster ? plan.per_cluster : default_per_cluster(TemplateId::Model07);
  const int m = plan.trials ? plan.trials : default_trials(plan.model);
  const auto t = sampling_times(ni);
  const bool tiny = ni == 2;  // informative priors are needed at n_i = 2
  BuiltModel b;
  auto& s = b.spec;
  s.blocks = {{FixedEffects{4}, 0}, {IidNormal{clusters, 0}, 4}};
  s.n_hyper = 1;
  s.likelihood.kind = binary_family(m);
  s.fixed_prior.assign(4, GaussianPrior{0.0, tiny ? 1.0 : 1000.0});
  if (tiny) {
    s.hyper_priors = {GaussianOnInternal{0.0, 1.0, 0}};
  } else {
    s.hyper_priors = {GammaOnPrecision{0.5, 0.0164, 0}};
  }
  for (std::size_t i = 0; i < clusters; ++i) {
    const double x = i < clusters / 2 ? 0.0 : 1.0;
    for (std::size_t j = 0; j < ni; ++j) {
      std::vector<DesignEntry> row{{0, 1.0}};
      if (t[j] != 0.0) row.push_back({1, t[j]});
      if (x != 0.0) row.push_back({2, x});
      if (x * t[j] != 0.0) row.push_back({3, x * t[j]});
      row.push_back({4 + i, 1.0});
      s.design.push_back(row);
    }
  }
  if (m > 1) s.trials.assign(s.design.size(), m);
  s.finalize();
  b.truth.fixed = Vector(4);
  b.truth.fixed << -2.5, 1.0, -1.0, -0.5;
  b.truth.theta = HyperParams{0.0};
  for (int k = 0; k < 4; ++k) b.parameters.push_back({"beta" + std::to_string(k), true, static_cast<std::size_t>(k)});
  add_hyper(b.parameters, "log_prec0", 0, Transform::Identity);
  add_hyper(b.parameters, "sigma2_0", 0, Transform::Variance);
  add_hyper(b.parameters, "sigma_0", 0, Transform::StdDev);
  return b;
}

// model08: model07 plus a random slope, bivariate (b0_i, b1_i) with a Wishart prior
BuiltModel model08(const ExperimentPlan& plan) {
  const std::size_t clusters = plan.clusters ? plan.clusters : default_clusters(TemplateId::Model08);
  const std::size_t ni = plan.per_cluster ? plan.per_cluster : default_per_cluster(TemplateId::Model08);
  const int m = plan.trials ? plan.trials : default_trials(TemplateId::Model08);
  const auto t = sampling_times(ni);
  BuiltModel b;
  auto& s = b.spec;
  s.blocks = {{FixedEffects{4}, 0}, {BivariateIid{clusters, 0, 1, 2}, 4}};
  s.n_hyper = 3;
  s.likelihood.kind = binary_family(m);
  s.fixed_prior.assign(4, GaussianPrior{0.0, 1000.0});
  s.hyper_priors = {WishartOnPrecision2x2{3.0, 0.17, 0.025, 0, 1, 2}};
  for (std::size_t i = 0; i < clusters; ++i) {
    const double x = i < clusters / 2 ? 0.0 : 1.0;
    for (std::size_t j = 0; j < ni; ++j) {
      std::vector<DesignEntry> row{{0, 1.0}};
      if (t[j] != 0.0) row.push_back({1, t[j]});
      if (x != 0.0) row.push_back({2, x});
      if (x * t[j] != 0.0) row.push_back({3, x * t[j]});
      row.push_back({4 + 2 * i, 1.0});
      if (t[j] != 0.0) row.push_back({5 + 2 * i, t[j]});
      s.design.push_back(row);
    }
  }
  if (m > 1) s.trials.assign(s.design.size(), m);
  s.finalize();
  b.truth.fixed = Vector(4);
  b.truth.fixed << -2.5, 1.0, -1.0, -0.5;
  b.truth.theta = HyperParams{-std::log(0.5), -std::log(0.25), 0.0};
  for (int k = 0; k < 4; ++k) b.parameters.push_back({"beta" + std::to_string(k), true, static_cast<std::size_t>(k)});
  add_hyper(b.parameters, "theta1", 0, Transform::Identity);
  add_hyper(b.parameters, "theta2", 1, Transform::Identity);
  add_hyper(b.parameters, "theta3", 2, Transform::Identity);
  add_hyper(b.parameters, "sigma2_0", 0, Transform::Variance);
  add_hyper(b.parameters, "sigma2_1", 1, Transform::Variance);
  add_hyper(b.parameters, "rho", 2, Transform::Correlation);
  return b;
}

// logit / log link with intercept plus iid effect, one observation each
BuiltModel random_intercept(const ExperimentPlan& plan, Family family, double beta) {
  const std::size_t n = plan.clusters ? plan.clusters : default_clusters(plan.model);
  BuiltModel b;
  auto& s = b.spec;
  s.blocks = {{FixedEffects{1}, 0}, {IidNormal{n, 0}, 1}};
  s.n_hyper = 1;
  s.likelihood.kind = family;
  s.fixed_prior = {GaussianPrior{0.0, 1.0}};
  s.hyper_priors = {GammaOnPrecision{1.0, 1.0, 0}};
  for (std::size_t i = 0; i < n; ++i) s.design.push_back({{0, 1.0}, {1 + i, 1.0}});
  s.finalize();
  b.truth.fixed = Vector::Constant(1, beta);
  b.truth.theta = HyperParams{0.0};
  b.parameters.push_back({"beta", true, 0});
  add_hyper(b.parameters, "log_prec", 0, Transform::Identity);
  add_hyper(b.parameters, "sigma2", 0, Transform::Variance);
  return b;
}

BuiltModel ar1_model(const ExperimentPlan& plan) {
  const std::size_t n = plan.clusters ? plan.clusters : default_clusters(TemplateId::Ar1);
  BuiltModel b;
  auto& s = b.spec;
  s.blocks = {{FixedEffects{1}, 0}, {AR1{n, 0, 1}, 1}};
  s.n_hyper = 2;
  s.likelihood.kind = Family::BernoulliLogit;
  s.fixed_prior = {GaussianPrior{0.0, 1.0}};
  s.hyper_priors = {GammaOnPrecision{1.0, 1.0, 0}, GaussianOnInternal{0.0, 1.0, 1}};
  for (std::size_t i = 0; i < n; ++i) s.design.push_back({{0, 1.0}, {1 + i, 1.0}});
  s.finalize();
  // rho = 0.5, tau = 1: kappa = tau (1 - rho^2) = 0.75
  b.truth.fixed = Vector::Constant(1, 2.0);
  b.truth.theta = HyperParams{std::log(0.75), internal_from_rho(0.5)};
  b.parameters.push_back({"beta", true, 0});
  add_hyper(b.parameters, "theta1", 0, Transform::Identity);
  add_hyper(b.parameters, "theta2", 1, Transform::Identity);
  add_hyper(b.parameters, "rho", 1, Transform::Correlation);
  return b;
}

// 294 subjects x 7 visits, randomized treatment, jittered visit times
BuiltModel toenail_model(const ExperimentPlan& plan) {
  const std::size_t subjects = plan.clusters ? plan.clusters : default_clusters(TemplateId::Toenail);
  const std::size_t visits = plan.per_cluster ? plan.per_cluster : default_per_cluster(TemplateId::Toenail);
  static const double nominal[] = {0.0, 1.0, 2.0, 3.0, 6.0, 9.0, 12.0};
  std::mt19937_64 rng(replicate_seed(plan.seed, 0, 7));
  std::vector<int> trt(subjects);
  for (std::size_t i = 0; i < subjects; ++i) trt[i] = i % 2 == 0 ? 1 : 0;
  std::shuffle(trt.begin(), trt.end(), rng);
  std::normal_distribution<double> jitter(0.0, 0.15);

  BuiltModel b;
  auto& s = b.spec;
  s.blocks = {{FixedEffects{4}, 0}, {IidNormal{subjects, 0}, 4}};
  s.n_hyper = 1;
  s.likelihood.kind = Family::BernoulliLogit;
  s.fixed_prior.assign(4, GaussianPrior{0.0, 1e4});
  // same hyperprior as model07; a flat-in-precision prior swamps weak signals at small sigma
  s.hyper_priors = {GammaOnPrecision{0.5, 0.0164, 0}};
  for (std::size_t i = 0; i < subjects; ++i) {
    for (std::size_t v = 0; v < visits; ++v) {
      const double base = v < 7 ? nominal[v] : 12.0 + 3.0 * static_cast<double>(v - 6);
      const double time = v == 0 ? 0.0 : std::max(0.0, base + base * jitter(rng));
      ToenailRecord r{static_cast<int>(i + 1), static_cast<int>(v + 1), time, trt[i], 0};
      b.toenail.push_back(r);
      std::vector<DesignEntry> row{{0, 1.0}};
      if (trt[i]) row.push_back({1, 1.0});
      if (time != 0.0) row.push_back({2, time});
      if (trt[i] && time != 0.0) row.push_back({3, time});
      row.push_back({4 + i, 1.0});
      s.design.push_back(row);
    }
  }
  s.finalize();
  b.truth.fixed = Vector(4);
  b.truth.fixed << -1.6, -0.16, -0.39, -0.14;
  b.truth.theta = HyperParams{-2.0 * std::log(4.0)};
  const char* names[] = {"alpha0", "alpha_trt", "alpha_time", "alpha_tt"};
  for (std::size_t k = 0; k < 4; ++k) b.parameters.push_back({names[k], true, k});
  add_hyper(b.parameters, "log_prec", 0, Transform::Identity);
  add_hyper(b.parameters, "sigma2", 0, Transform::Variance);
  add_hyper(b.parameters, "sigma", 0, Transform::StdDev);
  return b;
}

void apply_truth_overrides(const ExperimentPlan& plan, BuiltModel& b) {
  if (plan.fixed) {
    if (plan.fixed->size() != static_cast<std::size_t>(b.truth.fixed.size())) {
      throw ConfigError("plan: 'fixed' needs " + std::to_string(b.truth.fixed.size()) + " values");
    }
    b.truth.fixed = Eigen::Map<const Vector>(plan.fixed->data(), static_cast<Eigen::Index>(plan.fixed->size()));
  }
  if (plan.theta) {
    if (plan.theta->size() != b.truth.theta.size()) {
      throw ConfigError("plan: 'theta' needs " + std::to_string(b.truth.theta.size()) + " values");
    }
    b.truth.theta = HyperParams(
        Eigen::Map<const Vector>(plan.theta->data(), static_cast<Eigen::Index>(plan.theta->size())));
  }
}

double avg(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? kNaN : s / static_cast<double>(v.size());
}

std::string rep_file(std::size_t r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "rep_%04zu.csv", r);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::string template_name(TemplateId t) {
  for (const auto& info : kTemplates) {
    if (info.id == t) return info.name;
  }
  return "minimal";
}

TemplateId template_from_name(const std::string& name) {
  for (const auto& info : kTemplates) {
    if (name == info.name) return info.id;
  }
  throw ConfigError("unknown model template '" + name + "'");
}

double apply_transform(Transform t, double v) {
  switch (t) {
    case Transform::Identity: return v;
    case Transform::Variance: return std::exp(-v);
    case Transform::StdDev: return std::exp(-0.5 * v);
    case Transform::Correlation: return rho_from_internal(v);
    case Transform::Exp: return std::exp(v);
  }
  return v;
}

std::string transform_name(Transform t) {
  switch (t) {
    case Transform::Identity: return "identity";
    case Transform::Variance: return "variance";
    case Transform::StdDev: return "sd";
    case Transform::Correlation: return "correlation";
    case Transform::Exp: return "exp";
  }
  return "identity";
}

void ExperimentPlan::validate() const {
  if (replicates < 1) throw ConfigError("plan: replicates must be at least 1");
  if (variants.empty()) throw ConfigError("plan: at least one fit variant is required");
  if (!(xi > 0)) throw ConfigError("plan: xi must be positive");
  if (trials < 0) throw ConfigError("plan: trials must be non-negative");
  if (run_mcmc) mcmc.validate();
  if (model == TemplateId::Minimal || model == TemplateId::Poisson || model == TemplateId::Ar1) {
    if (per_cluster > 1) throw ConfigError("plan: template " + template_name(model) + " has one observation per effect");
  }
}

ExperimentPlan plan_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("plan: expected a JSON object");
  ExperimentPlan p;
  try {
    p.model = template_from_name(j.at("model").get<std::string>());
    p.replicates = j.value("replicates", p.replicates);
    p.seed = j.value("seed", p.seed);
    if (j.contains("variants")) {
      p.variants.clear();
      for (const auto& v : j.at("variants")) p.variants.push_back(correction_from_name(v.get<std::string>()));
    }
    p.xi = j.value("xi", p.xi);
    p.trials = j.value("trials", p.trials);
    p.per_cluster = j.value("per_cluster", p.per_cluster);
    p.clusters = j.value("clusters", p.clusters);
    p.threads = j.value("threads", p.threads);
    if (j.contains("truth")) {
      const auto& t = j.at("truth");
      if (t.contains("fixed")) p.fixed = t.at("fixed").get<std::vector<double>>();
      if (t.contains("theta")) p.theta = t.at("theta").get<std::vector<double>>();
    }
    p.run_mcmc = j.value("run_mcmc", p.run_mcmc);
    if (j.contains("mcmc")) {
      const auto& m = j.at("mcmc");
      p.mcmc.n_iter = m.value("n_iter", p.mcmc.n_iter);
      p.mcmc.burn_in = m.value("burn_in", p.mcmc.burn_in);
      p.mcmc.thin = m.value("thin", p.mcmc.thin);
      p.mcmc.n_chains = m.value("chains", p.mcmc.n_chains);
      p.mcmc.extra_moves = m.value("extra_moves", p.mcmc.extra_moves);
    }
    if (j.contains("explore")) {
      const auto& e = j.at("explore");
      p.explore.dz = e.value("dz", p.explore.dz);
      p.explore.dpi = e.value("dpi", p.explore.dpi);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("plan: ") + e.what());
  } catch (const ConfigError&) {
    throw;
  } catch (const ModelError& e) {
    throw ConfigError(std::string("plan: ") + e.what());
  }
  p.mcmc.seed = p.seed;
  p.validate();
  return p;
}

json plan_to_json(const ExperimentPlan& p) {
  json j;
  j["model"] = template_name(p.model);
  j["replicates"] = p.replicates;
  j["seed"] = p.seed;
  json v = json::array();
  for (auto m : p.variants) v.push_back(correction_name(m));
  j["variants"] = v;
  j["xi"] = p.xi;
  j["trials"] = p.trials;
  j["per_cluster"] = p.per_cluster;
  j["clusters"] = p.clusters;
  j["threads"] = p.threads;
  json truth = json::object();
  if (p.fixed) truth["fixed"] = *p.fixed;
  if (p.theta) truth["theta"] = *p.theta;
  j["truth"] = truth;
  j["run_mcmc"] = p.run_mcmc;
  j["mcmc"] = {{"n_iter", p.mcmc.n_iter},
               {"burn_in", p.mcmc.burn_in},
               {"thin", p.mcmc.thin},
               {"chains", p.mcmc.n_chains},
               {"extra_moves", p.mcmc.extra_moves}};
  j["explore"] = {{"dz", p.explore.dz}, {"dpi", p.explore.dpi}};
  return j;
}

BuiltModel build_fit_model(const ExperimentPlan& plan) {
  BuiltModel b;
  switch (plan.model) {
    case TemplateId::Minimal: b = random_intercept(plan, Family::BernoulliLogit, 2.0); break;
    case TemplateId::Poisson: b = random_intercept(plan, Family::PoissonLog, 0.0); break;
    case TemplateId::Model07: b = model07(plan); break;
    case TemplateId::Model08: b = model08(plan); break;
    case TemplateId::Toenail: b = toenail_model(plan); break;
    case TemplateId::Ar1: b = ar1_model(plan); break;
    case TemplateId::Misspecified: {
      // the fitted model is model07; truth overrides apply to the generator only
      ExperimentPlan fit = plan;
      fit.fixed.reset();
      fit.theta.reset();
      b = model07(fit);
      b.spec.validate();
      return b;
    }
  }
  apply_truth_overrides(plan, b);
  b.spec.validate();
  return b;
}

BuiltModel build_generating_model(const ExperimentPlan& plan) {
  if (plan.model != TemplateId::Misspecified) return build_fit_model(plan);
  BuiltModel b = model08(plan);
  apply_truth_overrides(plan, b);
  b.spec.validate();
  return b;
}

std::uint64_t replicate_seed(std::uint64_t seed, std::size_t replicate, std::uint64_t stream) {
  // splitmix64 over a combined key
  std::uint64_t z = seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(replicate) * 0xbf58476d1ce4e5b9ULL +
                    stream * 0x94d049bb133111ebULL + 0x2545f4914f6cdd1dULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double coverage_of(std::span<const double> draws, double lo, double hi) {
  if (draws.empty()) return kNaN;
  std::size_t in = 0;
  for (double v : draws) in += (v >= lo && v <= hi) ? 1 : 0;
  return static_cast<double>(in) / static_cast<double>(draws.size());
}

std::vector<double> parameter_draws(const ParameterDef& p, const PosteriorSamples& samples) {
  if (p.latent) return samples.latent_draws(p.index);
  std::vector<double> out = samples.theta.at(p.index);
  for (double& v : out) v = apply_transform(p.transform, v);
  return out;
}

FitOutput fit_variant(const BuiltModel& model, const Vector& y, CorrectionMode mode, double xi,
                      const ExploreOptions& opts) {
  FitOutput out;
  out.hp = explore(model.spec, y, CorrectionConfig{mode, xi}, opts);
  for (std::size_t j = 0; j < out.hp.dim; ++j) out.hyper.push_back(hyper_marginal(out.hp, j));
  for (const auto& p : model.parameters) {
    SummaryRow r;
    r.method = correction_name(mode);
    r.parameter = p.name;
    r.coverage = kNaN;
    if (p.latent) {
      const PosteriorMarginal m = latent_marginal(model.spec, out.hp, p.index);
      r.mean = m.mean;
      r.sd = m.sd;
      r.q025 = m.q025;
      r.q975 = m.q975;
    } else {
      const auto s = out.hyper.at(p.index).transformed([t = p.transform](double v) { return apply_transform(t, v); });
      r.mean = s.mean;
      r.sd = s.sd;
      r.q025 = s.q025;
      r.q975 = s.q975;
    }
    out.rows.push_back(r);
  }
  return out;
}

std::vector<SummaryRow> summarize_mcmc(const BuiltModel& model, const PosteriorSamples& samples) {
  std::vector<SummaryRow> rows;
  for (const auto& p : model.parameters) {
    const auto draws = parameter_draws(p, samples);
    const SampleSummary s = summarize(draws);
    rows.push_back({0, "mcmc", p.name, s.mean, s.sd, s.q025, s.q975, kNaN});
  }
  return rows;
}

ReplicateResult run_replicate(const ExperimentPlan& plan, std::size_t replicate, const std::string& export_dir) {
  ReplicateResult res;
  res.replicate = replicate;
  try {
    const BuiltModel gen = build_generating_model(plan);
    const BuiltModel fit = build_fit_model(plan);
    const SimulatedData data = simulate_dataset(gen.spec, gen.truth, replicate_seed(plan.seed, replicate, 0));
    if (!export_dir.empty()) fs::create_directories(export_dir);

    std::vector<std::vector<SummaryRow>> fitted;
    for (CorrectionMode mode : plan.variants) {
      const auto t0 = std::chrono::steady_clock::now();
      FitOutput f = fit_variant(fit, data.y, mode, plan.xi, plan.explore);
      res.seconds.push_back({correction_name(mode), seconds_since(t0)});
      if (!export_dir.empty()) {
        for (std::size_t j = 0; j < f.hyper.size(); ++j) {
          write_marginal_csv(f.hyper[j],
                             export_dir + "/theta" + std::to_string(j) + "_" + correction_name(mode) + ".csv");
        }
      }
      fitted.push_back(std::move(f.rows));
    }

    if (plan.run_mcmc) {
      ChainConfig cc = plan.mcmc;
      cc.seed = replicate_seed(plan.seed, replicate, 1);
      cc.threads = 1;
      const auto t0 = std::chrono::steady_clock::now();
      const PosteriorSamples samples = run_mcmc(fit.spec, data.y, cc);
      res.seconds.push_back({"mcmc", seconds_since(t0)});
      if (!export_dir.empty()) {
        for (std::size_t j = 0; j < samples.theta.size(); ++j) {
          write_histogram_csv(samples.theta[j], 60, export_dir + "/theta" + std::to_string(j) + "_mcmc_hist.csv");
        }
      }
      // coverage of each variant's 95% interval over the MCMC draws
      std::vector<std::vector<double>> draws;
      for (const auto& p : fit.parameters) draws.push_back(parameter_draws(p, samples));
      for (auto& rows : fitted) {
        for (std::size_t k = 0; k < rows.size(); ++k) rows[k].coverage = coverage_of(draws[k], rows[k].q025, rows[k].q975);
      }
      auto mrows = summarize_mcmc(fit, samples);
      fitted.push_back(std::move(mrows));
    }
    for (auto& rows : fitted) {
      for (auto& r : rows) {
        r.replicate = replicate;
        res.rows.push_back(r);
      }
    }
    res.ok = true;
  } catch (const std::exception& e) {
    res.ok = false;
    res.error = e.what();
    res.rows.clear();
  }
  return res;
}

const ReportRow& ComparisonReport::find(const std::string& method, const std::string& parameter) const {
  for (const auto& r : rows) {
    if (r.method == method && r.parameter == parameter) return r;
  }
  throw ModelError("report has no row for " + method + "/" + parameter);
}

ComparisonReport aggregate(const std::vector<ReplicateResult>& results, std::uint64_t seed) {
  ComparisonReport rep;
  rep.seed = seed;
  // ordered keys: method order of first appearance, parameter order of first appearance
  std::vector<std::string> methods;
  std::vector<std::string> params;
  struct Acc {
    std::vector<double> mean, mcmc_mean, gap, ratio, cov;
  };
  std::map<std::pair<std::string, std::string>, Acc> acc;
  std::vector<const ReplicateResult*> sorted;
  for (const auto& r : results) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->replicate < b->replicate; });
  for (const auto* r : sorted) {
    if (!r->ok) {
      rep.failed.push_back(r->replicate);
      continue;
    }
    ++rep.replicates;
    std::map<std::string, const SummaryRow*> mcmc;
    for (const auto& row : r->rows) {
      if (row.method == "mcmc") mcmc[row.parameter] = &row;
    }
    for (const auto& row : r->rows) {
      if (std::find(methods.begin(), methods.end(), row.method) == methods.end()) methods.push_back(row.method);
      if (std::find(params.begin(), params.end(), row.parameter) == params.end()) params.push_back(row.parameter);
      auto& a = acc[{row.method, row.parameter}];
      a.mean.push_back(row.mean);
      const auto it = mcmc.find(row.parameter);
      if (it != mcmc.end()) {
        const SummaryRow& m = *it->second;
        a.mcmc_mean.push_back(m.mean);
        a.gap.push_back((row.mean - m.mean) / m.sd);
        a.ratio.push_back((row.sd * row.sd) / (m.sd * m.sd));
        if (row.method != "mcmc") a.cov.push_back(row.coverage);
      }
    }
  }
  for (const auto& m : methods) {
    for (const auto& p : params) {
      const auto it = acc.find({m, p});
      if (it == acc.end()) continue;
      const Acc& a = it->second;
      ReportRow row;
      row.method = m;
      row.parameter = p;
      row.replicates = a.mean.size();
      row.avg_mean = avg(a.mean);
      row.avg_mcmc_mean = avg(a.mcmc_mean);
      row.scaled_gap = avg(a.gap);
      row.variance_ratio = avg(a.ratio);
      row.coverage = avg(a.cov);
      rep.rows.push_back(row);
    }
  }
  const std::size_t total = rep.replicates + rep.failed.size();
  rep.too_many_failures = total > 0 && static_cast<double>(rep.failed.size()) > 0.05 * static_cast<double>(total);
  return rep;
}

void write_replicate_csv(const ReplicateResult& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << "replicate,status,method,parameter,mean,sd,q025,q975,coverage\n";
  if (!r.ok) {
    std::string msg = r.error;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    out << r.replicate << ",failed," << msg << ",,,,,,\n";
    return;
  }
  for (const auto& row : r.rows) {
    out << row.replicate << ",ok," << row.method << ',' << row.parameter << ',' << format_double(row.mean) << ','
        << format_double(row.sd) << ',' << format_double(row.q025) << ',' << format_double(row.q975) << ','
        << format_double(row.coverage) << '\n';
  }
}

ReplicateResult read_replicate_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::string line;
  std::getline(in, line);
  if (split_csv_line(line).size() != 9) throw ConfigError(path + ": unexpected header");
  ReplicateResult r;
  r.ok = true;
  bool first = true;
  auto num = [&](const std::string& s) {
    double v = 0.0;
    if (s == "nan") return kNaN;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError(path + ": bad number '" + s + "'");
    return v;
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 9) throw ConfigError(path + ": ragged row");
    const auto rep = static_cast<std::size_t>(num(c[0]));
    if (first) r.replicate = rep;
    first = false;
    if (c[1] == "failed") {
      r.ok = false;
      r.error = c[2];
      continue;
    }
    r.rows.push_back({rep, c[2], c[3], num(c[4]), num(c[5]), num(c[6]), num(c[7]), num(c[8])});
  }
  return r;
}

void write_report_csv(const ComparisonReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << "method,parameter,replicates,avg_mean,avg_mcmc_mean,scaled_gap,variance_ratio,coverage\n";
  for (const auto& r : report.rows) {
    out << r.method << ',' << r.parameter << ',' << r.replicates << ',' << format_double(r.avg_mean) << ','
        << format_double(r.avg_mcmc_mean) << ',' << format_double(r.scaled_gap) << ','
        << format_double(r.variance_ratio) << ',' << format_double(r.coverage) << '\n';
  }
}

ComparisonReport table_from_directory(const std::string& dir, std::uint64_t seed) {
  const fs::path rep_dir = fs::path(dir) / "replicates";
  if (!fs::is_directory(rep_dir)) throw ConfigError(rep_dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(rep_dir)) {
    if (e.path().extension() == ".csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<ReplicateResult> results;
  for (const auto& f : files) results.push_back(read_replicate_csv(f.string()));
  return aggregate(results, seed);
}

std::vector<ReportRow> compare_rows(const std::vector<SummaryRow>& method, const std::vector<SummaryRow>& reference) {
  std::vector<ReportRow> out;
  for (const auto& m : method) {
    const auto it = std::find_if(reference.begin(), reference.end(),
                                 [&](const SummaryRow& r) { return r.parameter == m.parameter; });
    if (it == reference.end()) continue;
    ReportRow row;
    row.method = m.method;
    row.parameter = m.parameter;
    row.replicates = 1;
    row.avg_mean = m.mean;
    row.avg_mcmc_mean = it->mean;
    row.scaled_gap = (m.mean - it->mean) / it->sd;
    row.variance_ratio = (m.sd * m.sd) / (it->sd * it->sd);
    row.coverage = m.coverage;
    out.push_back(row);
  }
  return out;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ExperimentResult run_experiment(const ExperimentPlan& plan, const std::string& out_dir) {
  plan.validate();
  ExperimentResult res;
  res.replicates.resize(plan.replicates);
  if (!out_dir.empty()) fs::create_directories(fs::path(out_dir) / "replicates");
  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(plan.replicates, plan.threads, [&](std::size_t r) {
    res.replicates[r] = run_replicate(plan, r);
    if (!out_dir.empty()) {
      write_replicate_csv(res.replicates[r], (fs::path(out_dir) / "replicates" / rep_file(r)).string());
    }
  });
  res.report = aggregate(res.replicates, plan.seed);
  if (!out_dir.empty()) {
    write_report_csv(res.report, (fs::path(out_dir) / "report.csv").string());
    json manifest;
    manifest["version"] = kVersion;
    manifest["plan"] = plan_to_json(plan);
    const std::string plan_text = plan_to_json(plan).dump();
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a(plan_text)));
    manifest["config_hash"] = hash;
    json seeds = json::array();
    for (std::size_t r = 0; r < plan.replicates; ++r) {
      seeds.push_back({{"replicate", r},
                       {"data_seed", replicate_seed(plan.seed, r, 0)},
                       {"mcmc_seed", replicate_seed(plan.seed, r, 1)}});
    }
    manifest["seeds"] = seeds;
    manifest["replicates_ok"] = res.report.replicates;
    manifest["failed"] = res.report.failed;
    json failures = json::array();
    for (const auto& r : res.replicates) {
      if (!r.ok) failures.push_back({{"replicate", r.replicate}, {"error", r.error}});
    }
    manifest["failures"] = failures;
    manifest["too_many_failures"] = res.report.too_many_failures;
    std::map<std::string, double> total;
    for (const auto& r : res.replicates) {
      for (const auto& [m, s] : r.seconds) total[m] += s;
    }
    manifest["seconds_by_method"] = total;
    manifest["wall_seconds"] = seconds_since(t0);
    std::ofstream out(fs::path(out_dir) / "manifest.json");
    out << manifest.dump(2) << '\n';
  }
  return res;
}

double SweepResult::gap_of(std::size_t point, const std::string& method) const {
  for (const auto& [m, g] : points.at(point).gap) {
    if (m == method) return g;
  }
  throw ModelError("sweep has no method " + method);
}

namespace {

SweepResult run_sweep(const std::vector<double>& values, const ExperimentPlan& base, const std::string& out_dir,
                      const std::string& label, const std::function<void(ExperimentPlan&, double)>& set) {
  SweepResult res;
  const std::string param = "log_prec";
  std::string corrected = "none";
  for (auto m : base.variants) {
    if (m != CorrectionMode::None) {
      corrected = correction_name(m);
      break;
    }
  }
  for (std::size_t k = 0; k < values.size(); ++k) {
    ExperimentPlan plan = base;
    set(plan, values[k]);
    plan.validate();
    std::vector<ReplicateResult> reps(plan.replicates);
    parallel_for(plan.replicates, plan.threads, [&](std::size_t r) {
      std::string dir;
      if (!out_dir.empty()) dir = out_dir + "/" + label + "_" + format_double(values[k]) + "/rep_" + std::to_string(r);
      reps[r] = run_replicate(plan, r, dir);
    });
    const ComparisonReport rep = aggregate(reps, plan.seed);
    if (rep.replicates == 0) throw ModelError("every replicate failed at " + label + " = " + format_double(values[k]));
    SweepPoint pt;
    pt.value = values[k];
    for (auto m : plan.variants) {
      const auto& row = rep.find(correction_name(m), param);
      pt.gap.push_back({correction_name(m), row.scaled_gap});
    }
    const auto& mrow = rep.find("mcmc", param);
    pt.mcmc_mean = mrow.avg_mean;
    std::vector<double> sds;
    for (const auto& r : reps) {
      for (const auto& row : r.rows) {
        if (row.method == "mcmc" && row.parameter == param) sds.push_back(row.sd);
      }
    }
    pt.mcmc_sd = avg(sds);
    res.points.push_back(pt);
    if (!out_dir.empty()) {
      const std::string d = out_dir + "/" + label + "_" + format_double(values[k]);
      write_report_csv(rep, d + "/report.csv");
    }
  }
  // the corrected gap growing beyond its value at the first sweep point,
  // on the same side as the uncorrected gap, is flagged as under-correction
  if (!res.points.empty()) {
    const double ref = std::abs(res.gap_of(0, corrected));
    for (std::size_t k = 1; k < res.points.size(); ++k) {
      const double g = res.gap_of(k, corrected);
      const double u = res.gap_of(k, "none");
      res.points[k].under_correction = std::abs(g) > ref && (g * u > 0);
    }
  }
  if (!out_dir.empty()) {
    std::ofstream out(out_dir + "/" + label + "_sweep.csv");
    out << label << ",method,scaled_gap,mcmc_mean,mcmc_sd,under_correction\n";
    for (const auto& p : res.points) {
      for (const auto& [m, g] : p.gap) {
        out << format_double(p.value) << ',' << m << ',' << format_double(g) << ',' << format_double(p.mcmc_mean)
            << ',' << format_double(p.mcmc_sd) << ',' << (p.under_correction ? 1 : 0) << '\n';
      }
    }
  }
  return res;
}

}  // namespace

SweepResult toenail_sweep(const std::vector<double>& sigmas, const ExperimentPlan& base, const std::string& out_dir) {
  for (double s : sigmas) {
    if (!(s > 0)) throw ConfigError("toenail sweep: sigma must be positive");
  }
  ExperimentPlan b = base;
  b.model = TemplateId::Toenail;
  return run_sweep(sigmas, b, out_dir, "sigma", [](ExperimentPlan& p, double s) {
    p.theta = std::vector<double>{-2.0 * std::log(s)};
  });
}

SweepResult poisson_sweep(const std::vector<double>& betas, const ExperimentPlan& base, const std::string& out_dir) {
  ExperimentPlan b = base;
  b.model = TemplateId::Poisson;
  return run_sweep(betas, b, out_dir, "beta", [](ExperimentPlan& p, double beta) {
    p.fixed = std::vector<double>{beta};
  });
}

}  // namespace cinla
