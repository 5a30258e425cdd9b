// Command-line front end: simulate, fit, mcmc, compare, table, experiment, sweep.
#include "cinla/experiments.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cinla;

namespace {

struct Common {
  std::uint64_t seed = 1;
  bool seed_set = false;
  bool xi_set = false;
  int threads = 1;
  std::string correction = "mean";
  double xi = 10.0;
};

void print_error(const std::string& type, const std::string& message) {
  std::cerr << json{{"error", message}, {"type", type}}.dump() << std::endl;
}

void ensure_dir(const std::string& d) {
  if (d.empty()) throw ConfigError("an output directory is required");
  fs::create_directories(d);
}

ModelSpec load_model_with_data(const std::string& model_path, const std::string& data_path, Vector& y) {
  ModelSpec spec = load_model(model_path);
  ObservationData d = load_observations(data_path);
  if (!d.trials.empty()) spec.trials = d.trials;
  spec.validate();
  check_observations(spec, d.y);
  y = d.y;
  return spec;
}

struct SummaryLine {
  std::string parameter;
  double mean, sd, q025, q50, q975;
};

void write_summary(const std::vector<SummaryLine>& lines, const std::string& path) {
  std::ofstream out(path);
  out << "parameter,mean,sd,q025,q50,q975\n";
  for (const auto& l : lines) {
    out << l.parameter << ',' << format_double(l.mean) << ',' << format_double(l.sd) << ',' << format_double(l.q025)
        << ',' << format_double(l.q50) << ',' << format_double(l.q975) << '\n';
  }
}

std::vector<SummaryRow> read_summary(const std::string& path, const std::string& method) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::string line;
  std::getline(in, line);
  const auto header = split_csv_line(line);
  if (header.size() < 6 || header[0] != "parameter") throw ConfigError(path + ": not a summary file");
  std::vector<SummaryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != header.size()) throw ConfigError(path + ": ragged row");
    SummaryRow r;
    r.method = method;
    r.parameter = c[0];
    r.mean = std::stod(c[1]);
    r.sd = std::stod(c[2]);
    r.q025 = std::stod(c[3]);
    r.q975 = std::stod(c[5]);
    r.coverage = std::numeric_limits<double>::quiet_NaN();
    rows.push_back(r);
  }
  return rows;
}

int cmd_simulate(const std::string& plan_path, const std::string& out, std::size_t replicate, const Common& c) {
  ExperimentPlan plan = plan_from_json(load_json(plan_path));
  if (c.seed_set) plan.seed = c.seed;
  ensure_dir(out);
  const BuiltModel gen = build_generating_model(plan);
  const BuiltModel fit = build_fit_model(plan);
  const SimulatedData data = simulate_dataset(gen.spec, gen.truth, replicate_seed(plan.seed, replicate, 0));
  save_model(fit.spec, out + "/model.json");
  save_observations(data.y, fit.spec.trials, out + "/data.csv");
  if (!fit.toenail.empty()) {
    auto rows = fit.toenail;
    for (std::size_t k = 0; k < rows.size(); ++k) rows[k].outcome = static_cast<int>(data.y[static_cast<Eigen::Index>(k)]);
    save_toenail_csv(rows, out + "/toenail.csv");
  }
  json truth;
  truth["fixed"] = std::vector<double>(gen.truth.fixed.data(), gen.truth.fixed.data() + gen.truth.fixed.size());
  truth["theta"] = std::vector<double>(gen.truth.theta.values.data(),
                                       gen.truth.theta.values.data() + gen.truth.theta.values.size());
  truth["template"] = template_name(plan.model);
  truth["replicate"] = replicate;
  truth["seed"] = replicate_seed(plan.seed, replicate, 0);
  std::ofstream(out + "/truth.json") << truth.dump(2) << '\n';
  return 0;
}

int cmd_fit(const std::string& model_path, const std::string& data_path, const std::string& out, const Common& c) {
  Vector y;
  const ModelSpec spec = load_model_with_data(model_path, data_path, y);
  ensure_dir(out);
  ExploreOptions opts;
  opts.threads = c.threads;
  const CorrectionConfig cfg{correction_from_name(c.correction), c.xi};
  const HyperPosterior hp = explore(spec, y, cfg, opts);

  std::ofstream log(out + "/run_log.csv");
  log << "point";
  for (std::size_t j = 0; j < hp.dim; ++j) log << ",theta" << j;
  log << ",log_uncorrected,correction_raw,correction,log_corrected,weight,clamped\n";
  for (std::size_t k = 0; k < hp.points.size(); ++k) {
    const auto& g = hp.points[k];
    log << k;
    for (std::size_t j = 0; j < hp.dim; ++j) log << ',' << format_double(g.theta[j]);
    log << ',' << format_double(g.log_uncorrected) << ',' << format_double(g.correction_raw) << ','
        << format_double(g.correction) << ',' << format_double(g.log_corrected) << ',' << format_double(g.weight)
        << ',' << (g.correction_clamped ? 1 : 0) << '\n';
  }

  std::vector<SummaryLine> lines;
  for (std::size_t i : spec.fixed_index_set) {
    const PosteriorMarginal m = latent_marginal(spec, hp, i);
    write_marginal_csv(m, out + "/marginal_x" + std::to_string(i) + ".csv");
    lines.push_back({"x" + std::to_string(i), m.mean, m.sd, m.q025, m.q50, m.q975});
  }
  for (std::size_t j = 0; j < hp.dim; ++j) {
    const PosteriorMarginal m = hyper_marginal(hp, j);
    write_marginal_csv(m, out + "/marginal_theta" + std::to_string(j) + ".csv");
    lines.push_back({"theta" + std::to_string(j), m.mean, m.sd, m.q025, m.q50, m.q975});
  }
  write_summary(lines, out + "/summary.csv");

  json manifest;
  manifest["version"] = kVersion;
  manifest["correction"] = correction_name(cfg.mode);
  manifest["xi"] = cfg.xi;
  manifest["grid_points"] = hp.points.size();
  manifest["optimizer_converged"] = hp.diagnostics.optimizer_converged;
  manifest["optimizer_iterations"] = hp.diagnostics.optimizer_iterations;
  manifest["hessian_regularized"] = hp.diagnostics.hessian_regularized;
  manifest["mode"] = std::vector<double>(hp.mode.values.data(), hp.mode.values.data() + hp.mode.values.size());
  std::ofstream(out + "/fit.json") << manifest.dump(2) << '\n';
  return 0;
}

int cmd_mcmc(const std::string& model_path, const std::string& data_path, const std::string& out, ChainConfig cc,
             const std::string& resume, const Common& c) {
  Vector y;
  const ModelSpec spec = load_model_with_data(model_path, data_path, y);
  ensure_dir(out);
  cc.seed = c.seed;
  cc.threads = c.threads;
  std::optional<ChainState> init;
  if (!resume.empty()) init = read_checkpoint(resume);
  const PosteriorSamples s = run_mcmc(spec, y, cc, init);

  std::vector<std::pair<std::string, const std::vector<double>*>> cols;
  for (std::size_t k = 0; k < s.latent_index.size(); ++k) cols.push_back({"x" + std::to_string(s.latent_index[k]), &s.latent[k]});
  for (std::size_t j = 0; j < s.theta.size(); ++j) cols.push_back({"theta" + std::to_string(j), &s.theta[j]});

  std::ofstream samples(out + "/samples.csv");
  samples << "chain,iteration";
  for (const auto& col : cols) samples << ',' << col.first;
  samples << '\n';
  for (std::size_t ch = 0; ch < s.n_chains; ++ch) {
    for (std::size_t t = 0; t < s.per_chain; ++t) {
      samples << ch << ',' << t;
      for (const auto& col : cols) samples << ',' << format_double((*col.second)[ch * s.per_chain + t]);
      samples << '\n';
    }
  }
  std::vector<SummaryLine> lines;
  json diag;
  for (const auto& [name, draws] : cols) {
    const SampleSummary sm = summarize(*draws);
    lines.push_back({name, sm.mean, sm.sd, sm.q025, sm.q50, sm.q975});
    write_histogram_csv(*draws, 60, out + "/hist_" + name + ".csv");
    double ess = 0.0;
    std::vector<std::span<const double>> chains;
    for (std::size_t ch = 0; ch < s.n_chains; ++ch) {
      chains.push_back(s.chain_of(*draws, ch));
      ess += effective_sample_size(chains.back());
    }
    diag["ess"][name] = ess;
    if (s.n_chains > 1) diag["rhat"][name] = gelman_rubin(chains);
  }
  write_summary(lines, out + "/summary.csv");
  for (const auto& a : s.acceptance) diag["acceptance"][a.move] = a.rate;
  diag["version"] = kVersion;
  diag["seed"] = cc.seed;
  diag["chains"] = cc.n_chains;
  diag["n_iter"] = cc.n_iter;
  diag["burn_in"] = cc.burn_in;
  diag["thin"] = cc.thin;
  std::ofstream(out + "/diagnostics.json") << diag.dump(2) << '\n';
  return 0;
}

int cmd_compare(const std::string& method_path, const std::string& reference_path, const std::string& out) {
  const auto a = read_summary(method_path, "method");
  const auto b = read_summary(reference_path, "reference");
  const auto rows = compare_rows(a, b);
  std::ostream* os = &std::cout;
  std::ofstream file;
  if (!out.empty()) {
    file.open(out);
    if (!file) throw ConfigError("cannot open " + out + " for writing");
    os = &file;
  }
  *os << "parameter,mean,reference_mean,scaled_gap,variance_ratio\n";
  for (const auto& r : rows) {
    *os << r.parameter << ',' << format_double(r.avg_mean) << ',' << format_double(r.avg_mcmc_mean) << ','
        << format_double(r.scaled_gap) << ',' << format_double(r.variance_ratio) << '\n';
  }
  return 0;
}

int cmd_table(const std::string& dir, const std::string& out, const Common& c) {
  const ComparisonReport rep = table_from_directory(dir, c.seed);
  write_report_csv(rep, out.empty() ? dir + "/report.csv" : out);
  if (rep.too_many_failures) throw ModelError("more than 5% of replicates failed");
  return 0;
}

int cmd_experiment(const std::string& plan_path, const std::string& out, const Common& c) {
  ExperimentPlan plan = plan_from_json(load_json(plan_path));
  if (c.seed_set) plan.seed = c.seed;
  plan.threads = c.threads;
  if (c.xi_set) plan.xi = c.xi;
  ensure_dir(out);
  const ExperimentResult res = run_experiment(plan, out);
  if (res.report.too_many_failures) throw ModelError("more than 5% of replicates failed");
  return 0;
}

int cmd_sweep(const std::string& kind, const std::string& plan_path, const std::vector<double>& values,
              const std::string& out, const Common& c) {
  ExperimentPlan plan;
  if (!plan_path.empty()) {
    json j = load_json(plan_path);
    j["model"] = kind == "toenail" ? "toenail" : "poisson";
    plan = plan_from_json(j);
  }
  if (c.seed_set) plan.seed = c.seed;
  plan.threads = c.threads;
  if (c.xi_set) plan.xi = c.xi;
  ensure_dir(out);
  if (kind == "toenail") {
    toenail_sweep(values, plan, out);
  } else if (kind == "poisson") {
    poisson_sweep(values, plan, out);
  } else {
    throw ConfigError("sweep kind must be toenail or poisson");
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Copula-corrected Laplace approximations for latent Gaussian models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("cinla ") + kVersion);
  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", common.seed, "random seed");
    sub->add_option("--threads", common.threads, "worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--correction", common.correction, "none, mean or skew")
        ->check(CLI::IsMember({"none", "mean", "skew"}));
    sub->add_option("--xi", common.xi, "soft-threshold scale per fixed effect")->check(CLI::PositiveNumber);
  };

  std::string plan_path, model_path, data_path, out_dir, resume, method_path, reference_path, sweep_kind;
  std::size_t replicate = 0;
  std::vector<double> values;
  ChainConfig cc;
  cc.n_iter = 120000;
  cc.burn_in = 20000;

  auto* simulate = app.add_subcommand("simulate", "simulate one data set from a plan");
  simulate->add_option("--plan", plan_path, "plan JSON")->required();
  simulate->add_option("--out", out_dir, "output directory")->required();
  simulate->add_option("--replicate", replicate, "replicate index");
  add_common(simulate);

  auto* fit = app.add_subcommand("fit", "fit a model with the Laplace pipeline");
  fit->add_option("--model", model_path, "model JSON")->required();
  fit->add_option("--data", data_path, "observation CSV")->required();
  fit->add_option("--out", out_dir, "output directory")->required();
  add_common(fit);

  auto* mcmc = app.add_subcommand("mcmc", "run the reference sampler");
  mcmc->add_option("--model", model_path, "model JSON")->required();
  mcmc->add_option("--data", data_path, "observation CSV")->required();
  mcmc->add_option("--out", out_dir, "output directory")->required();
  mcmc->add_option("--iter", cc.n_iter, "iterations per chain including burn-in");
  mcmc->add_option("--burn-in", cc.burn_in, "burn-in iterations");
  mcmc->add_option("--thin", cc.thin, "thinning");
  mcmc->add_option("--chains", cc.n_chains, "number of chains");
  mcmc->add_option("--checkpoint", cc.checkpoint_path, "write final chain states to this path prefix");
  mcmc->add_option("--resume", resume, "start every chain from this checkpoint");
  add_common(mcmc);

  auto* compare = app.add_subcommand("compare", "compare a summary with a reference summary");
  compare->add_option("--method", method_path, "summary CSV of the method")->required();
  compare->add_option("--reference", reference_path, "summary CSV of the reference")->required();
  compare->add_option("--out", out_dir, "output CSV (default: stdout)");
  add_common(compare);

  auto* table = app.add_subcommand("table", "aggregate stored replicate outputs");
  table->add_option("--dir", out_dir, "experiment directory")->required();
  std::string table_out;
  table->add_option("--out", table_out, "report CSV (default: <dir>/report.csv)");
  add_common(table);

  auto* experiment = app.add_subcommand("experiment", "run a full replicate experiment");
  experiment->add_option("--plan", plan_path, "plan JSON")->required();
  experiment->add_option("--out", out_dir, "output directory")->required();
  add_common(experiment);

  auto* sweep = app.add_subcommand("sweep", "toenail sigma sweep or poisson intercept sweep");
  sweep->add_option("kind", sweep_kind, "toenail or poisson")->required()->check(CLI::IsMember({"toenail", "poisson"}));
  sweep->add_option("--values", values, "sweep values")->required()->delimiter(',');
  sweep->add_option("--plan", plan_path, "base plan JSON");
  sweep->add_option("--out", out_dir, "output directory")->required();
  add_common(sweep);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }
  for (auto* sub : app.get_subcommands()) {
    if (sub->count("--seed")) common.seed_set = true;
    if (sub->count("--xi")) common.xi_set = true;
  }

  try {
    if (*simulate) return cmd_simulate(plan_path, out_dir, replicate, common);
    if (*fit) return cmd_fit(model_path, data_path, out_dir, common);
    if (*mcmc) return cmd_mcmc(model_path, data_path, out_dir, cc, resume, common);
    if (*compare) return cmd_compare(method_path, reference_path, out_dir);
    if (*table) return cmd_table(out_dir, table_out, common);
    if (*experiment) return cmd_experiment(plan_path, out_dir, common);
    if (*sweep) return cmd_sweep(sweep_kind, plan_path, values, out_dir, common);
  } catch (const ConfigError& e) {
    print_error("config", e.what());
    return 1;
  } catch (const NewtonError& e) {
    print_error("newton", e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("runtime", e.what());
    return 1;
  }
  return 0;
}
