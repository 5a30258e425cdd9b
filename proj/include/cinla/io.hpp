// JSON model configuration and CSV data loading.
//
// Model file schema:
//   {
//     "family": "bernoulli" | "binomial" | "poisson" | "gaussian",
//     "gaussian_precision": 1.0,              (gaussian only)
//     "n_hyper": 1,
//     "blocks": [
//       {"type": "fixed", "count": 2},
//       {"type": "iid", "clusters": 100, "precision": 0},
//       {"type": "bivariate", "clusters": 100, "theta": [0, 1, 2]},
//       {"type": "ar1", "length": 100, "log_kappa": 0, "corr": 1}
//     ],
//     "fixed_prior": [{"mean": 0, "variance": 1}, ...],
//     "hyper_priors": [
//       {"type": "gamma", "theta": 0, "shape": 1, "rate": 1},
//       {"type": "gaussian", "theta": 1, "mean": 0, "variance": 1},
//       {"type": "wishart", "theta": [0, 1, 2], "df": 3, "scale": [0.17, 0.025]}
//     ],
//     "design": [[obs, latent, coef], ...],
//     "trials": [...],                        (optional, binomial)
//     "fixed_index_set": [...]                (optional, checked against the blocks)
//   }
#pragma once

#include "cinla/model.hpp"

#include <json.hpp>

#include <string>
#include <vector>

namespace cinla {

struct ConfigError : ModelError {
  using ModelError::ModelError;
};

ModelSpec model_from_json(const nlohmann::json& j);
nlohmann::json model_to_json(const ModelSpec& spec);

ModelSpec load_model(const std::string& path);
void save_model(const ModelSpec& spec, const std::string& path);

nlohmann::json load_json(const std::string& path);

/// Observation CSV with a header containing a `y` column and optionally a
/// `trials` column.
struct ObservationData {
  Vector y;
  std::vector<int> trials;
};

ObservationData load_observations(const std::string& path);
void save_observations(const Vector& y, const std::vector<int>& trials, const std::string& path);

/// Toenail layout: id,visit,time,treatment,outcome.
struct ToenailRecord {
  int id = 0;
  int visit = 0;
  double time = 0.0;
  int treatment = 0;
  int outcome = 0;
};

std::vector<ToenailRecord> load_toenail_csv(const std::string& path);
void save_toenail_csv(const std::vector<ToenailRecord>& rows, const std::string& path);

/// Splits one CSV line on commas (no quoting).
std::vector<std::string> split_csv_line(const std::string& line);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double v);

}  // namespace cinla
