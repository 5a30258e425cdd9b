#include "cinla/io.hpp"

#include "cinla/detail/overloaded.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace cinla {

using detail::overloaded;
using nlohmann::json;

namespace {

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": field '" + key + "' has the wrong type");
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) ? get<T>(j, key, where) : fallback;
}

std::size_t index_of(const std::vector<std::string>& header, const std::string& name) {
  for (std::size_t k = 0; k < header.size(); ++k) {
    if (header[k] == name) return k;
  }
  return header.size();
}

double parse_double(const std::string& s, const std::string& where) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  const auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr != e) throw ConfigError(where + ": cannot parse '" + s + "' as a number");
  return v;
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ModelError("cannot format number");
  return std::string(buf, ptr);
}

ModelSpec model_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("model: expected a JSON object");
  ModelSpec spec;
  try {
    spec.likelihood.kind = family_from_name(get<std::string>(j, "family", "model"));
  } catch (const ConfigError&) {
    throw;
  } catch (const ModelError& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  spec.likelihood.gaussian_precision = get_or<double>(j, "gaussian_precision", 1.0, "model");
  spec.n_hyper = get<std::size_t>(j, "n_hyper", "model");

  const json blocks = get<json>(j, "blocks", "model");
  if (!blocks.is_array()) throw ConfigError("model: 'blocks' must be an array");
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& bj = blocks[b];
    const std::string where = "blocks[" + std::to_string(b) + "]";
    const auto type = get<std::string>(bj, "type", where);
    LatentBlock blk;
    if (type == "fixed") {
      blk.kind = FixedEffects{get<std::size_t>(bj, "count", where)};
    } else if (type == "iid") {
      blk.kind = IidNormal{get<std::size_t>(bj, "clusters", where), get<std::size_t>(bj, "precision", where)};
    } else if (type == "bivariate") {
      const auto t = get<std::vector<std::size_t>>(bj, "theta", where);
      if (t.size() != 3) throw ConfigError(where + ": 'theta' needs three indices");
      blk.kind = BivariateIid{get<std::size_t>(bj, "clusters", where), t[0], t[1], t[2]};
    } else if (type == "ar1") {
      blk.kind = AR1{get<std::size_t>(bj, "length", where), get<std::size_t>(bj, "log_kappa", where),
                     get<std::size_t>(bj, "corr", where)};
    } else {
      throw ConfigError(where + ": unknown block type '" + type + "'");
    }
    spec.blocks.push_back(blk);
  }

  for (const auto& fj : get_or<json>(j, "fixed_prior", json::array(), "model")) {
    spec.fixed_prior.push_back({get<double>(fj, "mean", "fixed_prior"), get<double>(fj, "variance", "fixed_prior")});
  }

  const json priors = get_or<json>(j, "hyper_priors", json::array(), "model");
  for (std::size_t k = 0; k < priors.size(); ++k) {
    const auto& pj = priors[k];
    const std::string where = "hyper_priors[" + std::to_string(k) + "]";
    const auto type = get<std::string>(pj, "type", where);
    if (type == "gamma") {
      spec.hyper_priors.push_back(GammaOnPrecision{get<double>(pj, "shape", where), get<double>(pj, "rate", where),
                                                   get<std::size_t>(pj, "theta", where)});
    } else if (type == "gaussian") {
      spec.hyper_priors.push_back(GaussianOnInternal{get<double>(pj, "mean", where),
                                                     get<double>(pj, "variance", where),
                                                     get<std::size_t>(pj, "theta", where)});
    } else if (type == "wishart") {
      const auto t = get<std::vector<std::size_t>>(pj, "theta", where);
      const auto s = get<std::vector<double>>(pj, "scale", where);
      if (t.size() != 3 || s.size() != 2) throw ConfigError(where + ": wishart needs 3 theta indices and 2 scales");
      spec.hyper_priors.push_back(WishartOnPrecision2x2{get<double>(pj, "df", where), s[0], s[1], t[0], t[1], t[2]});
    } else {
      throw ConfigError(where + ": unknown prior type '" + type + "'");
    }
  }

  const json design = get<json>(j, "design", "model");
  if (!design.is_array()) throw ConfigError("model: 'design' must be an array of [obs, latent, coef]");
  for (const auto& t : design) {
    if (!t.is_array() || t.size() != 3) throw ConfigError("design: each entry must be [obs, latent, coef]");
    const auto obs = t[0].get<std::size_t>();
    if (obs >= spec.design.size()) spec.design.resize(obs + 1);
    spec.design[obs].push_back({t[1].get<std::size_t>(), t[2].get<double>()});
  }
  if (j.contains("n_obs")) spec.design.resize(std::max(spec.design.size(), get<std::size_t>(j, "n_obs", "model")));
  spec.trials = get_or<std::vector<int>>(j, "trials", {}, "model");

  spec.finalize();
  if (j.contains("fixed_index_set")) {
    const auto given = get<std::vector<std::size_t>>(j, "fixed_index_set", "model");
    if (given != spec.fixed_index_set) {
      throw ConfigError("model: fixed_index_set must list the fixed effects and length-one random effects");
    }
  }
  spec.validate();
  return spec;
}

json model_to_json(const ModelSpec& spec) {
  json j;
  j["family"] = family_name(spec.likelihood.kind);
  if (spec.likelihood.kind == Family::GaussianIdentity) j["gaussian_precision"] = spec.likelihood.gaussian_precision;
  j["n_hyper"] = spec.n_hyper;
  json blocks = json::array();
  for (const auto& b : spec.blocks) {
    std::visit(overloaded{[&](const FixedEffects& f) { blocks.push_back({{"type", "fixed"}, {"count", f.count}}); },
                          [&](const IidNormal& r) {
                            blocks.push_back({{"type", "iid"}, {"clusters", r.clusters}, {"precision", r.precision}});
                          },
                          [&](const BivariateIid& r) {
                            blocks.push_back({{"type", "bivariate"},
                                              {"clusters", r.clusters},
                                              {"theta", {r.log_prec0, r.log_prec1, r.corr}}});
                          },
                          [&](const AR1& r) {
                            blocks.push_back(
                                {{"type", "ar1"}, {"length", r.length}, {"log_kappa", r.log_kappa}, {"corr", r.corr}});
                          }},
               b.kind);
  }
  j["blocks"] = blocks;
  json fp = json::array();
  for (const auto& p : spec.fixed_prior) fp.push_back({{"mean", p.mean}, {"variance", p.variance}});
  j["fixed_prior"] = fp;
  json hp = json::array();
  for (const auto& p : spec.hyper_priors) {
    std::visit(overloaded{[&](const GammaOnPrecision& g) {
                            hp.push_back({{"type", "gamma"}, {"theta", g.theta}, {"shape", g.shape}, {"rate", g.rate}});
                          },
                          [&](const GaussianOnInternal& g) {
                            hp.push_back(
                                {{"type", "gaussian"}, {"theta", g.theta}, {"mean", g.mean}, {"variance", g.variance}});
                          },
                          [&](const WishartOnPrecision2x2& w) {
                            hp.push_back({{"type", "wishart"},
                                          {"theta", {w.log_prec0, w.log_prec1, w.corr}},
                                          {"df", w.df},
                                          {"scale", {w.scale0, w.scale1}}});
                          }},
               p);
  }
  j["hyper_priors"] = hp;
  json design = json::array();
  for (std::size_t o = 0; o < spec.design.size(); ++o) {
    for (const auto& e : spec.design[o]) design.push_back({o, e.latent, e.coef});
  }
  j["design"] = design;
  j["n_obs"] = spec.n_obs();
  if (!spec.trials.empty()) j["trials"] = spec.trials;
  j["fixed_index_set"] = spec.fixed_index_set;
  return j;
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

ModelSpec load_model(const std::string& path) { return model_from_json(load_json(path)); }

void save_model(const ModelSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << model_to_json(spec).dump() << '\n';
}

ObservationData load_observations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  const auto header = split_csv_line(line);
  const std::size_t yc = index_of(header, "y");
  const std::size_t tc = index_of(header, "trials");
  if (yc == header.size()) throw ConfigError(path + ": header has no 'y' column");
  std::vector<double> ys;
  ObservationData d;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) throw ConfigError(path + ": row " + std::to_string(row) + " has the wrong width");
    ys.push_back(parse_double(cells[yc], path));
    if (tc < header.size()) d.trials.push_back(static_cast<int>(parse_double(cells[tc], path)));
  }
  d.y = Eigen::Map<Vector>(ys.data(), static_cast<Eigen::Index>(ys.size()));
  return d;
}

void save_observations(const Vector& y, const std::vector<int>& trials, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << (trials.empty() ? "y\n" : "y,trials\n");
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    out << format_double(y[k]);
    if (!trials.empty()) out << ',' << trials[static_cast<std::size_t>(k)];
    out << '\n';
  }
}

std::vector<ToenailRecord> load_toenail_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw ConfigError(path + ": empty file");
  const auto header = split_csv_line(line);
  const char* names[] = {"id", "visit", "time", "treatment", "outcome"};
  std::size_t col[5];
  for (int k = 0; k < 5; ++k) {
    col[k] = index_of(header, names[k]);
    if (col[k] == header.size()) throw ConfigError(path + ": missing column '" + names[k] + "'");
  }
  std::vector<ToenailRecord> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto c = split_csv_line(line);
    if (c.size() != header.size()) throw ConfigError(path + ": ragged row");
    ToenailRecord r;
    r.id = static_cast<int>(parse_double(c[col[0]], path));
    r.visit = static_cast<int>(parse_double(c[col[1]], path));
    r.time = parse_double(c[col[2]], path);
    r.treatment = static_cast<int>(parse_double(c[col[3]], path));
    r.outcome = static_cast<int>(parse_double(c[col[4]], path));
    if (r.outcome != 0 && r.outcome != 1) throw ConfigError(path + ": outcome must be 0 or 1");
    rows.push_back(r);
  }
  return rows;
}

void save_toenail_csv(const std::vector<ToenailRecord>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open " + path + " for writing");
  out << "id,visit,time,treatment,outcome\n";
  for (const auto& r : rows) {
    out << r.id << ',' << r.visit << ',' << format_double(r.time) << ',' << r.treatment << ',' << r.outcome << '\n';
  }
}

}  // namespace cinla
