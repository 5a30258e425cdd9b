#include "cinla/experiments.hpp"
#include "cinla/io.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>

using namespace cinla;

namespace {

std::string tmp(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("cinla_io_" + name)).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path) << text;
}

bool same_model(const ModelSpec& a, const ModelSpec& b) {
  return model_to_json(a) == model_to_json(b) && a.n_latent() == b.n_latent() && a.n_obs() == b.n_obs() &&
         a.fixed_index_set == b.fixed_index_set;
}

}  // namespace

TEST_CASE("model json round trip for every template") {
  for (auto t : {TemplateId::Minimal, TemplateId::Model07, TemplateId::Model08, TemplateId::Toenail,
                 TemplateId::Poisson, TemplateId::Ar1}) {
    ExperimentPlan plan;
    plan.model = t;
    const auto spec = build_fit_model(plan).spec;
    const auto back = model_from_json(model_to_json(spec));
    CHECK_MESSAGE(same_model(spec, back), template_name(t));
    const auto path = tmp("model.json");
    save_model(spec, path);
    CHECK(same_model(spec, load_model(path)));
    std::filesystem::remove(path);
  }
}

TEST_CASE("model json errors are config errors") {
  const auto good = model_to_json(test::random_intercept(3, Family::PoissonLog));
  CHECK_NOTHROW(model_from_json(good));
  auto j = good;
  j["family"] = "cauchy";
  CHECK_THROWS_AS(model_from_json(j), ConfigError);
  j = good;
  j.erase("blocks");
  CHECK_THROWS_AS(model_from_json(j), ConfigError);
  j = good;
  j["design"].push_back({0, 99, 1.0});
  CHECK_THROWS_AS(model_from_json(j), ModelError);
  j = good;
  j["fixed_index_set"] = {1};
  CHECK_THROWS_AS(model_from_json(j), ConfigError);
  j = good;
  j["n_hyper"] = "one";
  CHECK_THROWS_AS(model_from_json(j), ConfigError);
  CHECK_THROWS_AS(load_model(tmp("does_not_exist.json")), ConfigError);
  const auto bad = tmp("bad.json");
  write_text(bad, "{ not json");
  CHECK_THROWS_AS(load_json(bad), ConfigError);
  std::filesystem::remove(bad);
}

TEST_CASE("observation csv round trip") {
  const auto path = tmp("obs.csv");
  Vector y(4);
  y << 0, 3, 1.5, -2.25;
  save_observations(y, {}, path);
  auto back = load_observations(path);
  CHECK(back.y == y);
  CHECK(back.trials.empty());
  save_observations(y, {1, 4, 2, 3}, path);
  back = load_observations(path);
  CHECK(back.trials == std::vector<int>{1, 4, 2, 3});

  write_text(path, "trials,y\n2,1\n3,0\n");
  back = load_observations(path);
  CHECK(back.y[0] == 1.0);
  CHECK(back.trials[1] == 3);
  write_text(path, "x,z\n1,2\n");
  CHECK_THROWS_AS(load_observations(path), ConfigError);
  write_text(path, "y\n1\nabc\n");
  CHECK_THROWS_AS(load_observations(path), ConfigError);
  std::filesystem::remove(path);
}

TEST_CASE("toenail csv round trip") {
  std::vector<ToenailRecord> rows{{1, 1, 0.0, 1, 1}, {1, 2, 0.9733, 1, 0}, {2, 1, 0.0, 0, 0}, {2, 7, 12.25, 0, 1}};
  const auto path = tmp("toe.csv");
  save_toenail_csv(rows, path);
  {
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "id,visit,time,treatment,outcome");
  }
  const auto back = load_toenail_csv(path);
  REQUIRE(back.size() == rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    CHECK(back[k].id == rows[k].id);
    CHECK(back[k].visit == rows[k].visit);
    CHECK(back[k].time == rows[k].time);
    CHECK(back[k].treatment == rows[k].treatment);
    CHECK(back[k].outcome == rows[k].outcome);
  }
  write_text(path, "id,visit,time,treatment,outcome\n1,1,0,1,2\n");
  CHECK_THROWS_AS(load_toenail_csv(path), ConfigError);
  write_text(path, "id,visit,time\n1,1,0\n");
  CHECK_THROWS_AS(load_toenail_csv(path), ConfigError);
  std::filesystem::remove(path);
}

TEST_CASE("double formatting reads back exactly") {
  for (double v : {0.0, -0.0, 1.0, 0.1, 1.0 / 3.0, 1e-300, 6.02214076e23, -2.5e-7,
                   std::numeric_limits<double>::max(), std::numeric_limits<double>::denorm_min()}) {
    CHECK(std::strtod(format_double(v).c_str(), nullptr) == v);
  }
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(split_csv_line("a,,b") == std::vector<std::string>{"a", "", "b"});
  CHECK(split_csv_line("x\r") == std::vector<std::string>{"x"});
}
