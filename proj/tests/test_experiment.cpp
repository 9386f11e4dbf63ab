#include <modelopt/experiment.hpp>

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace modelopt;
using namespace modelopt::experiment;

namespace
{
  std::string read_file(const fs::path &p)
  {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  ExperimentConfig tiny(const std::string &dir)
  {
    ExperimentConfig c;
    c.name = "tiny";
    c.delta = 0.25;
    c.H = 0.0625;
    c.h = 1.0 / 64;
    c.field.nx = 32;
    c.field.ny = 32;
    c.optimizer.max_cycles = 2;
    c.output_dir = (fs::temp_directory_path() / dir).string();
    fs::remove_all(c.output_dir);
    return c;
  }
} // namespace

TEST_SUITE("experiment")
{
  TEST_CASE("number grammar")
  {
    CHECK(parse_number("0.25") == 0.25);
    CHECK(parse_number("1/64") == 1.0 / 64);
    CHECK(parse_number("2^-8") == 1.0 / 256);
    CHECK(parse_number(" 2^3 ") == 8.0);
    CHECK_THROWS_AS(parse_number("quarter"), ConfigError);
    CHECK_THROWS_AS(parse_number("1/0"), ConfigError);
  }

  TEST_CASE("config survives a round trip through INI text")
  {
    ExperimentConfig c;
    c.name = "round trip";
    c.domain.kind = "advection_benchmark";
    c.domain.dirichlet = {"D", "A"};
    c.domain.neumann = {{"E", 1.0}, {"C", -0.3}};
    c.h = 1.0 / 3.0 / 256;
    c.field.seed = 123456789012345ull;
    c.advection.enabled = true;
    c.functional = {"point", {0.1, 1.7}, ""};
    c.optimizer.alpha = 1e-7 / 3;
    c.optimizer.jacobian_mode = optim::JacobianMode::diagonal;
    c.optimizer.dual_mode = dwr::DualKind::full;
    c.oracle.dof_cap = 123;
    c.write_fields = false;
    CHECK(parse_config(to_ini(c)) == c);
    CHECK(parse_config(to_ini(ExperimentConfig{})) == ExperimentConfig{});
  }

  TEST_CASE("unknown sections, keys and values are rejected")
  {
    CHECK_THROWS_AS(parse_config("[mesh]\nsize = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[meshes]\nh = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[field]\nvariant = voronoi\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[optimizer]\nstop_fraction = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[optimizer]\ndual_mode = partial\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("[mesh]\nh = fine\n"), ConfigError);
    CHECK(parse_config("; comment only\n") == ExperimentConfig{});
  }

  TEST_CASE("shipped presets parse")
  {
    for (const auto &e : fs::directory_iterator(fs::path(MODELOPT_SOURCE_DIR) / "configs"))
    {
      INFO(e.path().string());
      CHECK_NOTHROW(load_config(e.path()));
    }
  }

  TEST_CASE("unresolved rasters and oversized meshes are refused")
  {
    ExperimentConfig c = tiny("modelopt_test_caps");
    c.field.nx = 128;
    c.field.ny = 128;
    const dwr::Problem p = build_problem(c);
    CHECK_THROWS_AS(oracle_reference(c, p, false), ConfigError);
    c = tiny("modelopt_test_caps");
    c.oracle.dof_cap = 100;
    CHECK_THROWS_AS(oracle_reference(c, build_problem(c), false), ResourceError);
    CHECK_THROWS_AS(run_scenario(c), ResourceError);
  }

  TEST_CASE("scenario run writes its manifest and echoes the config")
  {
    const ExperimentConfig c = tiny("modelopt_test_run");
    const RunReport r = run_scenario(c);
    CHECK(r.history.size() >= 1u);
    CHECK(r.history.size() <= 3u);
    CHECK(r.j_reference.has_value());
    for (const auto &f : r.manifest)
    {
      INFO(f.string());
      CHECK(fs::exists(f));
    }
    const std::string text = read_file(fs::path(c.output_dir) / "report.txt");
    CHECK(parse_config(extract_config_echo(text)) == c);
    CHECK(read_file(fs::path(c.output_dir) / "history.csv") == optim::history_csv(r.history));
  }

  TEST_CASE("zero cycles only evaluates the initial model")
  {
    ExperimentConfig c = tiny("modelopt_test_zero");
    c.optimizer.max_cycles = 0;
    const RunReport r = run_scenario(c);
    REQUIRE(r.history.size() == 1u);
    CHECK(r.history[0].cycle == 0);
    CHECK(read_file(fs::path(c.output_dir) / "model_final.csv") ==
          read_file(fs::path(c.output_dir) / "model_initial.csv"));
  }

  TEST_CASE("the seed is the only source of randomness")
  {
    ExperimentConfig a = tiny("modelopt_test_seed_a");
    ExperimentConfig b = tiny("modelopt_test_seed_b");
    CHECK(build_raster(a) == build_raster(b));
    b.field.seed = a.field.seed + 1;
    CHECK_FALSE(build_raster(a) == build_raster(b));
    a.advection.enabled = true;
    a.domain.kind = "advection_benchmark";
    a.domain.dirichlet = {"D"};
    CHECK(build_stream_raster(a).values == field::gen_gaussian_raster(a.advection.nx, a.advection.ny, a.advection.corr_len, a.field.seed + 1, {{0, 0}, {1, 2}}).values);
  }

  TEST_CASE("subcommands produce their artifacts")
  {
    const ExperimentConfig c = tiny("modelopt_test_sub");
    for (const RunReport &r : {generate_field(c), upscale_model(c), reference(c), estimate(c)})
    {
      CHECK_FALSE(r.manifest.empty());
      for (const auto &f : r.manifest)
        CHECK(fs::exists(f));
    }
    DualComparison d;
    ExperimentConfig cc = c;
    cc.optimizer.max_cycles = 1;
    compare_duals(cc, &d);
    CHECK_FALSE(d.full.empty());
    CHECK_FALSE(d.enhanced.empty());
    CHECK(comparison_csv(d).find('\n') != std::string::npos);
  }
}
