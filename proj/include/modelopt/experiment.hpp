#pragma once

#include <modelopt/optim.hpp>
#include <modelopt/upscale.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace modelopt::experiment
{
  namespace fs = std::filesystem;
  using upscale::EffectiveModel;

  struct DomainSpec
  {
    /// unit_square | rectangle | advection_benchmark
    std::string kind = "unit_square";
    double width = 1.0;
    double height = 1.0;
    std::vector<std::string> dirichlet{"boundary"};
    std::vector<fem::NeumannData> neumann;

    bool operator==(const DomainSpec &) const = default;
  };

  struct FieldSpec
  {
    /// lognormal | raster_file | constant | laminate | checkerboard
    std::string variant = "lognormal";
    std::uint64_t seed = 42;
    int nx = 64;
    int ny = 64;
    double corr_len = 0.05;
    double gamma = 1.0;
    std::string file;
    /// constant: value * Id; laminate / checkerboard: a, b.
    double value = 1.0;
    double a = 1.0;
    double b = 4.0;
    double layer_width = 0.125;
    int direction = 0;

    bool operator==(const FieldSpec &) const = default;
  };

  /// Stream-function advection; the stream raster is drawn from seed + 1.
  struct AdvectionSpec
  {
    bool enabled = false;
    int nx = 64;
    int ny = 128;
    double corr_len = 1.0 / 64.0;
    double max_speed = 100.0;
    double taper_width = 0.1;

    bool operator==(const AdvectionSpec &) const = default;
  };

  struct FunctionalSpec
  {
    /// domain | point | boundary
    std::string kind = "domain";
    Point x0{0.5, 0.5};
    std::string marker;

    bool operator==(const FunctionalSpec &) const = default;
  };

  struct ModelSpec
  {
    /// arithmetic | geometric | homogenized | constant | file
    std::string upscaler = "geometric";
    double value = 1.0;
    std::string file;

    bool operator==(const ModelSpec &) const = default;
  };

  struct OracleSpec
  {
    bool enabled = true;
    long dof_cap = 2'000'000;

    bool operator==(const OracleSpec &) const = default;
  };

  struct ExperimentConfig
  {
    std::string name = "experiment";
    DomainSpec domain;
    double delta = 0.25;
    double H = 0.0625;
    double h = 0.0078125;
    FieldSpec field;
    AdvectionSpec advection;
    double source = 1.0;
    FunctionalSpec functional;
    ModelSpec model;
    optim::OptimizerConfig optimizer;
    OracleSpec oracle;
    std::string output_dir = "out";
    bool write_fields = true;

    bool operator==(const ExperimentConfig &) const = default;
  };

  /// Lengths accept decimals, fractions "a/b" and powers "2^-k".
  double parse_number(const std::string &s);

  ExperimentConfig parse_config(const std::string &ini_text);
  ExperimentConfig load_config(const fs::path &path);
  /// Complete INI text; parse_config(to_ini(c)) == c.
  std::string to_ini(const ExperimentConfig &c);

  mesh::Domain build_domain(const ExperimentConfig &c);
  /// Raster of the lognormal / raster_file variants.
  field::RasterField build_raster(const ExperimentConfig &c);
  field::RasterField build_stream_raster(const ExperimentConfig &c);
  field::AdvectionField build_advection(const ExperimentConfig &c);
  dwr::Problem build_problem(const ExperimentConfig &c);
  EffectiveModel build_initial_model(const ExperimentConfig &c, const dwr::Problem &p);

  struct Reference
  {
    dwr::FineSolution fine;
    double j_ref = 0.0;
  };

  /// Global fine solve at resolution h. Refuses meshes above the dof cap
  /// (ResourceError) and rasters that h does not resolve (ConfigError).
  Reference oracle_reference(const ExperimentConfig &c, const dwr::Problem &p, bool with_dual);

  struct RunReport
  {
    std::string config_echo;
    std::vector<optim::CycleRecord> history;
    std::optional<double> j_reference;
    std::vector<std::pair<std::string, double>> timings;
    std::vector<fs::path> manifest;
    /// Free-form result lines (key = value).
    std::vector<std::pair<std::string, std::string>> results;

    std::string text() const;
    /// Writes report.txt into @p dir and adds it to the manifest.
    void write(const fs::path &dir);
  };

  /// Echoed config between the markers of a report written by RunReport.
  std::string extract_config_echo(const std::string &report_text);

  // Subcommands. Each writes its artifacts and report.txt into
  // c.output_dir, which is created when missing.

  RunReport generate_field(const ExperimentConfig &c);
  RunReport upscale_model(const ExperimentConfig &c);
  RunReport reference(const ExperimentConfig &c);
  RunReport estimate(const ExperimentConfig &c);
  RunReport run_scenario(const ExperimentConfig &c);

  struct DualComparison
  {
    std::vector<optim::CycleRecord> full;
    std::vector<optim::CycleRecord> enhanced;
  };

  /// Side-by-side table, one row per cycle of the longer run.
  std::string comparison_csv(const DualComparison &d);
  RunReport compare_duals(const ExperimentConfig &c, DualComparison *out = nullptr);
} // namespace modelopt::experiment
