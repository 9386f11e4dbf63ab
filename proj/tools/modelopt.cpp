// Command line front end: one subcommand per experiment step.

#include <modelopt/experiment.hpp>
#include <modelopt/parallel.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <new>

using namespace modelopt;

namespace
{
  enum ExitCode
  {
    ok = 0,
    config_error = 2,
    numerical_failure = 3,
    resource_cap = 4
  };

  struct Options
  {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
  };

  void print_history(const std::vector<optim::CycleRecord> &h)
  {
    std::printf("%5s %14s %12s %9s %12s %8s %7s\n", "cycle", "j(U)", "|error|", "rel %",
                "|theta|", "I_eff", "I_loc");
    for (const auto &r : h)
    {
      std::printf("%5d %14.8g ", r.cycle, r.j_of_U);
      if (r.abs_error)
        std::printf("%12.4e %9.3f ", *r.abs_error, r.rel_error_pct.value_or(0.0));
      else
        std::printf("%12s %9s ", "-", "-");
      std::printf("%12.4e ", r.theta_tilde);
      if (r.I_eff)
        std::printf("%8.3f ", *r.I_eff);
      else
        std::printf("%8s ", "-");
      std::printf("%7.2f\n", r.I_loc);
    }
  }

  void summarise(const experiment::RunReport &r)
  {
    if (r.j_reference)
      std::printf("reference j = %.10g\n", *r.j_reference);
    for (const auto &[k, v] : r.results)
      std::printf("%s = %s\n", k.c_str(), v.c_str());
    if (!r.history.empty())
      print_history(r.history);
    std::printf("wrote %zu files\n", r.manifest.size());
  }

  int run(const Options &o, const std::function<experiment::RunReport(const experiment::ExperimentConfig &)> &cmd)
  {
    try
    {
      experiment::ExperimentConfig c = experiment::load_config(o.config);
      if (!o.out.empty())
        c.output_dir = o.out;
      if (o.seed)
        c.field.seed = *o.seed;
      summarise(cmd(c));
      return ok;
    }
    catch (const ConfigError &e)
    {
      std::cerr << "configuration error: " << e.what() << "\n";
      return config_error;
    }
    catch (const DomainError &e)
    {
      std::cerr << "configuration error: " << e.what() << "\n";
      return config_error;
    }
    catch (const ResourceError &e)
    {
      std::cerr << "resource cap: " << e.what() << "\n";
      return resource_cap;
    }
    catch (const NumericalError &e)
    {
      std::cerr << "numerical failure: " << e.what() << "\n";
      return numerical_failure;
    }
    catch (const std::bad_alloc &)
    {
      std::cerr << "resource cap: out of memory\n";
      return resource_cap;
    }
  }
} // namespace

int main(int argc, char **argv)
{
  CLI::App app{"Effective model optimisation with local model-error indicators"};
  app.require_subcommand(1);

  const std::map<std::string, std::pair<std::string, std::function<experiment::RunReport(
                                                       const experiment::ExperimentConfig &)>>>
    commands{
      {"generate-field", {"write the coefficient raster (PGM, CSV)", experiment::generate_field}},
      {"upscale", {"compute the initial effective model", experiment::upscale_model}},
      {"reference", {"fine-scale reference solve and QoI", experiment::reference}},
      {"estimate", {"error identity and indicators of the initial model", experiment::estimate}},
      {"optimize", {"run the model optimisation", experiment::run_scenario}},
      {"compare-duals",
       {"optimise with the full and the enhanced dual",
        [](const experiment::ExperimentConfig &c) { return experiment::compare_duals(c); }}}};

  Options opts;
  std::uint64_t seed = 0;
  std::map<std::string, CLI::App *> subs;
  for (const auto &[name, entry] : commands)
  {
    CLI::App *s = app.add_subcommand(name, entry.first);
    s->add_option("config", opts.config, "experiment config (INI)")->required()->check(CLI::ExistingFile);
    s->add_option("--out", opts.out, "output directory (overrides [output] dir)");
    s->add_option("--seed", seed, "random seed (overrides [field] seed)");
    subs[name] = s;
  }

  try
  {
    app.parse(argc, argv);
  }
  catch (const CLI::ParseError &e)
  {
    const int code = app.exit(e);
    return code == 0 ? 0 : config_error;
  }

  for (const auto &[name, s] : subs)
  {
    if (!s->parsed())
      continue;
    if (s->count("--seed"))
      opts.seed = seed;
    std::fprintf(stderr, "modelopt %s (%u worker threads)\n", name.c_str(), worker_count());
    return run(opts, commands.at(name).second);
  }
  return config_error;
}
