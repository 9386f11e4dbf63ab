#include <modelopt/experiment.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace modelopt::experiment
{
  namespace pt = boost::property_tree;

  namespace
  {
    std::string trim(std::string s)
    {
      const auto b = s.find_first_not_of(" \t\r\n");
      if (b == std::string::npos)
        return {};
      const auto e = s.find_last_not_of(" \t\r\n");
      return s.substr(b, e - b + 1);
    }

    double parse_plain(const std::string &s, const std::string &whole)
    {
      std::size_t used = 0;
      double v = 0.0;
      try
      {
        v = std::stod(s, &used);
      }
      catch (const std::exception &)
      {
        used = 0;
      }
      if (used == 0 || used != s.size())
        throw ConfigError("not a number: '" + whole + "'");
      return v;
    }

    std::string fmt(double v)
    {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return buf;
    }

    std::vector<std::string> split_list(const std::string &s)
    {
      std::vector<std::string> out;
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ','))
      {
        item = trim(item);
        if (!item.empty())
          out.push_back(item);
      }
      return out;
    }

    std::string join(const std::vector<std::string> &v)
    {
      std::string s;
      for (std::size_t i = 0; i < v.size(); ++i)
        s += (i ? ", " : "") + v[i];
      return s;
    }

    const std::map<std::string, std::set<std::string>> &known_keys()
    {
      static const std::map<std::string, std::set<std::string>> k{
        {"run", {"name"}},
        {"domain", {"kind", "width", "height", "dirichlet", "neumann"}},
        {"mesh", {"delta", "H", "h"}},
        {"field",
         {"variant", "seed", "nx", "ny", "corr_len", "gamma", "file", "value", "a", "b",
          "layer_width", "direction"}},
        {"advection", {"enabled", "nx", "ny", "corr_len", "max_speed", "taper_width"}},
        {"problem", {"source"}},
        {"functional", {"kind", "x0", "y0", "marker"}},
        {"model", {"upscaler", "value", "file"}},
        {"optimizer",
         {"alpha", "alpha_scale", "lambda_factor", "jacobian_mode", "dual_mode",
          "enhancement_depth", "max_cycles", "stop_fraction", "divergence_factor",
          "cache_patches"}},
        {"oracle", {"enabled", "dof_cap"}},
        {"output", {"dir", "write_fields"}}};
      return k;
    }

    class Reader
    {
    public:
      explicit Reader(const pt::ptree &t) : t_(t) {}

      template <class F>
      static auto wrap(const std::string &key, F &&f)
      {
        try
        {
          return f();
        }
        catch (const ConfigError &e)
        {
          throw ConfigError(key + ": " + e.what());
        }
      }


      std::optional<std::string> raw(const std::string &key) const
      {
        if (auto v = t_.get_optional<std::string>(pt::ptree::path_type(key, '.')))
          return trim(*v);
        return std::nullopt;
      }
      void str(const std::string &key, std::string &out) const
      {
        if (auto v = raw(key))
          out = *v;
      }
      void num(const std::string &key, double &out) const
      {
        if (auto v = raw(key))
          out = wrap(key, [&] { return parse_number(*v); });
      }
      template <class I>
      void integer(const std::string &key, I &out) const
      {
        if (auto v = raw(key))
          out = wrap(key, [&] {
            std::size_t used = 0;
            long long x = 0;
            try
            {
              x = std::stoll(*v, &used);
            }
            catch (const std::exception &)
            {
              used = 0;
            }
            if (used == 0 || used != v->size())
              throw ConfigError("not an integer: '" + *v + "'");
            if constexpr (std::is_unsigned_v<I>)
              if (x < 0)
                throw ConfigError("must be nonnegative");
            return static_cast<I>(x);
          });
      }
      void flag(const std::string &key, bool &out) const
      {
        if (auto v = raw(key))
        {
          if (*v == "true" || *v == "yes" || *v == "1")
            out = true;
          else if (*v == "false" || *v == "no" || *v == "0")
            out = false;
          else
            throw ConfigError(key + ": expected true or false, got '" + *v + "'");
        }
      }

    private:
      const pt::ptree &t_;
    };

    using Clock = std::chrono::steady_clock;

    class PhaseTimer
    {
    public:
      explicit PhaseTimer(RunReport &r) : r_(r) {}
      template <class F>
      auto operator()(const std::string &phase, F &&f)
      {
        const auto t0 = Clock::now();
        struct Record
        {
          RunReport &r;
          std::string phase;
          Clock::time_point t0;
          ~Record()
          {
            r.timings.emplace_back(phase,
                                   std::chrono::duration<double>(Clock::now() - t0).count());
          }
        } rec{r_, phase, t0};
        try
        {
          return f();
        }
        catch (const ConfigError &e)
        {
          throw ConfigError(phase + ": " + e.what());
        }
        catch (const ResourceError &e)
        {
          throw ResourceError(phase + ": " + e.what());
        }
        catch (const DomainError &e)
        {
          throw DomainError(phase + ": " + e.what());
        }
      }

    private:
      RunReport &r_;
    };

    fs::path prepare_dir(const ExperimentConfig &c)
    {
      const fs::path dir(c.output_dir);
      std::error_code ec;
      fs::create_directories(dir, ec);
      if (ec)
        throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
      return dir;
    }

    RunReport start_report(const ExperimentConfig &c)
    {
      RunReport r;
      r.config_echo = to_ini(c);
      return r;
    }

    void add_file(RunReport &r, const fs::path &p) { r.manifest.push_back(p); }

    void write_text(const fs::path &path, const std::string &text)
    {
      std::ofstream out(path, std::ios::binary);
      if (!out)
        throw ConfigError("cannot write " + path.string());
      out << text;
    }

    bool raster_backed(const ExperimentConfig &c)
    {
      return c.field.variant == "lognormal" || c.field.variant == "raster_file";
    }

    void write_optimization_outputs(RunReport &r, const fs::path &dir, const std::string &prefix,
                                    const optim::GaussNewtonState &st)
    {
      const fs::path hist = dir / (prefix + "history.csv");
      optim::write_history_csv(st.history, hist);
      add_file(r, hist);
      const fs::path fin = dir / (prefix + "model_final.csv");
      upscale::write_model_csv(st.model, fin);
      add_file(r, fin);
      r.history = st.history;
      r.results.emplace_back(prefix + "cycles", std::to_string(st.history.size()));
      r.results.emplace_back(prefix + "converged", st.converged ? "true" : "false");
      r.results.emplace_back(prefix + "alpha", fmt(st.alpha));
      r.results.emplace_back(prefix + "initial_estimator", fmt(st.initial_estimator));
      if (!st.history.empty())
        r.results.emplace_back(prefix + "final_estimator", fmt(st.history.back().theta_tilde));
      if (!st.min_eigenvalues.empty())
      {
        const double lo = *std::min_element(st.min_eigenvalues.begin(), st.min_eigenvalues.end());
        const long bad = std::count_if(st.min_eigenvalues.begin(), st.min_eigenvalues.end(),
                                       [](double e) { return e <= 0.0; });
        r.results.emplace_back(prefix + "min_eigenvalue", fmt(lo));
        r.results.emplace_back(prefix + "indefinite_cells", std::to_string(bad));
      }
    }
  } // namespace

  double parse_number(const std::string &text)
  {
    const std::string s = trim(text);
    if (s.empty())
      throw ConfigError("empty number");
    if (const auto c = s.find('^'); c != std::string::npos)
      return std::pow(parse_plain(trim(s.substr(0, c)), s),
                      parse_plain(trim(s.substr(c + 1)), s));
    if (const auto c = s.find('/'); c != std::string::npos)
    {
      const double den = parse_plain(trim(s.substr(c + 1)), s);
      if (den == 0.0)
        throw ConfigError("division by zero in '" + s + "'");
      return parse_plain(trim(s.substr(0, c)), s) / den;
    }
    return parse_plain(s, s);
  }

  ExperimentConfig parse_config(const std::string &ini_text)
  {
    pt::ptree tree;
    try
    {
      std::istringstream in(ini_text);
      pt::ini_parser::read_ini(in, tree);
    }
    catch (const pt::ini_parser_error &e)
    {
      throw ConfigError(std::string("malformed config: ") + e.what());
    }
    for (const auto &[section, body] : tree)
    {
      const auto it = known_keys().find(section);
      if (it == known_keys().end() || body.data().size())
        throw ConfigError("unknown config section [" + section + "]");
      for (const auto &kv : body)
        if (!it->second.count(kv.first))
          throw ConfigError("unknown key '" + kv.first + "' in section [" + section + "]");
    }

    const Reader r(tree);
    ExperimentConfig c;
    r.str("run.name", c.name);

    r.str("domain.kind", c.domain.kind);
    r.num("domain.width", c.domain.width);
    r.num("domain.height", c.domain.height);
    if (auto v = r.raw("domain.dirichlet"))
      c.domain.dirichlet = split_list(*v);
    if (auto v = r.raw("domain.neumann"))
    {
      c.domain.neumann.clear();
      for (const auto &item : split_list(*v))
      {
        const auto colon = item.find(':');
        if (colon == std::string::npos)
          throw ConfigError("domain.neumann: expected marker:flux, got '" + item + "'");
        c.domain.neumann.push_back(
          {trim(item.substr(0, colon)),
           Reader::wrap("domain.neumann", [&] { return parse_number(item.substr(colon + 1)); })});
      }
    }

    r.num("mesh.delta", c.delta);
    r.num("mesh.H", c.H);
    r.num("mesh.h", c.h);

    r.str("field.variant", c.field.variant);
    r.integer("field.seed", c.field.seed);
    r.integer("field.nx", c.field.nx);
    r.integer("field.ny", c.field.ny);
    r.num("field.corr_len", c.field.corr_len);
    r.num("field.gamma", c.field.gamma);
    r.str("field.file", c.field.file);
    r.num("field.value", c.field.value);
    r.num("field.a", c.field.a);
    r.num("field.b", c.field.b);
    r.num("field.layer_width", c.field.layer_width);
    r.integer("field.direction", c.field.direction);

    r.flag("advection.enabled", c.advection.enabled);
    r.integer("advection.nx", c.advection.nx);
    r.integer("advection.ny", c.advection.ny);
    r.num("advection.corr_len", c.advection.corr_len);
    r.num("advection.max_speed", c.advection.max_speed);
    r.num("advection.taper_width", c.advection.taper_width);

    r.num("problem.source", c.source);

    r.str("functional.kind", c.functional.kind);
    r.num("functional.x0", c.functional.x0.x);
    r.num("functional.y0", c.functional.x0.y);
    r.str("functional.marker", c.functional.marker);

    r.str("model.upscaler", c.model.upscaler);
    r.num("model.value", c.model.value);
    r.str("model.file", c.model.file);

    auto &o = c.optimizer;
    if (auto v = r.raw("optimizer.alpha"))
    {
      if (*v == "auto")
        o.alpha.reset();
      else
        o.alpha = Reader::wrap("optimizer.alpha", [&] { return parse_number(*v); });
    }
    r.num("optimizer.alpha_scale", o.alpha_scale);
    r.num("optimizer.lambda_factor", o.lambda_factor);
    if (auto v = r.raw("optimizer.jacobian_mode"))
      o.jacobian_mode = optim::parse_jacobian_mode(*v);
    if (auto v = r.raw("optimizer.dual_mode"))
      o.dual_mode = optim::parse_dual_mode(*v);
    r.integer("optimizer.enhancement_depth", o.enhancement_depth);
    r.integer("optimizer.max_cycles", o.max_cycles);
    r.num("optimizer.stop_fraction", o.stop_fraction);
    r.num("optimizer.divergence_factor", o.divergence_factor);
    r.flag("optimizer.cache_patches", o.cache_patches);

    r.flag("oracle.enabled", c.oracle.enabled);
    r.integer("oracle.dof_cap", c.oracle.dof_cap);

    r.str("output.dir", c.output_dir);
    r.flag("output.write_fields", c.write_fields);

    o.validate();
    static const std::set<std::string> variants{"lognormal", "raster_file", "constant",
                                                "laminate", "checkerboard"};
    if (!variants.count(c.field.variant))
      throw ConfigError("unknown field variant '" + c.field.variant + "'");
    if (c.functional.kind != "domain" && c.functional.kind != "point" &&
        c.functional.kind != "boundary")
      throw ConfigError("unknown functional kind '" + c.functional.kind +
                        "' (expected domain, point or boundary)");
    if (c.model.upscaler != "constant" && c.model.upscaler != "file")
      upscale::parse_upscaler(c.model.upscaler);
    return c;
  }

  ExperimentConfig load_config(const fs::path &path)
  {
    std::ifstream in(path);
    if (!in)
      throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
  }

  std::string to_ini(const ExperimentConfig &c)
  {
    std::ostringstream os;
    auto kv = [&os](const std::string &k, const std::string &v) { os << k << " = " << v << "\n"; };
    auto b = [](bool x) { return std::string(x ? "true" : "false"); };

    os << "[run]\n";
    kv("name", c.name);
    os << "\n[domain]\n";
    kv("kind", c.domain.kind);
    kv("width", fmt(c.domain.width));
    kv("height", fmt(c.domain.height));
    kv("dirichlet", join(c.domain.dirichlet));
    std::vector<std::string> nm;
    for (const auto &n : c.domain.neumann)
      nm.push_back(n.marker + ":" + fmt(n.flux));
    kv("neumann", join(nm));
    os << "\n[mesh]\n";
    kv("delta", fmt(c.delta));
    kv("H", fmt(c.H));
    kv("h", fmt(c.h));
    os << "\n[field]\n";
    kv("variant", c.field.variant);
    kv("seed", std::to_string(c.field.seed));
    kv("nx", std::to_string(c.field.nx));
    kv("ny", std::to_string(c.field.ny));
    kv("corr_len", fmt(c.field.corr_len));
    kv("gamma", fmt(c.field.gamma));
    kv("file", c.field.file);
    kv("value", fmt(c.field.value));
    kv("a", fmt(c.field.a));
    kv("b", fmt(c.field.b));
    kv("layer_width", fmt(c.field.layer_width));
    kv("direction", std::to_string(c.field.direction));
    os << "\n[advection]\n";
    kv("enabled", b(c.advection.enabled));
    kv("nx", std::to_string(c.advection.nx));
    kv("ny", std::to_string(c.advection.ny));
    kv("corr_len", fmt(c.advection.corr_len));
    kv("max_speed", fmt(c.advection.max_speed));
    kv("taper_width", fmt(c.advection.taper_width));
    os << "\n[problem]\n";
    kv("source", fmt(c.source));
    os << "\n[functional]\n";
    kv("kind", c.functional.kind);
    kv("x0", fmt(c.functional.x0.x));
    kv("y0", fmt(c.functional.x0.y));
    kv("marker", c.functional.marker);
    os << "\n[model]\n";
    kv("upscaler", c.model.upscaler);
    kv("value", fmt(c.model.value));
    kv("file", c.model.file);
    os << "\n[optimizer]\n";
    const auto &o = c.optimizer;
    kv("alpha", o.alpha ? fmt(*o.alpha) : "auto");
    kv("alpha_scale", fmt(o.alpha_scale));
    kv("lambda_factor", fmt(o.lambda_factor));
    kv("jacobian_mode", optim::to_string(o.jacobian_mode));
    kv("dual_mode", dwr::to_string(o.dual_mode));
    kv("enhancement_depth", std::to_string(o.enhancement_depth));
    kv("max_cycles", std::to_string(o.max_cycles));
    kv("stop_fraction", fmt(o.stop_fraction));
    kv("divergence_factor", fmt(o.divergence_factor));
    kv("cache_patches", b(o.cache_patches));
    os << "\n[oracle]\n";
    kv("enabled", b(c.oracle.enabled));
    kv("dof_cap", std::to_string(c.oracle.dof_cap));
    os << "\n[output]\n";
    kv("dir", c.output_dir);
    kv("write_fields", b(c.write_fields));
    return os.str();
  }

  mesh::Domain build_domain(const ExperimentConfig &c)
  {
    mesh::Domain d;
    if (c.domain.kind == "unit_square")
      d = mesh::Domain::rectangle({0.0, 0.0}, 1.0, 1.0);
    else if (c.domain.kind == "rectangle")
      d = mesh::Domain::rectangle({0.0, 0.0}, c.domain.width, c.domain.height);
    else if (c.domain.kind == "advection_benchmark")
      d = mesh::Domain::advection_benchmark();
    else
      throw ConfigError("unknown domain kind '" + c.domain.kind +
                        "' (expected unit_square, rectangle or advection_benchmark)");
    d.validate();
    const auto names = d.marker_names();
    auto check = [&names](const std::string &m, const char *what) {
      if (std::find(names.begin(), names.end(), m) == names.end())
        throw ConfigError(std::string(what) + " marker '" + m + "' is not a boundary marker of the domain");
    };
    for (const auto &m : c.domain.dirichlet)
      check(m, "Dirichlet");
    for (const auto &n : c.domain.neumann)
    {
      check(n.marker, "Neumann");
      if (std::find(c.domain.dirichlet.begin(), c.domain.dirichlet.end(), n.marker) !=
          c.domain.dirichlet.end())
        throw ConfigError("marker '" + n.marker + "' is both Dirichlet and Neumann");
    }
    return d;
  }

  field::RasterField build_raster(const ExperimentConfig &c)
  {
    const Rect ext = build_domain(c).rect();
    if (c.field.variant == "lognormal")
    {
      if (c.field.nx <= 0 || c.field.ny <= 0)
        throw ConfigError("field raster size must be positive");
      return field::gen_gaussian_raster(c.field.nx, c.field.ny, c.field.corr_len, c.field.seed,
                                        ext);
    }
    if (c.field.variant == "raster_file")
    {
      const fs::path p(c.field.file);
      if (p.extension() == ".csv")
        return field::read_csv(p, ext);
      return field::read_pgm(p, ext);
    }
    throw ConfigError("field variant '" + c.field.variant + "' has no raster");
  }

  field::RasterField build_stream_raster(const ExperimentConfig &c)
  {
    if (c.advection.nx <= 0 || c.advection.ny <= 0)
      throw ConfigError("advection raster size must be positive");
    return field::gen_gaussian_raster(c.advection.nx, c.advection.ny, c.advection.corr_len,
                                      c.field.seed + 1, build_domain(c).rect());
  }

  field::AdvectionField build_advection(const ExperimentConfig &c)
  {
    if (!c.advection.enabled)
      return {};
    if (!(c.advection.max_speed > 0.0))
      throw ConfigError("advection max_speed must be positive");
    const field::AdvectionField unit =
      field::stream_advection(build_stream_raster(c), 1.0, c.advection.taper_width, c.h);
    const double m = unit.max_speed();
    if (!(m > 0.0))
      throw ConfigError("stream raster is constant; advection would vanish");
    return unit.scaled(c.advection.max_speed / m);
  }

  dwr::Problem build_problem(const ExperimentConfig &c)
  {
    const mesh::Domain dom = build_domain(c);
    field::CoefficientField coef;
    const auto &f = c.field;
    if (f.variant == "constant")
      coef = field::CoefficientField::constant(f.value * Tensor2::identity());
    else if (f.variant == "laminate")
      coef = field::CoefficientField::laminate(f.direction, f.a, f.b, f.layer_width, dom.origin);
    else if (f.variant == "checkerboard")
      coef = field::CoefficientField::checkerboard(f.a, f.b, f.layer_width, dom.origin);
    else
      coef = field::CoefficientField::lognormal(build_raster(c), f.gamma);

    dwr::Problem p{mesh::build_hierarchy(dom, c.delta, c.H, c.h), std::move(coef), {}, {}, {}, {}, {}, {}};
    dwr::attach_advection(p, build_advection(c));
    const double s = c.source;
    p.source = [s](Point) { return s; };
    p.neumann = c.domain.neumann;
    p.dirichlet = c.domain.dirichlet;
    if (c.functional.kind == "domain")
      p.functional = fem::DomainIntegral{};
    else if (c.functional.kind == "point")
      p.functional = fem::PointValue{c.functional.x0};
    else
    {
      const auto names = dom.marker_names();
      if (std::find(names.begin(), names.end(), c.functional.marker) == names.end())
        throw ConfigError("functional marker '" + c.functional.marker +
                          "' is not a boundary marker of the domain");
      p.functional = fem::BoundaryIntegral{c.functional.marker};
    }
    return p;
  }

  EffectiveModel build_initial_model(const ExperimentConfig &c, const dwr::Problem &p)
  {
    if (c.model.upscaler == "constant")
      return EffectiveModel::uniform(p.mesh.sampling(), c.model.value * Tensor2::identity());
    if (c.model.upscaler == "file")
      return upscale::read_model_csv(c.model.file, p.mesh.sampling());
    return upscale::initial_model(upscale::parse_upscaler(c.model.upscaler), p.coefficient,
                                  p.mesh);
  }

  Reference oracle_reference(const ExperimentConfig &c, const dwr::Problem &p, bool with_dual)
  {
    if (raster_backed(c))
    {
      const auto *ln = std::get_if<field::LognormalRaster>(&p.coefficient.variant());
      if (ln && ln->raster)
      {
        const double px = std::min(ln->raster->pixel_width(), ln->raster->pixel_height());
        if (c.h > px * (1.0 + 1e-12))
          throw ConfigError("fine resolution h = " + fmt(c.h) +
                            " is coarser than the raster pixel size " + fmt(px));
      }
    }
    Reference r{dwr::solve_fine(p, true, with_dual, c.oracle.dof_cap), 0.0};
    r.j_ref = fem::apply_functional(p.functional, r.fine.space, *r.fine.u);
    return r;
  }

  std::string RunReport::text() const
  {
    std::ostringstream os;
    os << "modelopt run report\n\n";
    os << "=== config ===\n" << config_echo << "=== end config ===\n\n";
    os << "=== results ===\n";
    if (j_reference)
      os << "j_reference = " << fmt(*j_reference) << "\n";
    for (const auto &[k, v] : results)
      os << k << " = " << v << "\n";
    os << "\n=== timings (s) ===\n";
    for (const auto &[k, v] : timings)
    {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.3f", v);
      os << k << " = " << buf << "\n";
    }
    os << "\n=== manifest ===\n";
    for (const auto &p : manifest)
      os << p.string() << "\n";
    if (!history.empty())
      os << "\n=== history ===\n" << optim::history_csv(history);
    return os.str();
  }

  void RunReport::write(const fs::path &dir)
  {
    const fs::path p = dir / "report.txt";
    manifest.push_back(p);
    for (const auto &f : manifest)
      if (f != p && !fs::exists(f))
        throw NumericalError("manifest lists a missing file: " + f.string());
    write_text(p, text());
  }

  std::string extract_config_echo(const std::string &report_text)
  {
    const std::string open = "=== config ===\n", close = "=== end config ===";
    const auto b = report_text.find(open);
    const auto e = report_text.find(close);
    if (b == std::string::npos || e == std::string::npos || e < b)
      throw ConfigError("report has no config echo");
    return report_text.substr(b + open.size(), e - b - open.size());
  }

  RunReport generate_field(const ExperimentConfig &c)
  {
    RunReport r = start_report(c);
    PhaseTimer time(r);
    const fs::path dir = prepare_dir(c);
    if (raster_backed(c))
    {
      const field::RasterField raster = time("field", [&] { return build_raster(c); });
      const fs::path pgm = dir / "field.pgm", csv = dir / "field.csv";
      field::write_pgm(raster, pgm);
      field::write_csv(raster, csv);
      add_file(r, pgm);
      add_file(r, csv);
      r.results.emplace_back("raster", std::to_string(raster.nx) + "x" + std::to_string(raster.ny));
    }
    if (c.advection.enabled)
    {
      const field::RasterField s = time("advection", [&] { return build_stream_raster(c); });
      const fs::path pgm = dir / "stream.pgm";
      field::write_pgm(s, pgm);
      add_file(r, pgm);
    }
    if (!raster_backed(c) && !c.advection.enabled)
      r.results.emplace_back("raster", "none (analytic field)");
    r.write(dir);
    return r;
  }

  RunReport upscale_model(const ExperimentConfig &c)
  {
    RunReport r = start_report(c);
    PhaseTimer time(r);
    const fs::path dir = prepare_dir(c);
    const dwr::Problem p = time("setup", [&] { return build_problem(c); });
    const EffectiveModel m = time("upscale", [&] { return build_initial_model(c, p); });
    const fs::path out = dir / "model_initial.csv";
    upscale::write_model_csv(m, out);
    add_file(r, out);
    r.results.emplace_back("provenance", m.provenance);
    r.results.emplace_back("sampling_cells", std::to_string(m.size()));
    r.write(dir);
    return r;
  }

  RunReport reference(const ExperimentConfig &c)
  {
    RunReport r = start_report(c);
    PhaseTimer time(r);
    const fs::path dir = prepare_dir(c);
    const dwr::Problem p = time("setup", [&] { return build_problem(c); });
    const Reference ref = time("oracle", [&] { return oracle_reference(c, p, false); });
    r.j_reference = ref.j_ref;
    r.results.emplace_back("fine_dofs", std::to_string(ref.fine.space.grid.n_nodes()));
    if (c.write_fields)
    {
      const fs::path u = dir / "u_reference.csv";
      fem::write_field_csv(*ref.fine.u, u);
      add_file(r, u);
    }
    r.write(dir);
    return r;
  }

  RunReport estimate(const ExperimentConfig &c)
  {
    RunReport r = start_report(c);
    PhaseTimer time(r);
    const fs::path dir = prepare_dir(c);
    const dwr::Problem p = time("setup", [&] { return build_problem(c); });
    const EffectiveModel m = time("upscale", [&] { return build_initial_model(c, p); });
    const bool full = c.optimizer.dual_mode == dwr::DualKind::full;
    std::optional<Reference> ref;
    if (c.oracle.enabled || full)
      ref = time("oracle", [&] { return oracle_reference(c, p, full); });

    const dwr::ErrorBreakdown err = time("estimate", [&] {
      const dwr::MacroSolution primal = dwr::solve_primal(p, m);
      dwr::DualApproximation dual{c.optimizer.dual_mode, c.optimizer.enhancement_depth, {}};
      dual.global = full ? *ref->fine.z : dwr::solve_effective_dual(p, primal);
      dwr::ErrorBreakdown e =
        dwr::error_identity(p, m, primal, dual, nullptr, ref ? &ref->fine : nullptr);
      dwr::effectivity(e, ref ? std::optional<double>(ref->j_ref) : std::nullopt);
      return e;
    });
    const fs::path out = dir / "indicators.csv";
    dwr::write_breakdown_csv(err, p.mesh.sampling(), out);
    add_file(r, out);
    if (ref)
      r.j_reference = ref->j_ref;
    r.results.emplace_back("j_of_U", fmt(err.j_of_U));
    r.results.emplace_back("theta_H", fmt(err.theta_H));
    r.results.emplace_back("theta_delta", fmt(err.theta_delta));
    if (err.I_eff)
      r.results.emplace_back("I_eff", fmt(*err.I_eff));
    r.results.emplace_back("I_loc", fmt(err.I_loc));
    r.write(dir);
    return r;
  }

  namespace
  {
    optim::GaussNewtonState optimize_into(RunReport &r, PhaseTimer &time,
                                          const ExperimentConfig &c, const dwr::Problem &p,
                                          const EffectiveModel &initial,
                                          const std::optional<Reference> &ref,
                                          const fs::path &dir, const std::string &prefix,
                                          const std::string &phase)
    {
      std::optional<optim::Oracle> oracle;
      if (ref)
      {
        oracle = optim::Oracle{&ref->fine, std::nullopt};
        if (c.oracle.enabled)
          oracle->j_ref = ref->j_ref;
      }
      try
      {
        return time(phase, [&] { return optim::run_optimization(p, initial, c.optimizer, oracle); });
      }
      catch (const optim::DivergenceError &e)
      {
        write_optimization_outputs(r, dir, prefix, e.state);
        r.results.emplace_back(prefix + "error", e.what());
        r.write(dir);
        throw;
      }
    }
  } // namespace

  RunReport run_scenario(const ExperimentConfig &c)
  {
    RunReport r = start_report(c);
    PhaseTimer time(r);
    const fs::path dir = prepare_dir(c);
    write_text(dir / "config.ini", r.config_echo);
    add_file(r, dir / "config.ini");

    const dwr::Problem p = time("setup", [&] { return build_problem(c); });
    const EffectiveModel initial = time("upscale", [&] { return build_initial_model(c, p); });
    const fs::path m0 = dir / "model_initial.csv";
    upscale::write_model_csv(initial, m0);
    add_file(r, m0);

    const bool full = c.optimizer.dual_mode == dwr::DualKind::full;
    std::optional<Reference> ref;
    if (c.oracle.enabled || full)
      ref = time("oracle", [&] { return oracle_reference(c, p, full); });
    if (ref && c.oracle.enabled)
      r.j_reference = ref->j_ref;

    const optim::GaussNewtonState st =
      optimize_into(r, time, c, p, initial, ref, dir, "", "optimize");
    write_optimization_outputs(r, dir, "", st);

    if (c.write_fields)
    {
      time("export", [&] {
        const dwr::MacroSolution fin = dwr::solve_primal(p, st.model);
        const fs::path u = dir / "U_final.csv", vtk = dir / "U_final.vtk";
        fem::write_field_csv(fin.U, u);
        fem::write_field_vtk(fin.U, vtk, "U");
        add_file(r, u);
        add_file(r, vtk);
        if (ref && c.oracle.enabled)
        {
          const fs::path ur = dir / "u_reference.csv";
          fem::write_field_csv(*ref->fine.u, ur);
          add_file(r, ur);
        }
        return 0;
      });
    }
    r.write(dir);
    return r;
  }

  std::string comparison_csv(const DualComparison &d)
  {
    std::ostringstream os;
    os << "cycle,full_j_of_U,full_abs_error,full_theta_tilde,full_I_eff,"
          "enhanced_j_of_U,enhanced_abs_error,enhanced_theta_tilde,enhanced_I_eff\n";
    const std::size_t n = std::max(d.full.size(), d.enhanced.size());
    auto opt = [&os](const std::optional<double> &v) {
      os << ',';
      if (v)
        os << fmt(*v);
    };
    auto side = [&](const std::vector<optim::CycleRecord> &h, std::size_t i) {
      if (i < h.size())
      {
        os << ',' << fmt(h[i].j_of_U);
        opt(h[i].abs_error);
        os << ',' << fmt(h[i].theta_tilde);
        opt(h[i].I_eff);
      }
      else
        os << ",,,,";
    };
    for (std::size_t i = 0; i < n; ++i)
    {
      os << i;
      side(d.full, i);
      side(d.enhanced, i);
      os << '\n';
    }
    return os.str();
  }

  RunReport compare_duals(const ExperimentConfig &c, DualComparison *out)
  {
    RunReport r = start_report(c);
    PhaseTimer time(r);
    const fs::path dir = prepare_dir(c);
    const dwr::Problem p = time("setup", [&] { return build_problem(c); });
    const EffectiveModel initial = time("upscale", [&] { return build_initial_model(c, p); });
    std::optional<Reference> ref = time("oracle", [&] { return oracle_reference(c, p, true); });
    if (c.oracle.enabled)
      r.j_reference = ref->j_ref;

    DualComparison d;
    ExperimentConfig cf = c;
    cf.optimizer.dual_mode = dwr::DualKind::full;
    d.full = optimize_into(r, time, cf, p, initial, ref, dir, "full_", "optimize_full").history;
    const fs::path hf = dir / "full_history.csv";
    optim::write_history_csv(d.full, hf);
    add_file(r, hf);

    ExperimentConfig ce = c;
    ce.optimizer.dual_mode = dwr::DualKind::enhanced;
    d.enhanced =
      optimize_into(r, time, ce, p, initial, ref, dir, "enhanced_", "optimize_enhanced").history;
    const fs::path he = dir / "enhanced_history.csv";
    optim::write_history_csv(d.enhanced, he);
    add_file(r, he);

    const fs::path table = dir / "compare_duals.csv";
    write_text(table, comparison_csv(d));
    add_file(r, table);
    if (!d.full.empty() && d.full.back().abs_error)
      r.results.emplace_back("full_final_abs_error", fmt(*d.full.back().abs_error));
    if (!d.enhanced.empty() && d.enhanced.back().abs_error)
      r.results.emplace_back("enhanced_final_abs_error", fmt(*d.enhanced.back().abs_error));
    if (out)
      *out = d;
    r.write(dir);
    return r;
  }
} // namespace modelopt::experiment
