#include <modelopt/dwr.hpp>
#include <modelopt/parallel.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

namespace modelopt::dwr
{
  fem::FormCoefficients Problem::fine_coefficients() const
  {
    fem::FormCoefficients c;
    c.diffusion = [this](Point x) { return coefficient.evaluate(x); };
    if (has_advection())
      c.advection = [this](Point x) { return advection.evaluate(x); };
    c.micro_size = mesh.h();
    return c;
  }

  fem::FormCoefficients Problem::effective_coefficients(const EffectiveModel &model) const
  {
    fem::FormCoefficients c;
    c.diffusion = [&model](Point x) { return model.at(x); };
    if (has_advection())
      c.advection = [this](Point x) { return advection_delta[mesh.sampling().locate(x)]; };
    return c;
  }

  fem::FormCoefficients Problem::difference_coefficients(const EffectiveModel &model) const
  {
    fem::FormCoefficients c;
    c.diffusion = [this, &model](Point x) { return model.at(x) - coefficient.evaluate(x); };
    if (has_advection())
      c.advection = [this](Point x) {
        return advection_delta[mesh.sampling().locate(x)] - advection.evaluate(x);
      };
    c.micro_size = mesh.h();
    return c;
  }

  void attach_advection(Problem &p, field::AdvectionField b)
  {
    p.advection = std::move(b);
    if (p.advection.is_zero())
      p.advection_delta.clear();
    else
      p.advection_delta = field::average_advection(p.advection, p.mesh);
  }

  MacroSolution solve_primal(const Problem &p, const EffectiveModel &model)
  {
    if (model.size() != p.mesh.n_sampling_cells())
      throw ConfigError("effective model does not match the sampling mesh");
    if (!model.all_finite())
      throw NumericalError("effective model contains non-finite entries");
    MacroSolution s;
    s.space = fem::FeSpace::on_domain(p.mesh.macro(), p.mesh.domain(), p.dirichlet);
    s.raw = fem::assemble_operator(p.mesh.macro(), p.effective_coefficients(model));
    s.constrained = fem::apply_constraints(s.raw, s.space);
    s.rhs = fem::assemble_rhs(s.space, p.source, p.neumann);
    s.U = fem::solve(s.constrained, s.space, fem::constrained_rhs(s.raw, s.space, s.rhs));
    return s;
  }

  fem::DiscreteField solve_effective_dual(const Problem &p, const MacroSolution &primal)
  {
    return fem::solve_dual(primal.constrained, primal.space, p.functional);
  }

  FineSolution solve_fine(const Problem &p, bool primal, bool dual, long dof_cap)
  {
    const mesh::Grid &g = p.mesh.micro();
    if (dof_cap > 0 && g.n_nodes() > dof_cap)
      throw ResourceError("fine reference needs " + std::to_string(g.n_nodes()) +
                          " dofs, above the cap of " + std::to_string(dof_cap));
    FineSolution s;
    s.space = fem::FeSpace::on_domain(g, p.mesh.domain(), p.dirichlet);
    s.raw = fem::assemble_operator(g, p.fine_coefficients());
    s.constrained = fem::apply_constraints(s.raw, s.space);
    s.rhs = fem::assemble_rhs(s.space, p.source, p.neumann);
    if (primal)
      s.u = fem::solve(s.constrained, s.space, fem::constrained_rhs(s.raw, s.space, s.rhs));
    if (dual)
      s.z = fem::solve_dual(s.constrained, s.space, p.functional);
    return s;
  }

  std::string to_string(DualKind k)
  {
    switch (k)
    {
      case DualKind::full:
        return "full";
      case DualKind::effective:
        return "effective";
      case DualKind::enhanced:
        return "enhanced";
    }
    return "?";
  }

  mesh::Grid patch_grid(const Problem &p, const mesh::Patch &patch)
  {
    return p.mesh.micro_grid(patch.bbox);
  }

  PatchCache::PatchCache(const Problem &p, int depth, bool keep)
    : p_(&p), depth_(depth), keep_(keep), slots_(p.mesh.n_sampling_cells())
  {
    if (depth < 0)
      throw ConfigError("enhancement depth must be nonnegative");
  }

  std::shared_ptr<const PatchCache::System> PatchCache::get(int K)
  {
    if (keep_ && slots_[K])
      return slots_[K];
    const mesh::Patch patch = mesh::patch_of(p_->mesh, K, depth_);
    auto sys = std::make_shared<System>();
    const mesh::Grid g = patch_grid(*p_, patch);
    sys->space = fem::FeSpace::on_patch(g, p_->mesh.domain(), p_->dirichlet);
    sys->raw = fem::assemble_operator(g, p_->fine_coefficients());
    sys->constrained = fem::apply_constraints(sys->raw, sys->space);
    if (keep_)
      slots_[K] = sys;
    return sys;
  }

  fem::DiscreteField local_enhancement(const Problem &p, const fem::DiscreteField &z_eff, int K,
                                       PatchCache &cache, bool include_functional)
  {
    const auto sys = cache.get(K);
    const mesh::Grid &g = sys->space.grid;
    const fem::Vector iz = fem::interpolate(z_eff, g);
    fem::Vector rhs = include_functional ? fem::functional_vector(sys->space, p.functional)
                                         : fem::Vector::Zero(g.n_nodes());
    rhs -= sys->raw.matrix().transpose() * iz;
    return fem::solve_dual(sys->constrained, sys->space, std::move(rhs));
  }

  void add_on_shared_nodes(const fem::DiscreteField &src, const mesh::Grid &dst, fem::Vector &out)
  {
    const double h = dst.cell_size;
    const int ox = static_cast<int>(std::lround((src.grid.origin.x - dst.origin.x) / h));
    const int oy = static_cast<int>(std::lround((src.grid.origin.y - dst.origin.y) / h));
    for (int iy = 0; iy <= src.grid.ny; ++iy)
    {
      const int dy = iy + oy;
      if (dy < 0 || dy > dst.ny)
        continue;
      for (int ix = 0; ix <= src.grid.nx; ++ix)
      {
        const int dx = ix + ox;
        if (dx < 0 || dx > dst.nx)
          continue;
        out[dst.node(dx, dy)] += src.values[src.grid.node(ix, iy)];
      }
    }
  }

  fem::Vector local_dual(const Problem &p, const DualApproximation &dual, int K,
                         const mesh::Grid &work, PatchCache *cache)
  {
    fem::Vector z = fem::interpolate(dual.global, work);
    if (dual.kind == DualKind::enhanced)
    {
      if (!cache)
        throw ConfigError("enhanced dual requires a patch cache");
      add_on_shared_nodes(local_enhancement(p, dual.global, K, *cache), work, z);
    }
    return z;
  }

  double indicator(const Problem &p, const EffectiveModel &model, int K, const mesh::Grid &work,
                   const fem::Vector &U_work, const fem::Vector &z_work)
  {
    const std::vector<int> cells = work.cells_in(p.mesh.sampling().cell_rect(K));
    return fem::form_value(work, cells, p.difference_coefficients(model), U_work, z_work);
  }

  double macro_residual(const Problem &p, const EffectiveModel &model,
                        const MacroSolution &primal, const DualApproximation &dual,
                        const FineSolution *fine)
  {
    if (dual.kind != DualKind::full)
      return primal.rhs.dot(dual.global.values) -
             dual.global.values.dot(primal.raw.matrix() * primal.U.values);
    if (!fine)
      throw ConfigError("full dual requires the fine system");
    const mesh::Grid &g = fine->space.grid;
    if (!(dual.global.grid.nx == g.nx && dual.global.grid.ny == g.ny))
      throw ConfigError("full dual must live on the global micro grid");
    const fem::Vector iu = fem::interpolate(primal.U, g);
    std::vector<int> all(g.n_cells());
    for (int c = 0; c < g.n_cells(); ++c)
      all[c] = c;
    return fine->rhs.dot(dual.global.values) -
           fem::form_value(g, all, p.effective_coefficients(model), iu, dual.global.values);
  }

  ErrorBreakdown error_identity(const Problem &p, const EffectiveModel &model,
                                const MacroSolution &primal, const DualApproximation &dual,
                                PatchCache *cache, const FineSolution *fine)
  {
    ErrorBreakdown err;
    err.j_of_U = fem::apply_functional(p.functional, primal.space, primal.U);

    std::optional<FineSolution> own;
    if (dual.kind == DualKind::full && !fine)
    {
      own = solve_fine(p, false, false, 0);
      fine = &*own;
    }
    std::unique_ptr<PatchCache> own_cache;
    if (dual.kind == DualKind::enhanced && !cache)
    {
      own_cache = std::make_unique<PatchCache>(p, dual.depth, false);
      cache = own_cache.get();
    }

    err.theta_H = macro_residual(p, model, primal, dual, fine);

    const int n = p.mesh.n_sampling_cells();
    err.eta.assign(n, 0.0);
    parallel_for(n, [&](std::size_t k) {
      const int K = static_cast<int>(k);
      const mesh::Grid work = patch_grid(p, mesh::patch_of(p.mesh, K, 0));
      const fem::Vector iu = fem::interpolate(primal.U, work);
      const fem::Vector z = local_dual(p, dual, K, work, cache);
      err.eta[K] = indicator(p, model, K, work, iu, z);
    });
    for (double e : err.eta)
      err.theta_delta += e;

    if (fine && fine->u)
      err.j_reference = fem::apply_functional(p.functional, fine->space, *fine->u);
    effectivity(err, err.j_reference);
    return err;
  }

  void effectivity(ErrorBreakdown &err, std::optional<double> j_ref)
  {
    double abs_sum = 0.0;
    for (double e : err.eta)
      abs_sum += std::abs(e);
    if (abs_sum == 0.0)
      err.I_loc = 1.0;
    else
      err.I_loc = abs_sum / std::abs(err.theta_delta);
    err.j_reference = j_ref;
    err.I_eff.reset();
    if (j_ref && *j_ref != err.j_of_U)
      err.I_eff = std::abs(err.theta_H + err.theta_delta) / std::abs(*j_ref - err.j_of_U);
  }

  void write_breakdown_csv(const ErrorBreakdown &err, const mesh::Grid &sampling,
                           const std::filesystem::path &path)
  {
    std::ofstream out(path);
    if (!out)
      throw ConfigError("cannot write " + path.string());
    out << "cell_i,cell_j,eta_K\n";
    char buf[128];
    for (int K = 0; K < static_cast<int>(err.eta.size()); ++K)
    {
      const auto [ci, cj] = sampling.cell_coords(K);
      std::snprintf(buf, sizeof buf, "%d,%d,%.17g\n", ci, cj, err.eta[K]);
      out << buf;
    }
    out << "# theta_H,theta_delta,I_eff,I_loc\n";
    std::snprintf(buf, sizeof buf, "# %.17g,%.17g,", err.theta_H, err.theta_delta);
    out << buf;
    if (err.I_eff)
    {
      std::snprintf(buf, sizeof buf, "%.17g", *err.I_eff);
      out << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.17g\n", err.I_loc);
    out << buf;
  }
} // namespace modelopt::dwr
