#include <modelopt/optim.hpp>
#include <modelopt/parallel.hpp>

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace modelopt::optim
{
  void OptimizerConfig::validate() const
  {
    if (alpha && !(*alpha >= 0.0))
      throw ConfigError("alpha must be nonnegative");
    if (!(alpha_scale >= 0.0))
      throw ConfigError("alpha_scale must be nonnegative");
    if (!(lambda_factor >= 0.0))
      throw ConfigError("lambda_factor must be nonnegative");
    if (!(stop_fraction > 0.0 && stop_fraction <= 1.0))
      throw ConfigError("stop_fraction must lie in (0, 1]");
    if (max_cycles < 0)
      throw ConfigError("max_cycles must be nonnegative");
    if (enhancement_depth < 0)
      throw ConfigError("enhancement depth must be nonnegative");
    if (!(divergence_factor > 1.0))
      throw ConfigError("divergence_factor must exceed 1");
  }

  JacobianMode parse_jacobian_mode(const std::string &s)
  {
    if (s == "diagonal")
      return JacobianMode::diagonal;
    if (s == "patch")
      return JacobianMode::patch;
    throw ConfigError("unknown jacobian_mode '" + s + "' (expected diagonal or patch)");
  }

  std::string to_string(JacobianMode m)
  {
    return m == JacobianMode::diagonal ? "diagonal" : "patch";
  }

  dwr::DualKind parse_dual_mode(const std::string &s)
  {
    if (s == "full")
      return dwr::DualKind::full;
    if (s == "enhanced")
      return dwr::DualKind::enhanced;
    if (s == "effective")
      return dwr::DualKind::effective;
    throw ConfigError("unknown dual_mode '" + s + "' (expected full, enhanced or effective)");
  }

  Eigen::VectorXd ResidualVector::flat() const
  {
    Eigen::VectorXd v(eta.size() + g.size());
    for (std::size_t k = 0; k < eta.size(); ++k)
      v[k] = eta[k];
    for (std::size_t k = 0; k < g.size(); ++k)
      v[eta.size() + k] = g[k];
    return v;
  }

  double ResidualVector::squared_norm() const
  {
    double s = 0.0;
    for (double e : eta)
      s += e * e;
    for (double e : g)
      s += e * e;
    return s;
  }

  ResidualVector assemble_residual(const std::vector<double> &eta, const EffectiveModel &model,
                                   const EffectiveModel &initial,
                                   const std::vector<double> &alpha)
  {
    const int n = model.size();
    if (static_cast<int>(eta.size()) != n || initial.size() != n ||
        static_cast<int>(alpha.size()) != n)
      throw NumericalError("residual inputs have inconsistent sizes");
    ResidualVector r;
    r.eta = eta;
    r.g.resize(4 * n);
    for (int K = 0; K < n; ++K)
    {
      const double s = std::sqrt(alpha[K]);
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          r.g[parameter_index(K, i, j)] = s * (model[K](i, j) - initial[K](i, j));
    }
    return r;
  }

  double BlockJacobian::entry(int Q, int column) const
  {
    for (const auto &[row, v] : columns[column])
      if (row == Q)
        return v;
    return 0.0;
  }

  Eigen::SparseMatrix<double> BlockJacobian::eta_block() const
  {
    std::vector<Eigen::Triplet<double>> trip;
    for (int c = 0; c < static_cast<int>(columns.size()); ++c)
      for (const auto &[row, v] : columns[c])
        trip.emplace_back(row, c, v);
    Eigen::SparseMatrix<double> m(n_cells, 4 * n_cells);
    m.setFromTriplets(trip.begin(), trip.end());
    return m;
  }

  int BlockJacobian::band() const
  {
    std::size_t b = 0;
    for (const auto &c : columns)
      b = std::max(b, c.size());
    return static_cast<int>(b);
  }

  fem::DiscreteField response_U(const dwr::Problem &p, const dwr::MacroSolution &primal, int K,
                                int i, int j)
  {
    fem::FormCoefficients unit;
    unit.diffusion = [i, j](Point) { return Tensor2::unit(i, j); };
    fem::Vector rhs =
      -fem::form_action(p.mesh.macro(), p.mesh.macro_cells_of(K), unit, primal.U.values);
    for (int n = 0; n < primal.space.n_dofs(); ++n)
      if (primal.space.constrained[n])
        rhs[n] = 0.0;
    return fem::solve(primal.constrained, primal.space, rhs);
  }

  namespace
  {
    // Difference element matrices of the micro cells of one sampling cell.
    struct CellForms
    {
      int Q = 0;
      std::vector<int> cells;
      std::vector<fem::Mat4> diff;
    };

    CellForms cell_forms(const dwr::Problem &p, const fem::FormCoefficients &diff,
                         const mesh::Grid &work, int Q)
    {
      CellForms f;
      f.Q = Q;
      f.cells = work.cells_in(p.mesh.sampling().cell_rect(Q));
      f.diff.reserve(f.cells.size());
      for (int c : f.cells)
        f.diff.push_back(fem::element_matrix(work, c, diff));
      return f;
    }

    double gradient_pairing(const mesh::Grid &work, const std::vector<int> &cells, int i, int j,
                            const fem::Vector &u, const fem::Vector &z)
    {
      const fem::Mat4 &g = fem::gradient_pair_matrices()[2 * i + j];
      double s = 0.0;
      for (int c : cells)
      {
        const auto nodes = work.cell_nodes(c);
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b)
            s += z[nodes[a]] * g[4 * a + b] * u[nodes[b]];
      }
      return s;
    }

    Rect hull(const Rect &a, const Rect &b)
    {
      return {{std::min(a.lo.x, b.lo.x), std::min(a.lo.y, b.lo.y)},
              {std::max(a.hi.x, b.hi.x), std::max(a.hi.y, b.hi.y)}};
    }

    std::vector<int> all_cells(const mesh::Grid &g)
    {
      std::vector<int> c(g.n_cells());
      for (int k = 0; k < g.n_cells(); ++k)
        c[k] = k;
      return c;
    }
  } // namespace

  double jacobian_entry(const dwr::Problem &p, const EffectiveModel &model,
                        const mesh::Grid &work, const fem::Vector &U_work,
                        const fem::Vector &z_work, const fem::Vector &resp_work, int K, int i,
                        int j, int Q)
  {
    const mesh::Patch patch = mesh::patch_of(p.mesh, K, 1);
    if (!patch.contains(Q))
      throw DomainError("cell " + std::to_string(Q) + " is outside the patch of cell " +
                        std::to_string(K));
    const CellForms f = cell_forms(p, p.difference_coefficients(model), work, Q);
    double v = fem::form_value(work, f.cells, f.diff, resp_work, z_work);
    if (Q == K)
      v += gradient_pairing(work, f.cells, i, j, U_work, z_work);
    return v;
  }

  Evaluation evaluate(const dwr::Problem &p, const EffectiveModel &model,
                      const OptimizerConfig &cfg, dwr::PatchCache *cache,
                      const dwr::FineSolution *fine, bool with_jacobian)
  {
    Evaluation ev;
    ev.primal = dwr::solve_primal(p, model);
    ev.dual.kind = cfg.dual_mode;
    ev.dual.depth = cfg.enhancement_depth;
    if (cfg.dual_mode == dwr::DualKind::full)
    {
      if (!fine || !fine->z)
        throw ConfigError("the full dual mode needs the fine reference dual");
      ev.dual.global = *fine->z;
    }
    else
      ev.dual.global = dwr::solve_effective_dual(p, ev.primal);

    ev.err.j_of_U = fem::apply_functional(p.functional, ev.primal.space, ev.primal.U);
    ev.err.theta_H = dwr::macro_residual(p, model, ev.primal, ev.dual, fine);

    const int n = p.mesh.n_sampling_cells();
    const int jac_depth = cfg.jacobian_mode == JacobianMode::patch ? 1 : 0;
    const fem::FormCoefficients diff = p.difference_coefficients(model);
    ev.err.eta.assign(n, 0.0);
    ev.jac.n_cells = n;
    ev.jac.columns.assign(4 * n, {});

    parallel_for(n, [&](std::size_t k) {
      const int K = static_cast<int>(k);
      const mesh::Patch pj = mesh::patch_of(p.mesh, K, with_jacobian ? jac_depth : 0);
      Rect work_rect = pj.bbox;
      if (ev.dual.kind == dwr::DualKind::enhanced)
        work_rect = hull(work_rect, mesh::patch_of(p.mesh, K, ev.dual.depth).bbox);
      const mesh::Grid work = p.mesh.micro_grid(work_rect);
      const fem::Vector iu = fem::interpolate(ev.primal.U, work);
      const fem::Vector z = dwr::local_dual(p, ev.dual, K, work, cache);

      std::vector<CellForms> forms;
      for (int Q : pj.members)
        forms.push_back(cell_forms(p, diff, work, Q));
      const CellForms &own = *std::find_if(forms.begin(), forms.end(),
                                           [K](const CellForms &f) { return f.Q == K; });
      ev.err.eta[K] = fem::form_value(work, own.cells, own.diff, iu, z);
      if (!with_jacobian)
        return;

      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
        {
          const fem::DiscreteField resp = response_U(p, ev.primal, K, i, j);
          const fem::Vector ir = fem::interpolate(resp, work);
          auto &col = ev.jac.columns[parameter_index(K, i, j)];
          for (const auto &f : forms)
          {
            double v = fem::form_value(work, f.cells, f.diff, ir, z);
            if (f.Q == K)
              v += gradient_pairing(work, f.cells, i, j, iu, z);
            col.emplace_back(f.Q, v);
          }
        }
    });

    for (double e : ev.err.eta)
      ev.err.theta_delta += e;
    dwr::effectivity(ev.err, std::nullopt);
    return ev;
  }

  Step lm_step(const ResidualVector &r, const BlockJacobian &jac, double lambda_factor)
  {
    const int n = jac.n_cells;
    const int np = 4 * n;
    if (static_cast<int>(r.eta.size()) != n || static_cast<int>(r.g.size()) != np ||
        static_cast<int>(jac.sqrt_alpha.size()) != n)
      throw NumericalError("Gauss-Newton step: inconsistent dimensions");

    const Eigen::SparseMatrix<double> je = jac.eta_block();
    Eigen::SparseMatrix<double> normal = Eigen::SparseMatrix<double>(je.transpose()) * je;
    Eigen::VectorXd eta(n), rhs(np);
    for (int K = 0; K < n; ++K)
      eta[K] = r.eta[K];
    rhs = -(je.transpose() * eta);
    Eigen::VectorXd diag_add(np);
    for (int q = 0; q < np; ++q)
    {
      const double sa = jac.sqrt_alpha[q / 4];
      diag_add[q] = sa * sa;
      rhs[q] -= sa * r.g[q];
    }
    double mean_diag = 0.0;
    for (int q = 0; q < np; ++q)
      mean_diag += std::abs(normal.coeff(q, q) + diag_add[q]);
    mean_diag /= np;

    Step s;
    s.lambda = lambda_factor * mean_diag;
    s.raw = Eigen::VectorXd::Zero(np);
    s.delta.assign(n, Tensor2{});
    if (rhs.squaredNorm() == 0.0)
      return s;

    Eigen::SparseMatrix<double> sys = normal;
    for (int q = 0; q < np; ++q)
      sys.coeffRef(q, q) += diag_add[q] + s.lambda;
    sys.makeCompressed();
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(sys);
    if (ldlt.info() != Eigen::Success)
      throw NumericalError("Gauss-Newton step: damped normal matrix could not be factorised");
    s.raw = ldlt.solve(rhs);
    if (ldlt.info() != Eigen::Success || !s.raw.allFinite())
      throw NumericalError("Gauss-Newton step: damped normal matrix is singular "
                           "(lambda = 0 with a rank-deficient Jacobian?)");
    double norm2 = 0.0;
    for (int K = 0; K < n; ++K)
    {
      Tensor2 d;
      for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
          d(i, j) = s.raw[parameter_index(K, i, j)];
      s.delta[K] = d.symmetrized();
      norm2 += contract(s.delta[K], s.delta[K]);
    }
    s.norm = std::sqrt(norm2);
    return s;
  }

  namespace
  {
    // 0.1 (mean_K |eta_K|)^2 / mean_K |Abar0_K|^2.
    double auto_alpha(const std::vector<double> &eta, const EffectiveModel &m0)
    {
      double mean = 0.0, typical = 0.0;
      for (const auto &t : m0.tensors)
        mean += contract(t, t);
      for (double e : eta)
        typical += std::abs(e);
      mean /= std::max(1, m0.size());
      typical /= std::max<std::size_t>(1, eta.size());
      return mean > 0.0 ? 0.1 * typical * typical / mean : 0.0;
    }
  } // namespace

  GaussNewtonState run_optimization(const dwr::Problem &p, const EffectiveModel &initial,
                                    const OptimizerConfig &cfg, std::optional<Oracle> oracle,
                                    const CycleCallback &on_cycle)
  {
    cfg.validate();
    if (!initial.all_finite())
      throw NumericalError("initial model contains non-finite entries");
    const dwr::FineSolution *fine = oracle ? oracle->fine : nullptr;

    std::unique_ptr<dwr::PatchCache> cache;
    if (cfg.dual_mode == dwr::DualKind::enhanced)
      cache = std::make_unique<dwr::PatchCache>(p, cfg.enhancement_depth, cfg.cache_patches);

    GaussNewtonState st;
    st.model = initial;
    st.initial = initial;
    std::vector<double> alpha;
    const mesh::Grid &micro = p.mesh.micro();

    for (int cycle = 0;; ++cycle)
    {
      st.cycle = cycle;
      const bool more = cycle < cfg.max_cycles;
      Evaluation ev = evaluate(p, st.model, cfg, cache.get(), fine, more);
      const double theta = std::abs(ev.err.theta_delta);
      if (!std::isfinite(theta))
        throw NumericalError("estimator became non-finite in cycle " + std::to_string(cycle));
      if (cycle == 0)
      {
        st.initial_estimator = theta;
        st.alpha = (cfg.alpha ? *cfg.alpha : auto_alpha(ev.err.eta, initial)) * cfg.alpha_scale;
        alpha.assign(initial.size(), st.alpha);
      }
      if (oracle && oracle->j_ref)
        dwr::effectivity(ev.err, oracle->j_ref);

      CycleRecord rec;
      rec.cycle = cycle;
      rec.j_of_U = ev.err.j_of_U;
      rec.theta_tilde = theta;
      rec.theta_signed = ev.err.theta_delta;
      rec.theta_H = ev.err.theta_H;
      rec.I_loc = ev.err.I_loc;
      rec.I_eff = ev.err.I_eff;
      if (oracle && oracle->j_ref)
      {
        const double e = std::abs(*oracle->j_ref - ev.err.j_of_U);
        rec.abs_error = e;
        if (*oracle->j_ref != 0.0)
          rec.rel_error_pct = 100.0 * e / std::abs(*oracle->j_ref);
        if (fine && fine->u)
        {
          const fem::Vector diffu = fine->u->values - fem::interpolate(ev.primal.U, micro);
          rec.l2_error = fem::l2_norm(micro, diffu);
        }
      }
      const ResidualVector res = assemble_residual(ev.err.eta, st.model, initial, alpha);
      rec.cost = res.squared_norm();
      st.last = ev.err;

      const bool diverged = cycle > 0 && theta > cfg.divergence_factor * st.initial_estimator;
      const bool stop = theta <= cfg.stop_fraction * st.initial_estimator;
      if (diverged || stop || !more)
      {
        st.history.push_back(rec);
        if (on_cycle)
          on_cycle(rec);
        st.converged = stop;
        if (diverged)
        {
          char buf[160];
          std::snprintf(buf, sizeof buf,
                        "optimisation diverged in cycle %d: |theta| = %.6g exceeds %.3g times "
                        "the initial %.6g",
                        cycle, theta, cfg.divergence_factor, st.initial_estimator);
          throw DivergenceError(buf, st);
        }
        break;
      }

      ev.jac.sqrt_alpha.resize(initial.size());
      for (int K = 0; K < initial.size(); ++K)
        ev.jac.sqrt_alpha[K] = std::sqrt(alpha[K]);
      const Step step = lm_step(res, ev.jac, cfg.lambda_factor);
      rec.lambda = step.lambda;
      rec.step_norm = step.norm;
      st.history.push_back(rec);
      if (on_cycle)
        on_cycle(rec);

      for (int K = 0; K < st.model.size(); ++K)
        st.model[K] = st.model[K] + step.delta[K];
      st.model.provenance = "optimized(cycle " + std::to_string(cycle + 1) + ")";
      if (!st.model.all_symmetric(1e-12))
        throw NumericalError("model lost symmetry in cycle " + std::to_string(cycle + 1));
      if (!st.model.all_finite())
        throw NumericalError("model became non-finite in cycle " + std::to_string(cycle + 1));
    }

    st.min_eigenvalues.resize(st.model.size());
    for (int K = 0; K < st.model.size(); ++K)
      st.min_eigenvalues[K] = st.model[K].min_eigenvalue();
    return st;
  }

  double cost_functional(const CostContext &c, const EffectiveModel &model)
  {
    const dwr::Problem &p = *c.problem;
    const dwr::MacroSolution primal = dwr::solve_primal(p, model);
    dwr::DualApproximation dual;
    dual.kind = c.dual;
    dual.depth = c.depth;
    if (c.dual == dwr::DualKind::full)
    {
      if (!c.fine || !c.fine->z)
        throw ConfigError("full dual requires the fine dual solution");
      dual.global = *c.fine->z;
    }
    else
      dual.global = dwr::solve_effective_dual(p, primal);
    dwr::PatchCache cache(p, c.depth, false);
    const dwr::ErrorBreakdown err = dwr::error_identity(p, model, primal, dual, &cache, c.fine);
    double f = 0.0;
    for (double e : err.eta)
      f += e * e;
    for (int K = 0; K < model.size(); ++K)
    {
      const Tensor2 d = model[K] - c.initial[K];
      f += c.alpha[K] * contract(d, d);
    }
    return f;
  }

  double cost_derivative(const CostContext &c, const EffectiveModel &model,
                         const std::vector<Tensor2> &direction)
  {
    const dwr::Problem &p = *c.problem;
    const dwr::MacroSolution primal = dwr::solve_primal(p, model);
    dwr::DualApproximation dual;
    dual.kind = c.dual;
    dual.depth = c.depth;
    if (c.dual == dwr::DualKind::full)
    {
      if (!c.fine || !c.fine->z)
        throw ConfigError("full dual requires the fine dual solution");
      dual.global = *c.fine->z;
    }
    else
      dual.global = dwr::solve_effective_dual(p, primal);

    const EffectiveModel dir{model.sampling, direction, "direction"};
    fem::FormCoefficients dcoef;
    dcoef.diffusion = [&dir](Point x) { return dir.at(x); };
    const fem::SparseOperator draw = fem::assemble_operator(p.mesh.macro(), dcoef);

    // Response of U: A_H w = -(dA grad U, grad phi).
    fem::Vector rw = -(draw.matrix() * primal.U.values);
    for (int k = 0; k < primal.space.n_dofs(); ++k)
      if (primal.space.constrained[k])
        rw[k] = 0.0;
    const fem::DiscreteField w = fem::solve(primal.constrained, primal.space, rw);

    // Response of the effective dual: A_H^T dZ = -dA_H^T Z.
    std::optional<fem::DiscreteField> dz;
    if (c.dual != dwr::DualKind::full)
      dz = fem::solve_dual(primal.constrained, primal.space,
                           fem::Vector(-(draw.matrix().transpose() * dual.global.values)));

    dwr::PatchCache cache(p, c.depth, false);
    const fem::FormCoefficients diff = p.difference_coefficients(model);
    const int n = p.mesh.n_sampling_cells();
    std::vector<double> contrib(n, 0.0);
    parallel_for(n, [&](std::size_t k) {
      const int K = static_cast<int>(k);
      const mesh::Grid work = dwr::patch_grid(p, mesh::patch_of(p.mesh, K, 0));
      const std::vector<int> cells = all_cells(work);
      const fem::Vector iu = fem::interpolate(primal.U, work);
      const fem::Vector iw = fem::interpolate(w, work);
      const fem::Vector z = dwr::local_dual(p, dual, K, work, &cache);
      const double eta = fem::form_value(work, cells, diff, iu, z);
      fem::FormCoefficients dk;
      dk.diffusion = [&direction, K](Point) { return direction[K]; };
      double deta = fem::form_value(work, cells, dk, iu, z) + fem::form_value(work, cells, diff, iw, z);
      if (dz)
      {
        fem::Vector dzw = fem::interpolate(*dz, work);
        if (c.dual == dwr::DualKind::enhanced)
          dwr::add_on_shared_nodes(dwr::local_enhancement(p, *dz, K, cache, false), work, dzw);
        deta += fem::form_value(work, cells, diff, iu, dzw);
      }
      contrib[K] = 2.0 * eta * deta;
    });
    double df = 0.0;
    for (int K = 0; K < n; ++K)
      df += contrib[K] + 2.0 * c.alpha[K] * contract(model[K] - c.initial[K], direction[K]);
    return df;
  }

  std::string history_csv(const std::vector<CycleRecord> &history)
  {
    std::ostringstream os;
    os << "cycle,l2_error,j_of_U,abs_error,rel_error_pct,theta_tilde,I_eff,I_loc,lambda,"
          "step_norm\n";
    auto num = [&](double v) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      os << buf;
    };
    auto opt = [&](const std::optional<double> &v) {
      if (v)
        num(*v);
    };
    for (const auto &r : history)
    {
      os << r.cycle << ',';
      opt(r.l2_error);
      os << ',';
      num(r.j_of_U);
      os << ',';
      opt(r.abs_error);
      os << ',';
      opt(r.rel_error_pct);
      os << ',';
      num(r.theta_tilde);
      os << ',';
      opt(r.I_eff);
      os << ',';
      num(r.I_loc);
      os << ',';
      opt(r.lambda);
      os << ',';
      opt(r.step_norm);
      os << '\n';
    }
    return os.str();
  }

  void write_history_csv(const std::vector<CycleRecord> &history,
                         const std::filesystem::path &path)
  {
    std::ofstream out(path, std::ios::binary);
    if (!out)
      throw ConfigError("cannot write " + path.string());
    out << history_csv(history);
  }
} // namespace modelopt::optim
