#include <modelopt/fem.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace modelopt::fem
{
  namespace
  {
    const double gauss_offset = 0.5 / std::sqrt(3.0);
    const std::array<double, 2> gauss_1d{0.5 - gauss_offset, 0.5 + gauss_offset};

    // Q1 shape functions on the unit square, nodes ccw from (0,0).
    std::array<double, 4> shape(double xi, double eta)
    {
      return {(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta};
    }

    std::array<Vec2, 4> shape_grad(double xi, double eta)
    {
      return {Vec2{-(1 - eta), -(1 - xi)}, Vec2{1 - eta, -xi}, Vec2{eta, xi},
              Vec2{-eta, 1 - xi}};
    }

    constexpr std::array<std::array<int, 2>, 4> corner{{{0, 0}, {1, 0}, {1, 1}, {0, 1}}};

    Mat4 mass_reference()
    {
      Mat4 m{};
      for (double gx : gauss_1d)
        for (double gy : gauss_1d)
        {
          const auto phi = shape(gx, gy);
          for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b)
              m[4 * a + b] += 0.25 * phi[a] * phi[b];
        }
      return m;
    }

    // Local subcell matrix: diffusion with constant D plus advection sampled at
    // the Gauss points of the subcell with lower-left corner @p lo.
    Mat4 subcell_matrix(const FormCoefficients &c, Point lo, double s)
    {
      Mat4 k{};
      if (c.diffusion)
      {
        const Tensor2 d = c.diffusion(Point{lo.x + 0.5 * s, lo.y + 0.5 * s});
        const auto &g = gradient_pair_matrices();
        for (int pq = 0; pq < 4; ++pq)
        {
          const double v = d(pq / 2, pq % 2);
          if (v == 0.0)
            continue;
          for (int e = 0; e < 16; ++e)
            k[e] += v * g[pq][e];
        }
      }
      if (c.advection)
      {
        for (double gx : gauss_1d)
          for (double gy : gauss_1d)
          {
            const Vec2 beta = c.advection(Point{lo.x + gx * s, lo.y + gy * s});
            const auto phi = shape(gx, gy);
            const auto grad = shape_grad(gx, gy);
            for (int a = 0; a < 4; ++a)
              for (int b = 0; b < 4; ++b)
                k[4 * a + b] += 0.25 * s * dot(beta, grad[b]) * phi[a];
          }
      }
      return k;
    }

    bool same(double a, double b, double scale)
    {
      return std::abs(a - b) <= 1e-12 * std::max(1.0, scale);
    }

    // Boundary edges of the grid lying on the domain boundary with the
    // given marker: each yields (node0, node1, length).
    template <typename F>
    void for_marked_edges(const FeSpace &space, const std::string &marker, F &&f)
    {
      const auto &g = space.grid;
      const double scale = std::max(space.domain.width, space.domain.height);
      auto visit = [&](int n0, int n1) {
        const Point p0 = g.node_point(n0), p1 = g.node_point(n1);
        const Point mid = 0.5 * (p0 + p1);
        if (space.domain.on_boundary(mid) && space.domain.marker_at(mid) == marker)
          f(n0, n1, g.cell_size);
      };
      const Rect dr = space.domain.rect();
      const Rect gr = g.bbox();
      if (same(gr.lo.y, dr.lo.y, scale))
        for (int ix = 0; ix < g.nx; ++ix)
          visit(g.node(ix, 0), g.node(ix + 1, 0));
      if (same(gr.hi.y, dr.hi.y, scale))
        for (int ix = 0; ix < g.nx; ++ix)
          visit(g.node(ix, g.ny), g.node(ix + 1, g.ny));
      if (same(gr.lo.x, dr.lo.x, scale))
        for (int iy = 0; iy < g.ny; ++iy)
          visit(g.node(0, iy), g.node(0, iy + 1));
      if (same(gr.hi.x, dr.hi.x, scale))
        for (int iy = 0; iy < g.ny; ++iy)
          visit(g.node(g.nx, iy), g.node(g.nx, iy + 1));
    }
  } // namespace

  const std::array<Mat4, 4> &gradient_pair_matrices()
  {
    static const std::array<Mat4, 4> g = [] {
      std::array<Mat4, 4> r{};
      for (double gx : gauss_1d)
        for (double gy : gauss_1d)
        {
          const auto grad = shape_grad(gx, gy);
          for (int p = 0; p < 2; ++p)
            for (int q = 0; q < 2; ++q)
              for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b)
                  r[2 * p + q][4 * a + b] += 0.25 * grad[b][q] * grad[a][p];
        }
      return r;
    }();
    return g;
  }

  Mat4 element_matrix(const mesh::Grid &g, int cell, const FormCoefficients &coeffs)
  {
    const Rect r = g.cell_rect(cell);
    int m = 1;
    if (coeffs.micro_size > 0.0 && coeffs.micro_size < g.cell_size)
      m = mesh::exact_ratio(g.cell_size, coeffs.micro_size, "element subdivision");
    if (m == 1)
      return subcell_matrix(coeffs, r.lo, g.cell_size);

    const double s = g.cell_size / m;
    Mat4 k{};
    for (int sy = 0; sy < m; ++sy)
      for (int sx = 0; sx < m; ++sx)
      {
        const Mat4 ks = subcell_matrix(coeffs, Point{r.lo.x + sx * s, r.lo.y + sy * s}, s);
        // P[c][b]: parent shape b at subcell corner c.
        std::array<std::array<double, 4>, 4> p;
        for (int c = 0; c < 4; ++c)
          p[c] = shape(double(sx + corner[c][0]) / m, double(sy + corner[c][1]) / m);
        std::array<double, 16> kp{};
        for (int c = 0; c < 4; ++c)
          for (int b = 0; b < 4; ++b)
          {
            double v = 0.0;
            for (int d = 0; d < 4; ++d)
              v += ks[4 * c + d] * p[d][b];
            kp[4 * c + b] = v;
          }
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b)
          {
            double v = 0.0;
            for (int c = 0; c < 4; ++c)
              v += p[c][a] * kp[4 * c + b];
            k[4 * a + b] += v;
          }
      }
    return k;
  }

  FeSpace FeSpace::on_domain(const mesh::Grid &grid, const mesh::Domain &domain,
                             const std::vector<std::string> &dirichlet_markers)
  {
    FeSpace s;
    s.grid = grid;
    s.domain = domain;
    s.constrained.assign(grid.n_nodes(), 0);
    s.boundary_values.assign(grid.n_nodes(), 0.0);
    for (int n = 0; n < grid.n_nodes(); ++n)
    {
      const Point p = grid.node_point(n);
      if (!domain.on_boundary(p))
        continue;
      for (const auto &m : dirichlet_markers)
        if (domain.in_marker_closure(p, m))
          s.constrained[n] = 1;
    }
    return s;
  }

  FeSpace FeSpace::on_patch(const mesh::Grid &grid, const mesh::Domain &domain,
                            const std::vector<std::string> &dirichlet_markers)
  {
    FeSpace s = on_domain(grid, domain, dirichlet_markers);
    s.is_patch = true;
    const Rect dr = domain.rect();
    const Rect gr = grid.bbox();
    const double scale = std::max(domain.width, domain.height);
    const bool free_left = same(gr.lo.x, dr.lo.x, scale);
    const bool free_right = same(gr.hi.x, dr.hi.x, scale);
    const bool free_bottom = same(gr.lo.y, dr.lo.y, scale);
    const bool free_top = same(gr.hi.y, dr.hi.y, scale);
    for (int iy = 0; iy <= grid.ny; ++iy)
      for (int ix = 0; ix <= grid.nx; ++ix)
      {
        const bool cut = (ix == 0 && !free_left) || (ix == grid.nx && !free_right) ||
                         (iy == 0 && !free_bottom) || (iy == grid.ny && !free_top);
        if (cut)
          s.constrained[grid.node(ix, iy)] = 1;
      }
    return s;
  }

  int FeSpace::n_constrained() const
  {
    return static_cast<int>(std::count(constrained.begin(), constrained.end(), 1));
  }

  double DiscreteField::evaluate(Point x) const
  {
    const int c = grid.locate(x);
    const Rect r = grid.cell_rect(c);
    const double xi = std::clamp((x.x - r.lo.x) / grid.cell_size, 0.0, 1.0);
    const double eta = std::clamp((x.y - r.lo.y) / grid.cell_size, 0.0, 1.0);
    const auto phi = shape(xi, eta);
    const auto nodes = grid.cell_nodes(c);
    double v = 0.0;
    for (int a = 0; a < 4; ++a)
      v += phi[a] * values[nodes[a]];
    return v;
  }

  Vector interpolate(const DiscreteField &f, const mesh::Grid &target)
  {
    Vector v(target.n_nodes());
    for (int n = 0; n < target.n_nodes(); ++n)
      v[n] = f.evaluate(target.node_point(n));
    return v;
  }

  SparseOperator assemble_operator(const mesh::Grid &g, const FormCoefficients &coeffs)
  {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(g.n_cells()) * 16);
    for (int c = 0; c < g.n_cells(); ++c)
    {
      const Mat4 k = element_matrix(g, c, coeffs);
      const auto nodes = g.cell_nodes(c);
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          trip.emplace_back(nodes[a], nodes[b], k[4 * a + b]);
    }
    Matrix m(g.n_nodes(), g.n_nodes());
    m.setFromTriplets(trip.begin(), trip.end());
    m.makeCompressed();
    return SparseOperator(std::move(m));
  }

  SparseOperator assemble_diffusion(const FeSpace &space, const field::CoefficientField &coeff,
                                    double micro_size)
  {
    FormCoefficients c;
    c.diffusion = [&coeff](Point x) { return coeff.evaluate(x); };
    c.micro_size = micro_size;
    return assemble_operator(space.grid, c);
  }

  SparseOperator assemble_diffusion(const FeSpace &space, const upscale::EffectiveModel &model)
  {
    FormCoefficients c;
    c.diffusion = [&model](Point x) { return model.at(x); };
    return assemble_operator(space.grid, c);
  }

  SparseOperator assemble_advection(const FeSpace &space, const field::AdvectionField &b,
                                    double micro_size)
  {
    FormCoefficients c;
    c.advection = [&b](Point x) { return b.evaluate(x); };
    c.micro_size = micro_size;
    return assemble_operator(space.grid, c);
  }

  SparseOperator assemble_advection(const FeSpace &space, const mesh::Grid &sampling,
                                    const std::vector<Vec2> &b_delta)
  {
    FormCoefficients c;
    c.advection = [&](Point x) { return b_delta[sampling.locate(x)]; };
    return assemble_operator(space.grid, c);
  }

  SparseOperator apply_constraints(const SparseOperator &raw, const FeSpace &space)
  {
    const Matrix &a = raw.matrix();
    if (a.rows() != space.n_dofs())
      throw NumericalError("operator and space dimensions differ");
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(a.nonZeros());
    for (int i = 0; i < a.outerSize(); ++i)
    {
      if (space.constrained[i])
      {
        trip.emplace_back(i, i, 1.0);
        continue;
      }
      for (Matrix::InnerIterator it(a, i); it; ++it)
        if (!space.constrained[it.col()])
          trip.emplace_back(i, static_cast<int>(it.col()), it.value());
    }
    Matrix m(a.rows(), a.cols());
    m.setFromTriplets(trip.begin(), trip.end());
    m.makeCompressed();
    return SparseOperator(std::move(m));
  }

  Vector constrained_rhs(const SparseOperator &raw, const FeSpace &space, Vector rhs)
  {
    const Matrix &a = raw.matrix();
    Vector g = Vector::Zero(space.n_dofs());
    bool any = false;
    for (int n = 0; n < space.n_dofs(); ++n)
      if (space.constrained[n] && space.boundary_values[n] != 0.0)
      {
        g[n] = space.boundary_values[n];
        any = true;
      }
    if (any)
      rhs -= a * g;
    for (int n = 0; n < space.n_dofs(); ++n)
      if (space.constrained[n])
        rhs[n] = space.boundary_values[n];
    return rhs;
  }

  Vector assemble_rhs(const FeSpace &space, const ScalarFunction &f,
                      const std::vector<NeumannData> &neumann)
  {
    const auto &g = space.grid;
    Vector rhs = Vector::Zero(g.n_nodes());
    if (f)
    {
      const double area = g.cell_size * g.cell_size;
      for (int c = 0; c < g.n_cells(); ++c)
      {
        const Rect r = g.cell_rect(c);
        const auto nodes = g.cell_nodes(c);
        for (double gx : gauss_1d)
          for (double gy : gauss_1d)
          {
            const double fv =
              f(Point{r.lo.x + gx * g.cell_size, r.lo.y + gy * g.cell_size}) * 0.25 * area;
            const auto phi = shape(gx, gy);
            for (int a = 0; a < 4; ++a)
              rhs[nodes[a]] += fv * phi[a];
          }
      }
    }
    for (const auto &nd : neumann)
    {
      bool known = false;
      for (const auto &m : space.domain.marker_names())
        known = known || m == nd.marker;
      if (!known)
        throw ConfigError("unknown boundary marker '" + nd.marker + "'");
      for_marked_edges(space, nd.marker, [&](int n0, int n1, double len) {
        rhs[n0] += 0.5 * nd.flux * len;
        rhs[n1] += 0.5 * nd.flux * len;
      });
    }
    return rhs;
  }

  DiscreteField solve(const SparseOperator &constrained, const FeSpace &space, const Vector &rhs)
  {
    Vector x = constrained.solve(rhs);
    for (int n = 0; n < space.n_dofs(); ++n)
      if (space.constrained[n])
        x[n] = space.boundary_values[n];
    if (!x.allFinite())
      throw NumericalError("solution contains non-finite values");
    return {space.grid, std::move(x)};
  }

  std::string describe(const Functional &j)
  {
    return std::visit(
      [](const auto &v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, DomainIntegral>)
          return "domain integral";
        else if constexpr (std::is_same_v<T, PointValue>)
        {
          char buf[96];
          std::snprintf(buf, sizeof buf, "point value at (%.17g, %.17g)", v.x0.x, v.x0.y);
          return buf;
        }
        else
          return "boundary integral over " + v.marker;
      },
      j);
  }

  Vector functional_vector(const FeSpace &space, const Functional &j)
  {
    const auto &g = space.grid;
    Vector v = Vector::Zero(g.n_nodes());
    if (std::holds_alternative<DomainIntegral>(j))
    {
      const double q = 0.25 * g.cell_size * g.cell_size;
      for (int c = 0; c < g.n_cells(); ++c)
        for (int n : g.cell_nodes(c))
          v[n] += q;
    }
    else if (const auto *pv = std::get_if<PointValue>(&j))
    {
      if (!space.domain.rect().contains(pv->x0, 1e-12))
        throw DomainError("evaluation point outside the domain");
      if (!g.contains(pv->x0))
      {
        if (!space.is_patch)
          throw DomainError("evaluation point outside the grid");
        return v;
      }
      const int c = g.locate(pv->x0);
      const Rect r = g.cell_rect(c);
      const auto phi = shape(std::clamp((pv->x0.x - r.lo.x) / g.cell_size, 0.0, 1.0),
                             std::clamp((pv->x0.y - r.lo.y) / g.cell_size, 0.0, 1.0));
      const auto nodes = g.cell_nodes(c);
      for (int a = 0; a < 4; ++a)
        v[nodes[a]] += phi[a];
    }
    else
    {
      const auto &marker = std::get<BoundaryIntegral>(j).marker;
      bool known = false;
      for (const auto &m : space.domain.marker_names())
        known = known || m == marker;
      if (!known)
        throw ConfigError("unknown boundary marker '" + marker + "'");
      for_marked_edges(space, marker, [&](int n0, int n1, double len) {
        v[n0] += 0.5 * len;
        v[n1] += 0.5 * len;
      });
    }
    return v;
  }

  DiscreteField solve_dual(const SparseOperator &constrained, const FeSpace &space,
                           const Functional &j)
  {
    return solve_dual(constrained, space, functional_vector(space, j));
  }

  DiscreteField solve_dual(const SparseOperator &constrained, const FeSpace &space, Vector j)
  {
    for (int n = 0; n < space.n_dofs(); ++n)
      if (space.constrained[n])
        j[n] = 0.0;
    Vector z = constrained.solve_transpose(j);
    for (int n = 0; n < space.n_dofs(); ++n)
      if (space.constrained[n])
        z[n] = 0.0;
    if (!z.allFinite())
      throw NumericalError("dual solution contains non-finite values");
    return {space.grid, std::move(z)};
  }

  double apply_functional(const Functional &j, const FeSpace &space, const DiscreteField &u)
  {
    return functional_vector(space, j).dot(u.values);
  }

  double form_value(const mesh::Grid &g, const std::vector<int> &cells,
                    const FormCoefficients &coeffs, const Vector &u, const Vector &z)
  {
    double s = 0.0;
    for (int c : cells)
    {
      const Mat4 k = element_matrix(g, c, coeffs);
      const auto nodes = g.cell_nodes(c);
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          s += z[nodes[a]] * k[4 * a + b] * u[nodes[b]];
    }
    return s;
  }

  Vector form_action(const mesh::Grid &g, const std::vector<int> &cells,
                     const FormCoefficients &coeffs, const Vector &u, bool transpose)
  {
    Vector v = Vector::Zero(g.n_nodes());
    for (int c : cells)
    {
      const Mat4 k = element_matrix(g, c, coeffs);
      const auto nodes = g.cell_nodes(c);
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
        {
          if (transpose)
            v[nodes[b]] += k[4 * a + b] * u[nodes[a]];
          else
            v[nodes[a]] += k[4 * a + b] * u[nodes[b]];
        }
    }
    return v;
  }

  double form_value(const mesh::Grid &g, const std::vector<int> &cells,
                    const std::vector<Mat4> &element_mats, const Vector &u, const Vector &z)
  {
    double s = 0.0;
    for (std::size_t i = 0; i < cells.size(); ++i)
    {
      const Mat4 &k = element_mats[i];
      const auto nodes = g.cell_nodes(cells[i]);
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          s += z[nodes[a]] * k[4 * a + b] * u[nodes[b]];
    }
    return s;
  }

  double l2_norm(const mesh::Grid &g, const Vector &u)
  {
    static const Mat4 m = mass_reference();
    const double area = g.cell_size * g.cell_size;
    double s = 0.0;
    for (int c = 0; c < g.n_cells(); ++c)
    {
      const auto nodes = g.cell_nodes(c);
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b)
          s += u[nodes[a]] * m[4 * a + b] * u[nodes[b]];
    }
    return std::sqrt(std::max(0.0, s * area));
  }

  void write_field_csv(const DiscreteField &f, const std::filesystem::path &path)
  {
    std::ofstream out(path);
    if (!out)
      throw ConfigError("cannot write " + path.string());
    out << "x,y,value\n";
    char buf[96];
    for (int n = 0; n < f.grid.n_nodes(); ++n)
    {
      const Point p = f.grid.node_point(n);
      std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.x, p.y, f.values[n]);
      out << buf;
    }
  }

  void write_field_vtk(const DiscreteField &f, const std::filesystem::path &path,
                       const std::string &name)
  {
    std::ofstream out(path);
    if (!out)
      throw ConfigError("cannot write " + path.string());
    char buf[64];
    out << "# vtk DataFile Version 3.0\n" << name << "\nASCII\nDATASET STRUCTURED_POINTS\n";
    out << "DIMENSIONS " << f.grid.nx + 1 << ' ' << f.grid.ny + 1 << " 1\n";
    std::snprintf(buf, sizeof buf, "ORIGIN %.17g %.17g 0\n", f.grid.origin.x, f.grid.origin.y);
    out << buf;
    std::snprintf(buf, sizeof buf, "SPACING %.17g %.17g 1\n", f.grid.cell_size, f.grid.cell_size);
    out << buf;
    out << "POINT_DATA " << f.grid.n_nodes() << "\nSCALARS " << name
        << " double 1\nLOOKUP_TABLE default\n";
    for (int n = 0; n < f.grid.n_nodes(); ++n)
    {
      std::snprintf(buf, sizeof buf, "%.17g\n", f.values[n]);
      out << buf;
    }
  }
} // namespace modelopt::fem
