#include <modelopt/fem.hpp>
#include <modelopt/parallel.hpp>
#include <modelopt/upscale.hpp>

#include <cmath>
#include <cstdio>

namespace modelopt::upscale
{
  namespace
  {
    mesh::Grid cell_grid(const mesh::MeshHierarchy &mesh, int K)
    {
      return mesh.micro_grid(mesh.sampling_region(K).y_cell);
    }

    template <typename F>
    EffectiveModel per_cell(const mesh::MeshHierarchy &mesh, const std::string &tag, F &&f)
    {
      EffectiveModel m = EffectiveModel::uniform(mesh.sampling(), Tensor2{}, tag);
      parallel_for(mesh.n_sampling_cells(), [&](std::size_t K) { m[int(K)] = f(int(K)); });
      return m;
    }
  } // namespace

  EffectiveModel arithmetic_mean_model(const field::CoefficientField &field,
                                       const mesh::MeshHierarchy &mesh)
  {
    return per_cell(mesh, "arithmetic", [&](int K) {
      const mesh::Grid g = cell_grid(mesh, K);
      Tensor2 s;
      for (int c = 0; c < g.n_cells(); ++c)
        s += field.evaluate(g.cell_rect(c).center());
      return (1.0 / g.n_cells()) * s;
    });
  }

  EffectiveModel geometric_mean_model(const field::CoefficientField &field,
                                      const mesh::MeshHierarchy &mesh)
  {
    return per_cell(mesh, "geometric", [&](int K) {
      const mesh::Grid g = cell_grid(mesh, K);
      Tensor2 s;
      for (int c = 0; c < g.n_cells(); ++c)
      {
        const Point x = g.cell_rect(c).center();
        const Tensor2 a = field.evaluate(x);
        for (int i = 0; i < 2; ++i)
          if (!(a(i, i) > 0.0))
          {
            char buf[160];
            std::snprintf(buf, sizeof buf,
                          "geometric mean: nonpositive diagonal entry %.6g in sampling cell %d "
                          "at (%.9g, %.9g)",
                          a(i, i), K, x.x, x.y);
            throw DomainError(buf);
          }
        s(0, 0) += std::log(a(0, 0));
        s(1, 1) += std::log(a(1, 1));
        s(0, 1) += a(0, 1);
        s(1, 0) += a(1, 0);
      }
      const double w = 1.0 / g.n_cells();
      Tensor2 t;
      t(0, 0) = std::exp(w * s(0, 0));
      t(1, 1) = std::exp(w * s(1, 1));
      t(0, 1) = w * s(0, 1);
      t(1, 0) = w * s(1, 0);
      return t;
    });
  }

  Tensor2 homogenized_model(const field::CoefficientField &field, const mesh::MeshHierarchy &mesh,
                            int K)
  {
    const mesh::Grid g = cell_grid(mesh, K);
    if (g.nx != g.ny)
      throw ConfigError("cell problems require square sampling cells");
    const int n = g.nx;
    auto periodic = [&](int node) {
      const auto [ix, iy] = g.node_coords(node);
      return (iy % n) * n + (ix % n);
    };

    fem::FormCoefficients coeffs;
    coeffs.diffusion = [&field](Point x) { return field.evaluate(x); };
    std::vector<fem::Mat4> mats(g.n_cells());
    for (int c = 0; c < g.n_cells(); ++c)
      mats[c] = fem::element_matrix(g, c, coeffs);

    // Reduced periodic system with dof 0 pinned.
    const int nr = n * n;
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(g.n_cells()) * 16 + 1);
    std::array<fem::Vector, 2> rhs{fem::Vector::Zero(nr), fem::Vector::Zero(nr)};
    for (int c = 0; c < g.n_cells(); ++c)
    {
      const auto nodes = g.cell_nodes(c);
      for (int a = 0; a < 4; ++a)
      {
        const int ra = periodic(nodes[a]);
        for (int b = 0; b < 4; ++b)
        {
          const int rb = periodic(nodes[b]);
          const double k = mats[c][4 * a + b];
          const Point xb = g.node_point(nodes[b]);
          if (ra != 0)
          {
            rhs[0][ra] -= k * xb.x;
            rhs[1][ra] -= k * xb.y;
            if (rb != 0)
              trip.emplace_back(ra, rb, k);
          }
        }
      }
    }
    trip.emplace_back(0, 0, 1.0);
    fem::Matrix a(nr, nr);
    a.setFromTriplets(trip.begin(), trip.end());
    const fem::SparseOperator op(std::move(a));

    std::array<fem::Vector, 2> w;
    for (int i = 0; i < 2; ++i)
    {
      const fem::Vector omega = op.solve(rhs[i]);
      const double mean = omega.mean();
      w[i].resize(g.n_nodes());
      for (int node = 0; node < g.n_nodes(); ++node)
      {
        const Point x = g.node_point(node);
        w[i][node] = omega[periodic(node)] - mean + (i == 0 ? x.x : x.y);
      }
    }

    std::vector<int> cells(g.n_cells());
    for (int c = 0; c < g.n_cells(); ++c)
      cells[c] = c;
    const double area = g.bbox().area();
    Tensor2 t;
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j)
        t(i, j) = fem::form_value(g, cells, mats, w[i], w[j]) / area;
    for (double v : t.a)
      if (!std::isfinite(v))
        throw NumericalError("cell problem of sampling cell " + std::to_string(K) +
                             " produced non-finite values");
    // symmetric up to round-off for symmetric A
    return t.symmetrized();
  }

  EffectiveModel homogenized_model(const field::CoefficientField &field,
                                   const mesh::MeshHierarchy &mesh)
  {
    return per_cell(mesh, "homogenized", [&](int K) { return homogenized_model(field, mesh, K); });
  }

  Upscaler parse_upscaler(const std::string &name)
  {
    if (name == "arithmetic")
      return Upscaler::arithmetic;
    if (name == "geometric")
      return Upscaler::geometric;
    if (name == "homogenized")
      return Upscaler::homogenized;
    throw ConfigError("unknown upscaler '" + name +
                      "' (expected arithmetic, geometric or homogenized)");
  }

  std::string to_string(Upscaler u)
  {
    switch (u)
    {
      case Upscaler::arithmetic:
        return "arithmetic";
      case Upscaler::geometric:
        return "geometric";
      case Upscaler::homogenized:
        return "homogenized";
    }
    return "?";
  }

  EffectiveModel initial_model(Upscaler u, const field::CoefficientField &field,
                               const mesh::MeshHierarchy &mesh)
  {
    switch (u)
    {
      case Upscaler::arithmetic:
        return arithmetic_mean_model(field, mesh);
      case Upscaler::geometric:
        return geometric_mean_model(field, mesh);
      case Upscaler::homogenized:
        return homogenized_model(field, mesh);
    }
    throw ConfigError("unknown upscaler");
  }
} // namespace modelopt::upscale
