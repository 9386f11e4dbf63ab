#include <modelopt/dwr.hpp>
#include <modelopt/upscale.hpp>

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

using namespace modelopt;
using namespace modelopt::dwr;

namespace
{
  Problem diffusion_problem(double delta, double H, double h, fem::Functional j = fem::DomainIntegral{})
  {
    Problem p{mesh::build_hierarchy(mesh::Domain::rectangle({0, 0}, 1, 1), delta, H, h),
              field::CoefficientField::lognormal(field::gen_gaussian_raster(32, 32, 0.05, 42), 1.0),
              {}, {}, {}, {}, {}, {}};
    p.source = [](Point) { return 1.0; };
    p.dirichlet = {"boundary"};
    p.functional = j;
    return p;
  }

  Problem advection_problem(double delta, double H, double h)
  {
    Problem p{mesh::build_hierarchy(mesh::Domain::advection_benchmark(), delta, H, h),
              field::CoefficientField::constant(Tensor2::identity(0.1)), {}, {}, {}, {}, {}, {}};
    attach_advection(p, field::stream_advection(field::gen_gaussian_raster(16, 32, 0.08, 3, {{0, 0}, {1, 2}}),
                                                1.0, 0.1, h)
                          .scaled(5.0));
    p.dirichlet = {"D"};
    p.neumann = {{"E", 1.0}};
    p.functional = fem::BoundaryIntegral{"B"};
    return p;
  }

  double sum(const std::vector<double> &v) { return std::accumulate(v.begin(), v.end(), 0.0); }
} // namespace

TEST_SUITE("dwr")
{
  TEST_CASE("error identity is exact with the fine dual")
  {
    const Problem p = diffusion_problem(0.25, 0.125, 1.0 / 64);
    const EffectiveModel m = upscale::geometric_mean_model(p.coefficient, p.mesh);
    const MacroSolution U = solve_primal(p, m);
    const FineSolution fine = solve_fine(p, true, true, 0);
    const DualApproximation d{DualKind::full, 1, *fine.z};
    const ErrorBreakdown e = error_identity(p, m, U, d, nullptr, &fine);
    const double err = *e.j_reference - e.j_of_U;
    CHECK(std::abs(err - e.theta_H - e.theta_delta) <= 1e-9 * std::abs(err));
    CHECK(std::abs(e.theta_delta - sum(e.eta)) <= 1e-12 * std::abs(e.theta_delta));
    CHECK(e.I_eff.has_value());
    CHECK(*e.I_eff == doctest::Approx(1.0).epsilon(1e-8));
    CHECK(e.I_loc >= 1.0);
  }

  TEST_CASE("error identity is exact with advection and Neumann data")
  {
    const Problem p = advection_problem(0.5, 0.125, 1.0 / 32);
    const EffectiveModel m = EffectiveModel::uniform(p.mesh.sampling(), Tensor2::identity(0.1));
    const MacroSolution U = solve_primal(p, m);
    const FineSolution fine = solve_fine(p, true, true, 0);
    const ErrorBreakdown e = error_identity(p, m, U, {DualKind::full, 1, *fine.z}, nullptr, &fine);
    const double err = *e.j_reference - e.j_of_U;
    CHECK(std::abs(err) > 1e-6);
    CHECK(std::abs(err - e.theta_H - e.theta_delta) <= 1e-9 * std::abs(err));
  }

  TEST_CASE("macro residual vanishes for duals in the macro space")
  {
    const Problem p = diffusion_problem(0.25, 0.0625, 1.0 / 128);
    const EffectiveModel m = upscale::geometric_mean_model(p.coefficient, p.mesh);
    const MacroSolution U = solve_primal(p, m);
    const DualApproximation z{DualKind::effective, 1, solve_effective_dual(p, U)};
    const ErrorBreakdown e = error_identity(p, m, U, z);
    CHECK(std::abs(e.theta_H) <= 1e-10);
    // any macro function
    fem::DiscreteField phi{p.mesh.macro(), fem::Vector(p.mesh.macro().n_nodes())};
    for (int n = 0; n < phi.values.size(); ++n)
      phi.values[n] = U.space.constrained[n] ? 0.0 : std::sin(0.7 * n);
    const double r = macro_residual(p, m, U, {DualKind::effective, 1, phi}, nullptr);
    CHECK(std::abs(r) <= 1e-10 * phi.values.norm());
  }

  TEST_CASE("indicators are linear in the goal functional")
  {
    const Problem p = diffusion_problem(0.25, 0.125, 1.0 / 64);
    const EffectiveModel m = upscale::geometric_mean_model(p.coefficient, p.mesh);
    const MacroSolution U = solve_primal(p, m);
    const FineSolution fine = solve_fine(p, true, false, 0);
    const fem::Vector j = fem::functional_vector(fine.space, p.functional);
    const double c = -3.5;
    const ErrorBreakdown a = error_identity(p, m, U, {DualKind::full, 1, fem::solve_dual(fine.constrained, fine.space, j)}, nullptr, &fine);
    const ErrorBreakdown b = error_identity(p, m, U, {DualKind::full, 1, fem::solve_dual(fine.constrained, fine.space, c * j)}, nullptr, &fine);
    for (std::size_t K = 0; K < a.eta.size(); ++K)
      CHECK(b.eta[K] == doctest::Approx(c * a.eta[K]).epsilon(1e-12));
    CHECK(b.theta_H == doctest::Approx(c * a.theta_H).epsilon(1e-10));
    CHECK(b.theta_delta == doctest::Approx(c * a.theta_delta).epsilon(1e-12));
  }

  TEST_CASE("a single patch covering the domain reproduces the fine dual")
  {
    const Problem p = advection_problem(1.0, 0.25, 1.0 / 32);
    const EffectiveModel m = EffectiveModel::uniform(p.mesh.sampling(), Tensor2::identity(0.15));
    const MacroSolution U = solve_primal(p, m);
    const FineSolution fine = solve_fine(p, false, true, 0);
    const ErrorBreakdown full = error_identity(p, m, U, {DualKind::full, 1, *fine.z}, nullptr, &fine);
    const DualApproximation enh{DualKind::enhanced, 1, solve_effective_dual(p, U)};
    PatchCache cache(p, 1, true);
    const ErrorBreakdown e = error_identity(p, m, U, enh, &cache);
    REQUIRE(e.eta.size() == 2u);
    for (int K = 0; K < 2; ++K)
      CHECK(std::abs(e.eta[K] - full.eta[K]) <= 1e-9 * std::abs(full.theta_delta));
    // the patch dual itself agrees with the fine dual
    const mesh::Grid work = patch_grid(p, mesh::patch_of(p.mesh, 0, 1));
    const fem::Vector zs = local_dual(p, enh, 0, work, &cache);
    CHECK((zs - fine.z->values).norm() <= 1e-9 * fine.z->values.norm());
  }

  TEST_CASE("enhancement vanishes on interior patch boundaries")
  {
    const Problem p = advection_problem(0.25, 0.125, 1.0 / 32);
    const EffectiveModel m = EffectiveModel::uniform(p.mesh.sampling(), Tensor2::identity(0.1));
    const MacroSolution U = solve_primal(p, m);
    const fem::DiscreteField Z = solve_effective_dual(p, U);
    PatchCache cache(p, 1, false);
    for (int K : {0, 5, 13})
    {
      const fem::DiscreteField zk = local_enhancement(p, Z, K, cache);
      const mesh::Grid &g = zk.grid;
      const Rect box = g.bbox();
      int free_boundary = 0;
      for (int n = 0; n < g.n_nodes(); ++n)
      {
        const Point x = g.node_point(n);
        const bool on_patch_edge = x.x == box.lo.x || x.x == box.hi.x || x.y == box.lo.y || x.y == box.hi.y;
        if (!on_patch_edge)
          continue;
        const mesh::Domain &d = p.mesh.domain();
        if (!d.on_boundary(x) || d.in_marker_closure(x, "D"))
          CHECK(zk.values[n] == 0.0);
        else if (zk.values[n] != 0.0)
          ++free_boundary;
      }
      CHECK(free_boundary > 0);
    }
  }

  TEST_CASE("localisation index and effectivity")
  {
    ErrorBreakdown e;
    e.eta = {1.0, -0.5, 0.25};
    e.theta_delta = 0.75;
    e.theta_H = 0.0;
    e.j_of_U = 1.0;
    effectivity(e, 1.5);
    CHECK(e.I_loc == doctest::Approx(1.75 / 0.75));
    CHECK(*e.I_eff == doctest::Approx(1.5));
    effectivity(e, 1.0);
    CHECK_FALSE(e.I_eff.has_value());
    const auto path = std::filesystem::temp_directory_path() / "modelopt_test_eta.csv";
    write_breakdown_csv(e, mesh::Grid::covering({{0, 0}, {3, 1}}, 1.0), path);
    CHECK(std::filesystem::file_size(path) > 0);
  }

  TEST_CASE("fine solve respects the dof cap")
  {
    const Problem p = diffusion_problem(0.25, 0.125, 1.0 / 64);
    CHECK_THROWS_AS(solve_fine(p, true, false, 1000), ResourceError);
  }
}
