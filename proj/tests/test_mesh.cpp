#include <modelopt/mesh.hpp>

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace modelopt;
using namespace modelopt::mesh;

TEST_SUITE("mesh")
{
  TEST_CASE("cell and node counts of the hierarchy")
  {
    const MeshHierarchy m = build_hierarchy(Domain::rectangle({0, 0}, 1, 2), 0.25, 0.0625, 0.0078125);
    CHECK(m.sampling().nx == 4);
    CHECK(m.sampling().ny == 8);
    CHECK(m.macro().n_cells() == 16 * 32);
    CHECK(m.macro().n_nodes() == 17 * 33);
    CHECK(m.micro().n_cells() == 128 * 256);
    CHECK(m.macro_per_sampling() == 4);
    CHECK(m.micro_per_macro() == 8);
  }

  TEST_CASE("divisibility violations are configuration errors")
  {
    const Domain d = Domain::rectangle({0, 0}, 1, 1);
    CHECK_THROWS_AS(build_hierarchy(d, 0.3, 0.1, 0.05), ConfigError);
    CHECK_THROWS_AS(build_hierarchy(d, 0.25, 0.1, 0.05), ConfigError);
    CHECK_THROWS_AS(build_hierarchy(d, 0.25, 0.0625, 0.025), ConfigError);
    CHECK_THROWS_AS(build_hierarchy(d, 0.25, 0.5, 0.0625), ConfigError);
    CHECK_NOTHROW(build_hierarchy(d, 0.25, 0.125, 0.0625));
  }

  TEST_CASE("domain validation")
  {
    CHECK_THROWS_AS(Domain::rectangle({0, 0}, 0, 1).validate(), ConfigError);
    CHECK_THROWS_AS(Domain::rectangle({0, 0}, 1, -1).validate(), ConfigError);
    Domain d = Domain::rectangle({0, 0}, 1, 1);
    d.side(Side::left).lower = "";
    CHECK_THROWS_AS(d.validate(), ConfigError);
  }

  TEST_CASE("sampling cells tile the domain")
  {
    const MeshHierarchy m = build_hierarchy(Domain::advection_benchmark(), 0.25, 0.125, 0.0625);
    double area = 0.0;
    for (int K = 0; K < m.n_sampling_cells(); ++K)
    {
      const SamplingRegion r = m.sampling_region(K);
      area += r.bbox.area();
      CHECK(r.y_cell.width() == doctest::Approx(0.25));
      CHECK(r.y_cell.center().x == doctest::Approx(r.bbox.center().x));
      CHECK(r.y_cell.center().y == doctest::Approx(r.bbox.center().y));
    }
    CHECK(std::abs(area - 2.0) <= 1e-12 * 2.0);
  }

  TEST_CASE("every macro cell lies in its sampling parent")
  {
    const MeshHierarchy m = build_hierarchy(Domain::rectangle({0, 0}, 1, 1), 0.25, 0.0625, 0.03125);
    std::vector<int> seen(m.n_macro_cells(), 0);
    for (int K = 0; K < m.n_sampling_cells(); ++K)
      for (int T : m.macro_cells_of(K))
      {
        ++seen[T];
        CHECK(m.sampling_parent(T) == K);
      }
    for (int T = 0; T < m.n_macro_cells(); ++T)
    {
      CHECK(seen[T] == 1);
      const Rect parent = m.sampling().cell_rect(m.sampling_parent(T));
      CHECK(parent.contains(m.macro().cell_rect(T), 1e-14));
    }
  }

  TEST_CASE("patch sizes at corners, edges and interior")
  {
    const MeshHierarchy m = build_hierarchy(Domain::rectangle({0, 0}, 1, 1), 0.25, 0.125, 0.0625);
    CHECK(patch_of(m, 0, 0).members == std::vector<int>{0});
    CHECK(patch_of(m, 0, 1).members.size() == 4);
    CHECK(patch_of(m, 1, 1).members.size() == 6);
    CHECK(patch_of(m, 5, 1).members.size() == 9);
    CHECK(patch_of(m, 5, 2).members.size() == 16);
    const Patch p = patch_of(m, 5, 1);
    CHECK(std::is_sorted(p.members.begin(), p.members.end()));
    CHECK(p.bbox.lo == Point{0, 0});
    CHECK(p.bbox.hi == Point{0.75, 0.75});
    CHECK_THROWS_AS(patch_of(m, 16, 1), DomainError);
  }

  TEST_CASE("depth-one patches are symmetric")
  {
    const MeshHierarchy m = build_hierarchy(Domain::rectangle({0, 0}, 1, 2), 0.25, 0.125, 0.0625);
    for (int K = 0; K < m.n_sampling_cells(); ++K)
      for (int Q : patch_of(m, K, 1).members)
      {
        CHECK(patch_of(m, Q, 1).contains(K));
        const auto [kx, ky] = m.sampling().cell_coords(K);
        const auto [qx, qy] = m.sampling().cell_coords(Q);
        CHECK(std::abs(kx - qx) <= 1);
        CHECK(std::abs(ky - qy) <= 1);
      }
  }

  TEST_CASE("locate uses the lower-left tie-break")
  {
    const Grid g = Grid::covering({{0, 0}, {1, 1}}, 0.25);
    CHECK(g.locate({0.1, 0.1}) == 0);
    CHECK(g.locate({0.25, 0.1}) == 0);
    CHECK(g.locate({0.25, 0.25}) == 0);
    CHECK(g.locate({0.5, 0.6}) == g.cell(1, 2));
    CHECK(g.locate({1.0, 1.0}) == g.cell(3, 3));
    CHECK_THROWS_AS(g.locate({1.1, 0.5}), DomainError);
    const MeshHierarchy m = build_hierarchy(Domain::rectangle({0, 0}, 1, 1), 0.5, 0.25, 0.125);
    const auto [K, T] = locate_cell(m, {0.5, 0.5});
    CHECK(K == 0);
    CHECK(T == m.macro().cell(1, 1));
  }

  TEST_CASE("boundary markers of the advection benchmark")
  {
    const Domain d = Domain::advection_benchmark();
    CHECK(d.marker_at({1.0, 1.0}) == "A");
    CHECK(d.marker_at({0.5, 2.0}) == "B");
    CHECK(d.marker_at({0.0, 1.5}) == "C");
    CHECK(d.marker_at({0.0, 0.5}) == "D");
    CHECK(d.marker_at({0.5, 0.0}) == "E");
    CHECK(d.in_marker_closure({0.0, 0.0}, "D"));
    CHECK(d.in_marker_closure({0.0, 0.0}, "E"));
    CHECK(d.in_marker_closure({0.0, 1.0}, "C"));
    CHECK(d.in_marker_closure({0.0, 1.0}, "D"));
    CHECK_FALSE(d.in_marker_closure({0.0, 1.5}, "D"));
    CHECK_FALSE(d.on_boundary({0.5, 0.5}));
    auto names = d.marker_names();
    std::sort(names.begin(), names.end());
    CHECK(names == std::vector<std::string>{"A", "B", "C", "D", "E"});
  }

  TEST_CASE("every boundary edge midpoint carries exactly one marker")
  {
    const Domain d = Domain::advection_benchmark();
    const Grid g = Grid::covering(d.rect(), 0.125);
    const auto names = d.marker_names();
    for (int c = 0; c < g.n_cells(); ++c)
    {
      const Rect r = g.cell_rect(c);
      for (Point p : {Point{r.center().x, r.lo.y}, Point{r.center().x, r.hi.y},
                      Point{r.lo.x, r.center().y}, Point{r.hi.x, r.center().y}})
      {
        if (!d.on_boundary(p))
          continue;
        int count = 0;
        for (const auto &n : names)
          count += d.in_marker_closure(p, n) ? 1 : 0;
        CHECK(count == 1);
      }
    }
  }

  TEST_CASE("node lookup on nested grids")
  {
    const Grid g = Grid::covering({{0, 0}, {1, 1}}, 0.125);
    CHECK(g.node_at({0.25, 0.5}) == g.node(2, 4));
    CHECK(g.node_at({0.3, 0.5}) == -1);
    CHECK(g.cells_in({{0, 0}, {0.25, 0.25}}).size() == 4);
  }
}
