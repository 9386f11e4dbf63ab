#include <modelopt/upscale.hpp>

#include <doctest.h>

#include <cmath>
#include <filesystem>

using namespace modelopt;
using namespace modelopt::upscale;

namespace
{
  mesh::MeshHierarchy unit_hierarchy(double delta, double H, double h)
  {
    return mesh::build_hierarchy(mesh::Domain::rectangle({0, 0}, 1, 1), delta, H, h);
  }
} // namespace

TEST_SUITE("upscale")
{
  TEST_CASE("laminate homogenizes to the harmonic and arithmetic means")
  {
    const auto m = unit_hierarchy(0.25, 0.125, 1.0 / 64);
    const auto lx = field::CoefficientField::laminate(0, 1.0, 4.0, 1.0 / 16);
    const EffectiveModel hx = homogenized_model(lx, m);
    for (const Tensor2 &t : hx.tensors)
    {
      CHECK(std::abs(t(0, 0) - 1.6) <= 1e-10);
      CHECK(std::abs(t(1, 1) - 2.5) <= 1e-10);
      CHECK(std::abs(t(0, 1)) <= 1e-10);
      CHECK(t(0, 1) == t(1, 0));
    }
  }

  TEST_CASE("90 degree rotation swaps the diagonal for every upscaler")
  {
    const auto m = unit_hierarchy(0.25, 0.125, 1.0 / 64);
    const auto lx = field::CoefficientField::laminate(0, 1.0, 4.0, 1.0 / 16);
    const auto ly = field::CoefficientField::laminate(1, 1.0, 4.0, 1.0 / 16);
    for (Upscaler u : {Upscaler::arithmetic, Upscaler::geometric, Upscaler::homogenized})
    {
      const EffectiveModel a = initial_model(u, lx, m);
      const EffectiveModel b = initial_model(u, ly, m);
      for (int K = 0; K < a.size(); ++K)
      {
        CHECK(a[K](0, 0) == doctest::Approx(b[K](1, 1)).epsilon(1e-10));
        CHECK(a[K](1, 1) == doctest::Approx(b[K](0, 0)).epsilon(1e-10));
      }
    }
  }

  TEST_CASE("checkerboard means")
  {
    const auto m = unit_hierarchy(0.25, 0.125, 1.0 / 64);
    const auto cb = field::CoefficientField::checkerboard(1.0, 9.0, 1.0 / 16);
    const EffectiveModel ar = arithmetic_mean_model(cb, m);
    const EffectiveModel ge = geometric_mean_model(cb, m);
    const EffectiveModel ho = homogenized_model(cb, m);
    for (int K = 0; K < ar.size(); ++K)
    {
      CHECK(ar[K](0, 0) == doctest::Approx(5.0).epsilon(1e-14));
      CHECK(ge[K](1, 1) == doctest::Approx(3.0).epsilon(1e-14));
      // discrete cell problem approaches sqrt(ab) from above
      CHECK(ho[K](0, 0) > 1.8);
      CHECK(ho[K](0, 0) < 5.0);
      CHECK(ho[K](0, 0) == doctest::Approx(ho[K](1, 1)).epsilon(1e-10));
    }
  }

  TEST_CASE("geometric mean does not exceed the arithmetic mean")
  {
    const auto m = unit_hierarchy(0.125, 0.0625, 1.0 / 128);
    const auto f = field::CoefficientField::lognormal(field::gen_gaussian_raster(64, 64, 0.03, 5), 1.0);
    const EffectiveModel ar = arithmetic_mean_model(f, m);
    const EffectiveModel ge = geometric_mean_model(f, m);
    for (int K = 0; K < ar.size(); ++K)
      for (int i = 0; i < 2; ++i)
        CHECK(ge[K](i, i) <= ar[K](i, i) * (1 + 1e-14));
    CHECK(ge.all_symmetric());
    CHECK(ge.all_finite());
  }

  TEST_CASE("homogenized tensor lies between the harmonic and arithmetic bounds")
  {
    const double h = 1.0 / 64;
    const auto m = unit_hierarchy(0.25, 0.125, h);
    const auto f = field::CoefficientField::lognormal(field::gen_gaussian_raster(32, 32, 0.05, 8), 0.5);
    const EffectiveModel ar = arithmetic_mean_model(f, m);
    const EffectiveModel ho = homogenized_model(f, m);
    for (int K = 0; K < ho.size(); ++K)
    {
      const Rect r = m.sampling().cell_rect(K);
      const int n = static_cast<int>(std::lround(r.width() / h));
      double inv = 0.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          inv += 1.0 / f.evaluate({r.lo.x + (i + 0.5) * h, r.lo.y + (j + 0.5) * h})(0, 0);
      const double harmonic = n * n / inv;
      CHECK(ho[K].is_symmetric(1e-12));
      for (int i = 0; i < 2; ++i)
      {
        CHECK(ho[K](i, i) >= harmonic * (1 - 1e-12));
        CHECK(ho[K](i, i) <= ar[K](i, i) * (1 + 1e-12));
      }
      CHECK(ho[K].min_eigenvalue() >= harmonic * (1 - 1e-12));
    }
  }

  TEST_CASE("cellwise constant field is reproduced by every upscaler")
  {
    const auto m = unit_hierarchy(0.5, 0.25, 1.0 / 32);
    const Tensor2 t{{2.0, 0.5, 0.5, 3.0}};
    const auto f = field::CoefficientField::constant(t);
    for (Upscaler u : {Upscaler::arithmetic, Upscaler::geometric, Upscaler::homogenized})
      for (const Tensor2 &k : initial_model(u, f, m).tensors)
        for (int e = 0; e < 4; ++e)
          CHECK(k.a[e] == doctest::Approx(t.a[e]).epsilon(1e-12));
    const auto cb = field::CoefficientField::checkerboard(1.0, 7.0, 0.5);
    const EffectiveModel ho = homogenized_model(cb, m);
    CHECK(ho[0](0, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ho[1](1, 1) == doctest::Approx(7.0).epsilon(1e-12));
  }

  TEST_CASE("upscaler names and model CSV")
  {
    CHECK(parse_upscaler("homogenized") == Upscaler::homogenized);
    CHECK(to_string(Upscaler::geometric) == "geometric");
    CHECK_THROWS_AS(parse_upscaler("median"), ConfigError);
    const auto m = unit_hierarchy(0.25, 0.125, 1.0 / 32);
    EffectiveModel e = EffectiveModel::uniform(m.sampling(), Tensor2::identity(0.1));
    e[3] = Tensor2{{1.0 / 3.0, 1e-17, 1e-17, 2.0}};
    const auto p = std::filesystem::temp_directory_path() / "modelopt_test_model.csv";
    write_model_csv(e, p);
    const EffectiveModel back = read_model_csv(p, m.sampling());
    CHECK(back.tensors == e.tensors);
    CHECK(e.norm() > 0.0);
  }
}
