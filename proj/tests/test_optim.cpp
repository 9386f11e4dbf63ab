#include <modelopt/optim.hpp>
#include <modelopt/upscale.hpp>

#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

using namespace modelopt;
using namespace modelopt::optim;

namespace
{
  dwr::Problem small_problem(double delta = 0.5, double H = 0.125, double h = 1.0 / 32)
  {
    dwr::Problem p{mesh::build_hierarchy(mesh::Domain::rectangle({0, 0}, 1, 1), delta, H, h),
                   field::CoefficientField::lognormal(field::gen_gaussian_raster(32, 32, 0.05, 42), 1.0),
                   {}, {}, {}, {}, {}, {}};
    p.source = [](Point) { return 1.0; };
    p.dirichlet = {"boundary"};
    p.functional = fem::DomainIntegral{};
    return p;
  }

  EffectiveModel perturbed(EffectiveModel m, int K, int i, int j, double s)
  {
    m[K](i, j) += s;
    return m;
  }

  BlockJacobian one_cell_jacobian(const std::array<double, 4> &c, double sqrt_alpha)
  {
    BlockJacobian jac;
    jac.n_cells = 1;
    jac.columns.resize(4);
    for (int q = 0; q < 4; ++q)
      jac.columns[q] = {{0, c[q]}};
    jac.sqrt_alpha = {sqrt_alpha};
    return jac;
  }
} // namespace

TEST_SUITE("optim")
{
  TEST_CASE("configuration validation")
  {
    OptimizerConfig c;
    CHECK_NOTHROW(c.validate());
    c.stop_fraction = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.lambda_factor = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.alpha = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_jacobian_mode("diagonal") == JacobianMode::diagonal);
    CHECK(parse_dual_mode("full") == dwr::DualKind::full);
    CHECK_THROWS_AS(parse_dual_mode("partial"), ConfigError);
  }

  TEST_CASE("zero residual gives a zero step")
  {
    const BlockJacobian jac = one_cell_jacobian({1.0, 2.0, 0.0, -1.0}, 0.5);
    ResidualVector r{{0.0}, {0.0, 0.0, 0.0, 0.0}};
    const Step s = lm_step(r, jac, 1.0);
    CHECK(s.raw.norm() == 0.0);
    CHECK(s.norm == 0.0);
  }

  TEST_CASE("one-cell step matches the dense normal equations")
  {
    const std::array<double, 4> c{0.7, -0.2, 0.4, 1.1};
    const double sa = 0.3;
    const BlockJacobian jac = one_cell_jacobian(c, sa);
    ResidualVector r{{0.25}, {0.1, -0.05, 0.02, 0.3}};
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(5, 4);
    Eigen::VectorXd G(5);
    G[0] = r.eta[0];
    for (int q = 0; q < 4; ++q)
    {
      J(0, q) = c[q];
      J(1 + q, q) = sa;
      G[1 + q] = r.g[q];
    }
    const Eigen::MatrixXd N = J.transpose() * J;
    const double lambda = 0.5 * N.diagonal().mean();
    const Eigen::VectorXd d = (N + lambda * Eigen::MatrixXd::Identity(4, 4)).ldlt().solve(-J.transpose() * G);
    const Step s = lm_step(r, jac, 0.5);
    CHECK(s.lambda == doctest::Approx(lambda).epsilon(1e-14));
    for (int q = 0; q < 4; ++q)
      CHECK(s.raw[q] == doctest::Approx(d[q]).epsilon(1e-12));
    CHECK(s.delta[0](0, 1) == doctest::Approx(0.5 * (d[1] + d[2])).epsilon(1e-12));
    CHECK(s.delta[0].is_symmetric());
    CHECK(r.flat().size() == 5);
    CHECK(r.squared_norm() == doctest::Approx(G.squaredNorm()).epsilon(1e-14));
  }

  TEST_CASE("scalar Gauss-Newton step without damping")
  {
    // eta = c * x only in the (0,0) slot, no regularisation: the undamped
    // step solves the linear residual exactly in that slot
    BlockJacobian jac = one_cell_jacobian({2.0, 0.0, 0.0, 0.0}, 0.0);
    ResidualVector r{{3.0}, {0.0, 0.0, 0.0, 0.0}};
    jac.sqrt_alpha = {1e-8};
    const Step s = lm_step(r, jac, 0.0);
    CHECK(s.raw[0] == doctest::Approx(-1.5).epsilon(1e-10));
    CHECK(s.delta[0](0, 0) == doctest::Approx(-1.5).epsilon(1e-10));
  }

  TEST_CASE("heavy damping follows the negative gradient")
  {
    const std::array<double, 4> c{0.7, -0.2, 0.4, 1.1};
    const BlockJacobian jac = one_cell_jacobian(c, 0.3);
    ResidualVector r{{0.25}, {0.1, -0.05, 0.02, 0.3}};
    const Step s = lm_step(r, jac, 1e6);
    for (int q = 0; q < 4; ++q)
    {
      const double grad = c[q] * r.eta[0] + 0.3 * r.g[q];
      CHECK(s.raw[q] == doctest::Approx(-grad / s.lambda).epsilon(1e-5));
    }
  }

  TEST_CASE("residual layout and cost consistency")
  {
    const dwr::Problem p = small_problem();
    const EffectiveModel m0 = upscale::geometric_mean_model(p.coefficient, p.mesh);
    EffectiveModel m = m0;
    m[1] = m[1] + Tensor2{{0.2, 0.05, 0.05, -0.1}};
    const dwr::FineSolution fine = dwr::solve_fine(p, false, true, 0);
    const std::vector<double> alpha(4, 0.3);
    OptimizerConfig cfg;
    cfg.dual_mode = dwr::DualKind::full;
    const Evaluation ev = evaluate(p, m, cfg, nullptr, &fine, false);
    const ResidualVector r = assemble_residual(ev.err.eta, m, m0, alpha);
    CHECK(r.flat().size() == 4 * (1 + 4));
    const CostContext ctx{&p, m0, alpha, dwr::DualKind::full, 1, &fine};
    CHECK(r.squared_norm() == doctest::Approx(cost_functional(ctx, m)).epsilon(1e-12));
  }

  TEST_CASE("Jacobian band does not grow with the number of cells")
  {
    OptimizerConfig cfg;
    for (double delta : {0.25, 0.125})
    {
      const dwr::Problem p = small_problem(delta, delta / 2, 1.0 / 64);
      const EffectiveModel m = upscale::geometric_mean_model(p.coefficient, p.mesh);
      dwr::PatchCache cache(p, 1, false);
      const Evaluation ev = evaluate(p, m, cfg, &cache, nullptr, true);
      CHECK(ev.jac.band() == 9);
      CHECK(ev.jac.eta_block().rows() == p.mesh.n_sampling_cells());
      CHECK(ev.jac.eta_block().cols() == 4 * p.mesh.n_sampling_cells());
    }
  }

  TEST_CASE("response of U matches finite differences")
  {
    const dwr::Problem p = small_problem();
    const EffectiveModel m = upscale::geometric_mean_model(p.coefficient, p.mesh);
    const dwr::MacroSolution U = dwr::solve_primal(p, m);
    const double s = 1e-6;
    for (auto [K, i, j] : {std::tuple{0, 0, 0}, std::tuple{3, 0, 1}, std::tuple{2, 1, 1}})
    {
      const fem::DiscreteField w = response_U(p, U, K, i, j);
      const fem::Vector fd = (dwr::solve_primal(p, perturbed(m, K, i, j, s)).U.values -
                              dwr::solve_primal(p, perturbed(m, K, i, j, -s)).U.values) /
                             (2 * s);
      CHECK((w.values - fd).norm() <= 1e-4 * fd.norm());
    }
  }

  TEST_CASE("full directional derivative matches central differences")
  {
    const dwr::Problem p = small_problem();
    const EffectiveModel m0 = upscale::geometric_mean_model(p.coefficient, p.mesh);
    EffectiveModel m = m0;
    for (int K = 0; K < m.size(); ++K)
      m[K] = m[K] + Tensor2{{0.1 * K, 0.02, 0.02, -0.05}};
    const dwr::FineSolution fine = dwr::solve_fine(p, false, true, 0);
    std::vector<Tensor2> dir{{{1.0, 0.3, 0.3, -0.5}}, {{0.2, 0.0, 0.0, 0.8}}, {{-0.7, 0.1, 0.1, 0.4}}, {{0.5, -0.2, -0.2, 0.3}}};
    for (dwr::DualKind kind : {dwr::DualKind::full, dwr::DualKind::effective, dwr::DualKind::enhanced})
    {
      const CostContext ctx{&p, m0, std::vector<double>(4, 0.05), kind, 1, &fine};
      const double exact = cost_derivative(ctx, m, dir);
      for (double s : {1e-5, 1e-6})
      {
        EffectiveModel plus = m, minus = m;
        for (int K = 0; K < 4; ++K)
        {
          plus[K] = plus[K] + s * dir[K];
          minus[K] = minus[K] - s * dir[K];
        }
        const double fd = (cost_functional(ctx, plus) - cost_functional(ctx, minus)) / (2 * s);
        INFO("dual " << dwr::to_string(kind) << " s " << s << " exact " << exact << " fd " << fd);
        CHECK(std::abs(exact - fd) <= 1e-5 * std::abs(fd));
      }
    }
  }

  TEST_CASE("production Jacobian diagonal is close to finite differences of the indicators")
  {
    const dwr::Problem p = small_problem();
    const EffectiveModel m = upscale::geometric_mean_model(p.coefficient, p.mesh);
    OptimizerConfig cfg;
    cfg.cache_patches = false;
    dwr::PatchCache cache(p, 1, false);
    const Evaluation ev = evaluate(p, m, cfg, &cache, nullptr, true);
    const double s = 1e-6;
    for (int K = 0; K < 4; ++K)
      for (int i = 0; i < 2; ++i)
      {
        const double jp = evaluate(p, perturbed(m, K, i, i, s), cfg, &cache, nullptr, false).err.eta[K];
        const double jm = evaluate(p, perturbed(m, K, i, i, -s), cfg, &cache, nullptr, false).err.eta[K];
        const double fd = (jp - jm) / (2 * s);
        const double jac = ev.jac.entry(K, parameter_index(K, i, i));
        INFO("K " << K << " i " << i << " jacobian " << jac << " fd " << fd);
        CHECK(std::abs(jac - fd) <= 0.05 * std::abs(fd));
      }
  }

  TEST_CASE("optimisation loop bookkeeping")
  {
    const dwr::Problem p = small_problem(0.25, 0.0625, 1.0 / 64);
    const EffectiveModel m0 = upscale::geometric_mean_model(p.coefficient, p.mesh);
    OptimizerConfig cfg;
    cfg.max_cycles = 0;
    const GaussNewtonState s0 = run_optimization(p, m0, cfg);
    CHECK(s0.history.size() == 1u);
    CHECK(s0.model.tensors == m0.tensors);

    cfg.max_cycles = 3;
    cfg.stop_fraction = 1e-9;
    int calls = 0;
    const GaussNewtonState s = run_optimization(p, m0, cfg, std::nullopt, [&](const CycleRecord &) { ++calls; });
    CHECK(s.history.size() == 4u);
    CHECK(calls == 4);
    for (std::size_t n = 0; n < s.history.size(); ++n)
    {
      CHECK(s.history[n].cycle == static_cast<int>(n));
      CHECK_FALSE(s.history[n].abs_error.has_value());
      CHECK(std::isfinite(s.history[n].cost));
    }
    for (std::size_t n = 1; n < s.history.size(); ++n)
      CHECK(s.history[n].cost <= s.history[n - 1].cost);
    CHECK(s.model.all_symmetric(0.0));
    CHECK(s.alpha > 0.0);
    CHECK(s.min_eigenvalues.size() == static_cast<std::size_t>(m0.size()));

    const GaussNewtonState again = run_optimization(p, m0, cfg);
    CHECK(history_csv(again.history) == history_csv(s.history));
  }

  TEST_CASE("large regularisation keeps the model in place")
  {
    const dwr::Problem p = small_problem(0.25, 0.0625, 1.0 / 64);
    const EffectiveModel m0 = upscale::geometric_mean_model(p.coefficient, p.mesh);
    OptimizerConfig cfg;
    cfg.alpha_scale = 1e6;
    cfg.max_cycles = 5;
    cfg.stop_fraction = 1e-12;
    const GaussNewtonState s = run_optimization(p, m0, cfg);
    double d2 = 0.0;
    for (int K = 0; K < m0.size(); ++K)
    {
      const Tensor2 d = s.model[K] - m0[K];
      d2 += contract(d, d);
    }
    CHECK(std::sqrt(d2) <= 1e-3 * m0.norm());
  }
}
