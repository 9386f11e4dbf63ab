#pragma once

#include <modelopt/effective_model.hpp>
#include <modelopt/fem.hpp>
#include <modelopt/field.hpp>
#include <modelopt/mesh.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace modelopt::dwr
{
  using upscale::EffectiveModel;

  /**
   * Fine-scale problem: -div(A grad u) + b . grad u = f with Dirichlet data
   * on the given markers and Neumann fluxes elsewhere, together with the
   * goal functional.
   */
  struct Problem
  {
    mesh::MeshHierarchy mesh;
    field::CoefficientField coefficient;
    /// b^eps; zero when the problem is pure diffusion.
    field::AdvectionField advection;
    /// b^delta, one vector per sampling cell; empty when there is no advection.
    std::vector<Vec2> advection_delta;
    fem::ScalarFunction source;
    std::vector<fem::NeumannData> neumann;
    std::vector<std::string> dirichlet;
    fem::Functional functional;

    bool has_advection() const { return !advection.is_zero(); }

    fem::FormCoefficients fine_coefficients() const;
    fem::FormCoefficients effective_coefficients(const EffectiveModel &model) const;
    /// Effective minus fine coefficients: (Abar - A^eps, b^delta - b^eps).
    fem::FormCoefficients difference_coefficients(const EffectiveModel &model) const;
  };

  /// Builds b^delta from b^eps when the problem has advection.
  void attach_advection(Problem &p, field::AdvectionField b);

  /// Primal problem on the macro space V_H for one effective model.
  struct MacroSolution
  {
    fem::FeSpace space;
    fem::SparseOperator raw;
    fem::SparseOperator constrained;
    fem::Vector rhs;
    fem::DiscreteField U;
  };

  MacroSolution solve_primal(const Problem &p, const EffectiveModel &model);

  /// Z in V_H with a_delta(phi, Z) = j(phi); reuses the primal factorisation.
  fem::DiscreteField solve_effective_dual(const Problem &p, const MacroSolution &primal);

  /// Solutions on the global micro grid (resolution h).
  struct FineSolution
  {
    fem::FeSpace space;
    fem::SparseOperator raw;
    fem::SparseOperator constrained;
    fem::Vector rhs;
    std::optional<fem::DiscreteField> u;
    std::optional<fem::DiscreteField> z;
  };

  /// Throws ResourceError when the micro grid has more than @p dof_cap nodes.
  FineSolution solve_fine(const Problem &p, bool primal, bool dual, long dof_cap);

  enum class DualKind
  {
    full,
    effective,
    enhanced
  };

  std::string to_string(DualKind k);

  struct DualApproximation
  {
    DualKind kind = DualKind::enhanced;
    /// Patch depth of the local enhancement.
    int depth = 1;
    /// z^eps on the micro grid (full) or Z on the macro grid.
    fem::DiscreteField global;
  };

  /**
   * Fine patch operators for the local enhancement. They depend on the
   * fine coefficients only, so they can be kept across optimisation cycles
   * when memory allows. Slots are filled lazily; distinct K may be filled
   * concurrently.
   */
  class PatchCache
  {
  public:
    struct System
    {
      fem::FeSpace space;
      fem::SparseOperator raw;
      fem::SparseOperator constrained;
    };

    PatchCache(const Problem &p, int depth, bool keep);

    /// System of the patch of depth `depth` around K.
    std::shared_ptr<const System> get(int K);
    int depth() const { return depth_; }
    bool keeps() const { return keep_; }

  private:
    const Problem *p_;
    int depth_;
    bool keep_;
    std::vector<std::shared_ptr<const System>> slots_;
  };

  /// Correction z_K on the micro grid of the patch around K: zero on the
  /// patch boundary inside the domain and on Dirichlet boundaries, free on
  /// Neumann boundaries. @p z_eff lives on the macro grid. Without the
  /// functional the result is the linear response of z_K to @p z_eff.
  fem::DiscreteField local_enhancement(const Problem &p, const fem::DiscreteField &z_eff, int K,
                                       PatchCache &cache, bool include_functional = true);

  /// Representative z* of the dual on a micro grid @p work around K:
  /// z^eps restricted (full), Z interpolated (effective), or Z plus the
  /// correction of K extended by zero (enhanced).
  fem::Vector local_dual(const Problem &p, const DualApproximation &dual, int K,
                         const mesh::Grid &work, PatchCache *cache);

  /// Adds the nodal values of @p src to @p out at the nodes it shares with
  /// @p dst (equal spacing, aligned origins).
  void add_on_shared_nodes(const fem::DiscreteField &src, const mesh::Grid &dst, fem::Vector &out);

  /// Micro grid covering the sampling cells of @p patch.
  mesh::Grid patch_grid(const Problem &p, const mesh::Patch &patch);

  struct ErrorBreakdown
  {
    double theta_H = 0.0;
    double theta_delta = 0.0;
    std::vector<double> eta;
    double j_of_U = 0.0;
    std::optional<double> j_reference;
    std::optional<double> I_eff;
    double I_loc = 1.0;
  };

  /// theta_H = f(z) - a_delta(U, z) for the global part z of the dual.
  double macro_residual(const Problem &p, const EffectiveModel &model,
                        const MacroSolution &primal, const DualApproximation &dual,
                        const FineSolution *fine);

  /// eta_K = ((Abar - A^eps) grad U, grad z*)_K + ((b^delta - b^eps) . grad U, z*)_K.
  double indicator(const Problem &p, const EffectiveModel &model, int K, const mesh::Grid &work,
                   const fem::Vector &U_work, const fem::Vector &z_work);

  /**
   * Splits j(u^eps) - j(U) into theta_H + sum_K eta_K for the given dual
   * approximation. For the full dual theta_H = f(z) - a_delta(U, z) on the
   * micro grid; otherwise it is evaluated with the global part in V_H.
   */
  ErrorBreakdown error_identity(const Problem &p, const EffectiveModel &model,
                                const MacroSolution &primal, const DualApproximation &dual,
                                PatchCache *cache = nullptr,
                                const FineSolution *fine = nullptr);

  /// Fills I_eff = |theta_H + theta_delta| / |j_ref - j_U| (absent for zero error) and
  /// I_loc = sum |eta_K| / |sum eta_K|.
  void effectivity(ErrorBreakdown &err, std::optional<double> j_ref);

  /// CSV cell_i, cell_j, eta_K followed by one summary line.
  void write_breakdown_csv(const ErrorBreakdown &err, const mesh::Grid &sampling,
                           const std::filesystem::path &path);
} // namespace modelopt::dwr
