#pragma once

#include <modelopt/effective_model.hpp>
#include <modelopt/field.hpp>
#include <modelopt/mesh.hpp>
#include <modelopt/types.hpp>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <array>
#include <atomic>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <variant>
#include <vector>

namespace modelopt::fem
{
  using Vector = Eigen::VectorXd;
  /// Compressed row storage; row = test function, column = trial function.
  using Matrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;
  /// Element matrix, K[4 * a + b] = a(phi_b, phi_a).
  using Mat4 = std::array<double, 16>;

  using TensorFunction = std::function<Tensor2(Point)>;
  using VectorFunction = std::function<Vec2(Point)>;
  using ScalarFunction = std::function<double(Point)>;

  /**
   * Coefficients of the form (D grad u, grad v) + (b . grad u, v).
   *
   * Each element is split into square subcells of size micro_size. The
   * diffusion tensor is sampled once per subcell at its midpoint, the
   * advection field at the 2x2 Gauss points of the subcell, and all
   * polynomial factors are integrated exactly. micro_size = 0 means one
   * subcell per element.
   */
  struct FormCoefficients
  {
    TensorFunction diffusion;
    VectorFunction advection;
    double micro_size = 0.0;
  };

  /// Q1 reference integrals G^{pq}[4a+b] = int d_q phi_b d_p phi_a over the
  /// unit square; independent of the cell size in two dimensions.
  const std::array<Mat4, 4> &gradient_pair_matrices();

  Mat4 element_matrix(const mesh::Grid &g, int cell, const FormCoefficients &coeffs);

  /**
   * Q1 space on a structured grid. Constrained nodes carry Dirichlet data
   * (boundary_values); everything else is a free unknown.
   */
  struct FeSpace
  {
    mesh::Grid grid;
    mesh::Domain domain;
    std::vector<char> constrained;
    std::vector<double> boundary_values;
    /// Patch spaces see functionals only on their own region.
    bool is_patch = false;

    /// Homogeneous Dirichlet nodes on the closure of the given markers.
    static FeSpace on_domain(const mesh::Grid &grid, const mesh::Domain &domain,
                             const std::vector<std::string> &dirichlet_markers);
    /// Space on a sub-rectangle: additionally constrains every node of the
    /// grid boundary that is interior to the domain.
    static FeSpace on_patch(const mesh::Grid &grid, const mesh::Domain &domain,
                            const std::vector<std::string> &dirichlet_markers);

    int n_dofs() const { return grid.n_nodes(); }
    int n_constrained() const;
  };

  struct DiscreteField
  {
    mesh::Grid grid;
    Vector values;

    /// Q1 interpolant at @p x (lower-left tie-break on edges).
    double evaluate(Point x) const;
  };

  /// Values at the nodes of @p target of the Q1 function @p f. Exact when
  /// the target grid refines (a region of) the source grid.
  Vector interpolate(const DiscreteField &f, const mesh::Grid &target);

  /// RAII wrapper over an UMFPACK LU factorisation.
  class LuFactorization
  {
  public:
    explicit LuFactorization(const Matrix &a);
    ~LuFactorization();
    LuFactorization(const LuFactorization &) = delete;
    LuFactorization &operator=(const LuFactorization &) = delete;

    /// Solves A x = b, or A^T x = b when @p transpose. Safe to call
    /// concurrently.
    Vector solve(const Vector &b, bool transpose) const;

  private:
    std::vector<int> ap_, ai_;
    std::vector<double> ax_;
    void *numeric_ = nullptr;
    int n_ = 0;
  };

  /**
   * Square sparse operator with a factorisation computed on first solve and
   * cached; copies share the cache. Immutable after construction.
   */
  class SparseOperator
  {
  public:
    SparseOperator() = default;
    explicit SparseOperator(Matrix m);

    const Matrix &matrix() const { return *m_; }
    int rows() const { return static_cast<int>(m_->rows()); }
    bool symmetric() const { return symmetric_; }

    Vector solve(const Vector &rhs) const;
    Vector solve_transpose(const Vector &rhs) const;
    /// Number of factorisations performed for this operator (0 or 1).
    int factorizations() const { return cache_->count.load(); }

  private:
    const LuFactorization &factorization() const;

    struct Cache
    {
      std::once_flag once;
      std::unique_ptr<LuFactorization> lu;
      std::exception_ptr error;
      std::atomic<int> count{0};
    };

    std::shared_ptr<const Matrix> m_;
    bool symmetric_ = false;
    std::shared_ptr<Cache> cache_;
  };

  bool is_symmetric(const Matrix &m, double rel_tol);

  /// Raw operator of the form on the whole grid.
  SparseOperator assemble_operator(const mesh::Grid &g, const FormCoefficients &coeffs);
  /// Diffusion with the fine coefficient, sampled on subcells of size @p micro_size.
  SparseOperator assemble_diffusion(const FeSpace &space, const field::CoefficientField &coeff,
                                    double micro_size);
  /// Diffusion with a cellwise-constant model (one Gauss rule per element).
  SparseOperator assemble_diffusion(const FeSpace &space, const upscale::EffectiveModel &model);
  SparseOperator assemble_advection(const FeSpace &space, const field::AdvectionField &b,
                                    double micro_size);
  /// Advection with a per-sampling-cell constant vector.
  SparseOperator assemble_advection(const FeSpace &space, const mesh::Grid &sampling,
                                    const std::vector<Vec2> &b_delta);

  /// Symmetric elimination of the constrained rows and columns.
  SparseOperator apply_constraints(const SparseOperator &raw, const FeSpace &space);
  /// Right-hand side lifted by the boundary values of @p space.
  Vector constrained_rhs(const SparseOperator &raw, const FeSpace &space, Vector rhs);

  struct NeumannData
  {
    std::string marker;
    double flux = 0.0;

    bool operator==(const NeumannData &) const = default;
  };

  /// (f, phi) plus sum of flux * int_Gamma phi over the Neumann segments.
  Vector assemble_rhs(const FeSpace &space, const ScalarFunction &f,
                      const std::vector<NeumannData> &neumann);

  /// Solves a constrained system; result honours the boundary values.
  DiscreteField solve(const SparseOperator &constrained, const FeSpace &space, const Vector &rhs);

  struct DomainIntegral
  {
  };
  struct PointValue
  {
    Point x0;
  };
  struct BoundaryIntegral
  {
    std::string marker;
  };
  using Functional = std::variant<DomainIntegral, PointValue, BoundaryIntegral>;

  std::string describe(const Functional &j);

  /// Vector j_nu = <j, phi_nu>. On patch spaces only the part of j inside
  /// the patch is represented; otherwise a point outside the grid throws.
  Vector functional_vector(const FeSpace &space, const Functional &j);

  /// Solves A^T z = j with homogeneous data on the constrained nodes.
  DiscreteField solve_dual(const SparseOperator &constrained, const FeSpace &space,
                           const Functional &j);
  DiscreteField solve_dual(const SparseOperator &constrained, const FeSpace &space, Vector j);

  double apply_functional(const Functional &j, const FeSpace &space, const DiscreteField &u);

  // Element-loop evaluation of forms restricted to a set of cells.

  /// sum over @p cells of z^T K_e u.
  double form_value(const mesh::Grid &g, const std::vector<int> &cells,
                    const FormCoefficients &coeffs, const Vector &u, const Vector &z);
  /// v_nu = a(u, phi_nu) restricted to @p cells (or a(phi_nu, u) when @p transpose).
  Vector form_action(const mesh::Grid &g, const std::vector<int> &cells,
                     const FormCoefficients &coeffs, const Vector &u, bool transpose = false);

  double form_value(const mesh::Grid &g, const std::vector<int> &cells,
                    const std::vector<Mat4> &element_mats, const Vector &u, const Vector &z);

  /// L2 norm of a Q1 function on the grid (exact).
  double l2_norm(const mesh::Grid &g, const Vector &u);

  /// CSV columns x, y, value (17 significant digits).
  void write_field_csv(const DiscreteField &f, const std::filesystem::path &path);
  /// Legacy ASCII VTK structured-points file with one point scalar.
  void write_field_vtk(const DiscreteField &f, const std::filesystem::path &path,
                       const std::string &name);
} // namespace modelopt::fem
