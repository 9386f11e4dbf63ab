#pragma once

#include <modelopt/dwr.hpp>

#include <Eigen/SparseCore>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace modelopt::optim
{
  using dwr::EffectiveModel;

  enum class JacobianMode
  {
    /// Only Q = K.
    diagonal,
    /// Q in the depth-1 patch around K.
    patch
  };

  struct OptimizerConfig
  {
    /// Uniform alpha_K; absent means 0.1 (mean_K |eta_K|)^2 / mean_K |Abar0_K|^2
    /// evaluated for the initial model.
    std::optional<double> alpha;
    /// Multiplies alpha (explicit or automatic).
    double alpha_scale = 1.0;
    double lambda_factor = 1.0;
    JacobianMode jacobian_mode = JacobianMode::patch;
    dwr::DualKind dual_mode = dwr::DualKind::enhanced;
    int enhancement_depth = 1;
    int max_cycles = 15;
    double stop_fraction = 0.05;
    /// Abort when |theta| exceeds this multiple of its initial value.
    double divergence_factor = 10.0;
    /// Keep the factorised patch operators across cycles.
    bool cache_patches = true;

    void validate() const;
    bool operator==(const OptimizerConfig &) const = default;
  };

  JacobianMode parse_jacobian_mode(const std::string &s);
  std::string to_string(JacobianMode m);
  dwr::DualKind parse_dual_mode(const std::string &s);

  /// G = ((eta_K)_K, (sqrt(alpha_K) (Abar_Kij - Abar0_Kij))_{Kij}).
  struct ResidualVector
  {
    std::vector<double> eta;
    /// Cell-major, then i, then j.
    std::vector<double> g;

    Eigen::VectorXd flat() const;
    double squared_norm() const;
  };

  ResidualVector assemble_residual(const std::vector<double> &eta, const EffectiveModel &model,
                                   const EffectiveModel &initial,
                                   const std::vector<double> &alpha);

  inline int parameter_index(int K, int i, int j) { return 4 * K + 2 * i + j; }

  /**
   * Approximate Jacobian. Column (K, i, j) holds D_Kij eta_Q for the cells Q
   * of the Jacobian patch of K; the regularisation block is diagonal with
   * entries sqrt(alpha_K).
   */
  struct BlockJacobian
  {
    int n_cells = 0;
    std::vector<std::vector<std::pair<int, double>>> columns;
    std::vector<double> sqrt_alpha;

    double entry(int Q, int column) const;
    /// The eta rows as a sparse |T| x 4|T| matrix.
    Eigen::SparseMatrix<double> eta_block() const;
    /// Largest number of rows any column touches.
    int band() const;
  };

  /// D_Kij U in V_H: A_H w = -int_K d_j U d_i phi.
  fem::DiscreteField response_U(const dwr::Problem &p, const dwr::MacroSolution &primal, int K,
                                int i, int j);

  /// delta_QK int_Q d_j U d_i z* + e_Q(D_Kij U, z*) on the micro grid @p work.
  double jacobian_entry(const dwr::Problem &p, const EffectiveModel &model,
                        const mesh::Grid &work, const fem::Vector &U_work,
                        const fem::Vector &z_work, const fem::Vector &resp_work, int K, int i,
                        int j, int Q);

  struct Step
  {
    /// Raw solution of the damped normal equations.
    Eigen::VectorXd raw;
    /// Per-cell symmetrised update.
    std::vector<Tensor2> delta;
    double lambda = 0.0;
    double norm = 0.0;
  };

  /// Solves (J^T J + lambda I) d = -J^T G with lambda = lambda_factor * mean |diag(J^T J)|.
  Step lm_step(const ResidualVector &r, const BlockJacobian &jac, double lambda_factor);

  struct CycleRecord
  {
    int cycle = 0;
    std::optional<double> l2_error;
    double j_of_U = 0.0;
    std::optional<double> abs_error;
    std::optional<double> rel_error_pct;
    double theta_tilde = 0.0;
    std::optional<double> I_eff;
    double I_loc = 1.0;
    std::optional<double> lambda;
    std::optional<double> step_norm;
    /// Not exported: signed estimator, macro residual and cost |G|^2.
    double theta_signed = 0.0;
    double theta_H = 0.0;
    double cost = 0.0;
  };

  struct GaussNewtonState
  {
    EffectiveModel model;
    EffectiveModel initial;
    int cycle = 0;
    double initial_estimator = 0.0;
    double alpha = 0.0;
    bool converged = false;
    std::vector<CycleRecord> history;
    dwr::ErrorBreakdown last;
    /// Smallest eigenvalue of each tensor of the final model.
    std::vector<double> min_eigenvalues;
  };

  /// Divergence guard failure; carries the state at abort.
  class DivergenceError : public NumericalError
  {
  public:
    DivergenceError(const std::string &what, GaussNewtonState s)
      : NumericalError(what), state(std::move(s))
    {
    }
    GaussNewtonState state;
  };

  /// Fine system for the full dual; j_ref (and fine->u) fill the error
  /// columns when present.
  struct Oracle
  {
    const dwr::FineSolution *fine = nullptr;
    std::optional<double> j_ref;
  };

  /// Result of one evaluation of estimator and Jacobian for a model.
  struct Evaluation
  {
    dwr::MacroSolution primal;
    dwr::DualApproximation dual;
    dwr::ErrorBreakdown err;
    BlockJacobian jac;
  };

  Evaluation evaluate(const dwr::Problem &p, const EffectiveModel &model,
                      const OptimizerConfig &cfg, dwr::PatchCache *cache,
                      const dwr::FineSolution *fine, bool with_jacobian);

  using CycleCallback = std::function<void(const CycleRecord &)>;

  GaussNewtonState run_optimization(const dwr::Problem &p, const EffectiveModel &initial,
                                    const OptimizerConfig &cfg,
                                    std::optional<Oracle> oracle = std::nullopt,
                                    const CycleCallback &on_cycle = {});

  // Test-scale cost functional and its complete Gateaux derivative,
  // including the response of U and of the dual approximation.

  struct CostContext
  {
    const dwr::Problem *problem = nullptr;
    EffectiveModel initial;
    std::vector<double> alpha;
    dwr::DualKind dual = dwr::DualKind::full;
    int depth = 1;
    const dwr::FineSolution *fine = nullptr;
  };

  double cost_functional(const CostContext &c, const EffectiveModel &model);
  double cost_derivative(const CostContext &c, const EffectiveModel &model,
                         const std::vector<Tensor2> &direction);

  /// History CSV with the columns of CycleRecord (optional fields empty).
  void write_history_csv(const std::vector<CycleRecord> &history,
                         const std::filesystem::path &path);
  std::string history_csv(const std::vector<CycleRecord> &history);
} // namespace modelopt::optim
