#include <modelopt/fem.hpp>

#include <suitesparse/umfpack.h>

#include <cmath>
#include <sstream>

namespace modelopt::fem
{
  // The row-major matrix A is handed to UMFPACK as the column-major matrix
  // M = A^T; solving with A therefore uses UMFPACK_At and vice versa.

  LuFactorization::LuFactorization(const Matrix &a)
  {
    if (a.rows() != a.cols())
      throw NumericalError("factorisation requires a square matrix");
    n_ = static_cast<int>(a.rows());
    Matrix m = a;
    m.makeCompressed();
    ap_.assign(m.outerIndexPtr(), m.outerIndexPtr() + n_ + 1);
    ai_.assign(m.innerIndexPtr(), m.innerIndexPtr() + m.nonZeros());
    ax_.assign(m.valuePtr(), m.valuePtr() + m.nonZeros());

    double control[UMFPACK_CONTROL];
    double info[UMFPACK_INFO];
    umfpack_di_defaults(control);
    void *symbolic = nullptr;
    int status =
      umfpack_di_symbolic(n_, n_, ap_.data(), ai_.data(), ax_.data(), &symbolic, control, info);
    if (status != UMFPACK_OK)
      throw NumericalError("sparse LU: symbolic analysis failed (status " +
                           std::to_string(status) + ")");
    status = umfpack_di_numeric(ap_.data(), ai_.data(), ax_.data(), symbolic, &numeric_, control,
                                info);
    umfpack_di_free_symbolic(&symbolic);
    if (status == UMFPACK_WARNING_singular_matrix)
    {
      // Locate the first zero pivot: column Q[k] of M is row Q[k] of A.
      int lnz = 0, unz = 0, nr = 0, nc = 0, nz_udiag = 0;
      umfpack_di_get_lunz(&lnz, &unz, &nr, &nc, &nz_udiag, numeric_);
      std::vector<int> q(n_);
      std::vector<double> udiag(n_);
      umfpack_di_get_numeric(nullptr, nullptr, nullptr, nullptr, nullptr, nullptr, nullptr,
                             q.data(), udiag.data(), nullptr, nullptr, numeric_);
      int where = -1;
      for (int k = 0; k < n_; ++k)
        if (udiag[k] == 0.0)
        {
          where = q[k];
          break;
        }
      umfpack_di_free_numeric(&numeric_);
      throw NumericalError("singular matrix: zero pivot at dof " + std::to_string(where));
    }
    if (status != UMFPACK_OK)
    {
      if (numeric_)
        umfpack_di_free_numeric(&numeric_);
      throw NumericalError("sparse LU: numeric factorisation failed (status " +
                           std::to_string(status) + ")");
    }
  }

  LuFactorization::~LuFactorization()
  {
    if (numeric_)
      umfpack_di_free_numeric(&numeric_);
  }

  Vector LuFactorization::solve(const Vector &b, bool transpose) const
  {
    if (b.size() != n_)
      throw NumericalError("dimension mismatch in solve: rhs has " + std::to_string(b.size()) +
                           " entries, operator " + std::to_string(n_));
    Vector x(n_);
    double control[UMFPACK_CONTROL];
    double info[UMFPACK_INFO];
    umfpack_di_defaults(control);
    const int sys = transpose ? UMFPACK_A : UMFPACK_At;
    const int status = umfpack_di_solve(sys, ap_.data(), ai_.data(), ax_.data(), x.data(),
                                        b.data(), numeric_, control, info);
    if (status != UMFPACK_OK)
      throw NumericalError("sparse LU: solve failed (status " + std::to_string(status) + ")");
    return x;
  }

  bool is_symmetric(const Matrix &m, double rel_tol)
  {
    if (m.rows() != m.cols())
      return false;
    const double scale = m.coeffs().size() ? m.coeffs().cwiseAbs().maxCoeff() : 0.0;
    const Matrix t = m.transpose();
    const Matrix d = m - t;
    return d.coeffs().size() == 0 || d.coeffs().cwiseAbs().maxCoeff() <= rel_tol * scale;
  }

  SparseOperator::SparseOperator(Matrix m)
    : m_(std::make_shared<const Matrix>(std::move(m))), cache_(std::make_shared<Cache>())
  {
    if (m_->rows() != m_->cols())
      throw NumericalError("operator must be square");
    symmetric_ = is_symmetric(*m_, 1e-12);
  }

  const LuFactorization &SparseOperator::factorization() const
  {
    std::call_once(cache_->once, [this] {
      try
      {
        cache_->lu = std::make_unique<LuFactorization>(*m_);
        cache_->count.fetch_add(1);
      }
      catch (...)
      {
        cache_->error = std::current_exception();
      }
    });
    if (cache_->error)
      std::rethrow_exception(cache_->error);
    return *cache_->lu;
  }

  Vector SparseOperator::solve(const Vector &rhs) const { return factorization().solve(rhs, false); }

  Vector SparseOperator::solve_transpose(const Vector &rhs) const
  {
    return factorization().solve(rhs, !symmetric_);
  }
} // namespace modelopt::fem
