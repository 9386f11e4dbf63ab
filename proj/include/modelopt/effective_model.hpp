#pragma once

#include <modelopt/mesh.hpp>
#include <modelopt/types.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace modelopt::upscale
{
  /**
   * Effective coefficient model: one d x d tensor per sampling cell.
   * Ellipticity is deliberately not enforced; iterates of the optimizer may
   * become indefinite.
   */
  struct EffectiveModel
  {
    mesh::Grid sampling;
    std::vector<Tensor2> tensors;
    /// arithmetic | geometric | homogenized | constant | optimized(cycle n) | file
    std::string provenance;

    static EffectiveModel uniform(const mesh::Grid &sampling, const Tensor2 &t,
                                  std::string provenance = "constant");

    int size() const { return static_cast<int>(tensors.size()); }
    const Tensor2 &operator[](int K) const { return tensors[K]; }
    Tensor2 &operator[](int K) { return tensors[K]; }
    /// Tensor of the sampling cell containing @p x.
    const Tensor2 &at(Point x) const { return tensors[sampling.locate(x)]; }

    bool all_symmetric(double rel_tol = 1e-12) const;
    bool all_finite() const;
    /// Frobenius norm over all cells, sqrt(sum_K |A_K|^2).
    double norm() const;
  };

  /// CSV with columns cell_i, cell_j, a11, a12, a21, a22 (17 significant digits).
  void write_model_csv(const EffectiveModel &m, const std::filesystem::path &path);
  /// Reads a model written by write_model_csv onto the given sampling grid.
  EffectiveModel read_model_csv(const std::filesystem::path &path, const mesh::Grid &sampling);
} // namespace modelopt::upscale
