#pragma once

#include <modelopt/effective_model.hpp>
#include <modelopt/field.hpp>
#include <modelopt/mesh.hpp>

#include <string>

namespace modelopt::upscale
{
  // All averages use the midpoints of the micro cells (size h) of each
  // sampling cell, which is also the sampling region Y_K.

  EffectiveModel arithmetic_mean_model(const field::CoefficientField &field,
                                       const mesh::MeshHierarchy &mesh);

  /// Geometric mean of the diagonal entries, arithmetic mean of the
  /// off-diagonal ones. Throws DomainError on a nonpositive diagonal sample.
  EffectiveModel geometric_mean_model(const field::CoefficientField &field,
                                      const mesh::MeshHierarchy &mesh);

  /// Homogenized tensor of sampling cell @p K from the periodic cell problems
  /// on K at resolution h.
  Tensor2 homogenized_model(const field::CoefficientField &field, const mesh::MeshHierarchy &mesh,
                            int K);
  EffectiveModel homogenized_model(const field::CoefficientField &field,
                                   const mesh::MeshHierarchy &mesh);

  enum class Upscaler
  {
    arithmetic,
    geometric,
    homogenized
  };

  Upscaler parse_upscaler(const std::string &name);
  std::string to_string(Upscaler u);
  EffectiveModel initial_model(Upscaler u, const field::CoefficientField &field,
                               const mesh::MeshHierarchy &mesh);
} // namespace modelopt::upscale
