#pragma once

#include <modelopt/types.hpp>

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace modelopt::mesh
{
  /**
   * Uniform structured grid of square cells over a rectangle.
   *
   * Nodes are numbered row-major starting at the lower-left corner,
   * node(ix, iy) = iy * (nx + 1) + ix. Cells likewise, cell(cx, cy) =
   * cy * nx + cx. The four nodes of a cell are returned counter-clockwise
   * starting at its lower-left vertex.
   */
  struct Grid
  {
    Point origin;
    double cell_size = 1.0;
    int nx = 1;
    int ny = 1;

    /// Grid of cell size @p size exactly tiling @p r; throws ConfigError
    /// when the rectangle is not an integer multiple of @p size.
    static Grid covering(const Rect &r, double size);

    int n_nodes() const { return (nx + 1) * (ny + 1); }
    int n_cells() const { return nx * ny; }
    int node(int ix, int iy) const { return iy * (nx + 1) + ix; }
    int cell(int cx, int cy) const { return cy * nx + cx; }
    std::pair<int, int> node_coords(int n) const { return {n % (nx + 1), n / (nx + 1)}; }
    std::pair<int, int> cell_coords(int c) const { return {c % nx, c / nx}; }

    Point node_point(int n) const;
    Rect cell_rect(int c) const;
    Rect bbox() const;
    std::array<int, 4> cell_nodes(int c) const;

    /// Cell containing @p p; points on shared edges go to the cell with the
    /// smaller index (lower-left). Throws DomainError outside the grid.
    int locate(Point p) const;
    /// Whether @p p lies in the closed grid rectangle (relative slack 1e-12).
    bool contains(Point p) const;

    /// Cells of this grid that lie inside @p r (both grids assumed nested).
    std::vector<int> cells_in(const Rect &r) const;
    /// Index of the node of this grid at @p p, or -1 if @p p is not a node.
    int node_at(Point p) const;
  };

  /// Integer ratio big/small; throws ConfigError naming @p what when not integral.
  int exact_ratio(double big, double small, const std::string &what);

  enum class Side
  {
    left,
    right,
    bottom,
    top
  };

  /// Boundary markers of one side. Without a split the whole side carries
  /// @c lower. With a split at coordinate s (y for left/right, x for
  /// bottom/top) the part below s carries @c lower and the rest @c upper.
  struct SideMarkers
  {
    std::string lower = "boundary";
    std::string upper;
    std::optional<double> split;
  };

  struct Domain
  {
    Point origin;
    double width = 1.0;
    double height = 1.0;
    std::array<SideMarkers, 4> markers;

    static Domain rectangle(Point origin, double width, double height,
                            const std::string &marker = "boundary");
    /// The 1x2 rectangle with markers A (right), B (top), C/D (left, split at
    /// mid-height, D below) and E (bottom).
    static Domain advection_benchmark();

    Rect rect() const { return {origin, {origin.x + width, origin.y + height}}; }
    SideMarkers &side(Side s) { return markers[static_cast<int>(s)]; }
    const SideMarkers &side(Side s) const { return markers[static_cast<int>(s)]; }

    /// Throws ConfigError on nonpositive extent or an empty marker.
    void validate() const;
    /// Marker of a boundary point away from corners (edge midpoints).
    std::string marker_at(Point p) const;
    /// Whether the boundary point @p p lies in the closure of a segment
    /// carrying @p marker (a corner lies in the closure of both sides).
    bool in_marker_closure(Point p, const std::string &marker) const;
    bool on_boundary(Point p) const;
    std::vector<std::string> marker_names() const;
  };

  struct SamplingRegion
  {
    int cell_id = 0;
    Rect bbox;
    /// Rescaled unit cell centred at the midpoint of the region; equal to bbox.
    Rect y_cell;
  };

  struct Patch
  {
    int center = 0;
    int depth = 0;
    /// Member sampling cells in increasing (row-major) order.
    std::vector<int> members;
    Rect bbox;

    bool contains(int cell) const;
  };

  /**
   * Nested mesh hierarchy: sampling mesh (size delta), macro finite-element
   * mesh (size H) refining it, and the micro resolution h. Micro grids are
   * only described here; patch grids are created on demand.
   * Immutable after construction.
   */
  class MeshHierarchy
  {
  public:
    MeshHierarchy(Domain domain, double delta, double H, double h);

    const Domain &domain() const { return domain_; }
    double delta() const { return delta_; }
    double H() const { return H_; }
    double h() const { return h_; }

    const Grid &sampling() const { return sampling_; }
    const Grid &macro() const { return macro_; }
    /// Global micro grid (geometry only).
    const Grid &micro() const { return micro_; }

    int n_sampling_cells() const { return sampling_.n_cells(); }
    int n_macro_cells() const { return macro_.n_cells(); }
    int macro_per_sampling() const { return macro_per_sampling_; }
    int micro_per_macro() const { return micro_per_macro_; }

    int sampling_parent(int macro_cell) const { return macro_parent_[macro_cell]; }
    const std::vector<int> &macro_cells_of(int K) const { return sampling_children_[K]; }
    SamplingRegion sampling_region(int K) const;
    /// Micro grid of resolution h covering @p r (r must be a union of micro cells).
    Grid micro_grid(const Rect &r) const { return Grid::covering(r, h_); }

  private:
    Domain domain_;
    double delta_;
    double H_;
    double h_;
    Grid sampling_;
    Grid macro_;
    Grid micro_;
    int macro_per_sampling_;
    int micro_per_macro_;
    std::vector<int> macro_parent_;
    std::vector<std::vector<int>> sampling_children_;
  };

  /// Validates the divisibility chain h | H | delta | extent.
  MeshHierarchy build_hierarchy(const Domain &domain, double delta, double H, double h);

  /// Sampling cells within @p depth rings of @p K (depth 0: {K}; depth 1:
  /// all cells whose closure touches K).
  Patch patch_of(const MeshHierarchy &mesh, int K, int depth);

  /// (sampling cell, macro cell) containing @p x, lower-left tie-break.
  std::pair<int, int> locate_cell(const MeshHierarchy &mesh, Point x);
} // namespace modelopt::mesh
