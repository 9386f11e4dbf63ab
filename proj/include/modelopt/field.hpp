#pragma once

#include <modelopt/mesh.hpp>
#include <modelopt/types.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace modelopt::field
{
  /**
   * Scalar raster over a rectangle. Pixel (ix, iy) covers
   * [x0 + ix*px, x0 + (ix+1)*px] x [y0 + iy*py, ...]; row iy = 0 is the
   * bottom row. Values are either 8-bit integers stored as doubles
   * (eight_bit) or arbitrary floats.
   */
  struct RasterField
  {
    int nx = 0;
    int ny = 0;
    std::vector<double> values;
    bool eight_bit = false;
    Rect extent{{0.0, 0.0}, {1.0, 1.0}};

    double at(int ix, int iy) const { return values[static_cast<std::size_t>(iy) * nx + ix]; }
    double pixel_width() const { return extent.width() / nx; }
    double pixel_height() const { return extent.height() / ny; }

    /// Nearest-pixel (piecewise constant) lookup; throws DomainError outside
    /// the extent. Pixel edges go to the lower-left pixel.
    double lookup(Point p) const;
    /// Bilinear interpolation through pixel centres, constant extrapolation
    /// in the half-pixel margin.
    double bilinear(Point p) const;
    std::pair<int, int> pixel_of(Point p) const;

    bool operator==(const RasterField &) const = default;
  };

  /// Standard-normal white noise, one sample per pixel, from the given seed.
  std::vector<double> white_noise(int nx, int ny, std::uint64_t seed);

  /// White noise convolved with a periodic Gaussian kernel of standard
  /// deviation @p corr_len (domain units), truncated at four deviations
  /// and normalised to unit sum. Values before quantisation.
  std::vector<double> correlated_noise(int nx, int ny, double corr_len, std::uint64_t seed,
                                       const Rect &extent = {{0.0, 0.0}, {1.0, 1.0}});

  /// Correlated noise rescaled to span 0...255 and rounded to integers.
  RasterField gen_gaussian_raster(int nx, int ny, double corr_len, std::uint64_t seed,
                                  const Rect &extent = {{0.0, 0.0}, {1.0, 1.0}});

  // Raster I/O. PGM is binary P5 with maxval 255 (first image row is the
  // top of the raster); CSV has one raster line per row, top line first,
  // 17 significant digits.
  void write_pgm(const RasterField &r, const std::filesystem::path &path);
  RasterField read_pgm(const std::filesystem::path &path,
                       const Rect &extent = {{0.0, 0.0}, {1.0, 1.0}});
  void write_csv(const RasterField &r, const std::filesystem::path &path);
  RasterField read_csv(const std::filesystem::path &path,
                       const Rect &extent = {{0.0, 0.0}, {1.0, 1.0}});

  struct Constant
  {
    Tensor2 value;
  };

  /// Layers of width layer_width stacked along axis @c direction (0: the
  /// coefficient varies with x). Layer 0 starts at origin and carries a.
  struct Laminate
  {
    int direction = 0;
    double a = 1.0;
    double b = 1.0;
    double layer_width = 1.0;
    Point origin;
  };

  struct Checkerboard
  {
    double a = 1.0;
    double b = 1.0;
    double tile = 1.0;
    Point origin;
  };

  /// A(x) = gamma * exp(10 g(x) / 255) * Id with g looked up nearest-pixel.
  struct LognormalRaster
  {
    std::shared_ptr<const RasterField> raster;
    double gamma = 1.0;
  };

  /// Fine-scale diffusion tensor. Immutable; safe for concurrent evaluation.
  class CoefficientField
  {
  public:
    using Variant = std::variant<Constant, Laminate, Checkerboard, LognormalRaster>;

    CoefficientField() : v_(Constant{Tensor2::identity()}) {}
    explicit CoefficientField(Variant v) : v_(std::move(v)) {}

    static CoefficientField constant(const Tensor2 &t) { return CoefficientField(Constant{t}); }
    static CoefficientField laminate(int direction, double a, double b, double width,
                                     Point origin = {});
    static CoefficientField checkerboard(double a, double b, double tile, Point origin = {});
    static CoefficientField lognormal(RasterField raster, double gamma);

    Tensor2 evaluate(Point x) const;
    const Variant &variant() const { return v_; }
    std::string describe() const;

  private:
    Variant v_;
  };

  inline Tensor2 eval_coefficient(const CoefficientField &f, Point x) { return f.evaluate(x); }

  /**
   * Advection field b = (d psi/dy, -d psi/dx) of a stream function psi that
   * is continuous and bilinear on each cell of a node grid. Such a field is
   * affine per cell, has continuous normal components across cell edges and
   * is therefore exactly divergence free. The zero field has no grid.
   */
  class AdvectionField
  {
  public:
    AdvectionField() = default;
    AdvectionField(mesh::Grid nodes, std::vector<double> psi);

    bool is_zero() const { return psi_.empty(); }
    Vec2 evaluate(Point x) const;
    /// Exact maximum of |b| (attained at cell corners).
    double max_speed() const;
    AdvectionField scaled(double s) const;
    const mesh::Grid &nodes() const { return nodes_; }
    const std::vector<double> &stream_values() const { return psi_; }

  private:
    Vec2 evaluate_in_cell(int c, Point x) const;

    mesh::Grid nodes_;
    std::vector<double> psi_;
  };

  /**
   * Divergence-free advection from a stream-function raster. The raster is
   * centred (mean removed), interpolated bilinearly to the nodes of a grid
   * with spacing @p node_size (default: the raster's pixel size), multiplied
   * by a C1 cutoff that vanishes within one node spacing of the boundary and
   * rises to one over @p taper_width, and scaled by @p scale.
   */
  AdvectionField stream_advection(const RasterField &psi, double scale, double taper_width,
                                  std::optional<double> node_size = std::nullopt);

  /// Per-sampling-cell average of b via 2x2 Gauss rules on the micro cells.
  std::vector<Vec2> average_advection(const AdvectionField &b, const mesh::MeshHierarchy &mesh);
} // namespace modelopt::field
