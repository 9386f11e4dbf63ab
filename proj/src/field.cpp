#include <modelopt/field.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace modelopt::field
{
  namespace
  {
    int pixel_index(double t, int n)
    {
      const double r = std::round(t);
      if (std::abs(t - r) <= 1e-12 * std::max(1.0, std::abs(t)))
        t = r;
      return std::clamp(static_cast<int>(std::ceil(t)) - 1, 0, n - 1);
    }

    std::vector<double> gaussian_kernel(double sigma_px)
    {
      if (sigma_px < 1e-6)
        return {1.0};
      const int radius = static_cast<int>(std::ceil(4.0 * sigma_px));
      std::vector<double> w(2 * radius + 1);
      double sum = 0.0;
      for (int k = -radius; k <= radius; ++k)
      {
        w[k + radius] = std::exp(-0.5 * (k * k) / (sigma_px * sigma_px));
        sum += w[k + radius];
      }
      for (auto &v : w)
        v /= sum;
      return w;
    }

    int wrap(int i, int n) { return ((i % n) + n) % n; }

    double smoothstep(double t)
    {
      t = std::clamp(t, 0.0, 1.0);
      return t * t * (3.0 - 2.0 * t);
    }
  } // namespace

  std::pair<int, int> RasterField::pixel_of(Point p) const
  {
    const double tol = 1e-12 * std::max(extent.width(), extent.height());
    if (!extent.contains(p, tol))
    {
      std::ostringstream os;
      os << "point (" << p.x << ", " << p.y << ") outside raster extent";
      throw DomainError(os.str());
    }
    return {pixel_index((p.x - extent.lo.x) / pixel_width(), nx),
            pixel_index((p.y - extent.lo.y) / pixel_height(), ny)};
  }

  double RasterField::lookup(Point p) const
  {
    const auto [ix, iy] = pixel_of(p);
    return at(ix, iy);
  }

  double RasterField::bilinear(Point p) const
  {
    pixel_of(p); // bounds check
    const double tx = std::clamp((p.x - extent.lo.x) / pixel_width() - 0.5, 0.0, nx - 1.0);
    const double ty = std::clamp((p.y - extent.lo.y) / pixel_height() - 0.5, 0.0, ny - 1.0);
    const int ix = std::min(static_cast<int>(tx), std::max(nx - 2, 0));
    const int iy = std::min(static_cast<int>(ty), std::max(ny - 2, 0));
    const int jx = std::min(ix + 1, nx - 1), jy = std::min(iy + 1, ny - 1);
    const double fx = tx - ix, fy = ty - iy;
    return (1 - fx) * (1 - fy) * at(ix, iy) + fx * (1 - fy) * at(jx, iy) +
           (1 - fx) * fy * at(ix, jy) + fx * fy * at(jx, jy);
  }

  std::vector<double> white_noise(int nx, int ny, std::uint64_t seed)
  {
    if (nx < 1 || ny < 1)
      throw ConfigError("raster resolution must be at least 1x1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(nx) * ny);
    for (auto &x : v)
      x = normal(rng);
    return v;
  }

  std::vector<double> correlated_noise(int nx, int ny, double corr_len, std::uint64_t seed,
                                       const Rect &extent)
  {
    if (!(corr_len > 0.0))
      throw ConfigError("correlation length must be positive");
    if (!(extent.width() > 0.0) || !(extent.height() > 0.0))
      throw ConfigError("raster extent must be nonempty");
    std::vector<double> v = white_noise(nx, ny, seed);
    const auto kx = gaussian_kernel(corr_len / (extent.width() / nx));
    const auto ky = gaussian_kernel(corr_len / (extent.height() / ny));
    const int rx = static_cast<int>(kx.size() / 2), ry = static_cast<int>(ky.size() / 2);

    std::vector<double> tmp(v.size(), 0.0);
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix)
      {
        double s = 0.0;
        for (int k = -rx; k <= rx; ++k)
          s += kx[k + rx] * v[static_cast<std::size_t>(iy) * nx + wrap(ix + k, nx)];
        tmp[static_cast<std::size_t>(iy) * nx + ix] = s;
      }
    for (int iy = 0; iy < ny; ++iy)
      for (int ix = 0; ix < nx; ++ix)
      {
        double s = 0.0;
        for (int k = -ry; k <= ry; ++k)
          s += ky[k + ry] * tmp[static_cast<std::size_t>(wrap(iy + k, ny)) * nx + ix];
        v[static_cast<std::size_t>(iy) * nx + ix] = s;
      }
    return v;
  }

  RasterField gen_gaussian_raster(int nx, int ny, double corr_len, std::uint64_t seed,
                                  const Rect &extent)
  {
    RasterField r;
    r.nx = nx;
    r.ny = ny;
    r.extent = extent;
    r.eight_bit = true;
    r.values = correlated_noise(nx, ny, corr_len, seed, extent);
    const auto [lo, hi] = std::minmax_element(r.values.begin(), r.values.end());
    const double vmin = *lo, span = *hi - *lo;
    for (auto &x : r.values)
      x = span > 0.0 ? std::round(255.0 * (x - vmin) / span) : 0.0;
    return r;
  }

  CoefficientField CoefficientField::laminate(int direction, double a, double b, double width,
                                              Point origin)
  {
    if (direction != 0 && direction != 1)
      throw ConfigError("laminate direction must be 0 (x) or 1 (y)");
    if (!(width > 0.0))
      throw ConfigError("laminate layer width must be positive");
    return CoefficientField(Laminate{direction, a, b, width, origin});
  }

  CoefficientField CoefficientField::checkerboard(double a, double b, double tile, Point origin)
  {
    if (!(tile > 0.0))
      throw ConfigError("checkerboard tile must be positive");
    return CoefficientField(Checkerboard{a, b, tile, origin});
  }

  CoefficientField CoefficientField::lognormal(RasterField raster, double gamma)
  {
    if (!(gamma > 0.0))
      throw ConfigError("lognormal gamma must be positive");
    return CoefficientField(
      LognormalRaster{std::make_shared<const RasterField>(std::move(raster)), gamma});
  }

  Tensor2 CoefficientField::evaluate(Point x) const
  {
    return std::visit(
      [&](const auto &f) -> Tensor2 {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, Constant>)
          return f.value;
        else if constexpr (std::is_same_v<T, Laminate>)
        {
          const double t = ((f.direction == 0 ? x.x - f.origin.x : x.y - f.origin.y)) / f.layer_width;
          const long layer = static_cast<long>(std::floor(t));
          return Tensor2::identity(layer % 2 == 0 ? f.a : f.b);
        }
        else if constexpr (std::is_same_v<T, Checkerboard>)
        {
          const long i = static_cast<long>(std::floor((x.x - f.origin.x) / f.tile));
          const long j = static_cast<long>(std::floor((x.y - f.origin.y) / f.tile));
          return Tensor2::identity(((i + j) % 2 == 0) ? f.a : f.b);
        }
        else
          return Tensor2::identity(f.gamma * std::exp(10.0 * f.raster->lookup(x) / 255.0));
      },
      v_);
  }

  std::string CoefficientField::describe() const
  {
    return std::visit(
      [](const auto &f) -> std::string {
        using T = std::decay_t<decltype(f)>;
        std::ostringstream os;
        if constexpr (std::is_same_v<T, Constant>)
          os << "constant(" << f.value(0, 0) << ", " << f.value(0, 1) << ", " << f.value(1, 0)
             << ", " << f.value(1, 1) << ")";
        else if constexpr (std::is_same_v<T, Laminate>)
          os << "laminate(dir=" << f.direction << ", a=" << f.a << ", b=" << f.b
             << ", width=" << f.layer_width << ")";
        else if constexpr (std::is_same_v<T, Checkerboard>)
          os << "checkerboard(a=" << f.a << ", b=" << f.b << ", tile=" << f.tile << ")";
        else
          os << "lognormal(" << f.raster->nx << "x" << f.raster->ny << ", gamma=" << f.gamma
             << ")";
        return os.str();
      },
      v_);
  }

  AdvectionField::AdvectionField(mesh::Grid nodes, std::vector<double> psi)
    : nodes_(nodes), psi_(std::move(psi))
  {
    if (static_cast<int>(psi_.size()) != nodes_.n_nodes())
      throw ConfigError("stream function size does not match its node grid");
  }

  Vec2 AdvectionField::evaluate_in_cell(int c, Point x) const
  {
    const auto n = nodes_.cell_nodes(c);
    const Rect r = nodes_.cell_rect(c);
    const double s = nodes_.cell_size;
    const double xi = (x.x - r.lo.x) / s, eta = (x.y - r.lo.y) / s;
    const double p0 = psi_[n[0]], p1 = psi_[n[1]], p2 = psi_[n[2]], p3 = psi_[n[3]];
    const double dpsi_dx = ((p1 - p0) * (1.0 - eta) + (p2 - p3) * eta) / s;
    const double dpsi_dy = ((p3 - p0) * (1.0 - xi) + (p2 - p1) * xi) / s;
    return {dpsi_dy, -dpsi_dx};
  }

  Vec2 AdvectionField::evaluate(Point x) const
  {
    if (is_zero())
      return {};
    return evaluate_in_cell(nodes_.locate(x), x);
  }

  double AdvectionField::max_speed() const
  {
    double m = 0.0;
    for (int c = 0; c < nodes_.n_cells() && !is_zero(); ++c)
    {
      const Rect r = nodes_.cell_rect(c);
      for (Point p : {r.lo, Point{r.hi.x, r.lo.y}, r.hi, Point{r.lo.x, r.hi.y}})
        m = std::max(m, norm(evaluate_in_cell(c, p)));
    }
    return m;
  }

  AdvectionField AdvectionField::scaled(double s) const
  {
    AdvectionField out = *this;
    for (auto &v : out.psi_)
      v *= s;
    return out;
  }

  AdvectionField stream_advection(const RasterField &psi, double scale, double taper_width,
                                  std::optional<double> node_size)
  {
    const Rect ext = psi.extent;
    const double spacing = node_size.value_or(psi.pixel_width());
    const mesh::Grid nodes = mesh::Grid::covering(ext, spacing);
    const double half_min = 0.5 * std::min(ext.width(), ext.height());
    if (!(taper_width > spacing) || !(taper_width < half_min))
      throw ConfigError("degenerate taper: width must exceed the node spacing and stay below "
                        "half the smallest extent");

    double mean = 0.0;
    for (double v : psi.values)
      mean += v;
    mean /= static_cast<double>(psi.values.size());

    auto cutoff = [&](double d) { return smoothstep((d - spacing) / (taper_width - spacing)); };
    std::vector<double> values(nodes.n_nodes());
    for (int n = 0; n < nodes.n_nodes(); ++n)
    {
      const Point p = nodes.node_point(n);
      const double dx = std::min(p.x - ext.lo.x, ext.hi.x - p.x);
      const double dy = std::min(p.y - ext.lo.y, ext.hi.y - p.y);
      const double chi = cutoff(dx) * cutoff(dy);
      values[n] = chi == 0.0 ? 0.0 : scale * chi * (psi.bilinear(p) - mean);
    }
    return AdvectionField(nodes, std::move(values));
  }

  std::vector<Vec2> average_advection(const AdvectionField &b, const mesh::MeshHierarchy &mesh)
  {
    static constexpr double g[2] = {0.5 - 0.5 / 1.7320508075688772, 0.5 + 0.5 / 1.7320508075688772};
    std::vector<Vec2> out(mesh.n_sampling_cells());
    if (b.is_zero())
      return out;
    for (int K = 0; K < mesh.n_sampling_cells(); ++K)
    {
      const Rect r = mesh.sampling().cell_rect(K);
      const mesh::Grid micro = mesh.micro_grid(r);
      Vec2 sum;
      for (int c = 0; c < micro.n_cells(); ++c)
      {
        const Rect cr = micro.cell_rect(c);
        for (double gy : g)
          for (double gx : g)
            sum = sum + b.evaluate({cr.lo.x + gx * micro.cell_size, cr.lo.y + gy * micro.cell_size});
      }
      out[K] = (1.0 / (4.0 * micro.n_cells())) * sum;
    }
    return out;
  }
} // namespace modelopt::field
