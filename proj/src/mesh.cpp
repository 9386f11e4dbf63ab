#include <modelopt/mesh.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace modelopt::mesh
{
  namespace
  {
    // Relative slack for geometric comparisons on grid coordinates.
    constexpr double geometric_tol = 1e-12;

    std::string format_length(double v)
    {
      std::ostringstream os;
      os.precision(12);
      os << v;
      return os.str();
    }

    int cell_index_along(double t, int n)
    {
      // t is the coordinate in units of cells; edges go to the lower cell.
      const double r = std::round(t);
      if (std::abs(t - r) <= geometric_tol * std::max(1.0, std::abs(t)))
        t = r;
      int c = static_cast<int>(std::ceil(t)) - 1;
      return std::clamp(c, 0, n - 1);
    }
  } // namespace

  int exact_ratio(double big, double small, const std::string &what)
  {
    if (!(small > 0.0) || !(big > 0.0) || !std::isfinite(big) || !std::isfinite(small))
      throw ConfigError(what + ": lengths must be positive and finite");
    const double q = big / small;
    const double r = std::round(q);
    if (r < 1.0 || std::abs(q - r) > 1e-9 * r)
      throw ConfigError(what + ": " + format_length(small) + " does not divide " +
                        format_length(big));
    return static_cast<int>(r);
  }

  Grid Grid::covering(const Rect &r, double size)
  {
    Grid g;
    g.origin = r.lo;
    g.cell_size = size;
    g.nx = exact_ratio(r.width(), size, "grid width");
    g.ny = exact_ratio(r.height(), size, "grid height");
    return g;
  }

  Point Grid::node_point(int n) const
  {
    const auto [ix, iy] = node_coords(n);
    return {origin.x + ix * cell_size, origin.y + iy * cell_size};
  }

  Rect Grid::cell_rect(int c) const
  {
    const auto [cx, cy] = cell_coords(c);
    const Point lo{origin.x + cx * cell_size, origin.y + cy * cell_size};
    return {lo, {lo.x + cell_size, lo.y + cell_size}};
  }

  Rect Grid::bbox() const
  {
    return {origin, {origin.x + nx * cell_size, origin.y + ny * cell_size}};
  }

  std::array<int, 4> Grid::cell_nodes(int c) const
  {
    const auto [cx, cy] = cell_coords(c);
    const int n0 = node(cx, cy);
    return {n0, n0 + 1, n0 + nx + 2, n0 + nx + 1};
  }

  bool Grid::contains(Point p) const
  {
    const Rect b = bbox();
    const double tol = geometric_tol * std::max(b.width(), b.height());
    return b.contains(p, tol);
  }

  int Grid::locate(Point p) const
  {
    if (!contains(p))
    {
      std::ostringstream os;
      os << "point (" << p.x << ", " << p.y << ") outside grid";
      throw DomainError(os.str());
    }
    const int cx = cell_index_along((p.x - origin.x) / cell_size, nx);
    const int cy = cell_index_along((p.y - origin.y) / cell_size, ny);
    return cell(cx, cy);
  }

  std::vector<int> Grid::cells_in(const Rect &r) const
  {
    const double tx0 = (r.lo.x - origin.x) / cell_size;
    const double ty0 = (r.lo.y - origin.y) / cell_size;
    const int cx0 = std::max(0, static_cast<int>(std::lround(tx0)));
    const int cy0 = std::max(0, static_cast<int>(std::lround(ty0)));
    const int cx1 = std::min(nx, static_cast<int>(std::lround((r.hi.x - origin.x) / cell_size)));
    const int cy1 = std::min(ny, static_cast<int>(std::lround((r.hi.y - origin.y) / cell_size)));
    std::vector<int> out;
    if (cx1 <= cx0 || cy1 <= cy0)
      return out;
    out.reserve(static_cast<std::size_t>(cx1 - cx0) * (cy1 - cy0));
    for (int cy = cy0; cy < cy1; ++cy)
      for (int cx = cx0; cx < cx1; ++cx)
        out.push_back(cell(cx, cy));
    return out;
  }

  int Grid::node_at(Point p) const
  {
    const double tx = (p.x - origin.x) / cell_size;
    const double ty = (p.y - origin.y) / cell_size;
    const double rx = std::round(tx), ry = std::round(ty);
    if (std::abs(tx - rx) > 1e-9 || std::abs(ty - ry) > 1e-9)
      return -1;
    if (rx < 0 || ry < 0 || rx > nx || ry > ny)
      return -1;
    return node(static_cast<int>(rx), static_cast<int>(ry));
  }

  Domain Domain::rectangle(Point origin, double width, double height, const std::string &marker)
  {
    Domain d;
    d.origin = origin;
    d.width = width;
    d.height = height;
    for (auto &m : d.markers)
      m = SideMarkers{marker, {}, std::nullopt};
    return d;
  }

  Domain Domain::advection_benchmark()
  {
    Domain d = rectangle({0.0, 0.0}, 1.0, 2.0);
    d.side(Side::right) = {"A", {}, std::nullopt};
    d.side(Side::top) = {"B", {}, std::nullopt};
    d.side(Side::left) = {"D", "C", 1.0};
    d.side(Side::bottom) = {"E", {}, std::nullopt};
    return d;
  }

  void Domain::validate() const
  {
    if (!(width > 0.0) || !(height > 0.0))
      throw ConfigError("domain extent must be strictly positive");
    for (const auto &m : markers)
    {
      if (m.lower.empty() || (m.split && m.upper.empty()))
        throw ConfigError("every boundary segment needs a marker name");
    }
  }

  namespace
  {
    struct SideHit
    {
      Side side;
      double along; // coordinate along the side
    };

    std::vector<SideHit> sides_of(const Domain &d, Point p)
    {
      const Rect r = d.rect();
      const double tol = geometric_tol * std::max(d.width, d.height);
      std::vector<SideHit> hits;
      if (p.y < r.lo.y - tol || p.y > r.hi.y + tol || p.x < r.lo.x - tol || p.x > r.hi.x + tol)
        return hits;
      if (std::abs(p.x - r.lo.x) <= tol)
        hits.push_back({Side::left, p.y});
      if (std::abs(p.x - r.hi.x) <= tol)
        hits.push_back({Side::right, p.y});
      if (std::abs(p.y - r.lo.y) <= tol)
        hits.push_back({Side::bottom, p.x});
      if (std::abs(p.y - r.hi.y) <= tol)
        hits.push_back({Side::top, p.x});
      return hits;
    }
  } // namespace

  bool Domain::on_boundary(Point p) const { return !sides_of(*this, p).empty(); }

  std::string Domain::marker_at(Point p) const
  {
    const auto hits = sides_of(*this, p);
    if (hits.empty())
      throw DomainError("point is not on the domain boundary");
    const auto &h = hits.front();
    const SideMarkers &m = side(h.side);
    if (m.split && h.along >= *m.split)
      return m.upper;
    return m.lower;
  }

  bool Domain::in_marker_closure(Point p, const std::string &marker) const
  {
    for (const auto &h : sides_of(*this, p))
    {
      const SideMarkers &m = side(h.side);
      if (!m.split)
      {
        if (m.lower == marker)
          return true;
        continue;
      }
      const double tol = geometric_tol * std::max(width, height);
      if (m.lower == marker && h.along <= *m.split + tol)
        return true;
      if (m.upper == marker && h.along >= *m.split - tol)
        return true;
    }
    return false;
  }

  std::vector<std::string> Domain::marker_names() const
  {
    std::vector<std::string> names;
    for (const auto &m : markers)
    {
      names.push_back(m.lower);
      if (m.split)
        names.push_back(m.upper);
    }
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    return names;
  }

  bool Patch::contains(int cell) const
  {
    return std::binary_search(members.begin(), members.end(), cell);
  }

  MeshHierarchy::MeshHierarchy(Domain domain, double delta, double H, double h)
    : domain_(std::move(domain)), delta_(delta), H_(H), h_(h)
  {
    domain_.validate();
    micro_per_macro_ = exact_ratio(H, h, "micro size h vs macro size H");
    macro_per_sampling_ = exact_ratio(delta, H, "macro size H vs sampling size delta");
    const Rect r = domain_.rect();
    exact_ratio(r.width(), delta, "sampling size delta vs domain width");
    exact_ratio(r.height(), delta, "sampling size delta vs domain height");
    sampling_ = Grid::covering(r, delta);
    macro_ = Grid::covering(r, H);
    micro_ = Grid::covering(r, h);

    macro_parent_.resize(macro_.n_cells());
    sampling_children_.assign(sampling_.n_cells(), {});
    for (int c = 0; c < macro_.n_cells(); ++c)
    {
      const auto [cx, cy] = macro_.cell_coords(c);
      const int K = sampling_.cell(cx / macro_per_sampling_, cy / macro_per_sampling_);
      macro_parent_[c] = K;
      sampling_children_[K].push_back(c);
    }
  }

  SamplingRegion MeshHierarchy::sampling_region(int K) const
  {
    if (K < 0 || K >= sampling_.n_cells())
      throw DomainError("invalid sampling cell id " + std::to_string(K));
    const Rect b = sampling_.cell_rect(K);
    return {K, b, b};
  }

  MeshHierarchy build_hierarchy(const Domain &domain, double delta, double H, double h)
  {
    return MeshHierarchy(domain, delta, H, h);
  }

  Patch patch_of(const MeshHierarchy &mesh, int K, int depth)
  {
    const Grid &s = mesh.sampling();
    if (K < 0 || K >= s.n_cells())
      throw DomainError("invalid sampling cell id " + std::to_string(K));
    if (depth < 0)
      throw ConfigError("patch depth must be nonnegative");
    const auto [kx, ky] = s.cell_coords(K);
    const int x0 = std::max(0, kx - depth), x1 = std::min(s.nx - 1, kx + depth);
    const int y0 = std::max(0, ky - depth), y1 = std::min(s.ny - 1, ky + depth);
    Patch p;
    p.center = K;
    p.depth = depth;
    for (int cy = y0; cy <= y1; ++cy)
      for (int cx = x0; cx <= x1; ++cx)
        p.members.push_back(s.cell(cx, cy));
    p.bbox = {s.cell_rect(s.cell(x0, y0)).lo, s.cell_rect(s.cell(x1, y1)).hi};
    return p;
  }

  std::pair<int, int> locate_cell(const MeshHierarchy &mesh, Point x)
  {
    return {mesh.sampling().locate(x), mesh.macro().locate(x)};
  }
} // namespace modelopt::mesh
