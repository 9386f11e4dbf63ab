#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace modelopt
{
  /// Two-component vector; also used for points in the plane.
  struct Vec2
  {
    double x = 0.0;
    double y = 0.0;

    double operator[](int i) const { return i == 0 ? x : y; }

    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend bool operator==(const Vec2 &, const Vec2 &) = default;
  };

  using Point = Vec2;

  inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
  inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

  /// Dense 2x2 tensor, row-major.
  struct Tensor2
  {
    std::array<double, 4> a{0.0, 0.0, 0.0, 0.0};

    double &operator()(int i, int j) { return a[2 * i + j]; }
    double operator()(int i, int j) const { return a[2 * i + j]; }

    static Tensor2 identity(double s = 1.0) { return Tensor2{{s, 0.0, 0.0, s}}; }
    static Tensor2 diag(double d0, double d1) { return Tensor2{{d0, 0.0, 0.0, d1}}; }
    /// Unit tensor E_ij with a single one at entry (i, j).
    static Tensor2 unit(int i, int j)
    {
      Tensor2 t;
      t(i, j) = 1.0;
      return t;
    }

    Tensor2 transposed() const { return Tensor2{{a[0], a[2], a[1], a[3]}}; }
    Tensor2 symmetrized() const
    {
      const double off = 0.5 * (a[1] + a[2]);
      return Tensor2{{a[0], off, off, a[3]}};
    }
    bool is_symmetric(double rel_tol = 0.0) const
    {
      return std::abs(a[1] - a[2]) <= rel_tol * frobenius();
    }
    double frobenius() const
    {
      return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + a[3] * a[3]);
    }
    /// Smallest eigenvalue of the symmetric part.
    double min_eigenvalue() const
    {
      const Tensor2 s = symmetrized();
      const double m = 0.5 * (s.a[0] + s.a[3]);
      const double r = std::hypot(0.5 * (s.a[0] - s.a[3]), s.a[1]);
      return m - r;
    }
    Vec2 operator*(Vec2 v) const { return {a[0] * v.x + a[1] * v.y, a[2] * v.x + a[3] * v.y}; }

    Tensor2 &operator+=(const Tensor2 &o)
    {
      for (int k = 0; k < 4; ++k)
        a[k] += o.a[k];
      return *this;
    }
    friend Tensor2 operator+(Tensor2 l, const Tensor2 &r) { return l += r; }
    friend Tensor2 operator-(Tensor2 l, const Tensor2 &r)
    {
      for (int k = 0; k < 4; ++k)
        l.a[k] -= r.a[k];
      return l;
    }
    friend Tensor2 operator*(double s, Tensor2 t)
    {
      for (auto &v : t.a)
        v *= s;
      return t;
    }
    friend bool operator==(const Tensor2 &, const Tensor2 &) = default;
  };

  /// Frobenius inner product A:B.
  inline double contract(const Tensor2 &l, const Tensor2 &r)
  {
    return l.a[0] * r.a[0] + l.a[1] * r.a[1] + l.a[2] * r.a[2] + l.a[3] * r.a[3];
  }

  /// Axis-aligned rectangle [lo.x, hi.x] x [lo.y, hi.y].
  struct Rect
  {
    Point lo;
    Point hi;

    double width() const { return hi.x - lo.x; }
    double height() const { return hi.y - lo.y; }
    double area() const { return width() * height(); }
    Point center() const { return 0.5 * (lo + hi); }
    bool contains(Point p, double tol = 0.0) const
    {
      return p.x >= lo.x - tol && p.x <= hi.x + tol && p.y >= lo.y - tol &&
             p.y <= hi.y + tol;
    }
    bool contains(const Rect &r, double tol = 0.0) const
    {
      return contains(r.lo, tol) && contains(r.hi, tol);
    }
    friend bool operator==(const Rect &, const Rect &) = default;
  };

  // Error categories. The CLI maps them onto exit codes 2, 3 and 4.

  /// Invalid configuration or inconsistent input data.
  class ConfigError : public std::runtime_error
  {
  public:
    using std::runtime_error::runtime_error;
  };

  /// Singular systems, divergence, non-finite values.
  class NumericalError : public std::runtime_error
  {
  public:
    using std::runtime_error::runtime_error;
  };

  /// Evaluation outside the domain of definition (points, logarithms).
  class DomainError : public std::runtime_error
  {
  public:
    using std::runtime_error::runtime_error;
  };

  /// Problem size exceeds a configured resource cap.
  class ResourceError : public std::runtime_error
  {
  public:
    using std::runtime_error::runtime_error;
  };
} // namespace modelopt
