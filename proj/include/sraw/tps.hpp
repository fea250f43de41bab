#pragma once

#include <lapacke.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "sraw/error.hpp"
#include "sraw/image.hpp"

namespace sraw {

/// Displacement of one control point, in pixels along rows (u) and columns (v).
struct Vec2 {
  double u = 0.0;
  double v = 0.0;
  bool operator==(const Vec2&) const = default;
};

/// Radial basis U(r) = r^2 ln r, with U(0) = 0.
inline double kernel_u(double r) {
  if (!std::isfinite(r) || r < 0.0)
    throw InvalidInput("kernel_u: r must be finite and non-negative");
  if (r == 0.0)
    return 0.0;
  return r * r * std::log(r);
}

namespace detail {
// U expressed through the squared distance: 0.5 * d2 * ln(d2).
inline double kernel_from_sq(double d2) noexcept { return d2 > 0.0 ? 0.5 * d2 * std::log(d2) : 0.0; }
} // namespace detail

/// Ordered control points; at least three, pairwise distinct, not all collinear.
class ControlPoints {
public:
  ControlPoints() = default;
  explicit ControlPoints(std::vector<Coord> points) : points_(std::move(points)) { validate(); }

  std::size_t size() const noexcept { return points_.size(); }
  const Coord& operator[](std::size_t i) const noexcept { return points_[i]; }
  std::span<const Coord> points() const noexcept { return points_; }

  /// Points moved by per-point offsets. Targets need not satisfy the source invariants.
  std::vector<Coord> shifted(std::span<const Vec2> offsets) const {
    if (offsets.size() != points_.size())
      throw InvalidInput("ControlPoints::shifted: offset count mismatch");
    std::vector<Coord> out(points_.size());
    for (std::size_t i = 0; i < points_.size(); ++i)
      out[i] = {points_[i].u + offsets[i].u, points_[i].v + offsets[i].v};
    return out;
  }

  bool operator==(const ControlPoints& o) const {
    if (points_.size() != o.points_.size())
      return false;
    for (std::size_t i = 0; i < points_.size(); ++i)
      if (points_[i].u != o.points_[i].u || points_[i].v != o.points_[i].v)
        return false;
    return true;
  }

private:
  void validate() const {
    const std::size_t n = points_.size();
    if (n < 3)
      throw DegenerateGeometry("need at least 3 control points, got " + std::to_string(n));
    double cu = 0.0, cv = 0.0, extent = 0.0;
    for (const auto& p : points_) {
      if (!std::isfinite(p.u) || !std::isfinite(p.v))
        throw InvalidInput("control point has non-finite coordinate");
      cu += p.u;
      cv += p.v;
      extent = std::max({extent, std::abs(p.u), std::abs(p.v)});
    }
    cu /= static_cast<double>(n);
    cv /= static_cast<double>(n);
    const double tol = 1e-12 * std::max(1.0, extent);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (std::hypot(points_[i].u - points_[j].u, points_[i].v - points_[j].v) <= tol)
          throw DegenerateGeometry("control points " + std::to_string(i) + " and " + std::to_string(j) +
                                   " coincide");
    double suu = 0.0, svv = 0.0, suv = 0.0;
    for (const auto& p : points_) {
      const double du = p.u - cu, dv = p.v - cv;
      suu += du * du;
      svv += dv * dv;
      suv += du * dv;
    }
    // rank([1 | u | v]) < 3 exactly when the centered scatter matrix is singular.
    const double det = suu * svv - suv * suv;
    const double scale = (suu + svv) * (suu + svv);
    if (!(det > 1e-12 * scale))
      throw DegenerateGeometry("control points are collinear");
  }

  std::vector<Coord> points_;
};

/// Solved spline: g(p) = affine(p) + sum_i w_i U(|P_i - p|), one set per output coordinate.
struct TpsModel {
  std::array<double, 3> affine_u{}; ///< a_1, a_u, a_v
  std::array<double, 3> affine_v{}; ///< b_1, b_u, b_v
  std::vector<double> weights_u;
  std::vector<double> weights_v;
  ControlPoints source;

  Coord evaluate(Coord p) const {
    double gu = affine_u[0] + affine_u[1] * p.u + affine_u[2] * p.v;
    double gv = affine_v[0] + affine_v[1] * p.u + affine_v[2] * p.v;
    for (std::size_t i = 0; i < source.size(); ++i) {
      const double du = source[i].u - p.u, dv = source[i].v - p.v;
      const double k = detail::kernel_from_sq(du * du + dv * dv);
      gu += weights_u[i] * k;
      gv += weights_v[i] * k;
    }
    return {gu, gv};
  }
};

/// The (N+3)x(N+3) system [[K, P], [P^T, 0]] with P rows (1, u_i, v_i), factorized once
/// (Bunch-Kaufman) and reusable for any number of right-hand sides.
class TpsSystem {
public:
  explicit TpsSystem(ControlPoints src, double ridge = 0.0) : source_(std::move(src)) {
    if (!std::isfinite(ridge) || ridge < 0.0)
      throw InvalidInput("TPS ridge must be finite and non-negative");
    const std::size_t n = source_.size();
    dim_ = n + 3;
    matrix_.assign(dim_ * dim_, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double du = source_[i].u - source_[j].u, dv = source_[i].v - source_[j].v;
        matrix_[i * dim_ + j] = detail::kernel_from_sq(du * du + dv * dv);
      }
      matrix_[i * dim_ + i] += ridge;
      const double p[3] = {1.0, source_[i].u, source_[i].v};
      for (std::size_t k = 0; k < 3; ++k) {
        matrix_[i * dim_ + n + k] = p[k];
        matrix_[(n + k) * dim_ + i] = p[k];
      }
    }
    factor_ = matrix_;
    pivots_.assign(dim_, 0);
    const lapack_int info = LAPACKE_dsytrf(LAPACK_ROW_MAJOR, 'U', static_cast<lapack_int>(dim_), factor_.data(),
                                           static_cast<lapack_int>(dim_), pivots_.data());
    if (info != 0)
      throw SingularSystem("TPS system factorization failed (info=" + std::to_string(info) + ")");
  }

  std::size_t dim() const noexcept { return dim_; }
  const ControlPoints& source() const noexcept { return source_; }
  /// Row-major assembled matrix.
  std::span<const double> matrix() const noexcept { return matrix_; }
  double at(std::size_t r, std::size_t c) const noexcept { return matrix_[r * dim_ + c]; }

  /// Solves in place for a row-major dim x nrhs block.
  void solve_in_place(std::span<double> rhs, std::size_t nrhs) const {
    if (rhs.size() != dim_ * nrhs)
      throw InvalidInput("TpsSystem::solve: right-hand side has wrong size");
    const lapack_int info =
        LAPACKE_dsytrs(LAPACK_ROW_MAJOR, 'U', static_cast<lapack_int>(dim_), static_cast<lapack_int>(nrhs),
                       factor_.data(), static_cast<lapack_int>(dim_), pivots_.data(), rhs.data(),
                       static_cast<lapack_int>(nrhs));
    if (info != 0)
      throw SingularSystem("TPS solve failed (info=" + std::to_string(info) + ")");
  }

private:
  ControlPoints source_;
  std::size_t dim_ = 0;
  std::vector<double> matrix_;
  std::vector<double> factor_;
  std::vector<lapack_int> pivots_;
};

inline TpsSystem assemble_system(const ControlPoints& src, double ridge = 0.0) { return TpsSystem(src, ridge); }

inline TpsModel solve_coefficients(const TpsSystem& system, std::span<const Coord> target) {
  const std::size_t n = system.source().size();
  if (target.size() != n)
    throw InvalidInput("solve_coefficients: target has " + std::to_string(target.size()) + " points, source has " +
                       std::to_string(n));
  std::vector<double> rhs(system.dim() * 2, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    rhs[2 * i] = target[i].u;
    rhs[2 * i + 1] = target[i].v;
  }
  system.solve_in_place(rhs, 2);
  TpsModel m;
  m.source = system.source();
  m.weights_u.resize(n);
  m.weights_v.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.weights_u[i] = rhs[2 * i];
    m.weights_v[i] = rhs[2 * i + 1];
  }
  for (std::size_t k = 0; k < 3; ++k) {
    m.affine_u[k] = rhs[2 * (n + k)];
    m.affine_v[k] = rhs[2 * (n + k) + 1];
  }
  return m;
}

inline TpsModel solve_coefficients(const TpsSystem& system, const ControlPoints& target) {
  return solve_coefficients(system, target.points());
}

/// For each output pixel p, the source sampling coordinate g(p).
struct WarpField {
  std::size_t height = 0;
  std::size_t width = 0;
  RealGrid map_u;
  RealGrid map_v;
};

inline WarpField eval_field(const TpsModel& model, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0)
    throw InvalidInput("eval_field: dimensions must be positive");
  WarpField f{height, width, RealGrid(height, width), RealGrid(height, width)};
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const Coord g = model.evaluate({static_cast<double>(r), static_cast<double>(c)});
      f.map_u(r, c) = g.u;
      f.map_v(r, c) = g.v;
    }
  return f;
}

/// Linear map from control-point offsets to the dense displacement field (field minus identity grid).
///
/// Both scalar fields share the same system matrix, so the 2HW x 2N operator is block diagonal
/// with two identical HW x N blocks; only one block is stored. Row p holds d g(p) / d xi_k.
class FieldOperator {
public:
  FieldOperator(const ControlPoints& src, std::size_t height, std::size_t width, double ridge = 0.0)
      : height_(height), width_(width), points_(src.size()) {
    if (height == 0 || width == 0)
      throw InvalidInput("FieldOperator: dimensions must be positive");
    const TpsSystem system(src, ridge);
    const std::size_t n = points_;
    const std::size_t dim = system.dim();
    const std::size_t pixels = height * width;
    // Row p of the operator is phi_p^T A^{-1} restricted to the kernel block, where
    // phi_p = (U(|P_k - p|)_k, 1, u_p, v_p). A is symmetric, so solve A X = Phi^T.
    std::vector<double> rhs(dim * pixels);
    for (std::size_t r = 0; r < height; ++r)
      for (std::size_t c = 0; c < width; ++c) {
        const std::size_t p = r * width + c;
        for (std::size_t k = 0; k < n; ++k) {
          const double du = src[k].u - static_cast<double>(r), dv = src[k].v - static_cast<double>(c);
          rhs[k * pixels + p] = detail::kernel_from_sq(du * du + dv * dv);
        }
        rhs[n * pixels + p] = 1.0;
        rhs[(n + 1) * pixels + p] = static_cast<double>(r);
        rhs[(n + 2) * pixels + p] = static_cast<double>(c);
      }
    system.solve_in_place(rhs, pixels);
    basis_.resize(pixels * n);
    for (std::size_t p = 0; p < pixels; ++p)
      for (std::size_t k = 0; k < n; ++k)
        basis_[p * n + k] = rhs[k * pixels + p];
  }

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t points() const noexcept { return points_; }
  /// Row-major (height*width) x points.
  std::span<const double> basis() const noexcept { return basis_; }
  std::span<const double> row(std::size_t pixel) const noexcept { return {basis_.data() + pixel * points_, points_}; }

  /// Displacements (du, dv) at every pixel for the given offsets.
  std::pair<RealGrid, RealGrid> apply(std::span<const Vec2> offsets) const {
    check(offsets.size());
    RealGrid du(height_, width_), dv(height_, width_);
    for (std::size_t p = 0; p < height_ * width_; ++p) {
      const double* b = basis_.data() + p * points_;
      double su = 0.0, sv = 0.0;
      for (std::size_t k = 0; k < points_; ++k) {
        su += b[k] * offsets[k].u;
        sv += b[k] * offsets[k].v;
      }
      du[p] = su;
      dv[p] = sv;
    }
    return {std::move(du), std::move(dv)};
  }

  /// Adjoint: per-point gradient from per-pixel gradients w.r.t. the displacement components.
  std::vector<Vec2> apply_transpose(const RealGrid& grad_u, const RealGrid& grad_v) const {
    if (grad_u.height() != height_ || grad_u.width() != width_ || !grad_u.same_shape(grad_v))
      throw InvalidInput("FieldOperator::apply_transpose: shape mismatch");
    std::vector<double> gu(points_, 0.0), gv(points_, 0.0);
    for (std::size_t p = 0; p < height_ * width_; ++p) {
      const double a = grad_u[p], b = grad_v[p];
      if (a == 0.0 && b == 0.0)
        continue;
      const double* row = basis_.data() + p * points_;
      for (std::size_t k = 0; k < points_; ++k) {
        gu[k] += row[k] * a;
        gv[k] += row[k] * b;
      }
    }
    std::vector<Vec2> out(points_);
    for (std::size_t k = 0; k < points_; ++k)
      out[k] = {gu[k], gv[k]};
    return out;
  }

private:
  void check(std::size_t n) const {
    if (n != points_)
      throw InvalidInput("FieldOperator: expected " + std::to_string(points_) + " offsets, got " + std::to_string(n));
  }

  std::size_t height_;
  std::size_t width_;
  std::size_t points_;
  std::vector<double> basis_;
};

inline FieldOperator build_field_operator(const ControlPoints& src, std::size_t height, std::size_t width,
                                          double ridge = 0.0) {
  return FieldOperator(src, height, width, ridge);
}

/// Process-wide cache keyed by (source points, image dims, ridge).
inline std::shared_ptr<const FieldOperator> shared_field_operator(const ControlPoints& src, std::size_t height,
                                                                  std::size_t width, double ridge = 0.0) {
  using Key = std::tuple<std::size_t, std::size_t, double, std::vector<double>>;
  static std::mutex mutex;
  static std::map<Key, std::shared_ptr<const FieldOperator>> cache;
  std::vector<double> flat;
  flat.reserve(src.size() * 2);
  for (const auto& p : src.points()) {
    flat.push_back(p.u);
    flat.push_back(p.v);
  }
  Key key{height, width, ridge, std::move(flat)};
  std::lock_guard lock(mutex);
  auto it = cache.find(key);
  if (it != cache.end())
    return it->second;
  auto op = std::make_shared<const FieldOperator>(src, height, width, ridge);
  cache.emplace(std::move(key), op);
  return op;
}

} // namespace sraw
