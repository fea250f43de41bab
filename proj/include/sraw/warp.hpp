#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sraw/error.hpp"
#include "sraw/image.hpp"
#include "sraw/tps.hpp"

namespace sraw {

enum class Region : std::uint8_t { Background = 0, Foreground = 1 };

/// Control points at the centers of an mesh_h x mesh_w cell partition, labeled by region.
struct MeshSpec {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t mesh_h = 0;
  std::size_t mesh_w = 0;
  ControlPoints src;
  std::vector<Region> region;
  std::shared_ptr<const FieldOperator> op;

  std::size_t size() const noexcept { return src.size(); }
  std::size_t foreground_count() const noexcept {
    std::size_t n = 0;
    for (Region r : region)
      n += r == Region::Foreground;
    return n;
  }
};

/// Per-control-point displacements xi = target - source. Also used for gradients w.r.t. xi.
struct OffsetField {
  std::vector<Vec2> values;

  OffsetField() = default;
  explicit OffsetField(std::size_t n) : values(n) {}
  explicit OffsetField(std::vector<Vec2> v) : values(std::move(v)) {}
  static OffsetField zeros(const MeshSpec& mesh) { return OffsetField(mesh.size()); }

  std::size_t size() const noexcept { return values.size(); }
  Vec2& operator[](std::size_t i) noexcept { return values[i]; }
  const Vec2& operator[](std::size_t i) const noexcept { return values[i]; }
  std::span<const Vec2> span() const noexcept { return values; }

  double l1_norm() const noexcept {
    double s = 0.0;
    for (const auto& x : values)
      s += std::abs(x.u) + std::abs(x.v);
    return s;
  }
  double l2_norm() const noexcept {
    double s = 0.0;
    for (const auto& x : values)
      s += x.u * x.u + x.v * x.v;
    return std::sqrt(s);
  }
  bool operator==(const OffsetField&) const = default;
};

namespace detail {
inline std::size_t cell_start(std::size_t idx, std::size_t cell) noexcept { return idx * cell; }
inline std::size_t cell_end(std::size_t idx, std::size_t count, std::size_t cell, std::size_t extent) noexcept {
  return idx + 1 == count ? extent : (idx + 1) * cell;
}
} // namespace detail

/// Cell (r, c) has its control point at (r*cell_h + (cell_h-1)/2, c*cell_w + (cell_w-1)/2) with
/// cell sizes floor(height/mesh_h), floor(width/mesh_w); the last row/column of cells absorbs the
/// remainder. A cell is foreground when the fraction of mask pixels inside it reaches the threshold.
inline MeshSpec build_mesh(std::size_t height, std::size_t width, std::size_t mesh_h, std::size_t mesh_w,
                           const Mask& mask, double fg_fraction_threshold, double ridge = 0.0) {
  if (mesh_h < 2 || mesh_w < 2)
    throw InvalidInput("build_mesh: mesh dimensions must be at least 2");
  if (mesh_h > height || mesh_w > width)
    throw InvalidInput("build_mesh: mesh finer than the image");
  if (mask.height() != height || mask.width() != width)
    throw InvalidInput("build_mesh: mask is " + std::to_string(mask.height()) + "x" + std::to_string(mask.width()) +
                       ", image is " + std::to_string(height) + "x" + std::to_string(width));
  if (!std::isfinite(fg_fraction_threshold))
    throw InvalidInput("build_mesh: non-finite foreground threshold");

  const std::size_t cell_h = height / mesh_h;
  const std::size_t cell_w = width / mesh_w;
  std::vector<Coord> pts;
  std::vector<Region> region;
  pts.reserve(mesh_h * mesh_w);
  region.reserve(mesh_h * mesh_w);
  for (std::size_t r = 0; r < mesh_h; ++r) {
    for (std::size_t c = 0; c < mesh_w; ++c) {
      pts.push_back({static_cast<double>(r * cell_h) + (static_cast<double>(cell_h) - 1.0) / 2.0,
                     static_cast<double>(c * cell_w) + (static_cast<double>(cell_w) - 1.0) / 2.0});
      const std::size_t r0 = detail::cell_start(r, cell_h), r1 = detail::cell_end(r, mesh_h, cell_h, height);
      const std::size_t c0 = detail::cell_start(c, cell_w), c1 = detail::cell_end(c, mesh_w, cell_w, width);
      std::size_t hits = 0;
      for (std::size_t i = r0; i < r1; ++i)
        for (std::size_t j = c0; j < c1; ++j)
          hits += mask(i, j) != 0;
      const double frac = static_cast<double>(hits) / static_cast<double>((r1 - r0) * (c1 - c0));
      region.push_back(frac >= fg_fraction_threshold ? Region::Foreground : Region::Background);
    }
  }
  MeshSpec mesh;
  mesh.height = height;
  mesh.width = width;
  mesh.mesh_h = mesh_h;
  mesh.mesh_w = mesh_w;
  mesh.src = ControlPoints(std::move(pts));
  mesh.region = std::move(region);
  mesh.op = shared_field_operator(mesh.src, height, width, ridge);
  return mesh;
}

/// Forward warp plus what the backward pass needs: per-pixel sampling partials.
struct WarpTape {
  GrayImage image;
  RealGrid sample_du;
  RealGrid sample_dv;
};

namespace detail {
inline void check_warp_inputs(const RealGrid& x, const MeshSpec& mesh, const OffsetField& xi) {
  if (!mesh.op)
    throw InvalidInput("warp: mesh has no field operator");
  if (x.height() != mesh.height || x.width() != mesh.width)
    throw InvalidInput("warp: image is " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                       ", mesh expects " + std::to_string(mesh.height) + "x" + std::to_string(mesh.width));
  if (xi.size() != mesh.size())
    throw InvalidInput("warp: offset count " + std::to_string(xi.size()) + " != mesh points " +
                       std::to_string(mesh.size()));
  for (const auto& o : xi.values)
    if (!std::isfinite(o.u) || !std::isfinite(o.v))
      throw InvalidInput("warp: non-finite offset");
}
} // namespace detail

/// Backward-sampling TPS warp: out(p) = bicubic(x, p + displacement(p)), clipped to [0, 1].
inline WarpTape warp_with_tape(const RealGrid& x, const MeshSpec& mesh, const OffsetField& xi) {
  detail::check_warp_inputs(x, mesh, xi);
  auto [du, dv] = mesh.op->apply(xi.span());
  const std::size_t h = x.height(), w = x.width();
  RealGrid out(h, w), sdu(h, w), sdv(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t p = r * w + c;
      const Sample s = sample_bicubic(x, {static_cast<double>(r) + du[p], static_cast<double>(c) + dv[p]});
      out[p] = s.value;
      sdu[p] = s.du;
      sdv[p] = s.dv;
    }
  return {clip_unit(out), std::move(sdu), std::move(sdv)};
}

inline GrayImage warp(const RealGrid& x, const MeshSpec& mesh, const OffsetField& xi) {
  return warp_with_tape(x, mesh, xi).image;
}

/// dL/dxi from dL/dx' using a tape from warp_with_tape. The final clamp is passed straight through.
inline OffsetField warp_backward(const WarpTape& tape, const MeshSpec& mesh, const RealGrid& grad_out) {
  if (!grad_out.same_shape(tape.sample_du))
    throw InvalidInput("warp_backward: gradient shape does not match the warped image");
  RealGrid gu(grad_out.height(), grad_out.width()), gv(grad_out.height(), grad_out.width());
  for (std::size_t p = 0; p < grad_out.size(); ++p) {
    gu[p] = grad_out[p] * tape.sample_du[p];
    gv[p] = grad_out[p] * tape.sample_dv[p];
  }
  return OffsetField(mesh.op->apply_transpose(gu, gv));
}

inline OffsetField warp_backward(const RealGrid& x, const MeshSpec& mesh, const OffsetField& xi,
                                 const RealGrid& grad_out) {
  if (!grad_out.same_shape(x))
    throw InvalidInput("warp_backward: gradient shape does not match the image");
  return warp_backward(warp_with_tape(x, mesh, xi), mesh, grad_out);
}

} // namespace sraw
