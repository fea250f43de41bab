#pragma once

#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "sraw/error.hpp"
#include "sraw/image.hpp"
#include "sraw/net.hpp"
#include "sraw/rng.hpp"
#include "sraw/warp.hpp"

namespace sraw {

/// Anything that predicts a class and differentiates cross-entropy w.r.t. its input.
template <typename M>
concept Classifier = requires(const M& m, const RealGrid& x, std::size_t y) {
  { m.predict(x) } -> std::convertible_to<std::size_t>;
  { m.loss_and_input_grad(x, y) } -> std::same_as<LossGrad>;
};

/// Norm used to normalize the averaged offset gradient before momentum accumulation.
enum class GradNorm { L1, L2 };

struct SrawConfig {
  std::size_t iterations = 50;
  double step_size = 0.3; ///< alpha, pixels
  double decay = 0.9;     ///< mu
  std::size_t num_warps = 5;
  double jitter_sigma = 0.5;
  double r_fg = 0.5;
  double r_bg = 3.0;
  std::size_t mesh_h = 8;
  std::size_t mesh_w = 8;
  double fg_fraction_threshold = 0.05;
  GradNorm norm = GradNorm::L1;
  std::uint64_t seed = 0;

  void validate() const {
    if (iterations < 1)
      throw InvalidInput("sraw: iterations must be >= 1");
    if (num_warps < 1)
      throw InvalidInput("sraw: num_warps must be >= 1");
    if (!(decay >= 0.0 && decay < 1.0))
      throw InvalidInput("sraw: decay must lie in [0,1)");
    if (!(r_fg >= 0.0 && r_fg <= r_bg && std::isfinite(r_bg)))
      throw InvalidInput("sraw: budgets must satisfy 0 <= r_fg <= r_bg");
    if (!(step_size > 0.0 && std::isfinite(step_size)))
      throw InvalidInput("sraw: step_size must be positive");
    if (!(jitter_sigma >= 0.0 && std::isfinite(jitter_sigma)))
      throw InvalidInput("sraw: jitter_sigma must be non-negative");
    if (mesh_h < 2 || mesh_w < 2)
      throw InvalidInput("sraw: mesh dimensions must be >= 2");
  }
};

enum class PixelVariant { Fgsm, Pgd, MiFgsm };

struct PixelAttackConfig {
  double epsilon = 8.0 / 255.0;
  double step = 8.0 / 255.0 / 10.0;
  std::size_t iterations = 20;
  PixelVariant variant = PixelVariant::Pgd;
  double decay = 1.0; ///< MI-FGSM momentum decay
  bool random_start = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0))
      throw InvalidInput("pixel attack: epsilon must lie in [0,1]");
    if (!(step > 0.0 && std::isfinite(step)))
      throw InvalidInput("pixel attack: step must be positive");
    if (iterations < 1)
      throw InvalidInput("pixel attack: iterations must be >= 1");
    if (!(decay >= 0.0 && std::isfinite(decay)))
      throw InvalidInput("pixel attack: decay must be non-negative");
  }
};

struct MomentumState {
  OffsetField velocity;
};

struct AttackResult {
  GrayImage adversarial;
  std::optional<OffsetField> final_offsets;
  std::optional<RealGrid> final_perturbation;
  std::vector<double> loss_trace;
  std::size_t query_count = 0;
  std::size_t clean_prediction = 0;
  std::size_t adversarial_prediction = 0;
  bool success = false; ///< prediction changed
};

// ---------------------------------------------------------------- SRAW pieces

struct WarpGradient {
  OffsetField grad;
  double loss = 0.0;
};

/// dL/dxi at one offset configuration: warp, classifier gradient, warp backward.
template <Classifier M>
WarpGradient warp_loss_gradient(const M& model, const RealGrid& x, const MeshSpec& mesh, const OffsetField& xi,
                                std::size_t label) {
  WarpTape tape = warp_with_tape(x, mesh, xi);
  LossGrad lg = model.loss_and_input_grad(tape.image, label);
  return {warp_backward(tape, mesh, lg.grad), lg.loss};
}

struct AveragedGradientTrace {
  std::vector<OffsetField> terms;
  std::vector<double> losses;
};

/// Mean of dL/dxi over num_warps jittered copies xi + eta_j with eta_1 = 0 and
/// eta_j ~ N(0, sigma^2) per component for j >= 2.
template <Classifier M>
OffsetField averaged_gradient(const M& model, const RealGrid& x, const MeshSpec& mesh, const OffsetField& xi,
                              std::size_t label, std::size_t num_warps, double jitter_sigma, Rng& rng,
                              AveragedGradientTrace* trace = nullptr) {
  if (num_warps < 1)
    throw InvalidInput("averaged_gradient: num_warps must be >= 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  OffsetField sum(xi.size());
  for (std::size_t j = 0; j < num_warps; ++j) {
    OffsetField probe = xi;
    if (j > 0)
      for (auto& o : probe.values) {
        o.u += jitter_sigma * normal(rng);
        o.v += jitter_sigma * normal(rng);
      }
    WarpGradient g = warp_loss_gradient(model, x, mesh, probe, label);
    for (std::size_t k = 0; k < sum.size(); ++k) {
      sum[k].u += g.grad[k].u;
      sum[k].v += g.grad[k].v;
    }
    if (trace) {
      trace->terms.push_back(std::move(g.grad));
      trace->losses.push_back(g.loss);
    }
  }
  const double inv = 1.0 / static_cast<double>(num_warps);
  for (auto& o : sum.values) {
    o.u *= inv;
    o.v *= inv;
  }
  return sum;
}

/// velocity <- mu * velocity + g / ||g||; the normalized term is zero when ||g|| < 1e-12.
inline MomentumState momentum_update(const MomentumState& state, const OffsetField& avg_grad, double decay,
                                     GradNorm kind = GradNorm::L1) {
  if (state.velocity.size() != avg_grad.size())
    throw InvalidInput("momentum_update: shape mismatch");
  const double norm = kind == GradNorm::L1 ? avg_grad.l1_norm() : avg_grad.l2_norm();
  const double scale = norm < 1e-12 ? 0.0 : 1.0 / norm;
  MomentumState next{OffsetField(avg_grad.size())};
  for (std::size_t k = 0; k < avg_grad.size(); ++k) {
    next.velocity[k].u = decay * state.velocity[k].u + avg_grad[k].u * scale;
    next.velocity[k].v = decay * state.velocity[k].v + avg_grad[k].v * scale;
  }
  return next;
}

/// Radially rescales each point's displacement onto its region's disc (r_fg or r_bg).
inline OffsetField project_offsets(const OffsetField& xi, const MeshSpec& mesh, double r_fg, double r_bg) {
  if (xi.size() != mesh.size())
    throw InvalidInput("project_offsets: offset count does not match mesh");
  if (!(r_fg >= 0.0 && r_bg >= 0.0))
    throw InvalidInput("project_offsets: budgets must be non-negative");
  // Points already on the circle up to rounding are left alone, so projecting twice is a no-op.
  constexpr double slack = 1.0 + 4.0 * std::numeric_limits<double>::epsilon();
  OffsetField out = xi;
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double r = mesh.region[k] == Region::Foreground ? r_fg : r_bg;
    const double n = std::hypot(out[k].u, out[k].v);
    if (n > r * slack) {
      const double s = r / n;
      out[k].u *= s;
      out[k].v *= s;
    }
  }
  return out;
}

/// Called after each SRAW iteration with the index and the projected offsets.
using SrawObserver = std::function<void(std::size_t, const OffsetField&)>;

template <Classifier M>
AttackResult sraw_attack(const M& model, const GrayImage& x, std::size_t label, const MeshSpec& mesh,
                         const SrawConfig& config, const SrawObserver& observer = {}) {
  config.validate();
  if (mesh.mesh_h != config.mesh_h || mesh.mesh_w != config.mesh_w)
    throw InvalidInput("sraw_attack: mesh does not match config");
  Rng rng(derive_seed(config.seed, 0x5a3));
  OffsetField xi = OffsetField::zeros(mesh);
  MomentumState state{OffsetField::zeros(mesh)};
  AttackResult res;
  res.loss_trace.reserve(config.iterations);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    AveragedGradientTrace trace;
    const OffsetField g =
        averaged_gradient(model, x, mesh, xi, label, config.num_warps, config.jitter_sigma, rng, &trace);
    res.query_count += config.num_warps;
    for (double l : trace.losses)
      if (!std::isfinite(l))
        throw NumericalFailure("sraw_attack: non-finite loss at iteration " + std::to_string(it),
                               static_cast<int>(it));
    res.loss_trace.push_back(trace.losses.front());
    state = momentum_update(state, g, config.decay, config.norm);
    OffsetField stepped = xi;
    for (std::size_t k = 0; k < xi.size(); ++k) {
      stepped[k].u += config.step_size * state.velocity[k].u;
      stepped[k].v += config.step_size * state.velocity[k].v;
    }
    xi = project_offsets(stepped, mesh, config.r_fg, config.r_bg);
    if (observer)
      observer(it, xi);
  }
  res.adversarial = warp(x, mesh, xi);
  res.clean_prediction = model.predict(x);
  res.adversarial_prediction = model.predict(res.adversarial);
  res.query_count += 2;
  res.success = res.clean_prediction != res.adversarial_prediction;
  res.final_offsets = std::move(xi);
  return res;
}

template <Classifier M>
AttackResult sraw_attack(const M& model, const GrayImage& x, std::size_t label, const Mask& mask,
                         const SrawConfig& config, const SrawObserver& observer = {}) {
  config.validate();
  const MeshSpec mesh =
      build_mesh(x.height(), x.width(), config.mesh_h, config.mesh_w, mask, config.fg_fraction_threshold);
  return sraw_attack(model, x, label, mesh, config, observer);
}

/// Offsets drawn on the feasible set: uniform direction, radius uniform in [0, r_region].
inline OffsetField random_feasible_offsets(const MeshSpec& mesh, double r_fg, double r_bg, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  OffsetField xi = OffsetField::zeros(mesh);
  for (std::size_t k = 0; k < xi.size(); ++k) {
    const double r = (mesh.region[k] == Region::Foreground ? r_fg : r_bg) * unit(rng);
    const double theta = 2.0 * std::numbers::pi * unit(rng);
    xi[k] = {r * std::cos(theta), r * std::sin(theta)};
  }
  return xi;
}

/// One random warp on the SRAW feasible set, no optimization.
template <Classifier M>
AttackResult random_warp_control(const M& model, const GrayImage& x, std::size_t label, const Mask& mask,
                                 const SrawConfig& config, Rng& rng) {
  config.validate();
  const MeshSpec mesh =
      build_mesh(x.height(), x.width(), config.mesh_h, config.mesh_w, mask, config.fg_fraction_threshold);
  OffsetField xi = random_feasible_offsets(mesh, config.r_fg, config.r_bg, rng);
  AttackResult res;
  res.adversarial = warp(x, mesh, xi);
  res.loss_trace.push_back(model.loss_and_input_grad(res.adversarial, label).loss);
  res.clean_prediction = model.predict(x);
  res.adversarial_prediction = model.predict(res.adversarial);
  res.query_count = 3;
  res.success = res.clean_prediction != res.adversarial_prediction;
  res.final_offsets = std::move(xi);
  return res;
}

// ---------------------------------------------------------------- pixel baselines

/// Called with (iteration, iterate) after every pixel-attack update.
using PixelObserver = std::function<void(std::size_t, const RealGrid&)>;

namespace detail {
inline double sign(double v) noexcept { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }
} // namespace detail

/// FGSM: x + eps*sign(grad). PGD: optional uniform start in the eps-ball, then projected sign steps.
/// MI-FGSM: sign steps on an l1-normalized momentum accumulator.
template <Classifier M>
AttackResult pixel_attack(const M& model, const GrayImage& x, std::size_t label, const PixelAttackConfig& config,
                          const PixelObserver& observer = {}) {
  config.validate();
  const std::size_t n = x.size();
  const double eps = config.epsilon;
  RealGrid cur = x.grid();
  AttackResult res;

  auto project = [&](std::size_t i, double v) {
    v = std::clamp(v, x[i] - eps, x[i] + eps);
    return std::clamp(v, 0.0, 1.0);
  };
  auto gradient = [&](const RealGrid& at, std::size_t it) {
    LossGrad lg = model.loss_and_input_grad(at, label);
    ++res.query_count;
    if (!std::isfinite(lg.loss))
      throw NumericalFailure("pixel_attack: non-finite loss at iteration " + std::to_string(it), static_cast<int>(it));
    res.loss_trace.push_back(lg.loss);
    return lg.grad;
  };

  switch (config.variant) {
  case PixelVariant::Fgsm: {
    const RealGrid g = gradient(cur, 0);
    for (std::size_t i = 0; i < n; ++i)
      cur[i] = project(i, x[i] + eps * detail::sign(g[i]));
    if (observer)
      observer(0, cur);
    break;
  }
  case PixelVariant::Pgd: {
    if (config.random_start && eps > 0.0) {
      Rng rng(derive_seed(config.seed, 0x96d));
      std::uniform_real_distribution<double> start(-eps, eps);
      for (std::size_t i = 0; i < n; ++i)
        cur[i] = project(i, x[i] + start(rng));
    }
    for (std::size_t it = 0; it < config.iterations; ++it) {
      const RealGrid g = gradient(cur, it);
      for (std::size_t i = 0; i < n; ++i)
        cur[i] = project(i, cur[i] + config.step * detail::sign(g[i]));
      if (observer)
        observer(it, cur);
    }
    break;
  }
  case PixelVariant::MiFgsm: {
    std::vector<double> acc(n, 0.0);
    for (std::size_t it = 0; it < config.iterations; ++it) {
      const RealGrid g = gradient(cur, it);
      double norm = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        norm += std::abs(g[i]);
      const double scale = norm < std::numeric_limits<double>::min() ? 0.0 : 1.0 / norm;
      for (std::size_t i = 0; i < n; ++i) {
        acc[i] = config.decay * acc[i] + g[i] * scale;
        cur[i] = project(i, cur[i] + config.step * detail::sign(acc[i]));
      }
      if (observer)
        observer(it, cur);
    }
    break;
  }
  }

  res.adversarial = GrayImage(cur);
  RealGrid delta(x.height(), x.width());
  for (std::size_t i = 0; i < n; ++i)
    delta[i] = cur[i] - x[i];
  res.final_perturbation = std::move(delta);
  res.clean_prediction = model.predict(x);
  res.adversarial_prediction = model.predict(res.adversarial);
  res.query_count += 2;
  res.success = res.clean_prediction != res.adversarial_prediction;
  return res;
}

} // namespace sraw
