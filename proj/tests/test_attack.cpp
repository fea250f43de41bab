#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "sraw/attack.hpp"
#include "test_util.hpp"

using namespace sraw;

namespace {

/// Two-class linear model with logits (w.x + b, 0).
struct LinearModel {
  RealGrid w;
  double b = 0.0;

  double score(const RealGrid& x) const {
    double s = b;
    for (std::size_t i = 0; i < x.size(); ++i)
      s += w[i] * x[i];
    return s;
  }
  std::size_t predict(const RealGrid& x) const { return score(x) > 0.0 ? 0 : 1; }
  LossGrad loss_and_input_grad(const RealGrid& x, std::size_t label) const {
    const std::vector<double> logits{score(x), 0.0};
    const auto p = softmax(logits);
    LossGrad out;
    out.loss = cross_entropy(logits, label);
    const double d0 = p[0] - (label == 0 ? 1.0 : 0.0);
    out.grad = RealGrid(x.height(), x.width());
    for (std::size_t i = 0; i < x.size(); ++i)
      out.grad[i] = d0 * w[i];
    out.logits = logits;
    return out;
  }
};

struct NanModel {
  std::size_t predict(const RealGrid&) const { return 0; }
  LossGrad loss_and_input_grad(const RealGrid& x, std::size_t) const {
    return {std::numeric_limits<double>::quiet_NaN(), RealGrid(x.height(), x.width(), 0.0), {0.0, 0.0}};
  }
};

static_assert(Classifier<LinearModel>);
static_assert(Classifier<NetClassifier>);

struct Fixture {
  NetParams params = init_params(Architecture{3, 4, 5, 4, 16}, 21);
  NetClassifier model{params};
  GrayImage x;
  Mask mask{16, 16, 0};
  SrawConfig cfg;

  explicit Fixture(std::uint64_t seed = 1) {
    std::mt19937_64 rng(seed);
    x = GrayImage(testutil::blob_image(16, 16, rng));
    for (std::size_t r = 5; r < 11; ++r)
      for (std::size_t c = 5; c < 11; ++c)
        mask(r, c) = 1;
    cfg.mesh_h = cfg.mesh_w = 3;
    cfg.iterations = 6;
    cfg.seed = seed;
  }
  MeshSpec mesh() const { return build_mesh(16, 16, 3, 3, mask, cfg.fg_fraction_threshold); }
};

OffsetField make_offsets(std::initializer_list<Vec2> v) { return OffsetField(std::vector<Vec2>(v)); }

} // namespace

TEST(MomentumUpdate, ZeroDecayNormalizesByL1) {
  const MomentumState s{make_offsets({{5, 5}, {-1, 1}})};
  const OffsetField g = make_offsets({{0.5, -0.5}, {0.25, 0.75}}); // l1 = 2
  const MomentumState n = momentum_update(s, g, 0.0);
  EXPECT_EQ(n.velocity[0].u, 0.25);
  EXPECT_EQ(n.velocity[0].v, -0.25);
  EXPECT_EQ(n.velocity[1].u, 0.125);
  EXPECT_EQ(n.velocity[1].v, 0.375);
}

TEST(MomentumUpdate, ZeroGradientGuard) {
  const MomentumState s{make_offsets({{2, -4}, {1, 0}})};
  const MomentumState n = momentum_update(s, make_offsets({{0, 0}, {1e-14, 0}}), 0.9);
  EXPECT_EQ(n.velocity[0].u, 0.9 * 2);
  EXPECT_EQ(n.velocity[0].v, 0.9 * -4);
  EXPECT_EQ(n.velocity[1].u, 0.9 * 1);
}

TEST(MomentumUpdate, TwoStepUnroll) {
  const OffsetField g1 = make_offsets({{0.5, 0}, {0, -0.5}}), g2 = make_offsets({{0, 0.25}, {-0.75, 0}});
  MomentumState s{OffsetField(2)};
  s = momentum_update(s, g1, 0.9);
  s = momentum_update(s, g2, 0.9);
  EXPECT_NEAR(s.velocity[0].u, 0.9 * 0.5, 1e-15);
  EXPECT_NEAR(s.velocity[0].v, 0.25, 1e-15);
  EXPECT_NEAR(s.velocity[1].u, -0.75, 1e-15);
  EXPECT_NEAR(s.velocity[1].v, 0.9 * -0.5, 1e-15);
  EXPECT_THROW(momentum_update(s, OffsetField(3), 0.9), InvalidInput);
}

TEST(ProjectOffsets, RadialScalingIdempotenceAndIdentity) {
  Mask mask(16, 16, 0);
  const MeshSpec mesh = build_mesh(16, 16, 2, 2, mask, 0.05);
  const OffsetField xi = make_offsets({{3, 4}, {0.1, 0.2}, {-6, 8}, {0, 0}});
  const OffsetField p = project_offsets(xi, mesh, 1.0, 2.5);
  EXPECT_NEAR(p[0].u, 1.5, 1e-12);
  EXPECT_NEAR(p[0].v, 2.0, 1e-12);
  EXPECT_EQ(p[1], xi[1]);
  EXPECT_NEAR(std::hypot(p[2].u, p[2].v), 2.5, 1e-12);
  EXPECT_EQ(project_offsets(p, mesh, 1.0, 2.5), p);
  EXPECT_THROW(project_offsets(OffsetField(3), mesh, 1.0, 2.5), InvalidInput);
}

TEST(ProjectOffsets, RegionBudgets) {
  Mask mask(16, 16, 0);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c)
      mask(r, c) = 1;
  const MeshSpec mesh = build_mesh(16, 16, 2, 2, mask, 0.05);
  ASSERT_EQ(mesh.region[0], Region::Foreground);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> nd(0.0, 5.0);
  for (int t = 0; t < 100; ++t) {
    OffsetField xi(4);
    for (auto& o : xi.values)
      o = {nd(rng), nd(rng)};
    const OffsetField p = project_offsets(xi, mesh, 0.5, 3.0);
    for (std::size_t k = 0; k < 4; ++k) {
      const double r = mesh.region[k] == Region::Foreground ? 0.5 : 3.0;
      EXPECT_LE(std::hypot(p[k].u, p[k].v), r + 1e-12);
      // direction preserved
      EXPECT_NEAR(p[k].u * xi[k].v - p[k].v * xi[k].u, 0.0, 1e-9);
    }
    EXPECT_EQ(project_offsets(p, mesh, 0.5, 3.0), p);
  }
}

TEST(AveragedGradient, SingleWarpAndZeroJitterReduce) {
  Fixture f;
  const MeshSpec mesh = f.mesh();
  std::mt19937_64 orng(3);
  OffsetField xi = random_feasible_offsets(mesh, 0.5, 3.0, orng);
  const WarpGradient plain = warp_loss_gradient(f.model, f.x, mesh, xi, 1);
  Rng rng(1);
  const OffsetField one = averaged_gradient(f.model, f.x, mesh, xi, 1, 1, 0.5, rng);
  EXPECT_EQ(one, plain.grad);
  const OffsetField flat = averaged_gradient(f.model, f.x, mesh, xi, 1, 5, 0.0, rng);
  for (std::size_t k = 0; k < xi.size(); ++k) {
    EXPECT_NEAR(flat[k].u, plain.grad[k].u, 1e-12);
    EXPECT_NEAR(flat[k].v, plain.grad[k].v, 1e-12);
  }
  EXPECT_THROW(averaged_gradient(f.model, f.x, mesh, xi, 1, 0, 0.5, rng), InvalidInput);
}

TEST(AveragedGradient, MatchesRecomputedMeanAndIsSeeded) {
  Fixture f;
  const MeshSpec mesh = f.mesh();
  const OffsetField xi = OffsetField::zeros(mesh);
  Rng a(77), b(77);
  AveragedGradientTrace trace;
  const OffsetField g = averaged_gradient(f.model, f.x, mesh, xi, 2, 5, 0.5, a, &trace);
  EXPECT_EQ(g, averaged_gradient(f.model, f.x, mesh, xi, 2, 5, 0.5, b));
  ASSERT_EQ(trace.terms.size(), 5u);
  EXPECT_EQ(trace.terms[0], warp_loss_gradient(f.model, f.x, mesh, xi, 2).grad);
  for (std::size_t k = 0; k < xi.size(); ++k) {
    double su = 0.0, sv = 0.0;
    for (const auto& t : trace.terms) {
      su += t[k].u;
      sv += t[k].v;
    }
    EXPECT_NEAR(g[k].u, su / 5.0, 1e-15);
    EXPECT_NEAR(g[k].v, sv / 5.0, 1e-15);
  }
  EXPECT_NE(trace.terms[1], trace.terms[0]);
}

TEST(SrawAttack, ZeroBudgetIsIdentity) {
  Fixture f;
  f.cfg.r_fg = f.cfg.r_bg = 0.0;
  const std::size_t label = f.model.predict(f.x);
  const AttackResult r = sraw_attack(f.model, f.x, label, f.mask, f.cfg);
  ASSERT_TRUE(r.final_offsets);
  EXPECT_EQ(r.final_offsets->l1_norm(), 0.0);
  for (std::size_t p = 0; p < f.x.size(); ++p)
    EXPECT_NEAR(r.adversarial[p], f.x[p], 1e-12);
  EXPECT_FALSE(r.success);
  EXPECT_EQ(r.clean_prediction, label);
}

TEST(SrawAttack, SingleStepMatchesHandComputation) {
  Fixture f;
  f.cfg.iterations = 1;
  f.cfg.num_warps = 1;
  f.cfg.decay = 0.7;
  f.cfg.step_size = 2.0;
  const MeshSpec mesh = f.mesh();
  const AttackResult r = sraw_attack(f.model, f.x, 0, mesh, f.cfg);
  const OffsetField g = warp_loss_gradient(f.model, f.x, mesh, OffsetField::zeros(mesh), 0).grad;
  const double l1 = g.l1_norm();
  OffsetField want(g.size());
  for (std::size_t k = 0; k < g.size(); ++k)
    want[k] = {f.cfg.step_size * g[k].u / l1, f.cfg.step_size * g[k].v / l1};
  want = project_offsets(want, mesh, f.cfg.r_fg, f.cfg.r_bg);
  for (std::size_t k = 0; k < g.size(); ++k) {
    EXPECT_NEAR((*r.final_offsets)[k].u, want[k].u, 1e-12);
    EXPECT_NEAR((*r.final_offsets)[k].v, want[k].v, 1e-12);
  }
  ASSERT_EQ(r.loss_trace.size(), 1u);
  EXPECT_EQ(r.query_count, 3u);
}

TEST(SrawAttack, ZeroDecaySingleWarpStepIsNormalizedGradient) {
  Fixture f(5);
  f.cfg.decay = 0.0;
  f.cfg.num_warps = 1;
  f.cfg.iterations = 4;
  const MeshSpec mesh = f.mesh();
  std::vector<OffsetField> iterates{OffsetField::zeros(mesh)};
  sraw_attack(f.model, f.x, 3, mesh, f.cfg, [&](std::size_t, const OffsetField& xi) { iterates.push_back(xi); });
  ASSERT_EQ(iterates.size(), 5u);
  for (std::size_t t = 0; t + 1 < iterates.size(); ++t) {
    const OffsetField g = warp_loss_gradient(f.model, f.x, mesh, iterates[t], 3).grad;
    const double l1 = g.l1_norm();
    OffsetField step = iterates[t];
    for (std::size_t k = 0; k < g.size(); ++k) {
      step[k].u += f.cfg.step_size * g[k].u / l1;
      step[k].v += f.cfg.step_size * g[k].v / l1;
    }
    const OffsetField want = project_offsets(step, mesh, f.cfg.r_fg, f.cfg.r_bg);
    for (std::size_t k = 0; k < g.size(); ++k) {
      EXPECT_NEAR(iterates[t + 1][k].u, want[k].u, 1e-12);
      EXPECT_NEAR(iterates[t + 1][k].v, want[k].v, 1e-12);
    }
  }
}

TEST(SrawAttack, FeasibleEveryIterationAndDeterministic) {
  Fixture f(8);
  f.cfg.iterations = 10;
  f.cfg.step_size = 5.0;
  const MeshSpec mesh = f.mesh();
  ASSERT_GT(mesh.foreground_count(), 0u);
  ASSERT_LT(mesh.foreground_count(), mesh.size());
  std::size_t calls = 0;
  const AttackResult a = sraw_attack(f.model, f.x, 1, mesh, f.cfg, [&](std::size_t it, const OffsetField& xi) {
    EXPECT_EQ(it, calls++);
    for (std::size_t k = 0; k < xi.size(); ++k) {
      const double r = mesh.region[k] == Region::Foreground ? f.cfg.r_fg : f.cfg.r_bg;
      EXPECT_LE(std::hypot(xi[k].u, xi[k].v), r + 1e-12);
    }
  });
  EXPECT_EQ(calls, 10u);
  EXPECT_EQ(a.loss_trace.size(), 10u);
  EXPECT_EQ(a.query_count, 10u * f.cfg.num_warps + 2);
  for (double v : a.adversarial.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const AttackResult b = sraw_attack(f.model, f.x, 1, mesh, f.cfg);
  EXPECT_EQ(a.adversarial, b.adversarial);
  EXPECT_EQ(*a.final_offsets, *b.final_offsets);
  EXPECT_EQ(a.loss_trace, b.loss_trace);
}

TEST(SrawAttack, NonFiniteLossReportsIteration) {
  Fixture f;
  try {
    sraw_attack(NanModel{}, f.x, 0, f.mask, f.cfg);
    FAIL() << "expected NumericalFailure";
  } catch (const NumericalFailure& e) {
    EXPECT_EQ(e.iteration(), 0);
  }
}

TEST(SrawAttack, ConfigValidation) {
  Fixture f;
  auto expect_bad = [&](auto mutate) {
    SrawConfig c = f.cfg;
    mutate(c);
    EXPECT_THROW(sraw_attack(f.model, f.x, 0, f.mask, c), InvalidInput);
  };
  expect_bad([](SrawConfig& c) { c.iterations = 0; });
  expect_bad([](SrawConfig& c) { c.num_warps = 0; });
  expect_bad([](SrawConfig& c) { c.decay = 1.0; });
  expect_bad([](SrawConfig& c) { c.r_fg = 4.0; });
  expect_bad([](SrawConfig& c) { c.step_size = 0.0; });
  SrawConfig c = f.cfg;
  c.mesh_h = 4;
  EXPECT_THROW(sraw_attack(f.model, f.x, 0, f.mesh(), c), InvalidInput);
}

TEST(RandomWarp, FeasibleReproducibleAndIdentityAtZero) {
  Fixture f;
  Rng a(5), b(5);
  const AttackResult ra = random_warp_control(f.model, f.x, 0, f.mask, f.cfg, a);
  const AttackResult rb = random_warp_control(f.model, f.x, 0, f.mask, f.cfg, b);
  EXPECT_EQ(*ra.final_offsets, *rb.final_offsets);
  EXPECT_EQ(ra.adversarial, rb.adversarial);
  const MeshSpec mesh = f.mesh();
  EXPECT_EQ(project_offsets(*ra.final_offsets, mesh, f.cfg.r_fg, f.cfg.r_bg), *ra.final_offsets);

  Rng c(6);
  for (int t = 0; t < 50; ++t) {
    const OffsetField xi = random_feasible_offsets(mesh, 0.5, 3.0, c);
    EXPECT_EQ(project_offsets(xi, mesh, 0.5, 3.0), xi);
  }
  f.cfg.r_fg = f.cfg.r_bg = 0.0;
  const AttackResult z = random_warp_control(f.model, f.x, 0, f.mask, f.cfg, c);
  for (std::size_t p = 0; p < f.x.size(); ++p)
    EXPECT_NEAR(z.adversarial[p], f.x[p], 1e-12);
}

TEST(PixelAttack, ZeroEpsilonIsIdentity) {
  Fixture f;
  for (auto v : {PixelVariant::Fgsm, PixelVariant::Pgd, PixelVariant::MiFgsm}) {
    PixelAttackConfig c;
    c.epsilon = 0.0;
    c.variant = v;
    c.iterations = 3;
    const AttackResult r = pixel_attack(f.model, f.x, 0, c);
    EXPECT_EQ(r.adversarial, f.x);
    EXPECT_FALSE(r.success);
  }
}

TEST(PixelAttack, FgsmOnLinearModel) {
  LinearModel m;
  m.w = RealGrid(4, 4);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double l1 = 0.0;
  for (double& v : m.w.data()) {
    v = u(rng);
    l1 += std::abs(v);
  }
  const GrayImage x(4, 4, 0.5);
  m.b = 0.1 - m.score(x); // score(x) = 0.1 > 0, class 0
  PixelAttackConfig c;
  c.variant = PixelVariant::Fgsm;
  c.epsilon = 0.05;
  const AttackResult r = pixel_attack(m, x, 0, c);
  for (std::size_t i = 0; i < 16; ++i)
    EXPECT_NEAR((*r.final_perturbation)[i], -0.05 * (m.w[i] > 0 ? 1.0 : -1.0), 1e-15);
  EXPECT_NEAR(m.score(x) - m.score(r.adversarial), 0.05 * l1, 1e-12);
  EXPECT_TRUE(r.success);
  EXPECT_EQ(r.loss_trace.size(), 1u);
}

TEST(PixelAttack, LinfBoundEveryIteration) {
  Fixture f(9);
  std::mt19937_64 rng(9);
  const GrayImage x(testutil::random_image(16, 16, rng)); // values near 0 and 1 exercise the [0,1] clamp
  for (auto v : {PixelVariant::Fgsm, PixelVariant::Pgd, PixelVariant::MiFgsm}) {
    PixelAttackConfig c;
    c.variant = v;
    c.epsilon = 0.03;
    c.step = 0.01;
    c.iterations = 8;
    c.seed = 4;
    std::size_t calls = 0;
    const AttackResult r = pixel_attack(f.model, x, 2, c, [&](std::size_t, const RealGrid& it) {
      ++calls;
      for (std::size_t i = 0; i < it.size(); ++i) {
        EXPECT_LE(std::abs(it[i] - x[i]), c.epsilon + 1e-12);
        EXPECT_GE(it[i], 0.0);
        EXPECT_LE(it[i], 1.0);
      }
    });
    EXPECT_EQ(calls, v == PixelVariant::Fgsm ? 1u : 8u);
    EXPECT_EQ(r.loss_trace.size(), v == PixelVariant::Fgsm ? 1u : 8u);
    const AttackResult again = pixel_attack(f.model, x, 2, c);
    EXPECT_EQ(r.adversarial, again.adversarial);
  }
}

TEST(PixelAttack, IncreasesLossOnNet) {
  Fixture f(2);
  PixelAttackConfig c;
  c.epsilon = 0.1;
  c.step = 0.02;
  c.iterations = 10;
  c.random_start = false;
  const double before = f.model.loss_and_input_grad(f.x, 1).loss;
  const AttackResult r = pixel_attack(f.model, f.x, 1, c);
  EXPECT_GT(f.model.loss_and_input_grad(r.adversarial, 1).loss, before);
  PixelAttackConfig bad = c;
  bad.step = 0.0;
  EXPECT_THROW(pixel_attack(f.model, f.x, 1, bad), InvalidInput);
  bad = c;
  bad.epsilon = 1.5;
  EXPECT_THROW(pixel_attack(f.model, f.x, 1, bad), InvalidInput);
}
