#include <gtest/gtest.h>

#include <random>

#include "sraw/image.hpp"

using namespace sraw;

namespace {

RealGrid random_grid(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  RealGrid g(h, w);
  for (double& v : g.data())
    v = u(rng);
  return g;
}

} // namespace

TEST(GrayImage, RejectsOutOfRangeIntensity) {
  EXPECT_THROW(GrayImage(2, 2, std::vector<double>{0.0, 0.5, 1.2, 0.1}), InvalidInput);
  EXPECT_THROW(GrayImage(2, 2, std::vector<double>{0.0, 0.5}), InvalidInput);
  EXPECT_NO_THROW(GrayImage(2, 2, std::vector<double>{0.0, 0.5, 1.0, 0.1}));
}

TEST(SampleBicubic, IntegerCoordinateIsExact) {
  std::mt19937_64 rng(3);
  const RealGrid g = random_grid(9, 11, rng);
  EXPECT_EQ(sample_bicubic(g, {3.0, 5.0}).value, g(3, 5));
  for (std::size_t r = 0; r < g.height(); ++r)
    for (std::size_t c = 0; c < g.width(); ++c)
      EXPECT_NEAR(sample_bicubic(g, {double(r), double(c)}).value, g(r, c), 1e-12);
}

TEST(SampleBicubic, ReproducesLinearRamp) {
  const std::size_t w = 8;
  RealGrid g(5, w);
  for (std::size_t r = 0; r < 5; ++r)
    for (std::size_t c = 0; c < w; ++c)
      g(r, c) = double(c) / double(w - 1);
  const Sample s = sample_bicubic(g, {2.0, 2.5});
  EXPECT_NEAR(s.value, 2.5 / double(w - 1), 1e-14);
  EXPECT_NEAR(s.dv, 1.0 / double(w - 1), 1e-14);
  EXPECT_NEAR(s.du, 0.0, 1e-14);
}

TEST(SampleBicubic, DerivativesMatchCentralDifferences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(1.0, 6.0);
  const double h = 1e-4;
  int checked = 0;
  for (int img = 0; img < 5; ++img) {
    const RealGrid g = random_grid(8, 8, rng);
    for (int k = 0; k < 100; ++k) {
      const Coord p{pos(rng), pos(rng)};
      const Sample s = sample_bicubic(g, p);
      const double fu =
          (sample_bicubic(g, {p.u + h, p.v}).value - sample_bicubic(g, {p.u - h, p.v}).value) / (2 * h);
      const double fv =
          (sample_bicubic(g, {p.u, p.v + h}).value - sample_bicubic(g, {p.u, p.v - h}).value) / (2 * h);
      // the interpolant is a cubic in each variable, so the central difference error is O(h^2)
      EXPECT_LE(std::abs(s.du - fu), 1e-6 * std::max(1.0, std::abs(fu)));
      EXPECT_LE(std::abs(s.dv - fv), 1e-6 * std::max(1.0, std::abs(fv)));
      ++checked;
    }
  }
  EXPECT_EQ(checked, 500);
}

TEST(SampleBicubic, ContinuousAcrossCellBoundaries) {
  std::mt19937_64 rng(5);
  const RealGrid g = random_grid(8, 8, rng);
  for (double u : {2.0, 3.0, 4.5})
    for (double v : {1.0, 5.0, 5.25}) {
      const double a = sample_bicubic(g, {u, v}).value;
      EXPECT_LT(std::abs(a - sample_bicubic(g, {u - 1e-8, v - 1e-8}).value), 1e-6);
      EXPECT_LT(std::abs(a - sample_bicubic(g, {u + 1e-8, v + 1e-8}).value), 1e-6);
    }
}

TEST(SampleBicubic, EdgeReplicationOutOfRange) {
  std::mt19937_64 rng(7);
  const RealGrid g = random_grid(6, 6, rng);
  EXPECT_NEAR(sample_bicubic(g, {-10.0, -10.0}).value, g(0, 0), 1e-15);
  EXPECT_NEAR(sample_bicubic(g, {1e9, 1e9}).value, g(5, 5), 1e-15);
  const Sample far = sample_bicubic(g, {-50.0, 2.0});
  EXPECT_NEAR(far.du, 0.0, 1e-15);
  EXPECT_NEAR(far.value, g(0, 2), 1e-15);
}

TEST(SampleBicubic, NonFiniteCoordinateIsInvalid) {
  RealGrid g(4, 4, 0.5);
  EXPECT_THROW(sample_bicubic(g, {std::nan(""), 1.0}), InvalidInput);
  EXPECT_THROW(sample_bicubic(g, {1.0, INFINITY}), InvalidInput);
}

TEST(ClipUnit, ClampsAndIsIdempotent) {
  RealGrid g(1, 4, std::vector<double>{1.2, -0.1, 0.3, 1.0});
  const GrayImage once = clip_unit(g);
  EXPECT_EQ(once[0], 1.0);
  EXPECT_EQ(once[1], 0.0);
  EXPECT_EQ(once[2], 0.3);
  EXPECT_EQ(once[3], 1.0);
  EXPECT_EQ(clip_unit(once.grid()), once);

  std::mt19937_64 rng(1);
  const RealGrid in_range = random_grid(5, 5, rng);
  EXPECT_EQ(clip_unit(in_range).grid(), in_range);
}
