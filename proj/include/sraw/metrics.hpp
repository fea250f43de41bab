#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sraw/error.hpp"
#include "sraw/image.hpp"

namespace sraw {

struct EvalRecord {
  std::string sample_id;
  std::size_t label = 0;
  std::size_t clean_prediction = 0;
  std::size_t adversarial_prediction = 0;
};

struct QualityScores {
  double psnr_db = 0.0; ///< +inf for identical images
  double ssim = 1.0;
};

/// Fraction of initially-correct samples whose prediction the attack flips away from the label.
/// nullopt when no sample was classified correctly to begin with.
inline std::optional<double> attack_success_rate(std::span<const EvalRecord> records) {
  if (records.empty())
    throw InvalidInput("attack_success_rate: no records");
  std::size_t correct = 0, flipped = 0;
  for (const auto& r : records) {
    if (r.clean_prediction != r.label)
      continue;
    ++correct;
    flipped += r.adversarial_prediction != r.label;
  }
  if (correct == 0)
    return std::nullopt;
  return static_cast<double>(flipped) / static_cast<double>(correct);
}

inline double mean_squared_error(const RealGrid& a, const RealGrid& b) {
  if (!a.same_shape(b) || a.size() == 0)
    throw InvalidInput("image dimensions differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// 10 log10(1 / MSE) with peak 1.0; +inf when the images are identical.
inline double psnr(const RealGrid& a, const RealGrid& b) {
  const double mse = mean_squared_error(a, b);
  if (mse == 0.0)
    return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean SSIM over every fully-contained Gaussian-weighted window.
inline double ssim(const RealGrid& a, const RealGrid& b, const SsimParams& prm = {}) {
  if (!a.same_shape(b))
    throw InvalidInput("ssim: image dimensions differ");
  const std::size_t win = prm.window;
  if (a.height() < win || a.width() < win)
    throw InvalidInput("ssim: image smaller than the " + std::to_string(win) + "x" + std::to_string(win) + " window");

  std::vector<double> g(win);
  double gs = 0.0;
  const double half = (static_cast<double>(win) - 1.0) / 2.0;
  for (std::size_t i = 0; i < win; ++i) {
    const double d = static_cast<double>(i) - half;
    gs += (g[i] = std::exp(-d * d / (2.0 * prm.sigma * prm.sigma)));
  }
  for (double& v : g)
    v /= gs;

  const double c1 = (prm.k1 * prm.dynamic_range) * (prm.k1 * prm.dynamic_range);
  const double c2 = (prm.k2 * prm.dynamic_range) * (prm.k2 * prm.dynamic_range);
  const std::size_t oh = a.height() - win + 1, ow = a.width() - win + 1;
  double total = 0.0;
  for (std::size_t r = 0; r < oh; ++r)
    for (std::size_t c = 0; c < ow; ++c) {
      double ma = 0.0, mb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          const double wt = g[i] * g[j];
          const double pa = a(r + i, c + j), pb = b(r + i, c + j);
          ma += wt * pa;
          mb += wt * pb;
          saa += wt * pa * pa;
          sbb += wt * pb * pb;
          sab += wt * pa * pb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  return total / static_cast<double>(oh * ow);
}

inline QualityScores quality(const RealGrid& benign, const RealGrid& adversarial) {
  return {psnr(benign, adversarial), ssim(benign, adversarial)};
}

} // namespace sraw
