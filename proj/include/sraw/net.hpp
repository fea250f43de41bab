#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sraw/error.hpp"
#include "sraw/image.hpp"
#include "sraw/rng.hpp"

namespace sraw {

/// Channel widths per stage; c3 == 0 selects the two-stage variant.
struct Architecture {
  std::uint32_t c1 = 8;
  std::uint32_t c2 = 16;
  std::uint32_t c3 = 32;
  std::uint32_t num_classes = 8;
  std::uint32_t input_side = 64;

  std::size_t stages() const noexcept { return c3 == 0 ? 2 : 3; }
  std::vector<std::size_t> widths() const {
    std::vector<std::size_t> w{c1, c2};
    if (c3 != 0)
      w.push_back(c3);
    return w;
  }
  std::size_t pooled_side() const noexcept { return input_side >> stages(); }
  std::size_t flat_size() const noexcept { return widths().back() * pooled_side() * pooled_side(); }

  void validate() const {
    if (c1 == 0 || c2 == 0)
      throw InvalidInput("architecture: c1 and c2 must be positive");
    if (num_classes < 2)
      throw InvalidInput("architecture: need at least 2 classes");
    const std::size_t div = std::size_t{1} << stages();
    if (input_side == 0 || input_side % div != 0)
      throw InvalidInput("architecture: input side " + std::to_string(input_side) + " not divisible by " +
                         std::to_string(div));
  }
  bool operator==(const Architecture&) const = default;
};

/// Channel-major feature map.
struct Tensor3 {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(std::size_t c, std::size_t h, std::size_t w) : channels(c), height(h), width(w), data(c * h * w, 0.0) {}
  double* plane(std::size_t c) noexcept { return data.data() + c * height * width; }
  const double* plane(std::size_t c) const noexcept { return data.data() + c * height * width; }
};

struct ConvLayer {
  std::size_t in_ch = 0, out_ch = 0;
  std::vector<double> weight; ///< [out][in][3][3]
  std::vector<double> bias;   ///< [out]
};

/// Learned parameters theta. Tensor order: conv weights/biases by stage, then FC weight, FC bias.
struct NetParams {
  Architecture arch;
  std::vector<ConvLayer> convs;
  std::vector<double> fc_weight; ///< [classes][flat]
  std::vector<double> fc_bias;
  std::uint64_t seed = 0;

  std::vector<std::span<double>> tensors() {
    std::vector<std::span<double>> t;
    for (auto& c : convs) {
      t.emplace_back(c.weight);
      t.emplace_back(c.bias);
    }
    t.emplace_back(fc_weight);
    t.emplace_back(fc_bias);
    return t;
  }
  std::vector<std::span<const double>> tensors() const {
    std::vector<std::span<const double>> t;
    for (const auto& c : convs) {
      t.emplace_back(c.weight);
      t.emplace_back(c.bias);
    }
    t.emplace_back(fc_weight);
    t.emplace_back(fc_bias);
    return t;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto s : tensors())
      n += s.size();
    return n;
  }
  /// Parameters compare by value; the seed is provenance only.
  bool operator==(const NetParams& o) const {
    if (!(arch == o.arch))
      return false;
    auto a = tensors(), b = o.tensors();
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i].size() != b[i].size() || !std::equal(a[i].begin(), a[i].end(), b[i].begin()))
        return false;
    return true;
  }
};

/// Shapes only, all values zero.
inline NetParams zero_params(const Architecture& arch) {
  arch.validate();
  NetParams p;
  p.arch = arch;
  std::size_t in = 1;
  for (std::size_t out : arch.widths()) {
    ConvLayer l;
    l.in_ch = in;
    l.out_ch = out;
    l.weight.assign(out * in * 9, 0.0);
    l.bias.assign(out, 0.0);
    p.convs.push_back(std::move(l));
    in = out;
  }
  p.fc_weight.assign(arch.num_classes * arch.flat_size(), 0.0);
  p.fc_bias.assign(arch.num_classes, 0.0);
  return p;
}

/// Fan-in scaled uniform weights U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases.
inline NetParams init_params(const Architecture& arch, std::uint64_t seed) {
  NetParams p = zero_params(arch);
  p.seed = seed;
  Rng rng(derive_seed(seed, 0x1417));
  auto fill = [&](std::vector<double>& w, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& x : w)
      x = dist(rng);
  };
  for (auto& c : p.convs)
    fill(c.weight, c.in_ch * 9);
  fill(p.fc_weight, arch.flat_size());
  return p;
}

namespace detail {

inline void conv3x3_forward(const Tensor3& in, const ConvLayer& l, Tensor3& out) {
  const std::size_t h = in.height, w = in.width;
  out = Tensor3(l.out_ch, h, w);
  for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
    double* o = out.plane(oc);
    std::fill(o, o + h * w, l.bias[oc]);
    for (std::size_t ic = 0; ic < l.in_ch; ++ic) {
      const double* ip = in.plane(ic);
      const double* k = l.weight.data() + (oc * l.in_ch + ic) * 9;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t y = 0; y < h; ++y) {
          const long iy = static_cast<long>(y + ky) - 1;
          if (iy < 0 || iy >= static_cast<long>(h))
            continue;
          const double* irow = ip + static_cast<std::size_t>(iy) * w;
          double* orow = o + y * w;
          // x + kx - 1 must stay in [0, w)
          const double k0 = k[ky * 3 + 0], k1 = k[ky * 3 + 1], k2 = k[ky * 3 + 2];
          orow[0] += k1 * irow[0] + (w > 1 ? k2 * irow[1] : 0.0);
          for (std::size_t x = 1; x + 1 < w; ++x)
            orow[x] += k0 * irow[x - 1] + k1 * irow[x] + k2 * irow[x + 1];
          if (w > 1)
            orow[w - 1] += k0 * irow[w - 2] + k1 * irow[w - 1];
        }
      }
    }
  }
}

// Accumulates input and/or weight gradients of a 3x3 pad-1 convolution.
inline void conv3x3_backward(const Tensor3& in, const ConvLayer& l, const Tensor3& gout, Tensor3* gin,
                             ConvLayer* gparams) {
  const std::size_t h = in.height, w = in.width;
  if (gin)
    *gin = Tensor3(l.in_ch, h, w);
  for (std::size_t oc = 0; oc < l.out_ch; ++oc) {
    const double* go = gout.plane(oc);
    if (gparams) {
      double s = 0.0;
      for (std::size_t i = 0; i < h * w; ++i)
        s += go[i];
      gparams->bias[oc] += s;
    }
    for (std::size_t ic = 0; ic < l.in_ch; ++ic) {
      const double* ip = in.plane(ic);
      const double* k = l.weight.data() + (oc * l.in_ch + ic) * 9;
      double* gk = gparams ? gparams->weight.data() + (oc * l.in_ch + ic) * 9 : nullptr;
      double* gi = gin ? gin->plane(ic) : nullptr;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        const double k0 = k[ky * 3 + 0], k1 = k[ky * 3 + 1], k2 = k[ky * 3 + 2];
        double a0 = 0.0, a1 = 0.0, a2 = 0.0;
        for (std::size_t y = 0; y < h; ++y) {
          const long iy = static_cast<long>(y + ky) - 1;
          if (iy < 0 || iy >= static_cast<long>(h))
            continue;
          const double* grow = go + y * w;
          const double* irow = ip + static_cast<std::size_t>(iy) * w;
          if (gk) {
            for (std::size_t x = 1; x < w; ++x)
              a0 += grow[x] * irow[x - 1];
            for (std::size_t x = 0; x < w; ++x)
              a1 += grow[x] * irow[x];
            for (std::size_t x = 0; x + 1 < w; ++x)
              a2 += grow[x] * irow[x + 1];
          }
          if (gi) {
            double* girow = gi + static_cast<std::size_t>(iy) * w;
            for (std::size_t x = 1; x < w; ++x)
              girow[x - 1] += k0 * grow[x];
            for (std::size_t x = 0; x < w; ++x)
              girow[x] += k1 * grow[x];
            for (std::size_t x = 0; x + 1 < w; ++x)
              girow[x + 1] += k2 * grow[x];
          }
        }
        if (gk) {
          gk[ky * 3 + 0] += a0;
          gk[ky * 3 + 1] += a1;
          gk[ky * 3 + 2] += a2;
        }
      }
    }
  }
}

inline void relu_inplace(Tensor3& t) noexcept {
  for (double& v : t.data)
    v = v > 0.0 ? v : 0.0;
}

inline void maxpool2_forward(const Tensor3& in, Tensor3& out, std::vector<std::uint32_t>& argmax) {
  const std::size_t oh = in.height / 2, ow = in.width / 2;
  out = Tensor3(in.channels, oh, ow);
  argmax.assign(in.channels * oh * ow, 0);
  for (std::size_t c = 0; c < in.channels; ++c) {
    const double* ip = in.plane(c);
    double* op = out.plane(c);
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (2 * y) * in.width + 2 * x;
        const std::size_t cand[3] = {best + 1, best + in.width, best + in.width + 1};
        for (std::size_t q : cand)
          if (ip[q] > ip[best])
            best = q;
        op[y * ow + x] = ip[best];
        argmax[(c * oh + y) * ow + x] = static_cast<std::uint32_t>(best);
      }
  }
}

} // namespace detail

/// Activations retained for the backward pass.
struct ForwardCache {
  std::vector<Tensor3> stage_input; ///< input to each conv
  std::vector<Tensor3> activation;  ///< post-ReLU conv output of each stage
  std::vector<std::vector<std::uint32_t>> pool_argmax;
  Tensor3 pooled; ///< last pooled map, flattened into the FC layer
  std::vector<double> logits;
};

inline void check_input(const NetParams& params, const RealGrid& x) {
  if (x.height() != params.arch.input_side || x.width() != params.arch.input_side)
    throw InvalidInput("network expects " + std::to_string(params.arch.input_side) + "x" +
                       std::to_string(params.arch.input_side) + " input, got " + std::to_string(x.height()) + "x" +
                       std::to_string(x.width()));
}

inline ForwardCache forward_cached(const NetParams& params, const RealGrid& x) {
  check_input(params, x);
  ForwardCache cache;
  Tensor3 cur(1, x.height(), x.width());
  std::copy(x.data().begin(), x.data().end(), cur.data.begin());
  for (const auto& layer : params.convs) {
    cache.stage_input.push_back(std::move(cur));
    Tensor3 act;
    detail::conv3x3_forward(cache.stage_input.back(), layer, act);
    detail::relu_inplace(act);
    Tensor3 pooled;
    std::vector<std::uint32_t> idx;
    detail::maxpool2_forward(act, pooled, idx);
    cache.activation.push_back(std::move(act));
    cache.pool_argmax.push_back(std::move(idx));
    cur = std::move(pooled);
  }
  const std::size_t m = params.arch.num_classes, flat = cur.data.size();
  cache.logits.assign(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    const double* wrow = params.fc_weight.data() + j * flat;
    double s = params.fc_bias[j];
    for (std::size_t i = 0; i < flat; ++i)
      s += wrow[i] * cur.data[i];
    cache.logits[j] = s;
  }
  cache.pooled = std::move(cur);
  return cache;
}

inline std::vector<double> forward(const NetParams& params, const RealGrid& x) {
  return forward_cached(params, x).logits;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i)
    s += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p)
    v /= s;
  return p;
}

inline std::size_t argmax(std::span<const double> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

/// -log softmax(logits)[label], computed stably.
inline double cross_entropy(std::span<const double> logits, std::size_t label) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double l : logits)
    s += std::exp(l - mx);
  return std::log(s) + mx - logits[label];
}

struct Backprop {
  RealGrid input_grad;      ///< empty unless requested
  NetParams param_grad;     ///< zero-shaped unless requested
  Tensor3 last_activation_grad; ///< gradient at the last post-ReLU conv map
};

/// Reverse pass from dL/dlogits.
inline Backprop backward(const NetParams& params, const ForwardCache& cache, std::span<const double> dlogits,
                         bool want_input, bool want_params) {
  Backprop out;
  if (want_params)
    out.param_grad = zero_params(params.arch);
  const std::size_t m = params.arch.num_classes, flat = cache.pooled.data.size();
  Tensor3 g(cache.pooled.channels, cache.pooled.height, cache.pooled.width);
  for (std::size_t j = 0; j < m; ++j) {
    const double d = dlogits[j];
    if (d == 0.0)
      continue;
    const double* wrow = params.fc_weight.data() + j * flat;
    for (std::size_t i = 0; i < flat; ++i)
      g.data[i] += d * wrow[i];
    if (want_params) {
      double* gw = out.param_grad.fc_weight.data() + j * flat;
      for (std::size_t i = 0; i < flat; ++i)
        gw[i] += d * cache.pooled.data[i];
      out.param_grad.fc_bias[j] += d;
    }
  }
  for (std::size_t s = params.convs.size(); s-- > 0;) {
    const Tensor3& act = cache.activation[s];
    Tensor3 gact(act.channels, act.height, act.width);
    const auto& idx = cache.pool_argmax[s];
    const std::size_t pooled_plane = g.height * g.width, plane = act.height * act.width;
    for (std::size_t c = 0; c < act.channels; ++c)
      for (std::size_t q = 0; q < pooled_plane; ++q) {
        const std::size_t src = c * pooled_plane + q;
        gact.data[c * plane + idx[src]] += g.data[src];
      }
    for (std::size_t i = 0; i < gact.data.size(); ++i)
      if (act.data[i] <= 0.0)
        gact.data[i] = 0.0;
    if (s + 1 == params.convs.size())
      out.last_activation_grad = gact;
    const bool need_gin = s > 0 || want_input;
    if (!need_gin && !want_params)
      break;
    Tensor3 gin;
    detail::conv3x3_backward(cache.stage_input[s], params.convs[s], gact, need_gin ? &gin : nullptr,
                             want_params ? &out.param_grad.convs[s] : nullptr);
    g = std::move(gin);
  }
  if (want_input)
    out.input_grad = RealGrid(g.height, g.width, std::move(g.data));
  return out;
}

struct LossGrad {
  double loss = 0.0;
  RealGrid grad;
  std::vector<double> logits;
};

inline void check_label(const NetParams& params, std::size_t label) {
  if (label >= params.arch.num_classes)
    throw InvalidInput("label " + std::to_string(label) + " outside [0," + std::to_string(params.arch.num_classes) +
                       ")");
}

/// Cross-entropy on the true label and its exact gradient w.r.t. every input pixel.
inline LossGrad loss_and_input_grad(const NetParams& params, const RealGrid& x, std::size_t label) {
  check_label(params, label);
  ForwardCache cache = forward_cached(params, x);
  auto p = softmax(cache.logits);
  p[label] -= 1.0;
  LossGrad out;
  out.loss = cross_entropy(cache.logits, label);
  out.grad = backward(params, cache, p, true, false).input_grad;
  out.logits = std::move(cache.logits);
  return out;
}

/// Loss and gradient w.r.t. parameters, for training and gradient checks.
inline std::pair<double, NetParams> loss_and_param_grad(const NetParams& params, const RealGrid& x, std::size_t label) {
  check_label(params, label);
  ForwardCache cache = forward_cached(params, x);
  auto p = softmax(cache.logits);
  p[label] -= 1.0;
  const double loss = cross_entropy(cache.logits, label);
  return {loss, std::move(backward(params, cache, p, false, true).param_grad)};
}

/// Adapts NetParams to the classifier interface the attacks consume.
class NetClassifier {
public:
  explicit NetClassifier(const NetParams& params) : params_(&params) {}
  std::size_t num_classes() const noexcept { return params_->arch.num_classes; }
  std::vector<double> logits(const RealGrid& x) const { return forward(*params_, x); }
  std::size_t predict(const RealGrid& x) const { return argmax(logits(x)); }
  LossGrad loss_and_input_grad(const RealGrid& x, std::size_t label) const {
    return sraw::loss_and_input_grad(*params_, x, label);
  }
  const NetParams& params() const noexcept { return *params_; }

private:
  const NetParams* params_;
};

// ---------------------------------------------------------------- training

struct LabeledImage {
  const RealGrid* image = nullptr;
  std::size_t label = 0;
};

struct TrainConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::size_t epochs = 15;
};

struct TrainResult {
  NetParams params;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

inline double accuracy(const NetParams& params, std::span<const LabeledImage> data) {
  if (data.empty())
    return 0.0;
  std::size_t hits = 0;
  for (const auto& s : data)
    hits += argmax(forward(params, *s.image)) == s.label;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Minibatch SGD with heavy-ball momentum (v <- mu v + g; theta <- theta - lr v) on mean cross-entropy.
inline TrainResult train(std::span<const LabeledImage> data, std::span<const LabeledImage> validation,
                         const Architecture& arch, const TrainConfig& cfg, std::uint64_t seed) {
  if (data.empty())
    throw InvalidInput("train: empty dataset");
  if (cfg.batch_size == 0)
    throw InvalidInput("train: batch size must be positive");
  if (!std::isfinite(cfg.learning_rate) || cfg.learning_rate < 0.0)
    throw InvalidInput("train: learning rate must be finite and non-negative");
  if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0))
    throw InvalidInput("train: momentum must lie in [0,1)");
  for (const auto& s : data)
    if (s.label >= arch.num_classes)
      throw InvalidInput("train: label " + std::to_string(s.label) + " out of range");

  TrainResult result;
  result.params = init_params(arch, seed);
  NetParams velocity = zero_params(arch);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(seed, 0x5407));

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      NetParams grad = zero_params(arch);
      auto gt = grad.tensors();
      for (std::size_t b = start; b < stop; ++b) {
        const auto& s = data[order[b]];
        auto [loss, g] = loss_and_param_grad(result.params, *s.image, s.label);
        if (!std::isfinite(loss))
          throw NumericalFailure("train: non-finite loss in epoch " + std::to_string(epoch), static_cast<int>(epoch));
        epoch_loss += loss;
        auto st = g.tensors();
        for (std::size_t t = 0; t < gt.size(); ++t)
          for (std::size_t i = 0; i < gt[t].size(); ++i)
            gt[t][i] += st[t][i];
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      auto pt = result.params.tensors();
      auto vt = velocity.tensors();
      for (std::size_t t = 0; t < pt.size(); ++t)
        for (std::size_t i = 0; i < pt[t].size(); ++i) {
          vt[t][i] = cfg.momentum * vt[t][i] + gt[t][i] * scale;
          pt[t][i] -= cfg.learning_rate * vt[t][i];
        }
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  result.train_accuracy = accuracy(result.params, data);
  result.validation_accuracy = accuracy(result.params, validation);
  return result;
}

// ---------------------------------------------------------------- Grad-CAM

/// Class activation heatmap over the last conv stage, upsampled bicubically to the input size and
/// min-max normalized to [0, 1]. An identically zero map stays zero.
inline RealGrid grad_cam(const NetParams& params, const RealGrid& x, std::size_t class_index) {
  check_label(params, class_index);
  ForwardCache cache = forward_cached(params, x);
  std::vector<double> dlogits(params.arch.num_classes, 0.0);
  dlogits[class_index] = 1.0;
  const Backprop bp = backward(params, cache, dlogits, false, false);
  const Tensor3& act = cache.activation.back();
  const Tensor3& gact = bp.last_activation_grad;
  const std::size_t plane = act.height * act.width;

  RealGrid cam(act.height, act.width, 0.0);
  for (std::size_t c = 0; c < act.channels; ++c) {
    double alpha = 0.0;
    for (std::size_t i = 0; i < plane; ++i)
      alpha += gact.plane(c)[i];
    alpha /= static_cast<double>(plane);
    for (std::size_t i = 0; i < plane; ++i)
      cam[i] += alpha * act.plane(c)[i];
  }
  for (std::size_t i = 0; i < plane; ++i)
    cam[i] = std::max(cam[i], 0.0);

  const std::size_t h = x.height(), w = x.width();
  RealGrid up(h, w, 0.0);
  const double su = static_cast<double>(act.height) / static_cast<double>(h);
  const double sv = static_cast<double>(act.width) / static_cast<double>(w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const Coord at{(static_cast<double>(r) + 0.5) * su - 0.5, (static_cast<double>(c) + 0.5) * sv - 0.5};
      up(r, c) = std::max(sample_bicubic(cam, at).value, 0.0);
    }
  const auto [lo, hi] = std::minmax_element(up.data().begin(), up.data().end());
  const double mn = *lo, mx = *hi;
  if (mx <= 0.0)
    return RealGrid(h, w, 0.0);
  if (mx - mn <= 0.0)
    return RealGrid(h, w, 1.0);
  for (double& v : up.data())
    v = (v - mn) / (mx - mn);
  return up;
}

// ---------------------------------------------------------------- weights file

namespace detail {
inline constexpr char kNetMagic[8] = {'S', 'R', 'A', 'W', 'N', 'E', 'T', '1'};

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get_le(const unsigned char* p) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(b, b + sizeof(T));
  T v;
  std::memcpy(&v, b, sizeof(T));
  return v;
}
} // namespace detail

/// Layout: "SRAWNET1", five little-endian u32 (c1, c2, c3, classes, input side), then every tensor
/// as little-endian f64 in declaration order.
inline void save_params(const NetParams& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os)
    throw IoError("cannot open " + path.string() + " for writing");
  os.write(detail::kNetMagic, sizeof(detail::kNetMagic));
  const auto& a = params.arch;
  for (std::uint32_t v : {a.c1, a.c2, a.c3, a.num_classes, a.input_side})
    detail::put_le(os, v);
  for (auto t : params.tensors())
    for (double v : t)
      detail::put_le(os, v);
  if (!os)
    throw IoError("write failed for " + path.string());
}

inline NetParams load_params(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw IoError("cannot open weights file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  constexpr std::size_t header = sizeof(detail::kNetMagic) + 5 * 4;
  if (bytes.size() < header)
    throw FormatError(path.string() + ": truncated header");
  if (std::memcmp(bytes.data(), detail::kNetMagic, sizeof(detail::kNetMagic)) != 0)
    throw FormatError(path.string() + ": bad magic, not an SRAWNET1 weights file");
  std::uint32_t d[5];
  for (int i = 0; i < 5; ++i)
    d[i] = detail::get_le<std::uint32_t>(bytes.data() + 8 + 4 * i);
  Architecture arch{d[0], d[1], d[2], d[3], d[4]};
  try {
    arch.validate();
  } catch (const InvalidInput& e) {
    throw FormatError(path.string() + ": bad architecture descriptor (" + e.what() + ")");
  }
  NetParams p = zero_params(arch);
  const std::size_t expected = header + 8 * p.parameter_count();
  if (bytes.size() != expected)
    throw FormatError(path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                      std::to_string(bytes.size()));
  const unsigned char* cur = bytes.data() + header;
  for (auto t : p.tensors())
    for (double& v : t) {
      v = detail::get_le<double>(cur);
      cur += 8;
    }
  return p;
}

} // namespace sraw
