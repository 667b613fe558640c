#include "mvstr/regularize.hpp"

#include <algorithm>

#include "mvstr/errors.hpp"
#include "mvstr/ops.hpp"

namespace mvstr {

namespace {

Conv3dUnit init_unit(ParamStore& store, const std::string& name, int in, int out, std::mt19937_64& rng) {
  const auto prec = store.precision();
  return {store.add(name + ".w", he_uniform({out, in, 3, 3, 3}, in * 27, rng, prec)),
          store.add(name + ".b", Tensor::zeros({out}, prec)),
          store.add(name + ".ln.g", Tensor::ones({out}, prec)),
          store.add(name + ".ln.b", Tensor::zeros({out}, prec))};
}

Tensor apply(const Conv3dUnit& u, const Tensor& x, int stride) {
  Tensor y = ops::conv3d(x, u.w, u.b, {stride, stride, stride}, {1, 1, 1});
  return ops::elu(ops::layer_norm(y, u.ln_g, u.ln_b, 1e-5, 1));
}

std::int64_t round_up(std::int64_t v, std::int64_t m) { return (v + m - 1) / m * m; }

}  // namespace

UNetParams init_unet3d(ParamStore& store, int in_channels, const UNetConfig& config, std::mt19937_64& rng,
                       const std::string& prefix) {
  if (config.base_channels <= 0 || config.levels < 0) throw ConfigError("invalid U-Net configuration");
  UNetParams p;
  p.config = config;
  const int b = config.base_channels;
  p.stem = init_unit(store, prefix + ".stem", in_channels, b, rng);
  for (int l = 0; l < config.levels; ++l) {
    p.down.push_back(init_unit(store, prefix + ".down" + std::to_string(l), b << l, b << (l + 1), rng));
  }
  for (int l = 0; l < config.levels; ++l) {
    p.up.push_back(init_unit(store, prefix + ".up" + std::to_string(l), b << (l + 1), b << l, rng));
  }
  const auto prec = store.precision();
  p.head_w = store.add(prefix + ".head.w", he_uniform({1, b, 3, 3, 3}, b * 27, rng, prec));
  p.head_b = store.add(prefix + ".head.b", Tensor::zeros({1}, prec));
  return p;
}

Tensor unet3d(const Tensor& cost, const UNetParams& params) {
  if (cost.rank() != 4) throw DimensionError("unet3d expects [G,D,h,w], got " + shape_str(cost.shape()));
  const auto D = cost.dim(1);
  const auto h = cost.dim(2);
  const auto w = cost.dim(3);
  const std::int64_t m = std::int64_t{1} << params.config.levels;
  const auto Dp = round_up(D, m);
  const auto hp = round_up(h, m);
  const auto wp = round_up(w, m);
  Tensor x = ops::unsqueeze(cost, 0);
  if (Dp != D || hp != h || wp != w) x = ops::pad(x, {{0, Dp - D}, {0, hp - h}, {0, wp - w}});

  std::vector<Tensor> skips;
  x = apply(params.stem, x, 1);
  for (const auto& unit : params.down) {
    skips.push_back(x);
    x = apply(unit, x, 2);
  }
  for (int l = params.config.levels - 1; l >= 0; --l) {
    x = apply(params.up[static_cast<std::size_t>(l)], ops::upsample_nearest(x, 2, 3), 1);
    x = ops::add(x, skips[static_cast<std::size_t>(l)]);
  }
  Tensor logits = ops::conv3d(x, params.head_w, params.head_b, {1, 1, 1}, {1, 1, 1});
  logits = ops::reshape(logits, {Dp, hp, wp});
  if (Dp != D) logits = ops::slice(logits, 0, 0, D);
  if (hp != h) logits = ops::slice(logits, 1, 0, h);
  if (wp != w) logits = ops::slice(logits, 2, 0, w);
  return logits;
}

Regression soft_argmin(const Tensor& logits, const DepthHypotheses& hyp) {
  if (logits.rank() != 3) throw DimensionError("soft_argmin expects [D,h,w], got " + shape_str(logits.shape()));
  const auto D = logits.dim(0);
  const auto h = logits.dim(1);
  const auto w = logits.dim(2);
  Tensor hv = hyp.values.to(logits.precision());
  if (hyp.per_pixel()) {
    if (hv.shape() != logits.shape()) {
      throw DimensionError("soft_argmin: hypotheses " + shape_str(hv.shape()) + " vs logits " +
                           shape_str(logits.shape()));
    }
  } else {
    if (hv.dim(0) != D) {
      throw DimensionError("soft_argmin: " + std::to_string(hv.dim(0)) + " hypotheses for " +
                           std::to_string(D) + " logits");
    }
    hv = ops::reshape(hv, {D, 1, 1});
  }
  Tensor prob = ops::softmax(logits, 0);
  Tensor depth = ops::sum(ops::mul(prob, hv), 0);

  const auto plane = h * w;
  const auto pv = prob.to_vector();
  const std::int64_t win = std::min<std::int64_t>(3, D);
  std::vector<double> conf(static_cast<std::size_t>(plane), 0.0);
  for (std::int64_t i = 0; i < plane; ++i) {
    double best = 0;
    for (std::int64_t s = 0; s + win <= D; ++s) {
      double acc = 0;
      for (std::int64_t k = s; k < s + win; ++k) acc += pv[static_cast<std::size_t>(k * plane + i)];
      best = std::max(best, acc);
    }
    conf[static_cast<std::size_t>(i)] = std::min(best, 1.0);
  }
  Regression r;
  r.prob = prob;
  r.depth.depth = depth;
  r.depth.confidence = Tensor::from_vector({h, w}, std::span<const double>(conf), logits.precision());
  r.depth.stage = hyp.stage;
  return r;
}

}  // namespace mvstr
