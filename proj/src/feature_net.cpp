#include "mvstr/feature_net.hpp"

#include "mvstr/errors.hpp"
#include "mvstr/ops.hpp"

namespace mvstr {

namespace {

constexpr bool is_tap(int layer) { return layer == 1 || layer == 4 || layer == 7; }
constexpr bool is_strided(int layer) { return layer == 2 || layer == 5; }

int out_channels(const FeatureNetConfig& c, int layer) {
  if (layer < 2) return c.channels[0];
  if (layer < 5) return c.channels[1];
  return c.channels[2];
}

Tensor as_batch(const Tensor& x, int rank, const char* what) {
  if (x.rank() == rank - 1) return ops::unsqueeze(x, 0);
  if (x.rank() == rank) return x;
  throw DimensionError(std::string(what) + ": unexpected shape " + shape_str(x.shape()));
}

}  // namespace

FeatureNetParams init_feature_net(ParamStore& store, const FeatureNetConfig& config,
                                  std::mt19937_64& rng, const std::string& prefix) {
  for (int c : config.channels) {
    if (c <= 0) throw ConfigError("feature channels must be positive");
  }
  FeatureNetParams p;
  p.config = config;
  const auto prec = store.precision();
  int in = 3;
  for (int l = 0; l < 8; ++l) {
    const int out = out_channels(config, l);
    const auto name = prefix + ".conv" + std::to_string(l + 1);
    p.weight[l] = store.add(name + ".w", he_uniform({out, in, 3, 3}, in * 9, rng, prec));
    p.bias[l] = store.add(name + ".b", Tensor::zeros({out}, prec));
    if (!is_tap(l)) {
      p.ln_gamma[l] = store.add(name + ".ln.g", Tensor::ones({out}, prec));
      p.ln_beta[l] = store.add(name + ".ln.b", Tensor::zeros({out}, prec));
    }
    in = out;
  }
  return p;
}

FeaturePyramid extract_features(const Tensor& images, const FeatureNetParams& params) {
  const bool batched = images.rank() == 4;
  Tensor x = as_batch(images, 4, "extract_features");
  if (x.dim(1) != 3) throw DimensionError("extract_features expects 3 channels, got " + shape_str(x.shape()));
  if (x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0) {
    throw DimensionError("extract_features: image size " + shape_str(x.shape()) +
                         " is not divisible by 4");
  }
  std::array<Tensor, 3> taps;
  int tap = 0;
  for (int l = 0; l < 8; ++l) {
    const int s = is_strided(l) ? 2 : 1;
    Tensor y = ops::conv2d(x, params.weight[l], params.bias[l], {s, s}, {1, 1});
    if (is_tap(l)) {
      taps[tap++] = y;
      x = ops::elu(y);
    } else {
      x = ops::elu(ops::layer_norm(y, params.ln_gamma[l], params.ln_beta[l], 1e-5, 1));
    }
  }
  FeaturePyramid out{taps[0], taps[1], taps[2]};
  if (!batched) {
    out.f1 = ops::squeeze(out.f1, 0);
    out.f2 = ops::squeeze(out.f2, 0);
    out.f4 = ops::squeeze(out.f4, 0);
  }
  return out;
}

FuseParams init_fuse(ParamStore& store, int c_coarse, int c_fine, int c_out, std::mt19937_64& rng,
                     const std::string& prefix) {
  const auto prec = store.precision();
  const int in = c_coarse + c_fine;
  FuseParams p;
  p.weight = store.add(prefix + ".w", he_uniform({c_out, in, 1, 1}, in, rng, prec));
  p.bias = store.add(prefix + ".b", Tensor::zeros({c_out}, prec));
  return p;
}

Tensor fuse_upsampled(const Tensor& coarse, const Tensor& fine, const FuseParams& params) {
  const bool batched = coarse.rank() == 4;
  Tensor c = as_batch(coarse, 4, "fuse_upsampled");
  Tensor f = as_batch(fine, 4, "fuse_upsampled");
  if (c.dim(0) != f.dim(0) || f.dim(2) != 2 * c.dim(2) || f.dim(3) != 2 * c.dim(3)) {
    throw DimensionError("fuse_upsampled: fine map " + shape_str(fine.shape()) +
                         " is not twice the coarse map " + shape_str(coarse.shape()));
  }
  if (params.weight.dim(1) != c.dim(1) + f.dim(1)) {
    throw DimensionError("fuse_upsampled: weight " + shape_str(params.weight.shape()) +
                         " does not match " + std::to_string(c.dim(1) + f.dim(1)) + " input channels");
  }
  Tensor joined = ops::concat({ops::upsample_bilinear(c, 2), f}, 1);
  Tensor out = ops::conv2d(joined, params.weight, params.bias);
  return batched ? out : ops::squeeze(out, 0);
}

}  // namespace mvstr
