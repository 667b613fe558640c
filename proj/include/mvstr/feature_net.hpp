#pragma once

#include <array>
#include <random>
#include <string>

#include "mvstr/params.hpp"
#include "mvstr/tensor.hpp"

namespace mvstr {

struct FeatureNetConfig {
  // Widths of the full, half and quarter resolution taps.
  std::array<int, 3> channels{8, 16, 32};
};

// Eight 3x3 convolutions. Layers 3 and 6 have stride 2. Layers 2, 5 and 8
// are taps: their raw output is a pyramid level and the trunk continues
// with elu(tap). Other layers apply channel layer norm then ELU.
struct FeatureNetParams {
  FeatureNetConfig config;
  std::array<Tensor, 8> weight;
  std::array<Tensor, 8> bias;
  std::array<Tensor, 8> ln_gamma;  // undefined at taps
  std::array<Tensor, 8> ln_beta;
};

FeatureNetParams init_feature_net(ParamStore& store, const FeatureNetConfig& config,
                                  std::mt19937_64& rng, const std::string& prefix = "feat");

// Batched pyramid: f1 [B,C1,H,W], f2 [B,C2,H/2,W/2], f4 [B,C3,H/4,W/4].
// With a single [3,H,W] image the batch dimension is dropped.
struct FeaturePyramid {
  Tensor f1;
  Tensor f2;
  Tensor f4;
};

// images: [3,H,W] or [B,3,H,W] with H and W divisible by 4.
FeaturePyramid extract_features(const Tensor& images, const FeatureNetParams& params);

// 1x1 fusion of a bilinearly upsampled coarse map with a finer map.
struct FuseParams {
  Tensor weight;  // [out, c_coarse + c_fine, 1, 1]
  Tensor bias;    // [out]
};

FuseParams init_fuse(ParamStore& store, int c_coarse, int c_fine, int c_out, std::mt19937_64& rng,
                     const std::string& prefix);

// coarse [C,h,w] or [B,C,h,w]; fine [C',2h,2w] or [B,C',2h,2w].
Tensor fuse_upsampled(const Tensor& coarse, const Tensor& fine, const FuseParams& params);

}  // namespace mvstr
