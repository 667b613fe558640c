#pragma once

#include <random>
#include <string>
#include <vector>

#include "mvstr/camera.hpp"
#include "mvstr/params.hpp"
#include "mvstr/tensor.hpp"

namespace mvstr {

struct UNetConfig {
  int base_channels = 8;
  int levels = 2;
};

struct Conv3dUnit {
  Tensor w;  // [out, in, 3, 3, 3]
  Tensor b;
  Tensor ln_g;
  Tensor ln_b;
};

// Encoder: stem, then one stride-2 unit per level doubling the width.
// Decoder: nearest upsample, conv back to the skip width, add the skip.
struct UNetParams {
  UNetConfig config;
  Conv3dUnit stem;
  std::vector<Conv3dUnit> down;
  std::vector<Conv3dUnit> up;
  Tensor head_w;  // [1, base, 3, 3, 3]
  Tensor head_b;  // [1]
};

UNetParams init_unet3d(ParamStore& store, int in_channels, const UNetConfig& config, std::mt19937_64& rng,
                       const std::string& prefix);

// cost [G,D,h,w] -> logits [D,h,w]. Pads D, h, w up to multiples of
// 2^levels internally and crops the result.
Tensor unet3d(const Tensor& cost, const UNetParams& params);

struct DepthMap {
  Tensor depth;       // [h,w]
  Tensor confidence;  // [h,w], no gradient
  int stage = 1;
};

struct Regression {
  DepthMap depth;
  Tensor prob;  // [D,h,w]
};

// Softmax over D, expectation of the hypotheses, and the largest summed
// probability of three consecutive hypotheses as confidence.
Regression soft_argmin(const Tensor& logits, const DepthHypotheses& hyp);

}  // namespace mvstr
