#pragma once

#include <array>
#include <random>
#include <span>
#include <vector>

#include "mvstr/camera.hpp"
#include "mvstr/cost_volume.hpp"
#include "mvstr/feature_net.hpp"
#include "mvstr/params.hpp"
#include "mvstr/regularize.hpp"
#include "mvstr/transformer.hpp"

namespace mvstr {

struct ModelConfig {
  FeatureNetConfig features;
  int heads = 4;
  int rounds = 4;      // Z
  int groups = 8;      // G
  std::array<int, 3> hypotheses{48, 32, 8};
  // Stage intervals as fractions of (depth_max - depth_min) / (D1 - 1).
  // Stage 1 is spaced in inverse depth, so only entries 1 and 2 are used.
  std::array<double, 3> interval_ratio{1.0, 0.5, 0.25};
  UNetConfig unet;
  // Image size the positional table is built for.
  int image_h = 64;
  int image_w = 64;
};

void validate(const ModelConfig& config);

struct ModelParams {
  ModelConfig config;
  FeatureNetParams features;
  TransformerParams transformer;
  FuseParams fuse2;  // quarter-scale transformed + half-scale CNN -> C2
  FuseParams fuse3;  // half-scale fused + full-scale CNN -> C1
  std::array<UNetParams, 3> unet;
};

ModelParams init_model(ParamStore& store, const ModelConfig& config, std::uint64_t seed);

struct StageResult {
  DepthHypotheses hyp;
  Regression reg;
  CostVolume cost;
};

// Runs the three-stage cascade for one reference and its sources. The
// returned stages have resolutions H/4, H/2 and H. A non-empty `frozen`
// (three entries) replaces the hypotheses of stages 2 and 3, which makes the
// output a smooth function of the parameters for gradient checks.
std::vector<StageResult> cascade_forward(const CameraView& ref, const std::vector<CameraView>& sources,
                                         const ModelParams& params, std::span<const DepthHypotheses> frozen = {});

// Allowed interval for refined hypotheses: [0.8 depth_min, 1.2 depth_max].
DepthBounds hypothesis_bounds(const CameraView& ref);

}  // namespace mvstr
