#pragma once

#include <vector>

#include "mvstr/camera.hpp"
#include "mvstr/tensor.hpp"

namespace mvstr {

struct CostVolume {
  Tensor cost;         // [G,D,h,w]
  Tensor valid_count;  // [D,h,w], number of sources with a valid sample
  int stage = 1;
};

// Per group g: <f_ref_g, f_warped_g> / (C/G), zeroed where valid is 0.
// f_ref [C,h,w], f_warped [C,D,h,w], valid [D,h,w].
Tensor groupwise_correlation(const Tensor& f_ref, const Tensor& f_warped, const Tensor& valid, int groups);

// Samples feat [C,h,w] at every (plane, pixel) of the grid -> [C,D,h,w].
Tensor warp_features(const Tensor& feat, const WarpGrid& grid);

// Average over sources of the group correlation, each entry divided by the
// number of sources that see it (at least 1). Sources are accumulated
// pairwise in ascending view id, so their order does not matter.
// ref_feat [C,h,w], src_feats [N,C,h,w].
CostVolume build_cost_volume(const Tensor& ref_feat, const Tensor& src_feats, const PinholeCamera& ref_cam,
                             const std::vector<PinholeCamera>& src_cams, const std::vector<int>& src_ids,
                             const DepthHypotheses& hyp, int groups);

}  // namespace mvstr
