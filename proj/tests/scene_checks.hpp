#pragma once

#include <cmath>
#include <vector>

#include "mvstr/camera.hpp"
#include "mvstr/cost_volume.hpp"
#include "mvstr/ops.hpp"
#include "mvstr/synth.hpp"

namespace mvstr::testing {

struct WarpError {
  double mean_abs = 0;
  std::int64_t pixels = 0;
};

// Samples the source image at the reference pixels' GT-depth projections
// and compares with the reference image. Pixels whose projection is
// invalid or occluded in the source (GT depths disagree by > 1 %) are skipped.
inline WarpError gt_warp_error(const RenderedView& ref, const RenderedView& src) {
  const auto H = ref.depth.dim(0);
  const auto W = ref.depth.dim(1);
  DepthHypotheses hyp{ops::reshape(ref.depth.to(Precision::verification), {1, H, W}), 2};
  // Invalid reference pixels get a dummy positive depth; they are skipped below.
  auto dv = hyp.values.to_vector();
  for (auto& d : dv) d = d > 0 ? d : 1.0;
  hyp.values = Tensor::from_vector({1, H, W}, std::span<const double>(dv), Precision::verification);
  WarpGrid grid = build_warp_grid(ref.view.camera, src.view.camera, hyp);
  auto img = ops::grid_sample_bilinear(ops::unsqueeze(src.view.image.to(Precision::verification), 0),
                                       ops::reshape(grid.coords, {1, H, W, 2}))
                 .output;
  auto sdepth = ops::grid_sample_bilinear(
                    ops::reshape(src.depth.to(Precision::verification), {1, 1, H, W}),
                    ops::reshape(grid.coords, {1, H, W, 2}))
                    .output.to_vector();
  const auto warped = img.to_vector();
  const auto refimg = ref.view.image.to_vector();
  const auto mask = ref.mask.to_vector();
  const auto valid = grid.valid.to_vector();
  WarpError e;
  double acc = 0;
  for (std::int64_t y = 0; y < H; ++y) {
    for (std::int64_t x = 0; x < W; ++x) {
      const auto i = static_cast<std::size_t>(y * W + x);
      if (mask[i] == 0 || valid[i] == 0) continue;
      // Depth of the point in the source frame.
      const auto X = ref.view.camera.unproject(double(x), double(y), dv[i]);
      const double zs = src.view.camera.project(X).z();
      if (std::abs(sdepth[i] - zs) > 0.01 * zs) continue;
      for (int c = 0; c < 3; ++c) acc += std::abs(warped[static_cast<std::size_t>(c) * H * W + i] - refimg[static_cast<std::size_t>(c) * H * W + i]);
      ++e.pixels;
    }
  }
  e.mean_abs = e.pixels ? acc / (3.0 * e.pixels) : 0.0;
  return e;
}

// Image [3,H,W] shifted to mid-grey, each pixel's colour scaled to unit
// length, tiled `copies` times along channels.
inline Tensor unit_colour_features(const Tensor& image, int copies) {
  const auto H = image.dim(1);
  const auto W = image.dim(2);
  auto v = image.to_vector();
  const auto n = static_cast<std::size_t>(H * W);
  for (std::size_t i = 0; i < n; ++i) {
    double norm = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      v[c * n + i] -= 0.5;
      norm += v[c * n + i] * v[c * n + i];
    }
    norm = std::sqrt(norm) + 1e-12;
    for (std::size_t c = 0; c < 3; ++c) v[c * n + i] /= norm;
  }
  Tensor x = Tensor::from_vector({3, H, W}, std::span<const double>(v), Precision::verification);
  return ops::concat(std::vector<Tensor>(static_cast<std::size_t>(copies), x), 0);
}

struct ArgmaxStats {
  double exact = 0;     // argmax == depth-nearest hypothesis
  double within1 = 0;   // |argmax - nearest| <= 1
  std::int64_t pixels = 0;
};

// Cost volume of view `ref` against every other view, features from
// unit_colour_features with 8 groups of 3 channels. Compares the argmax
// plane with the hypothesis nearest to GT depth at pixels at least
// `margin` away from the border.
inline ArgmaxStats cost_argmax_stats(const Scene& scene, std::size_t ref, const DepthHypotheses& hyp,
                                     int margin) {
  const auto& r = scene.views[ref];
  std::vector<PinholeCamera> cams;
  std::vector<int> ids;
  std::vector<Tensor> feats;
  for (std::size_t s = 0; s < scene.views.size(); ++s) {
    if (s == ref) continue;
    cams.push_back(scene.views[s].view.camera);
    ids.push_back(scene.views[s].view.view_id);
    feats.push_back(ops::unsqueeze(unit_colour_features(scene.views[s].view.image, 8), 0));
  }
  auto cv = build_cost_volume(unit_colour_features(r.view.image, 8), ops::concat(feats, 0), r.view.camera,
                              cams, ids, hyp, 8);
  const auto cost = ops::sum(cv.cost, 0).to_vector();
  const auto hv = hyp.values.to_vector();
  const auto gt = r.depth.to_vector();
  const auto mask = r.mask.to_vector();
  const auto D = static_cast<int>(hyp.count());
  const auto H = r.depth.dim(0);
  const auto W = r.depth.dim(1);
  const auto n = static_cast<std::size_t>(H * W);
  std::int64_t exact = 0, within = 0;
  ArgmaxStats st;
  for (std::int64_t y = margin; y < H - margin; ++y) {
    for (std::int64_t x = margin; x < W - margin; ++x) {
      const auto i = static_cast<std::size_t>(y * W + x);
      if (mask[i] == 0) continue;
      int best = 0, nearest = 0;
      for (int d = 1; d < D; ++d) {
        const auto di = static_cast<std::size_t>(d);
        if (cost[di * n + i] > cost[static_cast<std::size_t>(best) * n + i]) best = d;
        if (std::abs(hv[di] - gt[i]) < std::abs(hv[static_cast<std::size_t>(nearest)] - gt[i])) nearest = d;
      }
      exact += best == nearest;
      within += std::abs(best - nearest) <= 1;
      ++st.pixels;
    }
  }
  if (st.pixels > 0) {
    st.exact = static_cast<double>(exact) / static_cast<double>(st.pixels);
    st.within1 = static_cast<double>(within) / static_cast<double>(st.pixels);
  }
  return st;
}

}  // namespace mvstr::testing
