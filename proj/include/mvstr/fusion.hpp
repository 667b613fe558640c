#pragma once

#include <vector>

#include "mvstr/camera.hpp"
#include "mvstr/io.hpp"
#include "mvstr/regularize.hpp"

namespace mvstr {

struct FusionConfig {
  double conf_threshold = 0.3;
  double reproj_px_threshold = 1.0;
  double rel_depth_threshold = 0.01;
  int min_consistent_views = 2;
};

void validate(const FusionConfig& config);

// A finest-stage depth map with its camera. Non-positive depth marks an
// invalid pixel. `image` [3,H,W] is optional and only used for colours.
struct DepthView {
  int view_id = 0;
  PinholeCamera camera;
  Tensor depth;       // [H,W]
  Tensor confidence;  // [H,W], optional
  Tensor image;
};

// 1 where confidence >= conf_threshold.
Tensor photometric_filter(const DepthMap& dm, const FusionConfig& config);

struct Consistency {
  Tensor mask;         // [H,W] 1 where >= min_consistent_views sources agree
  Tensor count;        // [H,W] number of agreeing sources
  Tensor fused_depth;  // [H,W] mean of the reference depth and agreeing back-projected depths
};

// Round-trip check of every reference pixel against each source: project
// with the reference depth, read the source depth bilinearly (all four taps
// valid), lift that point and project it back. When that fails the nearest
// source pixel gets a second try. A source agrees when the
// returned pixel lies within reproj_px_threshold and the returned depth
// within rel_depth_threshold (relative) of the reference.
Consistency geometric_filter(const DepthView& ref, const std::vector<DepthView>& sources,
                             const FusionConfig& config);

// Unprojects depths[i] at every pixel with masks[i] set, for each view in
// turn. Colours come from the view images when all views have one.
PointCloud fuse(const std::vector<DepthView>& views, const std::vector<Tensor>& masks,
                const std::vector<Tensor>& depths);

// Photometric and geometric filtering of every view against its paired
// sources, then fusion. Views without a confidence map skip the
// photometric filter.
PointCloud fuse_views(const std::vector<DepthView>& views, const std::vector<Pairing>& pairs,
                      const FusionConfig& config);

struct CloudMetrics {
  double accuracy = 0;      // mean recon -> gt nearest distance over inliers
  double completeness = 0;  // mean gt -> recon nearest distance over inliers
  double overall = 0;
  std::size_t accuracy_inliers = 0;
  std::size_t completeness_inliers = 0;
};

// Nearest-neighbour distances through a uniform grid hash. Distances above
// outlier_dist are discarded; a direction with no inlier reports NaN.
// Throws UsageError for an empty cloud or a non-positive outlier_dist.
CloudMetrics accuracy_completeness(const PointCloud& recon, const PointCloud& gt, double outlier_dist);

// 5 % of the bounding-box diagonal of the cloud.
double default_outlier_distance(const PointCloud& gt);

}  // namespace mvstr
