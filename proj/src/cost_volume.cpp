#include "mvstr/cost_volume.hpp"

#include <algorithm>
#include <numeric>

#include "mvstr/errors.hpp"
#include "mvstr/ops.hpp"

namespace mvstr {

namespace {

Tensor pairwise_sum(const std::vector<Tensor>& xs, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return xs[lo];
  const auto mid = lo + (hi - lo) / 2;
  return ops::add(pairwise_sum(xs, lo, mid), pairwise_sum(xs, mid, hi));
}

}  // namespace

Tensor groupwise_correlation(const Tensor& f_ref, const Tensor& f_warped, const Tensor& valid, int groups) {
  if (f_ref.rank() != 3 || f_warped.rank() != 4 || valid.rank() != 3) {
    throw DimensionError("groupwise_correlation: ref " + shape_str(f_ref.shape()) + ", warped " +
                         shape_str(f_warped.shape()) + ", valid " + shape_str(valid.shape()));
  }
  const auto C = f_ref.dim(0);
  const auto D = f_warped.dim(1);
  const auto h = f_ref.dim(1);
  const auto w = f_ref.dim(2);
  if (groups <= 0 || C % groups != 0) {
    throw ConfigError("feature channels " + std::to_string(C) + " not divisible by " +
                      std::to_string(groups) + " groups");
  }
  if (f_warped.shape() != Shape{C, D, h, w} || valid.shape() != Shape{D, h, w}) {
    throw DimensionError("groupwise_correlation: warped " + shape_str(f_warped.shape()) + " or valid " +
                         shape_str(valid.shape()) + " does not match ref " + shape_str(f_ref.shape()));
  }
  const auto c = C / groups;
  Tensor r = ops::reshape(f_ref, {groups, c, 1, h, w});
  Tensor s = ops::reshape(f_warped, {groups, c, D, h, w});
  Tensor corr = ops::mul_scalar(ops::sum(ops::mul(r, s), 1), 1.0 / static_cast<double>(c));
  return ops::mul(corr, valid.detach());
}

Tensor warp_features(const Tensor& feat, const WarpGrid& grid) {
  const auto C = feat.dim(0);
  const auto D = grid.coords.dim(0);
  const auto h = grid.coords.dim(1);
  const auto w = grid.coords.dim(2);
  Tensor g = ops::reshape(grid.coords, {1, D * h, w, 2});
  Tensor out = ops::grid_sample_bilinear(ops::unsqueeze(feat, 0), g).output;
  return ops::reshape(out, {C, D, h, w});
}

CostVolume build_cost_volume(const Tensor& ref_feat, const Tensor& src_feats, const PinholeCamera& ref_cam,
                             const std::vector<PinholeCamera>& src_cams, const std::vector<int>& src_ids,
                             const DepthHypotheses& hyp, int groups) {
  if (src_cams.empty()) throw UsageError("build_cost_volume needs at least one source view");
  if (src_feats.rank() != 4 || src_feats.dim(0) != static_cast<std::int64_t>(src_cams.size()) ||
      src_ids.size() != src_cams.size()) {
    throw UsageError("build_cost_volume: " + std::to_string(src_cams.size()) + " cameras, " +
                     std::to_string(src_ids.size()) + " ids, features " + shape_str(src_feats.shape()));
  }
  if (ref_feat.rank() != 3 || src_feats.dim(1) != ref_feat.dim(0) || src_feats.dim(2) != ref_feat.dim(1) ||
      src_feats.dim(3) != ref_feat.dim(2)) {
    throw DimensionError("build_cost_volume: ref " + shape_str(ref_feat.shape()) + " vs sources " +
                         shape_str(src_feats.shape()));
  }
  if (ref_cam.height != ref_feat.dim(1) || ref_cam.width != ref_feat.dim(2)) {
    throw DimensionError("build_cost_volume: camera size does not match features " +
                         shape_str(ref_feat.shape()));
  }
  std::vector<std::size_t> order(src_cams.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return src_ids[a] < src_ids[b]; });

  std::vector<Tensor> costs;
  std::vector<Tensor> valids;
  for (auto i : order) {
    WarpGrid grid = build_warp_grid(ref_cam, src_cams[i], hyp);
    grid.coords = grid.coords.to(ref_feat.precision());
    grid.valid = grid.valid.to(ref_feat.precision());
    Tensor src = ops::squeeze(ops::slice(src_feats, 0, static_cast<std::int64_t>(i), 1), 0);
    costs.push_back(groupwise_correlation(ref_feat, warp_features(src, grid), grid.valid, groups));
    valids.push_back(grid.valid);
  }
  Tensor count;
  {
    NoGradGuard no_grad;
    count = pairwise_sum(valids, 0, valids.size());
  }
  Tensor denom = dispatch(count.precision(), [&]<class T>() {
    auto c = count.data<T>();
    std::vector<T> d(c.size());
    for (std::size_t k = 0; k < d.size(); ++k) d[k] = std::max(c[k], T(1));
    return Tensor::from_buffer<T>(count.shape(), std::move(d));
  });
  CostVolume cv;
  cv.cost = ops::div(pairwise_sum(costs, 0, costs.size()), denom);
  cv.valid_count = count;
  cv.stage = hyp.stage;
  return cv;
}

}  // namespace mvstr
