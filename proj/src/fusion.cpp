#include "mvstr/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <unordered_map>

#include "mvstr/errors.hpp"

namespace mvstr {

namespace {

void check_map(const Tensor& map, const char* what) {
  if (!map.defined() || map.rank() != 2) {
    throw DimensionError(std::string(what) + " must be [H,W], got " +
                         (map.defined() ? shape_str(map.shape()) : std::string("an undefined tensor")));
  }
}

void check_view(const DepthView& v) {
  check_map(v.depth, "depth");
  if (v.depth.dim(0) != v.camera.height || v.depth.dim(1) != v.camera.width) {
    throw DimensionError("depth " + shape_str(v.depth.shape()) + " does not match the " +
                         std::to_string(v.camera.width) + "x" + std::to_string(v.camera.height) +
                         " camera of view " + std::to_string(v.view_id));
  }
  if (v.confidence.defined() && v.confidence.shape() != v.depth.shape()) {
    throw DimensionError("confidence " + shape_str(v.confidence.shape()) + " vs depth " + shape_str(v.depth.shape()));
  }
  if (v.image.defined() && v.image.shape() != Shape{3, v.depth.dim(0), v.depth.dim(1)}) {
    throw DimensionError("image " + shape_str(v.image.shape()) + " vs depth " + shape_str(v.depth.shape()));
  }
}

// Bilinear source depth at (u, v), or NaN when a tap is invalid.
double bilinear_depth(const std::vector<double>& d, int W, int H, double u, double v) {
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();
  if (!(u >= 0 && v >= 0 && u <= W - 1 && v <= H - 1)) return nan;
  const int x0 = std::min(static_cast<int>(u), std::max(W - 2, 0));
  const int y0 = std::min(static_cast<int>(v), std::max(H - 2, 0));
  const int x1 = std::min(x0 + 1, W - 1);
  const int y1 = std::min(y0 + 1, H - 1);
  const double fx = u - x0;
  const double fy = v - y0;
  const double a = d[static_cast<std::size_t>(y0 * W + x0)];
  const double b = d[static_cast<std::size_t>(y0 * W + x1)];
  const double c = d[static_cast<std::size_t>(y1 * W + x0)];
  const double e = d[static_cast<std::size_t>(y1 * W + x1)];
  if (!(a > 0 && b > 0 && c > 0 && e > 0)) return nan;
  return (1 - fy) * ((1 - fx) * a + fx * b) + fy * ((1 - fx) * c + fx * e);
}

struct CellKey {
  std::int64_t x, y, z;
  bool operator==(const CellKey&) const = default;
};

struct CellHash {
  std::size_t operator()(const CellKey& k) const {
    std::uint64_t h = static_cast<std::uint64_t>(k.x) * 0x9E3779B97F4A7C15ull;
    h ^= static_cast<std::uint64_t>(k.y) * 0xC2B2AE3D27D4EB4Full + (h << 6) + (h >> 2);
    h ^= static_cast<std::uint64_t>(k.z) * 0x165667B19E3779F9ull + (h << 6) + (h >> 2);
    return static_cast<std::size_t>(h);
  }
};

// Uniform grid with cell size equal to the search radius, so the 27 cells
// around a query hold every point within the radius.
class GridIndex {
 public:
  GridIndex(const std::vector<Eigen::Vector3d>& pts, double radius) : pts_(pts), cell_(radius) {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (pts[i].allFinite()) cells_[key(pts[i])].push_back(i);
    }
  }

  // Squared distance to the nearest point within the radius, or +inf.
  double nearest_sq(const Eigen::Vector3d& q) const {
    double best = std::numeric_limits<double>::infinity();
    if (!q.allFinite()) return best;
    const CellKey c = key(q);
    for (std::int64_t dx = -1; dx <= 1; ++dx) {
      for (std::int64_t dy = -1; dy <= 1; ++dy) {
        for (std::int64_t dz = -1; dz <= 1; ++dz) {
          auto it = cells_.find({c.x + dx, c.y + dy, c.z + dz});
          if (it == cells_.end()) continue;
          for (auto i : it->second) best = std::min(best, (pts_[i] - q).squaredNorm());
        }
      }
    }
    return best <= cell_ * cell_ ? best : std::numeric_limits<double>::infinity();
  }

 private:
  CellKey key(const Eigen::Vector3d& p) const {
    return {static_cast<std::int64_t>(std::floor(p.x() / cell_)), static_cast<std::int64_t>(std::floor(p.y() / cell_)),
            static_cast<std::int64_t>(std::floor(p.z() / cell_))};
  }

  const std::vector<Eigen::Vector3d>& pts_;
  double cell_;
  std::unordered_map<CellKey, std::vector<std::size_t>, CellHash> cells_;
};

// Mean nearest distance from `from` into `to` over distances <= radius.
std::pair<double, std::size_t> directed(const PointCloud& from, const GridIndex& to) {
  double acc = 0;
  std::size_t n = 0;
  for (const auto& p : from.points) {
    const double d2 = to.nearest_sq(p);
    if (std::isfinite(d2)) {
      acc += std::sqrt(d2);
      ++n;
    }
  }
  return {n > 0 ? acc / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN(), n};
}

}  // namespace

void validate(const FusionConfig& c) {
  if (!(c.conf_threshold >= 0 && c.conf_threshold <= 1)) throw ConfigError("conf_threshold must lie in [0, 1]");
  if (!(c.reproj_px_threshold > 0)) throw ConfigError("reproj_px_threshold must be positive");
  if (!(c.rel_depth_threshold > 0)) throw ConfigError("rel_depth_threshold must be positive");
  if (c.min_consistent_views < 0) throw ConfigError("min_consistent_views must be non-negative");
}

Tensor photometric_filter(const DepthMap& dm, const FusionConfig& config) {
  validate(config);
  check_map(dm.confidence, "confidence");
  const auto conf = dm.confidence.to_vector();
  std::vector<double> out(conf.size());
  for (std::size_t i = 0; i < conf.size(); ++i) out[i] = conf[i] >= config.conf_threshold ? 1.0 : 0.0;
  return Tensor::from_vector(dm.confidence.shape(), out, Precision::verification);
}

Consistency geometric_filter(const DepthView& ref, const std::vector<DepthView>& sources,
                             const FusionConfig& config) {
  validate(config);
  check_view(ref);
  for (const auto& s : sources) check_view(s);
  const int H = ref.camera.height;
  const int W = ref.camera.width;
  const auto rd = ref.depth.to_vector();
  std::vector<std::vector<double>> sd;
  for (const auto& s : sources) sd.push_back(s.depth.to_vector());

  std::vector<double> mask(rd.size(), 0.0), count(rd.size(), 0.0), fused(rd.size(), 0.0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto i = static_cast<std::size_t>(y * W + x);
      const double d = rd[i];
      if (!(d > 0) || !std::isfinite(d)) continue;
      const Eigen::Vector3d X = ref.camera.unproject(x, y, d);
      // Reference depth of the source point (su, sv, ds) when it passes both
      // thresholds, NaN otherwise.
      auto round_trip = [&](const PinholeCamera& cam, double su, double sv, double ds) {
        constexpr double nan = std::numeric_limits<double>::quiet_NaN();
        if (!(ds > 0) || !std::isfinite(ds)) return nan;
        const Eigen::Vector3d back = ref.camera.project(cam.unproject(su, sv, ds));
        if (!(back.z() > 0)) return nan;
        const double reproj = std::hypot(back.x() - x, back.y() - y);
        const bool ok = reproj < config.reproj_px_threshold && std::abs(back.z() - d) / d < config.rel_depth_threshold;
        return ok ? back.z() : nan;
      };
      double sum = d;
      int agree = 0;
      for (std::size_t k = 0; k < sources.size(); ++k) {
        const auto& cam = sources[k].camera;
        const Eigen::Vector3d p = cam.project(X);
        if (!(p.z() > 0)) continue;
        // Bilinear first; the nearest source pixel as a fallback so that a
        // read straddling a depth edge can still agree.
        double zb = round_trip(cam, p.x(), p.y(), bilinear_depth(sd[k], cam.width, cam.height, p.x(), p.y()));
        const double un = std::round(p.x());
        const double vn = std::round(p.y());
        if (!std::isfinite(zb) && cam.inside(un, vn, 0)) {
          zb = round_trip(cam, un, vn, sd[k][static_cast<std::size_t>(vn * cam.width + un)]);
        }
        if (std::isfinite(zb)) {
          sum += zb;
          ++agree;
        }
      }
      count[i] = agree;
      fused[i] = sum / (agree + 1);
      mask[i] = agree >= config.min_consistent_views ? 1.0 : 0.0;
    }
  }
  const Shape shape = ref.depth.shape();
  return {Tensor::from_vector(shape, mask, Precision::verification),
          Tensor::from_vector(shape, count, Precision::verification),
          Tensor::from_vector(shape, fused, Precision::verification)};
}

PointCloud fuse(const std::vector<DepthView>& views, const std::vector<Tensor>& masks,
                const std::vector<Tensor>& depths) {
  if (masks.size() != views.size() || depths.size() != views.size()) {
    throw UsageError("fuse: " + std::to_string(views.size()) + " views, " + std::to_string(masks.size()) +
                     " masks, " + std::to_string(depths.size()) + " depth maps");
  }
  const bool colours = !views.empty() && std::all_of(views.begin(), views.end(),
                                                     [](const DepthView& v) { return v.image.defined(); });
  PointCloud cloud;
  for (std::size_t k = 0; k < views.size(); ++k) {
    const auto& v = views[k];
    check_view(v);
    if (masks[k].shape() != v.depth.shape() || depths[k].shape() != v.depth.shape()) {
      throw DimensionError("fuse: mask " + shape_str(masks[k].shape()) + " / depth " + shape_str(depths[k].shape()) +
                           " vs view " + shape_str(v.depth.shape()));
    }
    const auto m = masks[k].to_vector();
    const auto d = depths[k].to_vector();
    const std::vector<double> img = colours ? v.image.to_vector() : std::vector<double>{};
    const int W = v.camera.width;
    const auto plane = m.size();
    for (std::size_t i = 0; i < plane; ++i) {
      if (m[i] == 0 || !(d[i] > 0) || !std::isfinite(d[i])) continue;
      const int x = static_cast<int>(i % static_cast<std::size_t>(W));
      const int y = static_cast<int>(i / static_cast<std::size_t>(W));
      cloud.points.push_back(v.camera.unproject(x, y, d[i]));
      if (colours) {
        std::array<std::uint8_t, 3> rgb{};
        for (std::size_t c = 0; c < 3; ++c) {
          const double val = std::clamp(img[c * plane + i], 0.0, 1.0);
          rgb[c] = static_cast<std::uint8_t>(std::lround(255.0 * val));
        }
        cloud.colors.push_back(rgb);
      }
    }
  }
  return cloud;
}

PointCloud fuse_views(const std::vector<DepthView>& views, const std::vector<Pairing>& pairs,
                      const FusionConfig& config) {
  validate(config);
  std::map<int, std::size_t> index;
  for (std::size_t k = 0; k < views.size(); ++k) {
    if (!index.emplace(views[k].view_id, k).second) {
      throw UsageError("duplicate view id " + std::to_string(views[k].view_id));
    }
  }
  auto find = [&](int id) -> const DepthView& {
    auto it = index.find(id);
    if (it == index.end()) throw UsageError("pairing references unknown view " + std::to_string(id));
    return views[it->second];
  };
  std::vector<DepthView> used;
  std::vector<Tensor> masks, depths;
  for (const auto& pair : pairs) {
    const auto& ref = find(pair.ref);
    std::vector<DepthView> srcs;
    for (int id : pair.srcs) srcs.push_back(find(id));
    auto geo = geometric_filter(ref, srcs, config);
    auto m = geo.mask.to_vector();
    if (ref.confidence.defined()) {
      const auto photo = photometric_filter(DepthMap{ref.depth, ref.confidence, 3}, config).to_vector();
      for (std::size_t i = 0; i < m.size(); ++i) m[i] *= photo[i];
    }
    used.push_back(ref);
    masks.push_back(Tensor::from_vector(ref.depth.shape(), m, Precision::verification));
    depths.push_back(geo.fused_depth);
  }
  return fuse(used, masks, depths);
}

CloudMetrics accuracy_completeness(const PointCloud& recon, const PointCloud& gt, double outlier_dist) {
  if (recon.points.empty() || gt.points.empty()) throw UsageError("accuracy_completeness needs two non-empty clouds");
  if (!(outlier_dist > 0) || !std::isfinite(outlier_dist)) throw UsageError("outlier distance must be positive");
  const GridIndex gt_index(gt.points, outlier_dist);
  const GridIndex recon_index(recon.points, outlier_dist);
  CloudMetrics m;
  std::tie(m.accuracy, m.accuracy_inliers) = directed(recon, gt_index);
  std::tie(m.completeness, m.completeness_inliers) = directed(gt, recon_index);
  m.overall = 0.5 * (m.accuracy + m.completeness);
  return m;
}

double default_outlier_distance(const PointCloud& gt) {
  if (gt.points.empty()) throw UsageError("default_outlier_distance of an empty cloud");
  Eigen::Vector3d lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d hi = -lo;
  for (const auto& p : gt.points) {
    if (!p.allFinite()) continue;
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double diag = (hi - lo).norm();
  if (!(diag > 0) || !std::isfinite(diag)) throw UsageError("cloud has no spatial extent");
  return 0.05 * diag;
}

}  // namespace mvstr
