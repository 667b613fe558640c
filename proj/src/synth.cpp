#include "mvstr/synth.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>

#include "mvstr/errors.hpp"

namespace mvstr {

namespace fs = std::filesystem;

std::string to_string(Geometry g) {
  switch (g) {
    case Geometry::plane: return "plane";
    case Geometry::two_planes: return "two_planes";
    case Geometry::sphere: return "sphere";
  }
  return "plane";
}

Geometry geometry_from_string(const std::string& s) {
  if (s == "plane") return Geometry::plane;
  if (s == "two_planes") return Geometry::two_planes;
  if (s == "sphere") return Geometry::sphere;
  throw ConfigError("unknown geometry '" + s + "' (expected plane, two_planes or sphere)");
}

void validate(const SceneSpec& s) {
  if (s.num_views < 2) throw ConfigError("scene needs at least 2 views");
  if (s.width <= 0 || s.height <= 0 || s.width % 4 != 0 || s.height % 4 != 0) {
    throw ConfigError("scene resolution must be positive and divisible by 4");
  }
  if (!(s.ring_radius > 0) || !(s.focal > 0) || !(s.texture_period > 0)) {
    throw ConfigError("ring radius, focal length and texture period must be positive");
  }
  if (s.num_sources < 1) throw ConfigError("num_sources must be >= 1");
  if (s.depth_min != 0 || s.depth_max != 0) {
    if (!(s.depth_min > 0 && s.depth_min < s.depth_max)) {
      throw ConfigError("depth range must satisfy 0 < depth_min < depth_max");
    }
  }
  if (s.geometry == Geometry::sphere && !(s.sphere_radius > 0 && s.backdrop_gap > 0)) {
    throw ConfigError("sphere radius and backdrop gap must be positive");
  }
  if (s.geometry == Geometry::two_planes && !(s.step_offset > 0)) {
    throw ConfigError("two_planes step offset must be positive");
  }
}

namespace {

struct Wave {
  Eigen::Vector3d dir;
  double freq;
  double phase;
};

struct Texture {
  double period;
  std::array<Eigen::Vector3d, 3> offsets;  // per-channel checker phase
  std::array<std::vector<Wave>, 3> waves;
};

Texture make_texture(const SceneSpec& spec) {
  std::mt19937_64 rng(spec.seed * 0x9E3779B97F4A7C15ULL + 17);
  std::normal_distribution<double> n01(0, 1);
  std::uniform_real_distribution<double> u(0, 1);
  Texture t;
  t.period = spec.texture_period;
  for (auto& o : t.offsets) o = Eigen::Vector3d(u(rng), u(rng), u(rng)) * spec.texture_period;
  for (auto& list : t.waves) {
    for (int k = 0; k < 4; ++k) {
      Eigen::Vector3d d(n01(rng), n01(rng), n01(rng));
      d.normalize();
      list.push_back({d, (0.6 + 0.8 * u(rng)) / spec.texture_period, 2 * M_PI * u(rng)});
    }
  }
  return t;
}

Eigen::Vector3d shade(const Texture& t, const Eigen::Vector3d& X) {
  const double k = 2 * M_PI / t.period;
  Eigen::Vector3d rgb;
  for (int c = 0; c < 3; ++c) {
    const Eigen::Vector3d P = X + t.offsets[static_cast<std::size_t>(c)];
    const double checker =
        std::tanh(2.5 * std::sin(k * P.x()) * std::sin(k * P.y()) * (0.6 + 0.4 * std::cos(k * P.z())));
    double noise = 0;
    for (const auto& w : t.waves[static_cast<std::size_t>(c)]) noise += std::sin(w.freq * 2 * M_PI * w.dir.dot(X) + w.phase);
    rgb[c] = std::clamp(0.5 + 0.25 * checker + 0.06 * noise, 0.05, 0.95);
  }
  return rgb;
}

struct PlaneEq {
  Eigen::Vector3d n;
  double c;  // n . X = c
};

// Smallest t > 0 with n . (C + t d) = c.
double hit_plane(const PlaneEq& p, const Eigen::Vector3d& C, const Eigen::Vector3d& d) {
  const double den = p.n.dot(d);
  if (std::abs(den) < 1e-12) return -1;
  return (p.c - p.n.dot(C)) / den;
}

double hit_sphere(const Eigen::Vector3d& centre, double r, const Eigen::Vector3d& C, const Eigen::Vector3d& d) {
  const Eigen::Vector3d oc = C - centre;
  const double a = d.squaredNorm();
  const double b = 2 * oc.dot(d);
  const double c = oc.squaredNorm() - r * r;
  const double disc = b * b - 4 * a * c;
  if (disc < 0) return -1;
  const double sq = std::sqrt(disc);
  const double t0 = (-b - sq) / (2 * a);
  if (t0 > 0) return t0;
  const double t1 = (-b + sq) / (2 * a);
  return t1 > 0 ? t1 : -1;
}

PlaneEq tilted_plane(double tilt_deg) {
  const double a = tilt_deg * M_PI / 180.0;
  return {Eigen::Vector3d(std::sin(a), 0, std::cos(a)), 0.0};
}

// Ray parameter t of the first surface hit along C + t d, or -1.
double cast(const SceneSpec& spec, const Eigen::Vector3d& C, const Eigen::Vector3d& d) {
  switch (spec.geometry) {
    case Geometry::plane: return hit_plane(tilted_plane(spec.plane_tilt_deg), C, d);
    case Geometry::two_planes: {
      const PlaneEq back{Eigen::Vector3d::UnitZ(), 0.0};
      const PlaneEq front{Eigen::Vector3d::UnitZ(), -spec.step_offset};
      double best = -1;
      const double tb = hit_plane(back, C, d);
      if (tb > 0 && (C + tb * d).x() < 0) best = tb;
      const double tf = hit_plane(front, C, d);
      if (tf > 0 && (C + tf * d).x() >= 0 && (best < 0 || tf < best)) best = tf;
      return best;
    }
    case Geometry::sphere: {
      const double ts = hit_sphere(Eigen::Vector3d::Zero(), spec.sphere_radius, C, d);
      if (ts > 0) return ts;
      const PlaneEq backdrop{Eigen::Vector3d::UnitZ(), spec.sphere_radius + spec.backdrop_gap};
      return hit_plane(backdrop, C, d);
    }
  }
  return -1;
}

void check_rig(const SceneSpec& spec, const Eigen::Vector3d& C, int id) {
  const auto where = "camera " + std::to_string(id);
  switch (spec.geometry) {
    case Geometry::plane: {
      const auto p = tilted_plane(spec.plane_tilt_deg);
      if (p.n.dot(C) - p.c > -1e-6) throw ConfigError(where + " is on or behind the plane");
      break;
    }
    case Geometry::two_planes:
      if (C.z() > -spec.step_offset - 1e-6) throw ConfigError(where + " is on or behind the front plane");
      break;
    case Geometry::sphere:
      if (C.norm() <= spec.sphere_radius + 1e-6) throw ConfigError(where + " is inside the sphere");
      if (C.z() >= spec.sphere_radius + spec.backdrop_gap) throw ConfigError(where + " is behind the backdrop");
      break;
  }
}

}  // namespace

double cast_depth(const SceneSpec& spec, const PinholeCamera& cam, double u, double v) {
  const Eigen::Vector3d d = cam.R.transpose() * (cam.K.inverse() * Eigen::Vector3d(u, v, 1.0));
  return cast(spec, cam.center(), d);
}

Eigen::Vector3d scene_texture(const SceneSpec& spec, const Eigen::Vector3d& X) {
  return shade(make_texture(spec), X);
}

std::vector<Pairing> make_pairs(const std::vector<CameraView>& views, int count) {
  std::vector<Pairing> pairs;
  for (const auto& ref : views) {
    std::vector<const CameraView*> others;
    for (const auto& v : views) {
      if (v.view_id != ref.view_id) others.push_back(&v);
    }
    const Eigen::Vector3d c = ref.camera.center();
    std::stable_sort(others.begin(), others.end(), [&](const CameraView* a, const CameraView* b) {
      const double da = (a->camera.center() - c).norm();
      const double db = (b->camera.center() - c).norm();
      if (std::abs(da - db) > 1e-9) return da < db;
      return a->view_id < b->view_id;
    });
    Pairing p;
    p.ref = ref.view_id;
    for (std::size_t i = 0; i < others.size() && static_cast<int>(i) < count; ++i) p.srcs.push_back(others[i]->view_id);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

Scene render_scene(const SceneSpec& spec, Precision prec) {
  validate(spec);
  const Texture tex = make_texture(spec);
  const int H = spec.height;
  const int W = spec.width;
  Eigen::Matrix3d K;
  K << spec.focal, 0, 0.5 * (W - 1), 0, spec.focal, 0.5 * (H - 1), 0, 0, 1;
  const Eigen::Matrix3d K_inv = K.inverse();

  Scene scene;
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0;
  for (int i = 0; i < spec.num_views; ++i) {
    const double theta = (i - 0.5 * (spec.num_views - 1)) * spec.ring_spacing_deg * M_PI / 180.0;
    const Eigen::Vector3d eye(spec.ring_radius * std::sin(theta), spec.ring_radius * spec.elevation,
                              -spec.ring_radius * std::cos(theta));
    check_rig(spec, eye, i);
    PinholeCamera cam;
    cam.K = K;
    cam.width = W;
    cam.height = H;
    look_at(eye, Eigen::Vector3d::Zero(), Eigen::Vector3d::UnitY(), cam.R, cam.t);

    std::vector<double> rgb(static_cast<std::size_t>(3 * H * W));
    std::vector<double> depth(static_cast<std::size_t>(H * W), 0.0);
    std::vector<double> mask(static_cast<std::size_t>(H * W), 0.0);
    const Eigen::Matrix3d Rt = cam.R.transpose();
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        // Camera-frame ray with unit z, so the hit parameter is the z-depth.
        const Eigen::Vector3d d = Rt * (K_inv * Eigen::Vector3d(x, y, 1.0));
        const double t = cast(spec, eye, d);
        const auto o = static_cast<std::size_t>(y * W + x);
        Eigen::Vector3d colour(0, 0, 0);
        if (t > 0) {
          colour = shade(tex, eye + t * d);
          depth[o] = t;
          mask[o] = 1.0;
          lo = std::min(lo, t);
          hi = std::max(hi, t);
        }
        for (int c = 0; c < 3; ++c) {
          rgb[static_cast<std::size_t>(c * H * W) + o] = std::round(colour[c] * 255.0) / 255.0;
        }
      }
    }
    RenderedView rv;
    rv.view.camera = cam;
    rv.view.view_id = i;
    rv.view.image = Tensor::from_vector({3, H, W}, std::span<const double>(rgb), prec);
    rv.depth = Tensor::from_vector({H, W}, std::span<const double>(depth), prec);
    rv.mask = Tensor::from_vector({H, W}, std::span<const double>(mask), prec);
    scene.views.push_back(std::move(rv));
  }
  if (!(hi > 0)) throw ConfigError("no camera sees the geometry");
  double dmin = spec.depth_min;
  double dmax = spec.depth_max;
  if (dmin == 0 && dmax == 0) {
    dmin = 0.95 * lo;
    dmax = 1.05 * hi;
  }
  std::vector<CameraView> cams;
  for (auto& v : scene.views) {
    v.view.depth_min = dmin;
    v.view.depth_max = dmax;
    cams.push_back(v.view);
  }
  scene.pairs = make_pairs(cams, spec.num_sources);
  return scene;
}

void export_dataset(const Scene& scene, const std::string& dir) {
  const fs::path root(dir);
  std::error_code ec;
  for (const char* sub : {"images", "cams", "depths"}) {
    fs::create_directories(root / sub, ec);
    if (ec) throw IoError("cannot create " + (root / sub).string() + ": " + ec.message());
  }
  PointCloud gt;
  for (const auto& v : scene.views) {
    const auto id = std::to_string(v.view.view_id);
    write_ppm((root / "images" / (id + ".ppm")).string(), v.view.image);
    write_camera_file((root / "cams" / (id + ".txt")).string(),
                      CameraFile{v.view.camera.K, v.view.camera.R, v.view.camera.t, v.view.depth_min,
                                 v.view.depth_max});
    if (v.depth.defined()) {
      write_pfm((root / "depths" / (id + ".pfm")).string(), v.depth);
      const auto pts = unproject_depth(v.view.camera, v.depth.to(Precision::verification)).to_vector();
      const auto m = v.mask.to_vector();
      for (std::size_t i = 0; i < m.size(); ++i) {
        if (m[i] > 0) gt.points.emplace_back(pts[3 * i], pts[3 * i + 1], pts[3 * i + 2]);
      }
    }
  }
  write_pairs((root / "pair.txt").string(), scene.pairs);
  if (!gt.points.empty()) write_ply((root / "gt.ply").string(), gt);
}

Scene load_dataset(const std::string& dir, Precision p) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw IoError("dataset directory " + dir + " does not exist");
  Scene scene;
  scene.pairs = read_pairs((root / "pair.txt").string());
  std::vector<int> ids;
  for (const auto& pr : scene.pairs) {
    ids.push_back(pr.ref);
    ids.insert(ids.end(), pr.srcs.begin(), pr.srcs.end());
  }
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  for (int id : ids) {
    const auto name = std::to_string(id);
    RenderedView rv;
    rv.view.view_id = id;
    rv.view.image = read_ppm((root / "images" / (name + ".ppm")).string(), p);
    const auto cam = read_camera_file((root / "cams" / (name + ".txt")).string());
    rv.view.camera.K = cam.K;
    rv.view.camera.R = cam.R;
    rv.view.camera.t = cam.t;
    rv.view.camera.height = static_cast<int>(rv.view.image.dim(1));
    rv.view.camera.width = static_cast<int>(rv.view.image.dim(2));
    rv.view.depth_min = cam.depth_min;
    rv.view.depth_max = cam.depth_max;
    const auto depth_path = root / "depths" / (name + ".pfm");
    if (fs::exists(depth_path)) {
      rv.depth = read_pfm(depth_path.string(), p);
      const auto d = rv.depth.to_vector();
      std::vector<double> m(d.size());
      for (std::size_t i = 0; i < d.size(); ++i) m[i] = d[i] > 0 ? 1.0 : 0.0;
      rv.mask = Tensor::from_vector(rv.depth.shape(), std::span<const double>(m), p);
    }
    scene.views.push_back(std::move(rv));
  }
  return scene;
}

}  // namespace mvstr
