#include "mvstr/camera.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mvstr/errors.hpp"

namespace mvstr {

Eigen::Vector3d PinholeCamera::project(const Eigen::Vector3d& X) const {
  const Eigen::Vector3d q = K * (R * X + t);
  return {q.x() / q.z(), q.y() / q.z(), q.z()};
}

Eigen::Vector3d PinholeCamera::unproject(double u, double v, double depth) const {
  const Eigen::Vector3d ray = K.inverse() * Eigen::Vector3d(u, v, 1.0);
  return R.transpose() * (depth * ray - t);
}

void look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
             Eigen::Matrix3d& R, Eigen::Vector3d& t) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = (-up).cross(z);
  if (x.norm() < 1e-9) throw ConfigError("look_at: viewing direction parallel to up vector");
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  R.row(0) = x.transpose();
  R.row(1) = y.transpose();
  R.row(2) = z.transpose();
  t = -R * eye;
}

void validate_camera(const PinholeCamera& cam) {
  const Eigen::Matrix3d e = cam.R.transpose() * cam.R - Eigen::Matrix3d::Identity();
  if (e.cwiseAbs().maxCoeff() >= 1e-5 || std::abs(cam.R.determinant() - 1.0) >= 1e-5) {
    throw ConfigError("rotation is not orthonormal with det 1");
  }
  if (cam.K(1, 0) != 0 || cam.K(2, 0) != 0 || cam.K(2, 1) != 0) {
    throw ConfigError("intrinsic matrix is not upper-triangular");
  }
  if (!(cam.K(0, 0) > 0 && cam.K(1, 1) > 0)) throw ConfigError("focal lengths must be positive");
  if (cam.width <= 0 || cam.height <= 0) throw ConfigError("camera has empty image size");
}

void validate_view(const CameraView& view) {
  validate_camera(view.camera);
  if (!(view.depth_min > 0 && view.depth_min < view.depth_max)) {
    throw ConfigError("depth range must satisfy 0 < depth_min < depth_max");
  }
  if (view.image.defined()) {
    const Shape expect{3, view.camera.height, view.camera.width};
    if (view.image.shape() != expect) {
      throw DimensionError("image shape " + shape_str(view.image.shape()) + " does not match camera " +
                           shape_str(expect));
    }
  }
}

Eigen::Matrix3d scale_intrinsics(const Eigen::Matrix3d& K, double factor) {
  Eigen::Matrix3d out = K;
  out.row(0) *= factor;
  out.row(1) *= factor;
  return out;
}

PinholeCamera camera_at_scale(const PinholeCamera& cam, double factor) {
  PinholeCamera out = cam;
  out.K = scale_intrinsics(cam.K, factor);
  out.width = static_cast<int>(std::lround(cam.width * factor));
  out.height = static_cast<int>(std::lround(cam.height * factor));
  return out;
}

DepthHypotheses initial_hypotheses(double depth_min, double depth_max, int D, Precision p) {
  if (D < 2) throw ConfigError("initial_hypotheses needs D >= 2");
  if (!(depth_min > 0 && depth_min < depth_max)) {
    throw ConfigError("depth range must satisfy 0 < depth_min < depth_max");
  }
  std::vector<double> v(static_cast<std::size_t>(D));
  const double inv_near = 1.0 / depth_min;
  const double inv_far = 1.0 / depth_max;
  for (int i = 0; i < D; ++i) {
    const double a = static_cast<double>(i) / (D - 1);
    v[static_cast<std::size_t>(i)] = 1.0 / (inv_near + a * (inv_far - inv_near));
  }
  v.front() = depth_min;
  v.back() = depth_max;
  return {Tensor::from_vector({D}, std::span<const double>(v), p), 1};
}

DepthHypotheses refine_hypotheses(const Tensor& prev_depth, int D, double interval,
                                  std::optional<DepthBounds> bounds, int stage) {
  if (prev_depth.rank() != 2) {
    throw DimensionError("refine_hypotheses expects [H,W] depth, got " + shape_str(prev_depth.shape()));
  }
  if (D < 1 || !(interval > 0)) throw ConfigError("refine_hypotheses needs D >= 1 and interval > 0");
  const auto H = prev_depth.dim(0);
  const auto W = prev_depth.dim(1);
  const auto plane = H * W;
  const double half = 0.5 * (D - 1) * interval;
  // Smallest admissible first plane: strictly positive, half a step clear of zero.
  double lo = 0.5 * interval;
  double hi = std::numeric_limits<double>::infinity();
  if (bounds) {
    lo = std::max(lo, bounds->lo);
    hi = bounds->hi;
  }
  const auto centre = prev_depth.to_vector();
  return {dispatch(prev_depth.precision(),
                   [&]<class T>() {
                     std::vector<T> out(static_cast<std::size_t>(D * plane));
                     for (std::int64_t i = 0; i < plane; ++i) {
                       double first = centre[static_cast<std::size_t>(i)] - half;
                       if (!std::isfinite(first)) first = lo;
                       if (first + 2 * half > hi) first = hi - 2 * half;
                       if (first < lo) first = lo;
                       for (int d = 0; d < D; ++d) {
                         out[static_cast<std::size_t>(d * plane + i)] = static_cast<T>(first + d * interval);
                       }
                     }
                     return Tensor::from_buffer<T>({D, H, W}, std::move(out));
                   }),
          stage};
}

namespace {

Eigen::Matrix3d checked_inverse(const Eigen::Matrix3d& K) {
  const double det = K.determinant();
  if (!std::isfinite(det) || std::abs(det) < 1e-12) {
    throw NumericalError("intrinsic matrix is singular");
  }
  return K.inverse();
}

}  // namespace

WarpGrid build_warp_grid(const PinholeCamera& ref, const PinholeCamera& src,
                         const DepthHypotheses& hyp) {
  if (ref.width != src.width || ref.height != src.height) {
    throw DimensionError("reference and source cameras have different resolutions");
  }
  const std::int64_t H = ref.height;
  const std::int64_t W = ref.width;
  const std::int64_t D = hyp.count();
  if (hyp.per_pixel() && (hyp.values.dim(1) != H || hyp.values.dim(2) != W)) {
    throw DimensionError("hypotheses " + shape_str(hyp.values.shape()) + " do not match image " +
                         shape_str({H, W}));
  }
  const Eigen::Matrix3d Kr_inv = checked_inverse(ref.K);
  checked_inverse(src.K);
  const auto depths = hyp.values.to_vector();
  const auto plane = H * W;

  return dispatch(hyp.values.precision(), [&]<class T>() {
    std::vector<T> coords(static_cast<std::size_t>(D * plane * 2));
    std::vector<T> valid(static_cast<std::size_t>(D * plane));
    const T nan = std::numeric_limits<T>::quiet_NaN();
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        const Eigen::Vector3d ray = Kr_inv * Eigen::Vector3d(double(x), double(y), 1.0);
        for (std::int64_t d = 0; d < D; ++d) {
          const auto o = static_cast<std::size_t>(d * plane + y * W + x);
          const double depth = depths[static_cast<std::size_t>(hyp.per_pixel() ? o : d)];
          const Eigen::Vector3d X = ref.R.transpose() * (depth * ray - ref.t);
          const Eigen::Vector3d q = src.K * (src.R * X + src.t);
          if (!(q.z() > 0)) {
            coords[2 * o] = nan;
            coords[2 * o + 1] = nan;
            continue;
          }
          const double u = q.x() / q.z();
          const double v = q.y() / q.z();
          coords[2 * o] = static_cast<T>(u);
          coords[2 * o + 1] = static_cast<T>(v);
          valid[o] = src.inside(u, v) ? T(1) : T(0);
        }
      }
    }
    return WarpGrid{Tensor::from_buffer<T>({D, H, W, 2}, std::move(coords)),
                    Tensor::from_buffer<T>({D, H, W}, std::move(valid))};
  });
}

Tensor unproject_depth(const PinholeCamera& cam, const Tensor& depth) {
  if (depth.rank() != 2) {
    throw DimensionError("unproject_depth expects [H,W], got " + shape_str(depth.shape()));
  }
  const auto H = depth.dim(0);
  const auto W = depth.dim(1);
  const Eigen::Matrix3d K_inv = checked_inverse(cam.K);
  const auto dv = depth.to_vector();
  return dispatch(depth.precision(), [&]<class T>() {
    std::vector<T> out(static_cast<std::size_t>(H * W * 3));
    for (std::int64_t y = 0; y < H; ++y) {
      for (std::int64_t x = 0; x < W; ++x) {
        const auto i = static_cast<std::size_t>(y * W + x);
        const Eigen::Vector3d ray = K_inv * Eigen::Vector3d(double(x), double(y), 1.0);
        const Eigen::Vector3d X = cam.R.transpose() * (dv[i] * ray - cam.t);
        for (int c = 0; c < 3; ++c) out[3 * i + c] = static_cast<T>(X[c]);
      }
    }
    return Tensor::from_buffer<T>({H, W, 3}, std::move(out));
  });
}

namespace {

// Shortest fixed-notation text that parses back to the same double.
std::string decimal(double v) {
  char buf[512];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed);
  if (res.ec != std::errc()) throw IoError("cannot format camera value");
  return std::string(buf, res.ptr);
}

double parse_number(std::istringstream& in, const std::string& origin) {
  std::string tok;
  if (!(in >> tok)) throw IoError(origin + ": truncated camera file");
  double v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
    throw IoError(origin + ": bad number '" + tok + "' in camera file");
  }
  return v;
}

void expect_word(std::istringstream& in, const std::string& word, const std::string& origin) {
  std::string tok;
  if (!(in >> tok) || tok != word) {
    throw IoError(origin + ": expected '" + word + "' in camera file");
  }
}

}  // namespace

std::string format_camera_file(const CameraFile& cam) {
  std::string s = "extrinsic\n";
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) s += decimal(cam.R(r, c)) + " ";
    s += decimal(cam.t[r]) + "\n";
  }
  s += "0 0 0 1\n\nintrinsic\n";
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) s += decimal(cam.K(r, c)) + (c < 2 ? " " : "\n");
  }
  s += "\n" + decimal(cam.depth_min) + " " + decimal(cam.depth_max) + "\n";
  return s;
}

CameraFile parse_camera_file(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  CameraFile cam;
  expect_word(in, "extrinsic", origin);
  double E[4][4];
  for (auto& row : E) {
    for (auto& v : row) v = parse_number(in, origin);
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) cam.R(r, c) = E[r][c];
    cam.t[r] = E[r][3];
  }
  expect_word(in, "intrinsic", origin);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) cam.K(r, c) = parse_number(in, origin);
  }
  cam.depth_min = parse_number(in, origin);
  cam.depth_max = parse_number(in, origin);
  return cam;
}

void write_camera_file(const std::string& path, const CameraFile& cam) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << format_camera_file(cam);
  if (!out) throw IoError("failed writing " + path);
}

CameraFile read_camera_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_camera_file(ss.str(), path);
}

}  // namespace mvstr
