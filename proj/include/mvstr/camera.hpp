#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>

#include "mvstr/tensor.hpp"

namespace mvstr {

// Pinhole camera. Pixel coordinates put integers at pixel centres, so the
// homogeneous pixel is (u, v, 1). R and t map world to camera.
struct PinholeCamera {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  int width = 0;
  int height = 0;

  Eigen::Vector3d center() const { return -R.transpose() * t; }
  // World point to (u, v, z_camera).
  Eigen::Vector3d project(const Eigen::Vector3d& X) const;
  // Pixel plus z-depth to world point.
  Eigen::Vector3d unproject(double u, double v, double depth) const;
  // Inside the pixel-centre rectangle, with `tol` pixels of slack for rounding.
  bool inside(double u, double v, double tol = 1e-6) const {
    return u >= -tol && v >= -tol && u <= width - 1 + tol && v <= height - 1 + tol;
  }
};

// One input view: image in [0, 1], its camera and the scene depth range.
struct CameraView {
  Tensor image;  // [3,H,W]
  PinholeCamera camera;
  double depth_min = 0;
  double depth_max = 0;
  int view_id = 0;

  int height() const { return camera.height; }
  int width() const { return camera.width; }
};

// World-to-camera pose looking from `eye` toward `target`; camera y points
// along -up in the image plane (y down).
void look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up,
             Eigen::Matrix3d& R, Eigen::Vector3d& t);

// Throws ConfigError unless R is a rotation, K is upper-triangular with
// positive focals and 0 < depth_min < depth_max.
void validate_view(const CameraView& view);
void validate_camera(const PinholeCamera& cam);

// Scales focal lengths, skew and principal point by `factor`.
Eigen::Matrix3d scale_intrinsics(const Eigen::Matrix3d& K, double factor);
// Camera for the image resized by `factor` (dimensions rounded).
PinholeCamera camera_at_scale(const PinholeCamera& cam, double factor);

// Depth planes for the plane sweep. `values` is [D] (shared by every pixel)
// or [D,H,W] (per pixel); strictly increasing along D.
struct DepthHypotheses {
  Tensor values;
  int stage = 1;

  std::int64_t count() const { return values.dim(0); }
  bool per_pixel() const { return values.rank() == 3; }
};

// D planes uniformly spaced in inverse depth over [depth_min, depth_max].
DepthHypotheses initial_hypotheses(double depth_min, double depth_max, int D,
                                   Precision p = default_precision());

// Allowed depth interval for refined hypotheses.
struct DepthBounds {
  double lo = 0;
  double hi = 0;
};

// Per-pixel D planes centred on prev_depth[H,W] with uniform spacing. The
// window slides up to stay positive (and within `bounds` when given)
// without changing its spacing.
DepthHypotheses refine_hypotheses(const Tensor& prev_depth, int D, double interval,
                                  std::optional<DepthBounds> bounds = std::nullopt, int stage = 2);

// Source-pixel coordinates of every (depth plane, reference pixel).
struct WarpGrid {
  Tensor coords;  // [D,H,W,2], NaN where the point is behind the source
  Tensor valid;   // [D,H,W], 1 where in front of the source and inside it
};

WarpGrid build_warp_grid(const PinholeCamera& ref, const PinholeCamera& src,
                         const DepthHypotheses& hyp);

// World point per pixel, [H,W,3].
Tensor unproject_depth(const PinholeCamera& cam, const Tensor& depth);

// Camera text file: "extrinsic", 4x4 world-to-camera matrix, blank line,
// "intrinsic", 3x3 K, blank line, "<depth_min> <depth_max>".
struct CameraFile {
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  Eigen::Vector3d t = Eigen::Vector3d::Zero();
  double depth_min = 0;
  double depth_max = 0;
};

void write_camera_file(const std::string& path, const CameraFile& cam);
CameraFile read_camera_file(const std::string& path);
std::string format_camera_file(const CameraFile& cam);
CameraFile parse_camera_file(const std::string& text, const std::string& origin = "<string>");

}  // namespace mvstr
