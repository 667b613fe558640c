#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvstr/camera.hpp"
#include "mvstr/io.hpp"

namespace mvstr {

enum class Geometry { plane, two_planes, sphere };

std::string to_string(Geometry g);
Geometry geometry_from_string(const std::string& s);

// Cameras sit on a horizontal arc around the origin on the -z side and look
// at the origin. Surfaces carry a smooth solid texture, so every view sees
// the same colour at a given world point.
struct SceneSpec {
  Geometry geometry = Geometry::plane;
  std::uint64_t seed = 1;
  int num_views = 5;
  double ring_radius = 3.0;
  double ring_spacing_deg = 8.0;  // angle between neighbouring cameras
  double elevation = 0.15;        // camera height as a fraction of the radius
  int width = 64;
  int height = 64;
  double focal = 64.0;  // pixels
  // Zero means derived from the rendered depths with a 5 % margin.
  double depth_min = 0.0;
  double depth_max = 0.0;
  double plane_tilt_deg = 20.0;   // plane normal rotation about the y axis
  double step_offset = 0.4;       // two_planes: x >= 0 half is this much nearer
  double sphere_radius = 1.0;
  double backdrop_gap = 1.0;      // sphere: backdrop plane distance behind the sphere
  double texture_period = 0.9;    // world units per checker period
  int num_sources = 4;            // pairing entries per reference
};

void validate(const SceneSpec& spec);

struct RenderedView {
  CameraView view;
  Tensor depth;  // [H,W] z-depth, 0 where invalid
  Tensor mask;   // [H,W] 1 where depth is valid
};

struct Scene {
  std::vector<RenderedView> views;
  std::vector<Pairing> pairs;
};

// Ray casts every pixel centre. Images are quantized to 8 bits so the
// exported PPM reproduces them exactly. Throws ConfigError for a degenerate
// rig (a camera on or inside the geometry).
Scene render_scene(const SceneSpec& spec, Precision p = default_precision());

// Z-depth of the first surface seen through pixel (u, v), or -1 for a miss.
double cast_depth(const SceneSpec& spec, const PinholeCamera& cam, double u, double v);

// Texture colour at a world point, components in (0, 1).
Eigen::Vector3d scene_texture(const SceneSpec& spec, const Eigen::Vector3d& X);

// Writes images/<id>.ppm, cams/<id>.txt, depths/<id>.pfm, pair.txt and gt.ply
// (GT depths of every view unprojected).
void export_dataset(const Scene& scene, const std::string& dir);

// Loads a directory written by export_dataset. Depth maps are optional.
Scene load_dataset(const std::string& dir, Precision p = default_precision());

// Nearest `count` other views by camera-centre distance, ties by id.
std::vector<Pairing> make_pairs(const std::vector<CameraView>& views, int count);

}  // namespace mvstr
