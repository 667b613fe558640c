#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mvstr/tensor.hpp"

namespace mvstr {

// Binary PPM (P6, maxval 255). image [3,H,W] in [0,1], rounded to 8 bits.
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_ppm(const std::string& path, Precision p = default_precision());

// Greyscale PFM: "Pf", "<w> <h>", "-1.0", float32 little-endian rows stored
// bottom-up. map [H,W].
void write_pfm(const std::string& path, const Tensor& map);
Tensor read_pfm(const std::string& path, Precision p = default_precision());

struct Pairing {
  int ref = 0;
  std::vector<int> srcs;
};

// Lines "ref <id> srcs <id> <id> ...".
void write_pairs(const std::string& path, const std::vector<Pairing>& pairs);
std::vector<Pairing> read_pairs(const std::string& path);

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<std::array<std::uint8_t, 3>> colors;  // empty or one per point

  std::size_t size() const { return points.size(); }
  bool has_colors() const { return !colors.empty(); }
};

// ASCII PLY 1.0 with float x y z and optional uchar red green blue.
void write_ply(const std::string& path, const PointCloud& cloud);
PointCloud read_ply(const std::string& path);

}  // namespace mvstr
