#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mvstr/synth.hpp"

namespace mvstr::testing {

// Explicit j x j weight matrix per head with phi(x) = elu(x) + 1, rows
// normalized. Q, K, V are row-major [j, C].
inline std::vector<double> quadratic_attention(const std::vector<double>& Q, const std::vector<double>& K,
                                               const std::vector<double>& V, std::size_t j, std::size_t C,
                                               std::size_t heads) {
  auto phi = [](double x) { return x > 0 ? x + 1 : std::exp(x); };
  const std::size_t c = C / heads;
  std::vector<double> out(j * C, 0.0);
  std::vector<double> w(j);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < j; ++i) {
      double norm = 0;
      for (std::size_t k = 0; k < j; ++k) {
        double s = 0;
        for (std::size_t e = 0; e < c; ++e) s += phi(Q[i * C + h * c + e]) * phi(K[k * C + h * c + e]);
        w[k] = s;
        norm += s;
      }
      for (std::size_t k = 0; k < j; ++k) {
        for (std::size_t e = 0; e < c; ++e) out[i * C + h * c + e] += w[k] / norm * V[k * C + h * c + e];
      }
    }
  }
  return out;
}

// Reference pixels whose GT surface point is seen unoccluded, at least one
// pixel inside the border, by >= 2 other views. Visibility comes from the
// ray caster rather than from the depth maps.
inline std::vector<bool> mutually_visible(const SceneSpec& spec, const Scene& scene, std::size_t ref) {
  const auto& cam = scene.views[ref].view.camera;
  const auto depth = scene.views[ref].depth.to_vector();
  std::vector<bool> out(depth.size(), false);
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const auto i = static_cast<std::size_t>(y * cam.width + x);
      if (!(depth[i] > 0)) continue;
      const Eigen::Vector3d X = cam.unproject(x, y, depth[i]);
      int seen = 0;
      for (std::size_t k = 0; k < scene.views.size(); ++k) {
        if (k == ref) continue;
        const auto& sc = scene.views[k].view.camera;
        const Eigen::Vector3d p = sc.project(X);
        if (p.z() <= 0 || p.x() < 1 || p.y() < 1 || p.x() > sc.width - 2 || p.y() > sc.height - 2) continue;
        const double z = cast_depth(spec, sc, p.x(), p.y());
        if (z > 0 && std::abs(z - p.z()) < 1e-6 * p.z()) ++seen;
      }
      out[i] = seen >= 2;
    }
  }
  return out;
}

// Brute-force mean nearest distance over distances <= r.
inline double brute_directed(const std::vector<Eigen::Vector3d>& from, const std::vector<Eigen::Vector3d>& to,
                             double r, std::size_t& n) {
  double acc = 0;
  n = 0;
  for (const auto& p : from) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : to) best = std::min(best, (p - q).norm());
    if (best <= r) {
      acc += best;
      ++n;
    }
  }
  return n ? acc / static_cast<double>(n) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace mvstr::testing
