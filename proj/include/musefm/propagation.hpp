#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "musefm/common.hpp"
#include "musefm/scene.hpp"

namespace musefm {

/// One propagation path from the BS (tx) to a UE (rx).
struct Path {
  double length = 0.0;
  double delay = 0.0;          // seconds, length / c
  double aod_azimuth = 0.0;    // phi, array frame
  double aod_elevation = 0.0;  // theta, array frame
  int n_bounces = 0;
  std::optional<int> reflector_id;
  Vec3 departure{1, 0, 0};     // unit vector, world frame
};

struct PathList {
  std::vector<Path> paths;
  Vec3 tx{0, 0, 0};
  Vec3 rx{0, 0, 0};
};

/// Orientation of the BS array: local x is the boresight (array normal), local z is world up.
struct ArrayFrame {
  Vec3 boresight{1, 0, 0};
  Vec3 lateral{0, 1, 0};
  Vec3 up{0, 0, 1};

  static ArrayFrame identity() { return {}; }
  /// Horizontal boresight pointing from `bs` toward the room centre.
  static ArrayFrame facing_room_center(const Vec3& bs);
  Vec3 to_local(const Vec3& world) const { return {boresight.dot(world), lateral.dot(world), up.dot(world)}; }
};

/// A planar reflecting face: plane `axis` == `coord`, facing `normal_sign` along that axis, bounded by
/// `lo`/`hi` in the remaining two axes (indices in ascending axis order).
struct Face {
  int axis = 0;
  double coord = 0.0;
  int normal_sign = 1;
  Eigen::Vector2d lo{0, 0};
  Eigen::Vector2d hi{0, 0};
  int id = 0;
};

/// Outer walls (ids 0-3), floor (4), ceiling (5), then four faces per internal wall (6 + 4 * w + f).
std::vector<Face> reflecting_faces(const Scene& scene);

/// Mirror image of `p` across the plane of `f`.
Vec3 mirror(const Vec3& p, const Face& f);

/// True iff the open segment (p, q) crosses a wall or cylinder footprint in the horizontal projection.
bool segment_blocked(const Scene& scene, const Vec3& p, const Vec3& q);

/// LOS plus first-order specular reflections via image sources. Only max_order in {0, 1} is supported.
PathList trace_paths(const Scene& scene, const Vec3& tx, const Vec3& rx, int max_order = 1,
                     const ArrayFrame& frame = ArrayFrame::identity());

/// (theta, phi) of a departure direction in the array frame: theta = acos(d_z), phi = atan2(d_y, d_x).
std::pair<double, double> path_geometry(const Vec3& direction, const ArrayFrame& frame = ArrayFrame::identity());

/// Unit direction in the array frame reconstructed from (theta, phi).
Vec3 direction_from_angles(double theta, double phi);

}  // namespace musefm
