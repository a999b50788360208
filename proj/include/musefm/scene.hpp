#pragma once

#include <cstdint>
#include <vector>

#include "musefm/common.hpp"

namespace musefm {

/// Axis-aligned internal wall, extruded over the full room height.
/// The footprint is the rectangle swept by `thickness` around the segment a-b.
struct Wall {
  Vec2 a{0, 0};
  Vec2 b{0, 0};
  double thickness = 0.2;

  bool horizontal() const { return a.y() == b.y(); }
  /// Footprint as [xmin, xmax] x [ymin, ymax].
  Eigen::Vector4d footprint() const;
  bool operator==(const Wall&) const = default;
};

struct Cylinder {
  Vec2 center{0, 0};
  double radius = 0.5;
  bool operator==(const Cylinder&) const = default;
};

/// Room geometry. The room is a square of side `side` centred at the origin, spanning z in [0, height].
struct Scene {
  double side = 10.0;
  double height = 3.0;
  Vec3 bs_pos{-4.75, 4.75, 2.5};
  std::vector<Wall> walls;
  std::vector<Cylinder> cylinders;
  std::uint64_t seed = 0;

  double half() const { return side / 2.0; }
  bool inside_bounds(const Vec2& p) const;
  bool inside_bounds(const Vec3& p) const;
  /// Closed point-in-footprint test against walls and cylinders.
  bool in_obstacle(const Vec2& p) const;
  double obstacle_area_upper_bound() const;
  bool operator==(const Scene&) const = default;
};

struct SceneProfile {
  int min_walls = 0;
  int max_walls = 3;
  int min_cylinders = 0;
  int max_cylinders = 2;
  double wall_thickness = 0.2;
  double wall_len_min = 2.0;
  double wall_len_max = 6.0;
  double cyl_r_min = 0.3;
  double cyl_r_max = 1.0;
  /// Minimum clearance between any obstacle and the room boundary.
  double margin = 0.25;
  /// Minimum horizontal clearance between the BS and any obstacle.
  double bs_clearance = 0.3;
  Vec3 bs_pos{-4.75, 4.75, 2.5};
  int max_retries = 1000;
};

/// Binary top-down rasterization. grid(i, j) covers x = -side/2 + (j + 0.5) * cell, y = -side/2 + (i + 0.5) * cell.
struct SceneGraph {
  int W = 0;
  double cell_size = 0.0;
  std::vector<std::uint8_t> grid;  // row-major W*W

  std::uint8_t at(int i, int j) const { return grid[static_cast<std::size_t>(i) * W + j]; }
  std::size_t ones() const;
  bool operator==(const SceneGraph&) const = default;
};

Scene generate_scene(std::uint64_t seed, const SceneProfile& profile);

/// Requires W >= 8 and W divisible by `patch`.
SceneGraph rasterize(const Scene& scene, int W, int patch = 1);

/// Cell-centre coordinates of grid cell (i, j).
Vec2 cell_center(const Scene& scene, int W, int i, int j);

/// K user positions at z = ue_height, inside the room and outside every obstacle.
std::vector<Vec3> sample_user_positions(const Scene& scene, int K, std::uint64_t seed, double ue_height = 1.0,
                                        double clearance = 0.1, int max_retries = 10000);

/// Seed of scenario `index` under `master_seed`.
inline std::uint64_t scenario_seed(std::uint64_t master_seed, std::uint64_t index) {
  return derive_seed(master_seed, 0x5CE7E5EEDULL, index);
}

}  // namespace musefm
