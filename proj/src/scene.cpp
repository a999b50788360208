#include "musefm/scene.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace musefm {

namespace {

bool in_rect(const Eigen::Vector4d& r, const Vec2& p, double inflate) {
  return p.x() >= r[0] - inflate && p.x() <= r[1] + inflate && p.y() >= r[2] - inflate && p.y() <= r[3] + inflate;
}

double dist_to_rect(const Eigen::Vector4d& r, const Vec2& p) {
  const double dx = std::max({r[0] - p.x(), 0.0, p.x() - r[1]});
  const double dy = std::max({r[2] - p.y(), 0.0, p.y() - r[3]});
  return std::hypot(dx, dy);
}

bool in_obstacle_inflated(const Scene& s, const Vec2& p, double inflate) {
  for (const auto& w : s.walls)
    if (in_rect(w.footprint(), p, inflate)) return true;
  for (const auto& c : s.cylinders)
    if ((p - c.center).norm() <= c.radius + inflate) return true;
  return false;
}

}  // namespace

Eigen::Vector4d Wall::footprint() const {
  const double ht = thickness / 2.0;
  if (horizontal()) return {std::min(a.x(), b.x()), std::max(a.x(), b.x()), a.y() - ht, a.y() + ht};
  return {a.x() - ht, a.x() + ht, std::min(a.y(), b.y()), std::max(a.y(), b.y())};
}

bool Scene::inside_bounds(const Vec2& p) const {
  const double h = half();
  return p.x() > -h && p.x() < h && p.y() > -h && p.y() < h;
}

bool Scene::inside_bounds(const Vec3& p) const {
  return inside_bounds(Vec2(p.x(), p.y())) && p.z() > 0.0 && p.z() < height;
}

bool Scene::in_obstacle(const Vec2& p) const { return in_obstacle_inflated(*this, p, 0.0); }

double Scene::obstacle_area_upper_bound() const {
  double area = 0.0;
  for (const auto& w : walls) {
    const auto r = w.footprint();
    area += (r[1] - r[0]) * (r[3] - r[2]);
  }
  for (const auto& c : cylinders) area += kPi * c.radius * c.radius;
  return area;
}

std::size_t SceneGraph::ones() const {
  return static_cast<std::size_t>(std::count(grid.begin(), grid.end(), std::uint8_t{1}));
}

Scene generate_scene(std::uint64_t seed, const SceneProfile& profile) {
  if (profile.min_walls < 0 || profile.max_walls < profile.min_walls || profile.min_cylinders < 0 ||
      profile.max_cylinders < profile.min_cylinders)
    throw ValidationError("scene profile: invalid obstacle count range");

  Scene scene;
  scene.seed = seed;
  scene.bs_pos = profile.bs_pos;
  if (!scene.inside_bounds(scene.bs_pos)) throw ValidationError("scene profile: BS outside the room");

  Rng rng(derive_seed(seed, 0x5CE7EULL));
  const int n_walls = uniform_int(rng, profile.min_walls, profile.max_walls);
  const int n_cyl = uniform_int(rng, profile.min_cylinders, profile.max_cylinders);
  const double lim = scene.half() - profile.margin;
  const Vec2 bs2(scene.bs_pos.x(), scene.bs_pos.y());

  int attempts = 0;
  auto check_budget = [&] {
    if (++attempts > profile.max_retries)
      throw RuntimeFailure("generate_scene: rejection sampling exhausted " + std::to_string(profile.max_retries) +
                           " retries for seed " + std::to_string(seed) + " (over-constrained profile?)");
  };

  for (int w = 0; w < n_walls; ++w) {
    while (true) {
      check_budget();
      const bool horizontal = uniform_int(rng, 0, 1) == 0;
      const double len = uniform(rng, profile.wall_len_min, profile.wall_len_max);
      const double ht = profile.wall_thickness / 2.0;
      if (len / 2.0 >= lim || ht >= lim) continue;
      const double along = uniform(rng, -lim + len / 2.0, lim - len / 2.0);
      const double across = uniform(rng, -lim + ht, lim - ht);
      Wall wall;
      wall.thickness = profile.wall_thickness;
      if (horizontal) {
        wall.a = {along - len / 2.0, across};
        wall.b = {along + len / 2.0, across};
      } else {
        wall.a = {across, along - len / 2.0};
        wall.b = {across, along + len / 2.0};
      }
      if (dist_to_rect(wall.footprint(), bs2) <= profile.bs_clearance) continue;
      scene.walls.push_back(wall);
      break;
    }
  }
  for (int c = 0; c < n_cyl; ++c) {
    while (true) {
      check_budget();
      const double r = uniform(rng, profile.cyl_r_min, profile.cyl_r_max);
      if (r >= lim) continue;
      const Vec2 center(uniform(rng, -lim + r, lim - r), uniform(rng, -lim + r, lim - r));
      if ((center - bs2).norm() <= r + profile.bs_clearance) continue;
      scene.cylinders.push_back({center, r});
      break;
    }
  }
  return scene;
}

Vec2 cell_center(const Scene& scene, int W, int i, int j) {
  const double cell = scene.side / W;
  return {-scene.half() + (j + 0.5) * cell, -scene.half() + (i + 0.5) * cell};
}

SceneGraph rasterize(const Scene& scene, int W, int patch) {
  if (W < 8) throw ValidationError("rasterize: W must be >= 8");
  if (patch < 1 || W % patch != 0) throw ValidationError("rasterize: W must be divisible by the patch size");
  SceneGraph g;
  g.W = W;
  g.cell_size = scene.side / W;
  g.grid.assign(static_cast<std::size_t>(W) * W, 0);
  if (scene.walls.empty() && scene.cylinders.empty()) return g;
  for (int i = 0; i < W; ++i)
    for (int j = 0; j < W; ++j)
      if (scene.in_obstacle(cell_center(scene, W, i, j))) g.grid[static_cast<std::size_t>(i) * W + j] = 1;
  return g;
}

std::vector<Vec3> sample_user_positions(const Scene& scene, int K, std::uint64_t seed, double ue_height,
                                        double clearance, int max_retries) {
  if (K < 1) throw ValidationError("sample_user_positions: K must be >= 1");
  Rng rng(derive_seed(seed, 0x05E2ULL));
  const double lim = scene.half() - clearance;
  std::vector<Vec3> out;
  out.reserve(K);
  int attempts = 0;
  while (static_cast<int>(out.size()) < K) {
    if (++attempts > max_retries)
      throw RuntimeFailure("sample_user_positions: free space too small after " + std::to_string(max_retries) +
                           " draws");
    const Vec2 p(uniform(rng, -lim, lim), uniform(rng, -lim, lim));
    if (in_obstacle_inflated(scene, p, clearance)) continue;
    out.emplace_back(p.x(), p.y(), ue_height);
  }
  return out;
}

}  // namespace musefm
