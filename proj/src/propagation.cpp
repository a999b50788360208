#include "musefm/propagation.hpp"

#include <algorithm>
#include <cmath>

namespace musefm {

namespace {

constexpr double kSegEps = 1e-9;

// Liang-Barsky: parameter overlap of p + t (q - p), t in (eps, 1 - eps), with a closed rectangle.
bool segment_hits_rect(const Vec2& p, const Vec2& q, const Eigen::Vector4d& r) {
  double t0 = kSegEps, t1 = 1.0 - kSegEps;
  const Vec2 d = q - p;
  const double pp[4] = {-d.x(), d.x(), -d.y(), d.y()};
  const double qq[4] = {p.x() - r[0], r[1] - p.x(), p.y() - r[2], r[3] - p.y()};
  for (int i = 0; i < 4; ++i) {
    if (pp[i] == 0.0) {
      if (qq[i] < 0.0) return false;
      continue;
    }
    const double t = qq[i] / pp[i];
    if (pp[i] < 0.0)
      t0 = std::max(t0, t);
    else
      t1 = std::min(t1, t);
    if (t0 > t1) return false;
  }
  return t0 <= t1;
}

bool segment_hits_disk(const Vec2& p, const Vec2& q, const Cylinder& c) {
  const Vec2 d = q - p;
  const double dd = d.squaredNorm();
  double t = dd > 0.0 ? (c.center - p).dot(d) / dd : 0.0;
  t = std::clamp(t, kSegEps, 1.0 - kSegEps);
  return (p + t * d - c.center).norm() <= c.radius;
}

int other_axis(int axis, int k) {
  // k-th (0 or 1) axis among {0,1,2} \ {axis}
  int idx = 0;
  for (int a = 0; a < 3; ++a) {
    if (a == axis) continue;
    if (idx == k) return a;
    ++idx;
  }
  return -1;
}

}  // namespace

ArrayFrame ArrayFrame::facing_room_center(const Vec3& bs) {
  Vec3 b(-bs.x(), -bs.y(), 0.0);
  if (b.norm() < 1e-12) b = {1, 0, 0};
  b.normalize();
  ArrayFrame f;
  f.boresight = b;
  f.up = {0, 0, 1};
  f.lateral = f.up.cross(f.boresight);
  return f;
}

std::vector<Face> reflecting_faces(const Scene& scene) {
  const double h = scene.half();
  std::vector<Face> faces;
  // -x wall faces +x, +x wall faces -x, and so on.
  faces.push_back({0, -h, +1, {-h, 0}, {h, scene.height}, 0});
  faces.push_back({0, +h, -1, {-h, 0}, {h, scene.height}, 1});
  faces.push_back({1, -h, +1, {-h, 0}, {h, scene.height}, 2});
  faces.push_back({1, +h, -1, {-h, 0}, {h, scene.height}, 3});
  faces.push_back({2, 0.0, +1, {-h, -h}, {h, h}, 4});
  faces.push_back({2, scene.height, -1, {-h, -h}, {h, h}, 5});
  for (std::size_t w = 0; w < scene.walls.size(); ++w) {
    const auto r = scene.walls[w].footprint();
    const int base = 6 + 4 * static_cast<int>(w);
    faces.push_back({0, r[0], -1, {r[2], 0}, {r[3], scene.height}, base + 0});
    faces.push_back({0, r[1], +1, {r[2], 0}, {r[3], scene.height}, base + 1});
    faces.push_back({1, r[2], -1, {r[0], 0}, {r[1], scene.height}, base + 2});
    faces.push_back({1, r[3], +1, {r[0], 0}, {r[1], scene.height}, base + 3});
  }
  return faces;
}

Vec3 mirror(const Vec3& p, const Face& f) {
  Vec3 m = p;
  m[f.axis] = 2.0 * f.coord - p[f.axis];
  return m;
}

bool segment_blocked(const Scene& scene, const Vec3& p, const Vec3& q) {
  const Vec2 a(p.x(), p.y()), b(q.x(), q.y());
  for (const auto& w : scene.walls)
    if (segment_hits_rect(a, b, w.footprint())) return true;
  for (const auto& c : scene.cylinders)
    if (segment_hits_disk(a, b, c)) return true;
  return false;
}

std::pair<double, double> path_geometry(const Vec3& direction, const ArrayFrame& frame) {
  const double n = direction.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw ValidationError("path_geometry: degenerate direction");
  const Vec3 d = frame.to_local(direction / n);
  const double theta = std::acos(std::clamp(d.z(), -1.0, 1.0));
  double phi = std::atan2(d.y(), d.x());
  if (phi == -kPi) phi = kPi;
  return {theta, phi};
}

Vec3 direction_from_angles(double theta, double phi) {
  return {std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)};
}

PathList trace_paths(const Scene& scene, const Vec3& tx, const Vec3& rx, int max_order, const ArrayFrame& frame) {
  if (max_order < 0 || max_order > 1) throw ValidationError("trace_paths: only max_order 0 or 1 is supported");
  PathList out;
  out.tx = tx;
  out.rx = rx;

  auto make_path = [&](double length, const Vec3& first_leg, int bounces, std::optional<int> id) {
    Path p;
    p.length = length;
    p.delay = length / kSpeedOfLight;
    p.n_bounces = bounces;
    p.reflector_id = id;
    p.departure = first_leg.normalized();
    std::tie(p.aod_elevation, p.aod_azimuth) = path_geometry(p.departure, frame);
    return p;
  };

  if (!segment_blocked(scene, tx, rx)) out.paths.push_back(make_path((rx - tx).norm(), rx - tx, 0, std::nullopt));
  if (max_order == 0) return out;

  for (const auto& f : reflecting_faces(scene)) {
    const double st = (tx[f.axis] - f.coord) * f.normal_sign;
    const double sr = (rx[f.axis] - f.coord) * f.normal_sign;
    if (st <= 0.0 || sr <= 0.0) continue;
    const Vec3 img = mirror(tx, f);
    const double t = (f.coord - img[f.axis]) / (rx[f.axis] - img[f.axis]);
    Vec3 hit = img + t * (rx - img);
    hit[f.axis] = f.coord;
    const int a0 = other_axis(f.axis, 0), a1 = other_axis(f.axis, 1);
    if (hit[a0] < f.lo[0] || hit[a0] > f.hi[0] || hit[a1] < f.lo[1] || hit[a1] > f.hi[1]) continue;
    if (segment_blocked(scene, tx, hit) || segment_blocked(scene, hit, rx)) continue;
    out.paths.push_back(make_path((rx - img).norm(), hit - tx, 1, f.id));
  }
  return out;
}

}  // namespace musefm
