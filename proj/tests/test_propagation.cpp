#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "musefm/propagation.hpp"

using namespace musefm;

namespace {

std::vector<double> sorted_lengths(const PathList& pl) {
  std::vector<double> v;
  for (const auto& p : pl.paths) v.push_back(p.length);
  std::sort(v.begin(), v.end());
  return v;
}

Vec3 random_point(Rng& rng, const Scene& s) {
  for (;;) {
    Vec3 p(uniform(rng, -4.9, 4.9), uniform(rng, -4.9, 4.9), uniform(rng, 0.1, 2.9));
    if (!s.in_obstacle(Vec2(p.x(), p.y()))) return p;
  }
}

}  // namespace

TEST(SegmentBlocked, EmptyRoomNeverBlocks) {
  Rng rng(3);
  const Scene s;
  for (int i = 0; i < 1000; ++i) EXPECT_FALSE(segment_blocked(s, random_point(rng, s), random_point(rng, s)));
}

TEST(SegmentBlocked, PerpendicularCrossing) {
  Scene s;
  s.walls.push_back({{-2, 0}, {2, 0}, 0.2});
  EXPECT_TRUE(segment_blocked(s, {0, -1, 1}, {0, 1, 1}));
  EXPECT_FALSE(segment_blocked(s, {3, -1, 1}, {3, 1, 1}));
}

TEST(SegmentBlocked, AgreesWithSamplingOracle) {
  Rng rng(17);
  int disagreements = 0, blocked = 0;
  for (int trial = 0; trial < 10000; ++trial) {
    Scene s = generate_scene(static_cast<std::uint64_t>(trial % 200), SceneProfile{});
    const Vec3 p = random_point(rng, s), q = random_point(rng, s);
    const bool got = segment_blocked(s, p, q);
    // coarse sampling, refined when it misses a reported crossing (grazing corner clips)
    auto sampled = [&](int n) {
      for (int i = 1; i < n; ++i) {
        const Vec3 x = p + (q - p) * (static_cast<double>(i) / n);
        if (s.in_obstacle(Vec2(x.x(), x.y()))) return true;
      }
      return false;
    };
    bool oracle = sampled(1000);
    if (got && !oracle) oracle = sampled(200000);
    blocked += got;
    disagreements += got != oracle;
  }
  EXPECT_GT(blocked, 500);
  EXPECT_EQ(disagreements, 0);
}

TEST(TracePaths, EmptyRoomLosLength) {
  const PathList pl = trace_paths(Scene{}, {0, 0, 2.5}, {3, 4, 1});
  const auto los = std::find_if(pl.paths.begin(), pl.paths.end(), [](const Path& p) { return p.n_bounces == 0; });
  ASSERT_NE(los, pl.paths.end());
  EXPECT_NEAR(los->length, 5.220153254455275, 1e-9);
  EXPECT_NEAR(los->delay, los->length / kSpeedOfLight, 1e-20);
}

TEST(TracePaths, EmptyRoomSevenPathsMirrorLaw) {
  const Scene s;
  const Vec3 tx(0, 0, 2.5), rx(3, 4, 1);
  const PathList pl = trace_paths(s, tx, rx);
  ASSERT_EQ(pl.paths.size(), 7u);
  // independent image-source oracle per face
  const Vec3 images[6] = {{-10, 0, 2.5}, {10, 0, 2.5}, {0, -10, 2.5}, {0, 10, 2.5}, {0, 0, -2.5}, {0, 0, 3.5}};
  std::set<int> ids;
  for (const auto& p : pl.paths) {
    if (p.n_bounces == 0) continue;
    ASSERT_TRUE(p.reflector_id.has_value());
    const int id = *p.reflector_id;
    ASSERT_GE(id, 0);
    ASSERT_LT(id, 6);
    ids.insert(id);
    EXPECT_NEAR(p.length, (images[id] - rx).norm(), 1e-9);
  }
  EXPECT_EQ(ids.size(), 6u);
}

TEST(TracePaths, BlockedLosRemoved) {
  Scene s;
  s.walls.push_back({{-2, 0}, {2, 0}, 0.2});
  const PathList pl = trace_paths(s, {0, -2, 2.5}, {0, 2, 1});
  for (const auto& p : pl.paths) EXPECT_NE(p.n_bounces, 0);
}

TEST(TracePaths, InternalWallFaceReflects) {
  Scene s;
  s.walls.push_back({{-2, 0}, {2, 0}, 0.2});
  const PathList pl = trace_paths(s, {-1, 2, 1}, {1, 2, 1});
  bool found = false;
  for (const auto& p : pl.paths)
    if (p.reflector_id && *p.reflector_id >= 6) {
      found = true;
      // face y = 0.1; image of tx is (-1, -1.8, 1)
      EXPECT_NEAR(p.length, (Vec3(-1, -1.8, 1) - Vec3(1, 2, 1)).norm(), 1e-9);
    }
  EXPECT_TRUE(found);
}

TEST(TracePaths, InvariantsOnRandomScenes) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const Scene s = generate_scene(static_cast<std::uint64_t>(trial), SceneProfile{});
    const Vec3 a = random_point(rng, s), b = random_point(rng, s);
    const PathList ab = trace_paths(s, a, b), ba = trace_paths(s, b, a);
    const auto la = sorted_lengths(ab), lb = sorted_lengths(ba);
    ASSERT_EQ(la.size(), lb.size());
    for (std::size_t i = 0; i < la.size(); ++i) ASSERT_NEAR(la[i], lb[i], 1e-9);

    std::set<std::pair<int, int>> keys;
    const auto faces = reflecting_faces(s);
    for (const auto& p : ab.paths) {
      ASSERT_GT(p.length, 0.0);
      ASSERT_TRUE(p.n_bounces == 0 || p.n_bounces == 1);
      ASSERT_TRUE(keys.insert({p.reflector_id.value_or(-1), p.n_bounces}).second);
      ASSERT_GE(p.length, (a - b).norm() - 1e-9);
      if (p.n_bounces == 1) {
        const auto& f = *std::find_if(faces.begin(), faces.end(), [&](const Face& x) { return x.id == *p.reflector_id; });
        ASSERT_NEAR(p.length, (mirror(a, f) - b).norm(), 1e-9);
      }
    }
  }
}

TEST(TracePaths, OnlyOrderZeroOrOne) {
  EXPECT_THROW(trace_paths(Scene{}, {0, 0, 1}, {1, 1, 1}, 2), ValidationError);
  EXPECT_EQ(trace_paths(Scene{}, {0, 0, 1}, {1, 1, 1}, 0).paths.size(), 1u);
}

TEST(PathGeometry, Conventions) {
  auto [t0, p0] = path_geometry({0, 0, 1});
  EXPECT_NEAR(t0, 0.0, 1e-15);
  (void)p0;
  auto [t1, p1] = path_geometry({1, 0, 0});
  EXPECT_NEAR(t1, kPi / 2, 1e-15);
  EXPECT_NEAR(p1, 0.0, 1e-15);
  auto [t2, p2] = path_geometry({-1, 0, 0});
  EXPECT_NEAR(p2, kPi, 1e-15);
  (void)t2;
  EXPECT_THROW(path_geometry({0, 0, 0}), ValidationError);
}

TEST(PathGeometry, RoundTrip) {
  Rng rng(1);
  std::normal_distribution<double> g;
  for (int i = 0; i < 1000; ++i) {
    Vec3 d(g(rng), g(rng), g(rng));
    d.normalize();
    const auto [theta, phi] = path_geometry(d);
    ASSERT_GE(theta, 0.0);
    ASSERT_LE(theta, kPi);
    ASSERT_GT(phi, -kPi);
    ASSERT_LE(phi, kPi);
    ASSERT_LT((direction_from_angles(theta, phi) - d).norm(), 1e-12);
  }
}

TEST(PathGeometry, RoomFacingFrame) {
  const ArrayFrame f = ArrayFrame::facing_room_center({-4.75, 4.75, 2.5});
  const Vec3 toward_centre = Vec3(4.75, -4.75, 0).normalized();
  const auto [theta, phi] = path_geometry(toward_centre, f);
  EXPECT_NEAR(theta, kPi / 2, 1e-12);
  EXPECT_NEAR(phi, 0.0, 1e-12);
}
