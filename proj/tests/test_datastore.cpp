#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "musefm/datastore.hpp"

using namespace musefm;
namespace fs = std::filesystem;

namespace {

SystemProfile small_profile() {
  SystemProfile p = SystemProfile::toy();
  p.scenarios = 10;
  p.samples_per_scenario = 3;
  return p;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) { fs::remove_all(path); }
  ~TempDir() { fs::remove_all(path); }
};

bool same_bundle(const ScenarioBundle& a, const ScenarioBundle& b) {
  if (!(a.scene == b.scene) || !(a.graph == b.graph) || a.samples.size() != b.samples.size()) return false;
  for (std::size_t s = 0; s < a.samples.size(); ++s) {
    const auto &x = a.samples[s], &y = b.samples[s];
    if (x.positions != y.positions || x.channel_scale != y.channel_scale) return false;
    for (std::size_t k = 0; k < x.H.size(); ++k)
      if (x.H[k] != y.H[k] || x.ce[k].Y_p != y.ce[k].Y_p || x.loc[k].Y_p != y.loc[k].Y_p ||
          x.ce[k].selected != y.ce[k].selected)
        return false;
    if (x.det.X != y.det.X || x.det.Y != y.det.Y || x.det.H != y.det.H || x.det.subcarrier != y.det.subcarrier) return false;
    if (x.pre.H_noisy != y.pre.H_noisy || x.pre.H_true != y.pre.H_true || x.pre.sigma2 != y.pre.sigma2) return false;
    if (x.dec.b != y.dec.b || x.dec.s_hat != y.dec.s_hat || x.dec.s_tilde != y.dec.s_tilde ||
        x.dec.z_tilde != y.dec.z_tilde || x.dec.ebn0_db != y.dec.ebn0_db)
      return false;
  }
  return true;
}

}  // namespace

TEST(Crc64, XzCheckValue) {
  const char* s = "123456789";
  EXPECT_EQ(crc64(s, 9), 0x995DC9BBDF1939FAULL);
  EXPECT_EQ(crc64_hex(s, 9), "995dc9bbdf1939fa");
}

TEST(Splits, Counts) {
  const SystemProfile paper = SystemProfile::paper();
  const SplitCounts p = split_counts(paper.scenarios, paper.val_fraction, paper.test_fraction);
  EXPECT_EQ(paper.scenarios, 2600);
  EXPECT_EQ(p.train, 2000);
  EXPECT_EQ(p.val, 300);
  EXPECT_EQ(p.test, 300);
  const SystemProfile toy = SystemProfile::toy();
  const SplitCounts t = split_counts(250, toy.val_fraction, toy.test_fraction);
  EXPECT_EQ(t.train, 200);
  EXPECT_EQ(t.val, 25);
  EXPECT_EQ(t.test, 25);
}

TEST(Generate, SplitsDisjointAndNormalized) {
  const Dataset ds = generate_dataset(small_profile(), 0, 1);
  std::set<std::uint64_t> seen;
  std::size_t total = 0;
  for (const auto& [name, idx] : ds.manifest.splits) {
    total += idx.size();
    for (auto i : idx) EXPECT_TRUE(seen.insert(i).second) << i;
  }
  EXPECT_EQ(total, 10u);
  for (const auto& [name, bundles] : ds.splits)
    for (const auto& b : bundles)
      for (const auto& s : b.samples)
        for (const auto& H : s.H) EXPECT_NEAR(H.squaredNorm() / H.cols(), 16.0, 1e-9);
}

TEST(Generate, ThreadCountDoesNotChangeOutput) {
  const Dataset a = generate_dataset(small_profile(), 3, 1), b = generate_dataset(small_profile(), 3, 3);
  for (const auto& [name, bundles] : a.splits)
    for (std::size_t i = 0; i < bundles.size(); ++i) EXPECT_TRUE(same_bundle(bundles[i], b.split(name)[i]));
}

TEST(Roundtrip, BitIdentical) {
  TempDir dir("musefm_ds_roundtrip");
  const Dataset ds = generate_dataset(small_profile(), 0, 1);
  write_dataset(dir.path, ds);
  EXPECT_TRUE(fs::exists(dir.path / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir.path / "train" / "channels.f64"));
  EXPECT_TRUE(fs::exists(dir.path / "val" / "scenes.u8"));
  const Dataset back = read_dataset(dir.path);
  EXPECT_EQ(back.manifest.master_seed, 0u);
  EXPECT_EQ(back.manifest.profile.to_kv(), ds.manifest.profile.to_kv());
  for (const auto& [name, bundles] : ds.splits) {
    ASSERT_EQ(back.split(name).size(), bundles.size());
    for (std::size_t i = 0; i < bundles.size(); ++i) EXPECT_TRUE(same_bundle(bundles[i], back.split(name)[i])) << name;
  }
  // declared shapes x dtype sizes match the file lengths
  for (const auto& r : back.manifest.arrays) {
    std::size_t n = 1;
    for (auto d : r.shape) n *= d;
    const std::size_t width = r.dtype == "f64" ? 8 : r.dtype == "i32" ? 4 : 1;
    if (r.dtype != "json") EXPECT_EQ(n * width, r.bytes) << r.file;
    EXPECT_EQ(fs::file_size(dir.path / r.file), r.bytes) << r.file;
  }
}

TEST(Roundtrip, TamperNamesFile) {
  TempDir dir("musefm_ds_tamper");
  write_dataset(dir.path, generate_dataset(small_profile(), 0, 1));
  const fs::path target = dir.path / "train" / "channels.f64";
  {
    std::fstream f(target, std::ios::in | std::ios::out | std::ios::binary);
    f.seekg(100);
    char c;
    f.read(&c, 1);
    c ^= 0x01;
    f.seekp(100);
    f.write(&c, 1);
  }
  try {
    read_dataset(dir.path);
    FAIL() << "tampered dataset was accepted";
  } catch (const RuntimeFailure& e) {
    EXPECT_NE(std::string(e.what()).find("channels.f64"), std::string::npos) << e.what();
  }
}

TEST(Roundtrip, MissingFileAndVersion) {
  TempDir dir("musefm_ds_missing");
  write_dataset(dir.path, generate_dataset(small_profile(), 0, 1));
  fs::remove(dir.path / "test" / "dec_shat.f64");
  EXPECT_THROW(read_dataset(dir.path), RuntimeFailure);
  EXPECT_THROW(read_dataset(dir.path / "nowhere"), RuntimeFailure);

  TempDir dir2("musefm_ds_version");
  write_dataset(dir2.path, generate_dataset(small_profile(), 0, 1));
  std::ifstream in(dir2.path / "manifest.json");
  std::string text((std::istreambuf_iterator<char>(in)), {});
  in.close();
  const auto pos = text.find("\"format_version\": 1");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 19, "\"format_version\": 9");
  std::ofstream(dir2.path / "manifest.json") << text;
  EXPECT_THROW(read_dataset(dir2.path), RuntimeFailure);
}

TEST(Regenerate, MatchesStoredAndDetectsWrongSeed) {
  const SystemProfile p = small_profile();
  const Dataset ds = generate_dataset(p, 5, 1);
  const ScenarioBundle& first = ds.split("train").front();
  EXPECT_EQ(first.index, 0u);
  EXPECT_TRUE(same_bundle(regenerate_scenario(5, 0, p), first));
  EXPECT_TRUE(verify_scenario(first, 5, p));
  EXPECT_FALSE(verify_scenario(first, 6, p));
  SystemProfile other = p;
  other.snr_db = 0.0;
  EXPECT_FALSE(verify_scenario(first, 5, other));
}

TEST(Regenerate, IndicesGiveDistinctScenes) {
  const SystemProfile p = small_profile();
  std::set<std::uint64_t> seeds;
  int distinct = 0;
  Scene prev;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const std::uint64_t seed = scenario_seed(0, i);
    seeds.insert(seed);
    const Scene s = generate_scene(seed, p.scene);
    if (i > 0 && !(s == prev)) ++distinct;
    prev = s;
  }
  EXPECT_EQ(seeds.size(), 100u);
  EXPECT_EQ(distinct, 99);
}

TEST(SceneJson, Roundtrip) {
  const Dataset ds = generate_dataset(small_profile(), 0, 1);
  const auto& bundles = ds.split("train");
  std::vector<std::uint64_t> idx;
  const auto scenes = scenes_from_json(scenes_to_json(bundles), &idx);
  ASSERT_EQ(scenes.size(), bundles.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    EXPECT_EQ(scenes[i], bundles[i].scene);
    EXPECT_EQ(idx[i], bundles[i].index);
  }
}
