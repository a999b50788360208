#pragma once

// Deterministic dataset container.
//
// Layout under the dataset root:
//   manifest.json
//   train/ val/ test/   each holding
//     scenes.json          scene geometry (seed, BS, walls, cylinders) per scenario
//     scenes.u8            [S, W, W] rasterized scene graphs
//     positions.f64        [S, Ns, K, 3]
//     channels.f64         [S, Ns, K, M, Nt, 2]   normalized channels, (re, im) interleaved
//     channel_scale.f64    [S, Ns, K]
//     ce_obs.f64           [S, Ns, K, Lp_ce, M, 2]
//     ce_pilots.i32        [S, Ns, K, Lp_ce]
//     loc_obs.f64          [S, Ns, K, Lp_loc, M, 2]
//     loc_pilots.i32       [S, Ns, K, Lp_loc]
//     det_subcarrier.i32   [S, Ns]
//     det_x.f64            [S, Ns, K, Ld, 2]
//     det_y.f64            [S, Ns, Nt, Ld, 2]
//     pre_h_noisy.f64      [S, Ns, Nt, K, 2]
//     dec_bits.u8          [S, Ns, m]
//     dec_shat.f64         [S, Ns, n]
//     dec_ebn0.f64         [S, Ns]
// All numeric files are little-endian, row-major, with no header. manifest.json carries dtype,
// shape, byte offset and a CRC-64 (XZ parameters) for every file.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "musefm/config.hpp"
#include "musefm/phytasks.hpp"
#include "musefm/propagation.hpp"
#include "musefm/scene.hpp"

namespace musefm {

inline constexpr int kDatasetFormatVersion = 1;

/// One drop of K users inside a scenario and the task samples derived from it.
struct ScenarioSample {
  std::vector<Vec3> positions;        // K
  std::vector<CMatrix> H;             // K x (Nt x M), normalized
  std::vector<double> channel_scale;  // K
  std::vector<PilotObservation> ce;   // K
  std::vector<PilotObservation> loc;  // K
  DetectionSample det;
  PrecodingSample pre;
  DecodingSample dec;

  /// Nt x K channel of every user at subcarrier m.
  CMatrix multiuser(int m) const;
};

struct ScenarioBundle {
  std::uint64_t index = 0;
  std::uint64_t seed = 0;
  Scene scene;
  SceneGraph graph;
  std::vector<ScenarioSample> samples;
};

/// Seed for sample `s` of a scenario.
inline std::uint64_t sample_seed(std::uint64_t scenario_seed, int s) {
  return derive_seed(scenario_seed, 0x5A3B1EULL, static_cast<std::uint64_t>(s));
}

/// Draws user positions and builds normalized channels; redraws a drop whose channel has no path.
void draw_channels(const Scene& scene, const SystemProfile& profile, std::uint64_t seed, ScenarioSample& out);

/// (Re)draws every noisy task observation from the stored channels at the given SNR / Eb/N0.
/// With `ebn0_db` unset, the value is drawn from profile.ebn0_db.
void attach_task_samples(const SystemProfile& profile, std::uint64_t seed, double snr_db,
                         std::optional<double> ebn0_db, ScenarioSample& sample);

/// Full scene -> propagation -> channel -> task pipeline for scenario `index`.
ScenarioBundle regenerate_scenario(std::uint64_t master_seed, std::uint64_t index, const SystemProfile& profile);

struct ArrayRecord {
  std::string name;
  std::string split;
  std::string dtype;  // f64 | u8 | i32 | json
  std::vector<std::size_t> shape;
  std::uint64_t byte_offset = 0;
  std::uint64_t bytes = 0;
  std::string file;  // relative to the dataset root
  std::string crc64;
};

struct DatasetManifest {
  int format_version = kDatasetFormatVersion;
  SystemProfile profile;
  std::uint64_t master_seed = 0;
  std::map<std::string, std::vector<std::uint64_t>> splits;  // split name -> scenario indices
  std::vector<ArrayRecord> arrays;
};

struct Dataset {
  DatasetManifest manifest;
  std::map<std::string, std::vector<ScenarioBundle>> splits;

  const std::vector<ScenarioBundle>& split(const std::string& name) const;
};

/// Generates every scenario of the profile (split by index order: train, val, test).
/// `threads` > 1 parallelizes across scenarios; output is identical for any thread count.
Dataset generate_dataset(const SystemProfile& profile, std::uint64_t master_seed, int threads = 1);

void write_dataset(const std::filesystem::path& root, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& root);

/// Checks a stored scenario against regeneration from (master_seed, index, profile).
bool verify_scenario(const ScenarioBundle& stored, std::uint64_t master_seed, const SystemProfile& profile);

std::uint64_t crc64(const void* data, std::size_t len);
std::string crc64_hex(const void* data, std::size_t len);

/// Scene geometry <-> JSON text used inside scenes.json.
std::string scenes_to_json(const std::vector<ScenarioBundle>& bundles);
std::vector<Scene> scenes_from_json(const std::string& text, std::vector<std::uint64_t>* indices = nullptr);

}  // namespace musefm
