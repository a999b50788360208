#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "musefm/channel.hpp"
#include "musefm/phytasks.hpp"
#include "musefm/scene.hpp"

namespace musefm {

enum class TaskId { CE = 0, DET = 1, PRECODING = 2, DECODING = 3, LOC = 4 };
inline constexpr std::array<TaskId, 5> kAllTasks{TaskId::CE, TaskId::DET, TaskId::PRECODING, TaskId::DECODING,
                                                 TaskId::LOC};
inline constexpr int kNumTasks = 5;

const char* task_name(TaskId t);        // "ce", "det", "precoding", "decoding", "loc"
TaskId parse_task(const std::string& s);  // accepts the names above (case-insensitive)

using KeyValues = std::map<std::string, std::string>;

/// Parses `key = value` lines; '#' starts a comment.
KeyValues parse_key_values(const std::string& text);
KeyValues read_key_values(const std::filesystem::path& path);
std::string format_key_values(const KeyValues& kv);

std::vector<double> parse_double_list(const std::string& s);
std::vector<int> parse_int_list(const std::string& s);
/// Inclusive "start:stop:step" grid, or a comma list.
std::vector<double> parse_grid(const std::string& s);

/// System and dataset parameters shared by generation, baselines and the model.
struct SystemProfile {
  std::string name = "toy";
  ArrayGeometry array;
  int K = 2;
  int L_p_ce = 2;
  int L_p_loc = 4;
  int L_d = 2;
  int code_n = 16;
  int code_m = 8;
  double code_design_ebn0_db = 5.0;
  int grid_W = 32;
  int patch = 8;
  double snr_db = 10.0;               // pilot / detection / precoding SNR of stored samples
  std::vector<double> ebn0_db{4, 5, 6};  // decoding E_b/N_0 values drawn per stored sample
  double P_max = 1.0;
  double ue_height = 1.0;
  PilotSelection pilot_selection = PilotSelection::Even;
  int scenarios = 250;
  int samples_per_scenario = 10;
  double val_fraction = 0.1;
  double test_fraction = 0.1;
  SceneProfile scene;

  static SystemProfile toy();
  static SystemProfile paper();
  static SystemProfile by_name(const std::string& name);

  int Nt() const { return array.Nt(); }
  int M() const { return array.M; }
  PolarCode code() const { return PolarCode::bhattacharyya(code_n, code_m, code_design_ebn0_db); }

  KeyValues to_kv() const;
  /// Overrides fields from `kv`; unknown keys are left for the caller to report.
  void apply(const KeyValues& kv, std::vector<std::string>* consumed = nullptr);
  void validate() const;
};

struct SplitCounts {
  int train = 0, val = 0, test = 0;
};
/// val = round(S * val_fraction), test = round(S * test_fraction), train = the rest.
SplitCounts split_counts(int scenarios, double val_fraction, double test_fraction);

/// FNV-1a over the canonical key=value text.
std::string config_hash(const KeyValues& kv);

}  // namespace musefm
