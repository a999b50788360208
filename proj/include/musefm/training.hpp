#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "musefm/datastore.hpp"
#include "musefm/model.hpp"

namespace musefm {

using TaskWeights = std::array<double, kNumTasks>;  // indexed by TaskId

struct TrainConfig {
  int batch_size = 50;
  int epochs = 20;
  double lr0 = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double clip_norm = 1.0;
  TaskWeights alpha{1.0, 1.0, 0.1, 1.0, 1.0};  // ce, det, precoding, decoding, loc
  TaskWeights beta{1.0, 1.0, 1.0, 1.0, 1.0};
  std::uint64_t seed = 0;
  std::string profile = "toy";

  static TrainConfig for_profile(const std::string& profile);
  KeyValues to_kv() const;
  /// Overrides fields from `kv`; unknown keys are left for the caller.
  void apply(const KeyValues& kv, std::vector<std::string>* consumed = nullptr);
  void validate() const;
};

/// Parses "a,b,c,d,e" in task order (ce, det, precoding, decoding, loc).
TaskWeights parse_weights(const std::string& s);

/// One model input drawn from a stored scenario sample. CE and LOC use one example per user.
struct Example {
  TaskInput in;
  const ScenarioBundle* bundle = nullptr;
  const ScenarioSample* sample = nullptr;
  int user = 0;
};

std::vector<Example> build_examples(TaskId task, const std::vector<ScenarioBundle>& bundles);

/// K x 2N_t interleaved precoder rows -> negative sum rate (nats converted to bits/s/Hz).
ad::Tensor negative_sum_rate(const ad::Tensor& w_rows, const CMatrix& H, double sigma2);

/// Differentiable training loss of one example.
ad::Tensor task_loss(const TaskOutput& out, const Example& ex, double room_side);

double multitask_loss(const TaskWeights& losses, const TaskWeights& alpha);

/// Evaluation metric of one example: NMSE (CE, DET), negative sum rate (precoding), BER (decoding),
/// normalized position error (LOC).
double task_metric(const TaskOutput& out, const Example& ex, double room_side);

struct EvalResult {
  TaskWeights metric{};  // mean per task
  double total = 0.0;    // sum of beta-weighted metrics
  std::array<std::vector<double>, kNumTasks> per_example;
};

struct EvalOptions {
  std::optional<double> snr_db;  // instruction SNR; the profile SNR when unset
  bool ablate_scene = false;     // replace every scene graph with an all-zero grid
  std::vector<TaskId> tasks{kAllTasks.begin(), kAllTasks.end()};
};

EvalResult evaluate(const MuseModel& model, const std::vector<ScenarioBundle>& bundles, double profile_snr_db,
                    const TaskWeights& beta, const EvalOptions& opt = {});

/// Sum of beta-weighted validation metrics.
double validation_loss(const MuseModel& model, const std::vector<ScenarioBundle>& val, double snr_db,
                       const TaskWeights& beta);

struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::uint64_t t = 0;
};

/// One Adam update of every parameter from its accumulated gradient.
void adam_step(ad::ParameterStore& store, AdamState& state, double lr, const TrainConfig& cfg);

/// Scales all gradients so their global L2 norm is at most `max_norm`; returns the norm before clipping.
double clip_gradients(ad::ParameterStore& store, double max_norm);

/// lr0 * (1 + cos(pi * t / T)) / 2
double cosine_lr(double lr0, std::uint64_t t, std::uint64_t T);

struct LogRow {
  int epoch = 0;
  double lr = 0.0;
  TaskWeights loss{};
  double loss_total = 0.0;
  double val_total = 0.0;
  TaskWeights val{};
};

struct TrainResult {
  std::vector<LogRow> log;
  int best_epoch = 0;
  double best_val = 0.0;
  std::uint64_t steps = 0;
};

/// Multi-task training with round-robin per-task batches. When `out_dir` is set, the best
/// validation checkpoint is written to `out_dir` and the CSV log to `out_dir/train_log.csv`.
/// On return the model holds the best-validation parameters.
TrainResult fit(MuseModel& model, const Dataset& data, const TrainConfig& cfg,
                const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                const std::function<void(const LogRow&)>& on_epoch = {});

std::string log_csv_header();
std::string log_csv_row(const LogRow& row, const std::string& config_hash);

/// Copies of `bundles` whose task observations are redrawn at `snr_db` (and `ebn0_db` for decoding).
std::vector<ScenarioBundle> resample_at(const std::vector<ScenarioBundle>& bundles, const SystemProfile& profile,
                                        double snr_db, std::optional<double> ebn0_db = std::nullopt);

}  // namespace musefm
