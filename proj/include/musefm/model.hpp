#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "musefm/adcore.hpp"
#include "musefm/config.hpp"
#include "musefm/params.hpp"
#include "musefm/phytasks.hpp"
#include "musefm/scene.hpp"

namespace musefm {

struct ModelConfig {
  int D = 32;
  int L = 2;
  int heads = 4;
  int mlp_ratio = 4;
  int Nt = 16;
  int M = 8;
  int K = 2;
  int L_p_ce = 2;
  int L_p_loc = 4;
  int L_d = 2;
  int code_n = 16;
  int code_m = 8;
  double code_design_ebn0_db = 5.0;
  int W = 32;
  int P = 8;
  int D_scene = 32;
  int scene_depth = 1;
  int scene_heads = 4;
  int hyper_emb = 32;
  std::vector<int> hyper_hidden{64};
  int seq_cap = 64;
  double bn_momentum = 0.1;
  double room_side = 10.0;
  std::uint64_t seed = 0;

  /// Toy: D=32, L=2, 4 heads. Paper: D=768, L=12, 12 heads.
  static ModelConfig from_profile(const SystemProfile& p);

  int features() const { return 2 * Nt; }
  int scene_tokens() const { return (W / P) * (W / P); }
  /// Number of data tokens T for a task.
  int data_tokens(TaskId t) const;
  /// Hypernetwork output length 2*D*2N_t + D + 2N_t.
  int theta_size() const { return 2 * D * features() + D + features(); }
  PolarCode code() const { return PolarCode::bhattacharyya(code_n, code_m, code_design_ebn0_db); }

  KeyValues to_kv() const;
  static ModelConfig from_kv(const KeyValues& kv);
  void validate() const;
};

struct TaskInstruction {
  TaskId task = TaskId::CE;
  std::string text;

  static TaskInstruction make(TaskId task, const ModelConfig& cfg, double snr_db);
  /// Recovers the task from an instruction text; throws ValidationError on unknown text.
  static TaskId parse(const std::string& text);
};

/// Byte-level tokens (vocabulary 256).
std::vector<int> tokenize_instruction(const std::string& text);
std::string detokenize_instruction(std::span<const int> ids);

struct GeneratedParams {
  ad::Tensor W_en;  // D x 2N_t
  ad::Tensor b_en;  // 1 x D
  ad::Tensor W_de;  // 2N_t x D
  ad::Tensor b_de;  // 1 x 2N_t
};

/// Raw task sample handed to the model. Exactly one pointer matching `task` must be set
/// (the observation pointer for CE and LOC).
struct TaskInput {
  TaskId task = TaskId::CE;
  const PilotObservation* pilots = nullptr;
  const DetectionSample* det = nullptr;
  const PrecodingSample* pre = nullptr;
  const DecodingSample* dec = nullptr;
  const SceneGraph* graph = nullptr;
};

struct TaskOutput {
  TaskId task = TaskId::CE;
  ad::Tensor head;      // CE M x 2N_t, DET L_d x 2K, PRE K x 2N_t (power-scaled), DEC n x 1 logits, LOC 1 x 2
  CMatrix estimate;     // CE N_t x M, DET K x L_d, PRE N_t x K
  Vec2 position{0, 0};  // LOC, normalized to [0,1]^2
  RVector p_hat;        // DEC flip probabilities
  Bits b_hat;           // DEC information bits
};

/// Normalized coordinates of a world position: (x + side/2) / side, (y + side/2) / side.
Vec2 normalize_position(const Vec3& p, double side);

class MuseModel {
public:
  explicit MuseModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterStore& params() { return store_; }
  const ad::ParameterStore& params() const { return store_; }

  GeneratedParams hypernet_forward(std::span<const int> ids) const;
  /// L_s x D scene tokens.
  ad::Tensor scene_encode(const SceneGraph& graph) const;

  /// T x 2N_t features before normalization (zero padded).
  RMatrix raw_features(const TaskInput& in) const;
  /// Batch normalization without affine terms. Training mode uses batch statistics and updates
  /// the running averages of that task; evaluation mode uses the running averages.
  std::vector<RMatrix> normalize(TaskId task, const std::vector<RMatrix>& raw, bool training);
  /// Features of one sample in evaluation mode.
  RMatrix preprocess(const TaskInput& in) const;

  ad::Tensor unified_encode(const ad::Tensor& X_pre, const GeneratedParams& theta) const;
  /// Assembles [scene; cls; data], adds position embeddings and runs the blocks.
  ad::Tensor backbone_forward(const ad::Tensor& scene_tokens, const ad::Tensor& data_tokens) const;
  ad::Tensor unified_decode(const ad::Tensor& X_de, const GeneratedParams& theta) const;
  TaskOutput postprocess(TaskId task, const ad::Tensor& X_post, const TaskInput& in) const;

  /// Pipeline after normalization; `scene_tokens` may be precomputed with scene_encode.
  TaskOutput forward_features(const TaskInput& in, const RMatrix& features, const GeneratedParams& theta,
                              const ad::Tensor& scene_tokens) const;
  /// Full evaluation-mode pipeline for one sample.
  TaskOutput forward(const TaskInput& in, const TaskInstruction& instruction) const;

  /// Writes model.cfg, params.index and params.bin into `dir`.
  void save(const std::filesystem::path& dir) const;
  static MuseModel load(const std::filesystem::path& dir);

  /// Parameters whose forward output is zeroed to make every block an identity map.
  void zero_block_outputs();

private:
  struct Block {
    ad::Tensor w_qkv, b_qkv, w_o, b_o, w_1, b_1, w_2, b_2;
  };
  struct Linear {
    ad::Tensor w, b;  // in x out, 1 x out
  };

  Block make_block(const std::string& prefix, const std::string& group, int d, std::uint64_t& rng);
  Linear make_linear(const std::string& prefix, const std::string& group, int in, int out, std::uint64_t& rng,
                     double gain = 1.0);
  ad::Tensor run_block(const Block& blk, const ad::Tensor& x, int heads) const;
  static ad::Tensor apply(const Linear& l, const ad::Tensor& x);

  ModelConfig cfg_;
  PolarCode code_;
  ad::ParameterStore store_;
  ad::Tensor tok_emb_, cls_, pos_, scene_pos_;
  Linear patch_proj_;
  std::vector<Block> scene_blocks_;
  std::vector<Linear> scene_out_;  // empty when D_scene == D
  std::vector<Linear> hyper_;
  std::vector<Block> blocks_;
  std::vector<std::size_t> padded_from_;  // per task: first zero-padded feature column
};

}  // namespace musefm
