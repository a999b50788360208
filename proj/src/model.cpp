#include "musefm/model.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace musefm {

using ad::Shape;
using ad::Tensor;

namespace {

int kv_int(const KeyValues& kv, const std::string& key, int fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    const long v = std::stol(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(it->second);
    return static_cast<int>(v);
  } catch (const std::exception&) {
    throw ValidationError("model config: '" + key + "' expects an integer, got '" + it->second + "'");
  }
}

double kv_double(const KeyValues& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument(it->second);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("model config: '" + key + "' expects a number, got '" + it->second + "'");
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_snr(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

// Interleaves a complex column into (re, im) pairs starting at out(row, 0).
void put_interleaved(RMatrix& out, int row, const CVector& v) {
  for (Eigen::Index n = 0; n < v.size(); ++n) {
    out(row, 2 * n) = v(n).real();
    out(row, 2 * n + 1) = v(n).imag();
  }
}

}  // namespace

Vec2 normalize_position(const Vec3& p, double side) {
  return {(p.x() + side / 2.0) / side, (p.y() + side / 2.0) / side};
}

// ---------------------------------------------------------------------------------------------
// config

ModelConfig ModelConfig::from_profile(const SystemProfile& p) {
  ModelConfig c;
  c.Nt = p.Nt();
  c.M = p.M();
  c.K = p.K;
  c.L_p_ce = p.L_p_ce;
  c.L_p_loc = p.L_p_loc;
  c.L_d = p.L_d;
  c.code_n = p.code_n;
  c.code_m = p.code_m;
  c.code_design_ebn0_db = p.code_design_ebn0_db;
  c.W = p.grid_W;
  c.P = p.patch;
  if (p.name == "paper") {
    c.D = 768;
    c.L = 12;
    c.heads = 12;
    c.D_scene = 256;
    c.scene_depth = 2;
    c.scene_heads = 8;
    c.hyper_emb = 128;
    c.hyper_hidden = {256};
    c.seq_cap = 256;
  }
  return c;
}

int ModelConfig::data_tokens(TaskId t) const {
  switch (t) {
    case TaskId::CE:
    case TaskId::LOC: return M;
    case TaskId::DET: return K + L_d;
    case TaskId::PRECODING: return K;
    case TaskId::DECODING: return 2 * code_n - code_m;
  }
  return 0;
}

KeyValues ModelConfig::to_kv() const {
  KeyValues kv;
  kv["d_model"] = std::to_string(D);
  kv["layers"] = std::to_string(L);
  kv["heads"] = std::to_string(heads);
  kv["mlp_ratio"] = std::to_string(mlp_ratio);
  kv["n_t"] = std::to_string(Nt);
  kv["subcarriers"] = std::to_string(M);
  kv["users"] = std::to_string(K);
  kv["pilots_ce"] = std::to_string(L_p_ce);
  kv["pilots_loc"] = std::to_string(L_p_loc);
  kv["data_len"] = std::to_string(L_d);
  kv["code_n"] = std::to_string(code_n);
  kv["code_m"] = std::to_string(code_m);
  kv["code_design_ebn0"] = fmt(code_design_ebn0_db);
  kv["grid"] = std::to_string(W);
  kv["patch"] = std::to_string(P);
  kv["d_scene"] = std::to_string(D_scene);
  kv["scene_depth"] = std::to_string(scene_depth);
  kv["scene_heads"] = std::to_string(scene_heads);
  kv["hyper_emb"] = std::to_string(hyper_emb);
  std::string hh;
  for (std::size_t i = 0; i < hyper_hidden.size(); ++i) hh += (i ? "," : "") + std::to_string(hyper_hidden[i]);
  kv["hyper_hidden"] = hh;
  kv["seq_cap"] = std::to_string(seq_cap);
  kv["bn_momentum"] = fmt(bn_momentum);
  kv["room_side"] = fmt(room_side);
  kv["seed"] = std::to_string(seed);
  return kv;
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv) {
  static const char* known[] = {"d_model",   "layers",     "heads",       "mlp_ratio",   "n_t",      "subcarriers",
                                "users",     "pilots_ce",  "pilots_loc",  "data_len",    "code_n",   "code_m",
                                "code_design_ebn0", "grid", "patch",      "d_scene",     "scene_depth",
                                "scene_heads", "hyper_emb", "hyper_hidden", "seq_cap",   "bn_momentum",
                                "room_side", "seed"};
  for (const auto& [k, v] : kv) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    if (!ok) throw ValidationError("model config: unknown key '" + k + "'");
  }
  ModelConfig c;
  c.D = kv_int(kv, "d_model", c.D);
  c.L = kv_int(kv, "layers", c.L);
  c.heads = kv_int(kv, "heads", c.heads);
  c.mlp_ratio = kv_int(kv, "mlp_ratio", c.mlp_ratio);
  c.Nt = kv_int(kv, "n_t", c.Nt);
  c.M = kv_int(kv, "subcarriers", c.M);
  c.K = kv_int(kv, "users", c.K);
  c.L_p_ce = kv_int(kv, "pilots_ce", c.L_p_ce);
  c.L_p_loc = kv_int(kv, "pilots_loc", c.L_p_loc);
  c.L_d = kv_int(kv, "data_len", c.L_d);
  c.code_n = kv_int(kv, "code_n", c.code_n);
  c.code_m = kv_int(kv, "code_m", c.code_m);
  c.code_design_ebn0_db = kv_double(kv, "code_design_ebn0", c.code_design_ebn0_db);
  c.W = kv_int(kv, "grid", c.W);
  c.P = kv_int(kv, "patch", c.P);
  c.D_scene = kv_int(kv, "d_scene", c.D_scene);
  c.scene_depth = kv_int(kv, "scene_depth", c.scene_depth);
  c.scene_heads = kv_int(kv, "scene_heads", c.scene_heads);
  c.hyper_emb = kv_int(kv, "hyper_emb", c.hyper_emb);
  if (auto it = kv.find("hyper_hidden"); it != kv.end()) c.hyper_hidden = parse_int_list(it->second);
  c.seq_cap = kv_int(kv, "seq_cap", c.seq_cap);
  c.bn_momentum = kv_double(kv, "bn_momentum", c.bn_momentum);
  c.room_side = kv_double(kv, "room_side", c.room_side);
  if (auto it = kv.find("seed"); it != kv.end()) c.seed = std::stoull(it->second);
  c.validate();
  return c;
}

void ModelConfig::validate() const {
  auto req = [](bool ok, const std::string& msg) {
    if (!ok) throw ValidationError("model config: " + msg);
  };
  req(D > 0 && L >= 0 && heads > 0 && mlp_ratio > 0, "D, L, heads, mlp_ratio must be positive");
  req(D % heads == 0, "D must be divisible by heads");
  req(D_scene > 0 && scene_heads > 0 && D_scene % scene_heads == 0, "D_scene must be divisible by scene_heads");
  req(scene_depth >= 0, "scene_depth must be non-negative");
  req(Nt > 0 && M > 0 && K > 0 && L_d > 0, "system sizes must be positive");
  req(L_p_ce >= 1 && L_p_ce <= Nt && L_p_loc >= 1 && L_p_loc <= Nt, "pilot lengths must lie in [1, N_t]");
  req(K + L_d >= 1, "detection needs tokens");
  req(2 * K <= features(), "2K must not exceed 2N_t");
  req(code_n > 0 && code_m > 0 && code_m < code_n, "code must satisfy 0 < m < n");
  req(2 * code_n - code_m <= features(), "2n - m must not exceed 2N_t");
  req(P > 0 && W > 0 && W % P == 0, "W must be divisible by P");
  req(hyper_emb > 0, "hyper_emb must be positive");
  for (int h : hyper_hidden) req(h > 0, "hyper_hidden widths must be positive");
  req(bn_momentum > 0 && bn_momentum <= 1, "bn_momentum must lie in (0, 1]");
  req(room_side > 0, "room_side must be positive");
  for (TaskId t : kAllTasks)
    req(scene_tokens() + 1 + data_tokens(t) <= seq_cap,
        std::string("sequence for ") + task_name(t) + " exceeds seq_cap");
}

// ---------------------------------------------------------------------------------------------
// instructions

TaskInstruction TaskInstruction::make(TaskId task, const ModelConfig& cfg, double snr_db) {
  const std::string snr = fmt_snr(snr_db);
  TaskInstruction ins;
  ins.task = task;
  switch (task) {
    case TaskId::CE:
      ins.text = "Channel estimation, pilot length is " + std::to_string(cfg.L_p_ce) + ", SNR = " + snr + " dB";
      break;
    case TaskId::DET:
      ins.text = "MIMO detection, transmitting antenna number is " + std::to_string(cfg.K) + ", data length is " +
                 std::to_string(cfg.L_d) + ", SNR is " + snr + " dB";
      break;
    case TaskId::PRECODING:
      ins.text = "Multi-user precoding, user number is " + std::to_string(cfg.K) + ", SNR is " + snr + " dB";
      break;
    case TaskId::DECODING:
      ins.text = "Channel decoding for polar codes with encoded bit length n = " + std::to_string(cfg.code_n) +
                 " and information bit length m = " + std::to_string(cfg.code_m);
      break;
    case TaskId::LOC:
      ins.text = "User localization, signal length for localization is " + std::to_string(cfg.L_p_loc) +
                 ", SNR is " + snr + " dB";
      break;
  }
  return ins;
}

TaskId TaskInstruction::parse(const std::string& text) {
  auto starts = [&](const char* p) { return text.rfind(p, 0) == 0; };
  if (starts("Channel estimation")) return TaskId::CE;
  if (starts("MIMO detection")) return TaskId::DET;
  if (starts("Multi-user precoding")) return TaskId::PRECODING;
  if (starts("Channel decoding")) return TaskId::DECODING;
  if (starts("User localization")) return TaskId::LOC;
  throw ValidationError("unrecognized task instruction: '" + text + "'");
}

std::vector<int> tokenize_instruction(const std::string& text) {
  if (text.empty()) throw ValidationError("tokenize_instruction: empty text");
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

std::string detokenize_instruction(std::span<const int> ids) {
  std::string s;
  for (int id : ids) {
    if (id < 0 || id > 255) throw ValidationError("detokenize_instruction: id out of range");
    s.push_back(static_cast<char>(id));
  }
  return s;
}

// ---------------------------------------------------------------------------------------------
// construction

MuseModel::Linear MuseModel::make_linear(const std::string& prefix, const std::string& group, int in, int out,
                                         std::uint64_t& rng, double gain) {
  Linear l;
  const auto fi = static_cast<std::size_t>(in);
  l.w = store_.add_uniform(prefix + ".w", group, {fi, static_cast<std::size_t>(out)}, fi, rng, gain);
  l.b = store_.add_uniform(prefix + ".b", group, {1, static_cast<std::size_t>(out)}, fi, rng, gain);
  return l;
}

MuseModel::Block MuseModel::make_block(const std::string& prefix, const std::string& group, int d,
                                       std::uint64_t& rng) {
  Block b;
  const int h = d * cfg_.mlp_ratio;
  auto lin = [&](const std::string& name, int in, int out, Tensor& w, Tensor& bias) {
    Linear l = make_linear(prefix + "." + name, group, in, out, rng);
    w = l.w;
    bias = l.b;
  };
  lin("attn.qkv", d, 3 * d, b.w_qkv, b.b_qkv);
  lin("attn.out", d, d, b.w_o, b.b_o);
  lin("mlp.fc1", d, h, b.w_1, b.b_1);
  lin("mlp.fc2", h, d, b.w_2, b.b_2);
  return b;
}

MuseModel::MuseModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  code_ = cfg_.code();
  std::uint64_t rng = derive_seed(cfg_.seed, 0x40DE1ULL);
  const auto D = static_cast<std::size_t>(cfg_.D);
  const auto Ds = static_cast<std::size_t>(cfg_.D_scene);

  // scene encoder
  patch_proj_ = make_linear("scene.patch", "scene_encoder", cfg_.P * cfg_.P, cfg_.D_scene, rng);
  scene_pos_ = store_.add_constant("scene.pos", "scene_encoder", {static_cast<std::size_t>(cfg_.scene_tokens()), Ds},
                                   0.0);
  for (int i = 0; i < cfg_.scene_depth; ++i)
    scene_blocks_.push_back(make_block("scene.block" + std::to_string(i), "scene_encoder", cfg_.D_scene, rng));
  if (cfg_.D_scene != cfg_.D) scene_out_.push_back(make_linear("scene.out", "scene_encoder", cfg_.D_scene, cfg_.D, rng));

  // instruction hypernetwork
  tok_emb_ = store_.add_uniform("hyper.tok_emb", "hypernet", {256, static_cast<std::size_t>(cfg_.hyper_emb)}, 1, rng);
  int in = cfg_.hyper_emb;
  for (std::size_t i = 0; i < cfg_.hyper_hidden.size(); ++i) {
    hyper_.push_back(make_linear("hyper.fc" + std::to_string(i), "hypernet", in, cfg_.hyper_hidden[i], rng));
    in = cfg_.hyper_hidden[i];
  }
  hyper_.push_back(make_linear("hyper.out", "hypernet", in, cfg_.theta_size(), rng, 0.01));

  // backbone
  cls_ = store_.add_uniform("embed.cls", "embeddings", {1, D}, D, rng);
  pos_ = store_.add_constant("embed.pos", "embeddings", {static_cast<std::size_t>(cfg_.seq_cap), D}, 0.0);
  for (int i = 0; i < cfg_.L; ++i)
    blocks_.push_back(make_block("backbone.block" + std::to_string(i), "backbone", cfg_.D, rng));

  // batch-norm running statistics
  const auto F = static_cast<std::size_t>(cfg_.features());
  for (TaskId t : kAllTasks) {
    if (t == TaskId::DECODING) continue;
    store_.buffers()[std::string("bn.") + task_name(t) + ".mean"] = std::vector<double>(F, 0.0);
    store_.buffers()[std::string("bn.") + task_name(t) + ".var"] = std::vector<double>(F, 1.0);
  }
  padded_from_.assign(kNumTasks, F);
  padded_from_[static_cast<int>(TaskId::CE)] = static_cast<std::size_t>(2 * cfg_.L_p_ce);
  padded_from_[static_cast<int>(TaskId::LOC)] = static_cast<std::size_t>(2 * cfg_.L_p_loc);
  padded_from_[static_cast<int>(TaskId::PRECODING)] = F;
  padded_from_[static_cast<int>(TaskId::DET)] = F;
  padded_from_[static_cast<int>(TaskId::DECODING)] = static_cast<std::size_t>(2 * cfg_.code_n - cfg_.code_m);
}

void MuseModel::zero_block_outputs() {
  for (auto& b : blocks_)
    for (Tensor* t : {&b.w_o, &b.b_o, &b.w_2, &b.b_2}) std::fill(t->mutable_values().begin(), t->mutable_values().end(), 0.0);
}

// ---------------------------------------------------------------------------------------------
// forward pieces

Tensor MuseModel::apply(const Linear& l, const Tensor& x) { return ad::add(ad::matmul(x, l.w), l.b); }

Tensor MuseModel::run_block(const Block& blk, const Tensor& x, int heads) const {
  const std::size_t n = x.rows(), d = x.cols(), dh = d / static_cast<std::size_t>(heads);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor h = ad::layer_norm(x);
  const Tensor qkv = ad::add(ad::matmul(h, blk.w_qkv), blk.b_qkv);
  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (std::size_t i = 0; i < static_cast<std::size_t>(heads); ++i) {
    const Tensor q = ad::slice(qkv, 0, n, i * dh, (i + 1) * dh);
    const Tensor k = ad::slice(qkv, 0, n, d + i * dh, d + (i + 1) * dh);
    const Tensor v = ad::slice(qkv, 0, n, 2 * d + i * dh, 2 * d + (i + 1) * dh);
    const Tensor a = ad::softmax(ad::scale(ad::matmul(q, ad::transpose(k)), inv));
    outs.push_back(ad::matmul(a, v));
  }
  const Tensor att = heads == 1 ? outs.front() : ad::concat(outs, 1);
  const Tensor x1 = ad::add(x, ad::add(ad::matmul(att, blk.w_o), blk.b_o));
  const Tensor m = ad::gelu(ad::add(ad::matmul(ad::layer_norm(x1), blk.w_1), blk.b_1));
  return ad::add(x1, ad::add(ad::matmul(m, blk.w_2), blk.b_2));
}

GeneratedParams MuseModel::hypernet_forward(std::span<const int> ids) const {
  if (ids.empty()) throw ValidationError("hypernet_forward: empty token sequence");
  Tensor h = ad::mean_rows(ad::embedding_lookup(tok_emb_, ids));
  for (std::size_t i = 0; i < hyper_.size(); ++i) {
    h = apply(hyper_[i], h);
    if (i + 1 < hyper_.size()) h = ad::relu(h);
  }
  const std::size_t D = static_cast<std::size_t>(cfg_.D), F = static_cast<std::size_t>(cfg_.features());
  GeneratedParams g;
  std::size_t o = 0;
  g.W_en = ad::reshape(ad::slice(h, 0, 1, o, o + D * F), {D, F});
  o += D * F;
  g.b_en = ad::slice(h, 0, 1, o, o + D);
  o += D;
  g.W_de = ad::reshape(ad::slice(h, 0, 1, o, o + F * D), {F, D});
  o += F * D;
  g.b_de = ad::slice(h, 0, 1, o, o + F);
  return g;
}

Tensor MuseModel::scene_encode(const SceneGraph& graph) const {
  const int W = cfg_.W, P = cfg_.P, G = W / P;
  if (graph.W != W || graph.grid.size() != static_cast<std::size_t>(W) * W)
    throw ValidationError("scene_encode: graph is " + std::to_string(graph.W) + "x" + std::to_string(graph.W) +
                          ", model expects " + std::to_string(W) + "x" + std::to_string(W));
  const std::size_t Ls = static_cast<std::size_t>(G * G), P2 = static_cast<std::size_t>(P * P);
  std::vector<double> patches(Ls * P2);
  for (int pi = 0; pi < G; ++pi)
    for (int pj = 0; pj < G; ++pj)
      for (int a = 0; a < P; ++a)
        for (int b = 0; b < P; ++b)
          patches[static_cast<std::size_t>(pi * G + pj) * P2 + static_cast<std::size_t>(a * P + b)] =
              graph.at(pi * P + a, pj * P + b);
  Tensor x = ad::add(apply(patch_proj_, Tensor::constant({Ls, P2}, std::move(patches))), scene_pos_);
  for (const auto& blk : scene_blocks_) x = run_block(blk, x, cfg_.scene_heads);
  for (const auto& l : scene_out_) x = apply(l, x);
  return x;
}

RMatrix MuseModel::raw_features(const TaskInput& in) const {
  const int F = cfg_.features();
  auto need = [&](const void* p, const char* what) {
    if (!p) throw ValidationError(std::string("preprocess: ") + task_name(in.task) + " input lacks " + what);
  };
  switch (in.task) {
    case TaskId::CE:
    case TaskId::LOC: {
      need(in.pilots, "a pilot observation");
      const int Lp = in.task == TaskId::CE ? cfg_.L_p_ce : cfg_.L_p_loc;
      const CMatrix& Y = in.pilots->Y_p;
      if (Y.rows() != Lp || Y.cols() != cfg_.M)
        throw ValidationError("preprocess: pilot block is " + std::to_string(Y.rows()) + "x" +
                              std::to_string(Y.cols()) + ", expected " + std::to_string(Lp) + "x" +
                              std::to_string(cfg_.M));
      RMatrix X = RMatrix::Zero(cfg_.M, F);
      for (int m = 0; m < cfg_.M; ++m) put_interleaved(X, m, Y.col(m));
      return X;
    }
    case TaskId::DET: {
      need(in.det, "a detection sample");
      const auto& s = *in.det;
      if (s.H.rows() != cfg_.Nt || s.H.cols() != cfg_.K || s.Y.rows() != cfg_.Nt || s.Y.cols() != cfg_.L_d)
        throw ValidationError("preprocess: detection sample dimensions do not match the model");
      RMatrix X = RMatrix::Zero(cfg_.K + cfg_.L_d, F);
      for (int k = 0; k < cfg_.K; ++k) put_interleaved(X, k, s.H.col(k));
      for (int t = 0; t < cfg_.L_d; ++t) put_interleaved(X, cfg_.K + t, s.Y.col(t));
      return X;
    }
    case TaskId::PRECODING: {
      need(in.pre, "a precoding sample");
      const auto& H = in.pre->H_noisy;
      if (H.rows() != cfg_.Nt || H.cols() != cfg_.K)
        throw ValidationError("preprocess: precoding CSI dimensions do not match the model");
      RMatrix X = RMatrix::Zero(cfg_.K, F);
      for (int k = 0; k < cfg_.K; ++k) put_interleaved(X, k, H.col(k));
      return X;
    }
    case TaskId::DECODING: {
      need(in.dec, "a decoding sample");
      const int T = 2 * cfg_.code_n - cfg_.code_m;
      if (in.dec->s_tilde.size() != T)
        throw ValidationError("preprocess: decoding input has length " + std::to_string(in.dec->s_tilde.size()) +
                              ", expected " + std::to_string(T));
      RMatrix X = RMatrix::Zero(T, F);
      for (int i = 0; i < T; ++i) X(i, i) = in.dec->s_tilde(i);
      return X;
    }
  }
  throw ValidationError("preprocess: unknown task");
}

std::vector<RMatrix> MuseModel::normalize(TaskId task, const std::vector<RMatrix>& raw, bool training) {
  if (task == TaskId::DECODING) return raw;
  const std::size_t used = padded_from_[static_cast<int>(task)];
  auto& rm = store_.buffers()[std::string("bn.") + task_name(task) + ".mean"];
  auto& rv = store_.buffers()[std::string("bn.") + task_name(task) + ".var"];
  std::vector<double> mean(used, 0.0), var(used, 0.0);
  if (training) {
    std::size_t count = 0;
    for (const auto& X : raw) {
      for (Eigen::Index r = 0; r < X.rows(); ++r)
        for (std::size_t j = 0; j < used; ++j) mean[j] += X(r, static_cast<Eigen::Index>(j));
      count += static_cast<std::size_t>(X.rows());
    }
    if (count == 0) throw ValidationError("normalize: empty batch");
    for (auto& m : mean) m /= static_cast<double>(count);
    for (const auto& X : raw)
      for (Eigen::Index r = 0; r < X.rows(); ++r)
        for (std::size_t j = 0; j < used; ++j) {
          const double d = X(r, static_cast<Eigen::Index>(j)) - mean[j];
          var[j] += d * d;
        }
    for (auto& v : var) v /= static_cast<double>(count);
    const double mo = cfg_.bn_momentum;
    for (std::size_t j = 0; j < used; ++j) {
      rm[j] = (1.0 - mo) * rm[j] + mo * mean[j];
      rv[j] = (1.0 - mo) * rv[j] + mo * var[j];
    }
  } else {
    for (std::size_t j = 0; j < used; ++j) {
      mean[j] = rm[j];
      var[j] = rv[j];
    }
  }
  std::vector<RMatrix> out = raw;
  for (auto& X : out)
    for (Eigen::Index r = 0; r < X.rows(); ++r)
      for (std::size_t j = 0; j < used; ++j) {
        const auto c = static_cast<Eigen::Index>(j);
        X(r, c) = (X(r, c) - mean[j]) / std::sqrt(var[j] + 1e-5);
      }
  return out;
}

RMatrix MuseModel::preprocess(const TaskInput& in) const {
  return const_cast<MuseModel*>(this)->normalize(in.task, {raw_features(in)}, false).front();
}

Tensor MuseModel::unified_encode(const Tensor& X_pre, const GeneratedParams& theta) const {
  if (X_pre.cols() != static_cast<std::size_t>(cfg_.features()))
    throw ValidationError("unified_encode: expected " + std::to_string(cfg_.features()) + " features, got " +
                          std::to_string(X_pre.cols()));
  return ad::add(ad::matmul(X_pre, ad::transpose(theta.W_en)), theta.b_en);
}

Tensor MuseModel::backbone_forward(const Tensor& scene_tokens, const Tensor& data_tokens) const {
  const std::size_t len = scene_tokens.rows() + 1 + data_tokens.rows();
  if (len > static_cast<std::size_t>(cfg_.seq_cap))
    throw ValidationError("backbone_forward: sequence of " + std::to_string(len) + " tokens exceeds seq_cap " +
                          std::to_string(cfg_.seq_cap));
  Tensor x = ad::concat({scene_tokens, cls_, data_tokens}, 0);
  x = ad::add(x, ad::slice(pos_, 0, len, 0, static_cast<std::size_t>(cfg_.D)));
  for (const auto& blk : blocks_) x = run_block(blk, x, cfg_.heads);
  return x;
}

Tensor MuseModel::unified_decode(const Tensor& X_de, const GeneratedParams& theta) const {
  return ad::add(ad::matmul(X_de, ad::transpose(theta.W_de)), theta.b_de);
}

TaskOutput MuseModel::postprocess(TaskId task, const Tensor& X_post, const TaskInput& in) const {
  const std::size_t T = static_cast<std::size_t>(cfg_.data_tokens(task)), F = static_cast<std::size_t>(cfg_.features());
  if (X_post.rows() != 1 + T || X_post.cols() != F)
    throw ValidationError("postprocess: X_post is " + ad::shape_str(X_post.shape()) + ", expected [" +
                          std::to_string(1 + T) + ", " + std::to_string(F) + "]");
  TaskOutput out;
  out.task = task;
  switch (task) {
    case TaskId::CE: {
      out.head = ad::slice(X_post, 1, 1 + T, 0, F);
      out.estimate.resize(cfg_.Nt, cfg_.M);
      for (int m = 0; m < cfg_.M; ++m)
        for (int n = 0; n < cfg_.Nt; ++n)
          out.estimate(n, m) = {out.head.at(m, 2 * n), out.head.at(m, 2 * n + 1)};
      break;
    }
    case TaskId::DET: {
      const std::size_t Ld = static_cast<std::size_t>(cfg_.L_d), K2 = static_cast<std::size_t>(2 * cfg_.K);
      out.head = ad::slice(X_post, 1 + T - Ld, 1 + T, 0, K2);
      out.estimate.resize(cfg_.K, cfg_.L_d);
      for (int t = 0; t < cfg_.L_d; ++t)
        for (int k = 0; k < cfg_.K; ++k) out.estimate(k, t) = {out.head.at(t, 2 * k), out.head.at(t, 2 * k + 1)};
      break;
    }
    case TaskId::PRECODING: {
      if (!in.pre) throw ValidationError("postprocess: precoding needs the sample for P_max");
      const Tensor raw = ad::slice(X_post, 1, 1 + T, 0, F);
      const Tensor power = ad::sum(ad::mul(raw, raw));
      const Tensor gain = ad::sqrt(ad::div(Tensor::scalar(in.pre->P_max), power));
      out.head = ad::mul(raw, gain);
      out.estimate.resize(cfg_.Nt, cfg_.K);
      for (int k = 0; k < cfg_.K; ++k)
        for (int n = 0; n < cfg_.Nt; ++n) out.estimate(n, k) = {out.head.at(k, 2 * n), out.head.at(k, 2 * n + 1)};
      break;
    }
    case TaskId::DECODING: {
      if (!in.dec) throw ValidationError("postprocess: decoding needs the received word");
      const std::size_t n = static_cast<std::size_t>(cfg_.code_n);
      out.head = ad::slice(X_post, 1, 1 + n, 0, 1);
      out.p_hat.resize(static_cast<Eigen::Index>(n));
      for (std::size_t i = 0; i < n; ++i) out.p_hat(static_cast<Eigen::Index>(i)) = 1.0 / (1.0 + std::exp(-out.head.values()[i]));
      out.b_hat = polar_extract_info(ecct_postprocess_prob(in.dec->s_hat, out.p_hat), code_);
      break;
    }
    case TaskId::LOC: {
      out.head = ad::slice(X_post, 0, 1, 0, 2);
      out.position = {out.head.values()[0], out.head.values()[1]};
      break;
    }
  }
  return out;
}

TaskOutput MuseModel::forward_features(const TaskInput& in, const RMatrix& features, const GeneratedParams& theta,
                                       const Tensor& scene_tokens) const {
  const std::size_t T = static_cast<std::size_t>(features.rows()), F = static_cast<std::size_t>(features.cols());
  if (T != static_cast<std::size_t>(cfg_.data_tokens(in.task)))
    throw ValidationError(std::string("forward: ") + task_name(in.task) + " expects " +
                          std::to_string(cfg_.data_tokens(in.task)) + " tokens, got " + std::to_string(T));
  std::vector<double> v(T * F);
  for (std::size_t r = 0; r < T; ++r)
    for (std::size_t c = 0; c < F; ++c)
      v[r * F + c] = features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  const Tensor X = Tensor::constant({T, F}, std::move(v));
  const Tensor seq = backbone_forward(scene_tokens, unified_encode(X, theta));
  const std::size_t Ls = scene_tokens.rows();
  const Tensor X_de = ad::slice(seq, Ls, seq.rows(), 0, static_cast<std::size_t>(cfg_.D));
  return postprocess(in.task, unified_decode(X_de, theta), in);
}

TaskOutput MuseModel::forward(const TaskInput& in, const TaskInstruction& instruction) const {
  if (TaskInstruction::parse(instruction.text) != in.task)
    throw ValidationError(std::string("forward: instruction does not describe task ") + task_name(in.task));
  if (!in.graph) throw ValidationError("forward: missing scene graph");
  ad::NoGradGuard guard;
  const auto ids = tokenize_instruction(instruction.text);
  const GeneratedParams theta = hypernet_forward(ids);
  return forward_features(in, preprocess(in), theta, scene_encode(*in.graph));
}

// ---------------------------------------------------------------------------------------------
// checkpoint

void MuseModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream f(dir / "model.cfg");
  if (!f) throw RuntimeFailure("cannot write " + (dir / "model.cfg").string());
  f << format_key_values(cfg_.to_kv());
  store_.save(dir / "params");
}

MuseModel MuseModel::load(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "model.cfg"))
    throw RuntimeFailure("checkpoint missing model.cfg in " + dir.string());
  MuseModel m(ModelConfig::from_kv(read_key_values(dir / "model.cfg")));
  m.store_.load(dir / "params");
  return m;
}

}  // namespace musefm
