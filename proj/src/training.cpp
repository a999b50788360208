#include "musefm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>

#include "musefm/channel.hpp"

namespace musefm {

using ad::Tensor;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const TaskWeights& w) {
  std::string s;
  for (std::size_t i = 0; i < w.size(); ++i) s += (i ? "," : "") + fmt(w[i]);
  return s;
}

std::size_t ti(TaskId t) { return static_cast<std::size_t>(t); }

Tensor interleaved_rows(const CMatrix& A) {
  // row r = column r of A as (re, im) pairs
  const std::size_t R = static_cast<std::size_t>(A.cols()), C = static_cast<std::size_t>(2 * A.rows());
  std::vector<double> v(R * C);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t n = 0; n < static_cast<std::size_t>(A.rows()); ++n) {
      const cplx z = A(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(r));
      v[r * C + 2 * n] = z.real();
      v[r * C + 2 * n + 1] = z.imag();
    }
  return Tensor::constant({R, C}, std::move(v));
}

SceneGraph zero_graph_like(const SceneGraph& g) {
  SceneGraph z = g;
  std::fill(z.grid.begin(), z.grid.end(), 0);
  return z;
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// config

TrainConfig TrainConfig::for_profile(const std::string& profile) {
  TrainConfig c;
  c.profile = profile;
  if (profile == "paper") {
    c.batch_size = 100;
    c.epochs = 500;
    c.lr0 = 1e-4;
  }
  return c;
}

KeyValues TrainConfig::to_kv() const {
  KeyValues kv;
  kv["batch_size"] = std::to_string(batch_size);
  kv["epochs"] = std::to_string(epochs);
  kv["lr0"] = fmt(lr0);
  kv["beta1"] = fmt(beta1);
  kv["beta2"] = fmt(beta2);
  kv["adam_eps"] = fmt(adam_eps);
  kv["clip_norm"] = fmt(clip_norm);
  kv["alpha"] = join(alpha);
  kv["beta"] = join(beta);
  kv["train_seed"] = std::to_string(seed);
  kv["train_profile"] = profile;
  return kv;
}

TaskWeights parse_weights(const std::string& s) {
  const auto v = parse_double_list(s);
  if (v.size() != kNumTasks)
    throw ValidationError("task weights need " + std::to_string(kNumTasks) + " values (ce,det,precoding,decoding,loc), got '" +
                          s + "'");
  TaskWeights w{};
  std::copy(v.begin(), v.end(), w.begin());
  return w;
}

void TrainConfig::apply(const KeyValues& kv, std::vector<std::string>* consumed) {
  auto num = [&](const std::string& key, auto& field) {
    auto it = kv.find(key);
    if (it == kv.end()) return;
    const auto v = parse_double_list(it->second);
    if (v.size() != 1) throw ValidationError("train config: '" + key + "' expects one number");
    using T = std::decay_t<decltype(field)>;
    if constexpr (std::is_integral_v<T>) {
      if (v[0] != std::floor(v[0])) throw ValidationError("train config: '" + key + "' expects an integer");
    }
    field = static_cast<std::decay_t<decltype(field)>>(v[0]);
    if (consumed) consumed->push_back(key);
  };
  num("batch_size", batch_size);
  num("epochs", epochs);
  num("lr0", lr0);
  num("beta1", beta1);
  num("beta2", beta2);
  num("adam_eps", adam_eps);
  num("clip_norm", clip_norm);
  if (auto it = kv.find("alpha"); it != kv.end()) {
    alpha = parse_weights(it->second);
    if (consumed) consumed->push_back("alpha");
  }
  if (auto it = kv.find("beta"); it != kv.end()) {
    beta = parse_weights(it->second);
    if (consumed) consumed->push_back("beta");
  }
  if (auto it = kv.find("train_seed"); it != kv.end()) {
    seed = std::stoull(it->second);
    if (consumed) consumed->push_back("train_seed");
  }
  if (auto it = kv.find("train_profile"); it != kv.end()) {
    profile = it->second;
    if (consumed) consumed->push_back("train_profile");
  }
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("train config: batch_size must be >= 1");
  if (epochs < 1) throw ValidationError("train config: epochs must be >= 1");
  if (!(lr0 > 0.0)) throw ValidationError("train config: lr0 must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ValidationError("train config: betas must lie in [0, 1)");
  if (!(adam_eps > 0)) throw ValidationError("train config: adam_eps must be positive");
  if (!(clip_norm > 0)) throw ValidationError("train config: clip_norm must be positive");
  for (const auto* w : {&alpha, &beta}) {
    double s = 0;
    for (double x : *w) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw ValidationError("train config: task weights must be finite and >= 0");
      s += x;
    }
    if (w == &alpha && s == 0.0) throw ValidationError("train config: alpha must not be all zero");
  }
}

// ---------------------------------------------------------------------------------------------
// examples, losses, metrics

std::vector<Example> build_examples(TaskId task, const std::vector<ScenarioBundle>& bundles) {
  std::vector<Example> out;
  for (const auto& b : bundles)
    for (const auto& s : b.samples) {
      Example ex;
      ex.bundle = &b;
      ex.sample = &s;
      ex.in.task = task;
      ex.in.graph = &b.graph;
      switch (task) {
        case TaskId::CE:
        case TaskId::LOC:
          for (std::size_t k = 0; k < s.H.size(); ++k) {
            Example e = ex;
            e.user = static_cast<int>(k);
            e.in.pilots = task == TaskId::CE ? &s.ce[k] : &s.loc[k];
            out.push_back(e);
          }
          continue;
        case TaskId::DET: ex.in.det = &s.det; break;
        case TaskId::PRECODING: ex.in.pre = &s.pre; break;
        case TaskId::DECODING: ex.in.dec = &s.dec; break;
      }
      out.push_back(ex);
    }
  return out;
}

Tensor negative_sum_rate(const Tensor& w_rows, const CMatrix& H, double sigma2) {
  const auto Nt = static_cast<std::size_t>(H.rows()), K = static_cast<std::size_t>(H.cols());
  if (w_rows.rows() != K || w_rows.cols() != 2 * Nt)
    throw ValidationError("negative_sum_rate: precoder rows " + ad::shape_str(w_rows.shape()) + " do not match H");
  if (!(sigma2 > 0.0)) throw ValidationError("negative_sum_rate: noise variance must be positive");
  std::vector<double> are(2 * Nt * K), aim(2 * Nt * K), eye(K * K, 0.0);
  for (std::size_t n = 0; n < Nt; ++n)
    for (std::size_t k = 0; k < K; ++k) {
      const cplx h = H(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
      are[(2 * n) * K + k] = h.real();
      are[(2 * n + 1) * K + k] = h.imag();
      aim[(2 * n) * K + k] = -h.imag();
      aim[(2 * n + 1) * K + k] = h.real();
    }
  for (std::size_t k = 0; k < K; ++k) eye[k * K + k] = 1.0;
  // G[j, k] = h_k^H w_j split into real and imaginary parts
  const Tensor gre = ad::matmul(w_rows, Tensor::constant({2 * Nt, K}, std::move(are)));
  const Tensor gim = ad::matmul(w_rows, Tensor::constant({2 * Nt, K}, std::move(aim)));
  const Tensor p = ad::add(ad::mul(gre, gre), ad::mul(gim, gim));
  const Tensor total = ad::sum_axis(p, 0);
  const Tensor signal = ad::sum_axis(ad::mul(p, Tensor::constant({K, K}, std::move(eye))), 0);
  const Tensor interf = ad::sub(total, signal);
  const Tensor rate = ad::sum(ad::sub(ad::log(ad::add_scalar(total, sigma2)), ad::log(ad::add_scalar(interf, sigma2))));
  return ad::scale(rate, -1.0 / std::log(2.0));
}

Tensor task_loss(const TaskOutput& out, const Example& ex, double room_side) {
  switch (out.task) {
    case TaskId::CE: return ad::mse_loss(out.head, interleaved_rows(ex.sample->H[ex.user]));
    case TaskId::DET: return ad::mse_loss(out.head, interleaved_rows(ex.in.det->X));
    case TaskId::PRECODING: return negative_sum_rate(out.head, ex.in.pre->H_true, ex.in.pre->sigma2);
    case TaskId::DECODING: {
      const auto& z = ex.in.dec->z_tilde;
      std::vector<double> t(z.begin(), z.end());
      return ad::bce_with_logits_loss(out.head, Tensor::constant({z.size(), 1}, std::move(t)));
    }
    case TaskId::LOC: {
      const Vec2 p = normalize_position(ex.sample->positions[ex.user], room_side);
      return ad::mse_loss(out.head, Tensor::constant({1, 2}, {p.x(), p.y()}));
    }
  }
  throw ValidationError("task_loss: unknown task");
}

double multitask_loss(const TaskWeights& losses, const TaskWeights& alpha) {
  double s = 0.0;
  for (std::size_t i = 0; i < losses.size(); ++i)
    if (alpha[i] != 0.0) s += alpha[i] * losses[i];
  return s;
}

double task_metric(const TaskOutput& out, const Example& ex, double room_side) {
  switch (out.task) {
    case TaskId::CE: return nmse(out.estimate, ex.sample->H[ex.user]);
    case TaskId::DET: return nmse(out.estimate, ex.in.det->X);
    case TaskId::PRECODING: return -sum_rate(ex.in.pre->H_true, out.estimate, ex.in.pre->sigma2);
    case TaskId::DECODING: return ber(out.b_hat, ex.in.dec->b);
    case TaskId::LOC: return loc_error(out.position, normalize_position(ex.sample->positions[ex.user], room_side));
  }
  throw ValidationError("task_metric: unknown task");
}

// ---------------------------------------------------------------------------------------------
// evaluation

EvalResult evaluate(const MuseModel& model, const std::vector<ScenarioBundle>& bundles, double profile_snr_db,
                    const TaskWeights& beta, const EvalOptions& opt) {
  if (bundles.empty()) throw ValidationError("evaluate: empty split");
  ad::NoGradGuard guard;
  const auto& cfg = model.config();
  const double snr = opt.snr_db.value_or(profile_snr_db);

  std::map<const ScenarioBundle*, Tensor> scenes;
  std::vector<SceneGraph> zeroed;
  zeroed.reserve(bundles.size());
  for (const auto& b : bundles) {
    if (opt.ablate_scene) {
      zeroed.push_back(zero_graph_like(b.graph));
      scenes[&b] = model.scene_encode(zeroed.back());
    } else {
      scenes[&b] = model.scene_encode(b.graph);
    }
  }

  EvalResult res;
  for (TaskId t : opt.tasks) {
    const auto ins = TaskInstruction::make(t, cfg, snr);
    const GeneratedParams theta = model.hypernet_forward(tokenize_instruction(ins.text));
    const auto examples = build_examples(t, bundles);
    auto& vals = res.per_example[ti(t)];
    vals.reserve(examples.size());
    for (const auto& ex : examples) {
      const TaskOutput out = model.forward_features(ex.in, model.preprocess(ex.in), theta, scenes.at(ex.bundle));
      vals.push_back(task_metric(out, ex, cfg.room_side));
    }
    res.metric[ti(t)] = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
    res.total += beta[ti(t)] * res.metric[ti(t)];
  }
  return res;
}

double validation_loss(const MuseModel& model, const std::vector<ScenarioBundle>& val, double snr_db,
                       const TaskWeights& beta) {
  EvalOptions opt;
  opt.tasks.clear();
  for (TaskId t : kAllTasks)
    if (beta[ti(t)] != 0.0) opt.tasks.push_back(t);
  if (val.empty()) throw ValidationError("validation_loss: empty split");
  if (opt.tasks.empty()) return 0.0;
  return evaluate(model, val, snr_db, beta, opt).total;
}

// ---------------------------------------------------------------------------------------------
// optimization

double cosine_lr(double lr0, std::uint64_t t, std::uint64_t T) {
  if (T == 0) return lr0;
  return lr0 * (1.0 + std::cos(kPi * static_cast<double>(std::min(t, T)) / static_cast<double>(T))) / 2.0;
}

double clip_gradients(ad::ParameterStore& store, double max_norm) {
  const double norm = store.grad_norm();
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : store.params())
      for (double& g : p.tensor.mutable_grad()) g *= s;
  }
  return norm;
}

void adam_step(ad::ParameterStore& store, AdamState& st, double lr, const TrainConfig& cfg) {
  auto& ps = store.params();
  if (st.m.size() != ps.size()) {
    st.m.assign(ps.size(), {});
    st.v.assign(ps.size(), {});
    for (std::size_t i = 0; i < ps.size(); ++i) {
      st.m[i].assign(ps[i].tensor.size(), 0.0);
      st.v[i].assign(ps[i].tensor.size(), 0.0);
    }
  }
  ++st.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& val = ps[i].tensor.mutable_values();
    const auto g = ps[i].tensor.grad();
    auto& m = st.m[i];
    auto& v = st.v[i];
    for (std::size_t j = 0; j < val.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      val[j] -= lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.adam_eps);
    }
  }
}

// ---------------------------------------------------------------------------------------------
// fit

std::string log_csv_header() {
  return "epoch,lr,loss_ce,loss_det,loss_pre,loss_dec,loss_loc,val_total,val_ce,val_det,val_pre,val_dec,val_loc,"
         "loss_total,config_hash";
}

std::string log_csv_row(const LogRow& r, const std::string& hash) {
  std::string s = std::to_string(r.epoch) + "," + fmt(r.lr);
  for (double x : r.loss) s += "," + fmt(x);
  s += "," + fmt(r.val_total);
  for (double x : r.val) s += "," + fmt(x);
  s += "," + fmt(r.loss_total) + "," + hash;
  return s;
}

TrainResult fit(MuseModel& model, const Dataset& data, const TrainConfig& cfg,
                const std::optional<std::filesystem::path>& out_dir,
                const std::function<void(const LogRow&)>& on_epoch) {
  cfg.validate();
  const SystemProfile& profile = data.manifest.profile;
  const auto& train = data.split("train");
  const auto& val = data.split("val");
  if (train.empty()) throw ValidationError("fit: empty training split");
  if (val.empty()) throw ValidationError("fit: empty validation split");
  const auto& mc = model.config();
  if (mc.Nt != profile.Nt() || mc.M != profile.M() || mc.K != profile.K || mc.W != profile.grid_W)
    throw ValidationError("fit: model configuration does not match the dataset profile");

  std::vector<TaskId> active;
  for (TaskId t : kAllTasks)
    if (cfg.alpha[ti(t)] > 0.0) active.push_back(t);

  std::array<std::vector<Example>, kNumTasks> examples;
  std::size_t largest = 0;
  for (TaskId t : active) {
    examples[ti(t)] = build_examples(t, train);
    largest = std::max(largest, examples[ti(t)].size());
  }
  const std::size_t B = static_cast<std::size_t>(cfg.batch_size);
  const std::uint64_t steps_per_epoch = (largest + B - 1) / B;
  const std::uint64_t total_steps = steps_per_epoch * static_cast<std::uint64_t>(cfg.epochs);

  std::array<std::vector<int>, kNumTasks> ids;
  for (TaskId t : active) ids[ti(t)] = tokenize_instruction(TaskInstruction::make(t, mc, profile.snr_db).text);

  KeyValues hash_kv = profile.to_kv();
  for (const auto& [k, v] : mc.to_kv()) hash_kv["model." + k] = v;
  for (const auto& [k, v] : cfg.to_kv()) hash_kv["train." + k] = v;
  const std::string hash = config_hash(hash_kv);

  std::ofstream csv;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    csv.open(*out_dir / "train_log.csv");
    if (!csv) throw RuntimeFailure("cannot write " + (*out_dir / "train_log.csv").string());
    csv << log_csv_header() << '\n';
    std::ofstream tc(*out_dir / "train.cfg");
    tc << format_key_values(cfg.to_kv());
  }

  auto& store = model.params();
  AdamState adam;
  Rng rng(derive_seed(cfg.seed, 0x7EA1ULL));
  TrainResult result;
  result.best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_values;
  std::map<std::string, std::vector<double>> best_buffers;
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::array<std::vector<std::size_t>, kNumTasks> order;
    std::array<std::size_t, kNumTasks> cursor{};
    for (TaskId t : active) {
      order[ti(t)].resize(examples[ti(t)].size());
      std::iota(order[ti(t)].begin(), order[ti(t)].end(), std::size_t{0});
      std::shuffle(order[ti(t)].begin(), order[ti(t)].end(), rng);
    }
    LogRow row;
    row.epoch = epoch;
    row.lr = cosine_lr(cfg.lr0, step, total_steps);
    TaskWeights sums{};
    std::array<std::size_t, kNumTasks> counts{};

    for (std::uint64_t s = 0; s < steps_per_epoch; ++s, ++step) {
      const double lr = cosine_lr(cfg.lr0, step, total_steps);
      store.zero_grad();
      std::map<const ScenarioBundle*, Tensor> scenes;
      Tensor total;
      for (TaskId t : active) {
        const auto& ex = examples[ti(t)];
        auto& ord = order[ti(t)];
        std::vector<const Example*> batch;
        for (std::size_t i = 0; i < B && i < ex.size(); ++i) {
          if (cursor[ti(t)] == ord.size()) {
            cursor[ti(t)] = 0;
            std::shuffle(ord.begin(), ord.end(), rng);
          }
          batch.push_back(&ex[ord[cursor[ti(t)]++]]);
        }
        Tensor loss;
        try {
          std::vector<RMatrix> raw;
          raw.reserve(batch.size());
          for (const Example* e : batch) raw.push_back(model.raw_features(e->in));
          const auto feats = model.normalize(t, raw, true);
          const GeneratedParams theta = model.hypernet_forward(ids[ti(t)]);
          std::vector<Tensor> parts;
          for (std::size_t i = 0; i < batch.size(); ++i) {
            auto it = scenes.find(batch[i]->bundle);
            if (it == scenes.end()) it = scenes.emplace(batch[i]->bundle, model.scene_encode(batch[i]->bundle->graph)).first;
            const TaskOutput out = model.forward_features(batch[i]->in, feats[i], theta, it->second);
            parts.push_back(ad::reshape(task_loss(out, *batch[i], mc.room_side), {1, 1}));
          }
          loss = ad::mean(ad::concat(parts, 0));
        } catch (const ValidationError& e) {
          if (std::string(e.what()).find("non-finite") != std::string::npos)
            throw RuntimeFailure(std::string("non-finite loss in task ") + task_name(t) + " at epoch " +
                                 std::to_string(epoch) + ", step " + std::to_string(s) + ": " + e.what());
          throw;
        }
        if (!std::isfinite(loss.item()))
          throw RuntimeFailure(std::string("non-finite loss in task ") + task_name(t) + " at epoch " +
                               std::to_string(epoch) + ", step " + std::to_string(s));
        sums[ti(t)] += loss.item();
        counts[ti(t)] += 1;
        const Tensor weighted = ad::scale(loss, cfg.alpha[ti(t)]);
        total = total.defined() ? ad::add(total, weighted) : weighted;
      }
      ad::backward(total);
      clip_gradients(store, cfg.clip_norm);
      adam_step(store, adam, lr, cfg);
    }

    for (TaskId t : active) row.loss[ti(t)] = sums[ti(t)] / static_cast<double>(counts[ti(t)]);
    row.loss_total = multitask_loss(row.loss, cfg.alpha);
    const EvalResult ev = evaluate(model, val, profile.snr_db, cfg.beta);
    row.val = ev.metric;
    row.val_total = ev.total;
    result.log.push_back(row);
    if (csv.is_open()) csv << log_csv_row(row, hash) << '\n' << std::flush;
    if (on_epoch) on_epoch(row);

    if (row.val_total < result.best_val) {
      result.best_val = row.val_total;
      result.best_epoch = epoch;
      best_values.clear();
      for (const auto& p : store.params())
        best_values.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
      best_buffers = store.buffers();
      if (out_dir) model.save(*out_dir);
    }
  }
  result.steps = step;

  auto& ps = store.params();
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].tensor.mutable_values() = best_values[i];
  store.buffers() = best_buffers;
  return result;
}

// ---------------------------------------------------------------------------------------------

std::vector<ScenarioBundle> resample_at(const std::vector<ScenarioBundle>& bundles, const SystemProfile& profile,
                                        double snr_db, std::optional<double> ebn0_db) {
  std::uint64_t tag = 0;
  std::memcpy(&tag, &snr_db, sizeof tag);
  std::uint64_t etag = 0;
  if (ebn0_db) std::memcpy(&etag, &*ebn0_db, sizeof etag);
  std::vector<ScenarioBundle> out = bundles;
  for (auto& b : out)
    for (std::size_t s = 0; s < b.samples.size(); ++s)
      attach_task_samples(profile, derive_seed(sample_seed(b.seed, static_cast<int>(s)), tag, etag), snr_db, ebn0_db,
                          b.samples[s]);
  return out;
}

}  // namespace musefm
