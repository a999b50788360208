// Acceptance run: one PASS/FAIL line per criterion.
// Exit status: 0 all passed, 1 some criterion failed, 2 the run itself aborted.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "musefm/baselines.hpp"
#include "musefm/channel.hpp"
#include "musefm/datastore.hpp"
#include "musefm/model.hpp"
#include "musefm/propagation.hpp"
#include "musefm/training.hpp"

using namespace musefm;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(int id, bool ok, const std::string& detail, double seconds) {
  std::cout << (ok ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << " [" << std::fixed
            << std::setprecision(1) << seconds << " s]" << std::defaultfloat << std::endl;
  if (!ok) ++failures;
}

double elapsed(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double x) {
  std::ostringstream s;
  s << std::setprecision(6) << x;
  return s.str();
}

// ---------------------------------------------------------------------------------------------
// 1. geometry

bool sampled_blocked(const Scene& s, const Vec3& p, const Vec3& q) {
  const int n = 20000;
  for (int i = 1; i < n; ++i) {
    const Vec3 x = p + (q - p) * (static_cast<double>(i) / n);
    if (s.in_obstacle(Vec2(x.x(), x.y()))) return true;
  }
  return false;
}

// Brute-force image-source enumeration keyed by reflector id (-1 for LOS).
std::map<int, double> oracle_paths(const Scene& s, const Vec3& tx, const Vec3& rx) {
  std::map<int, double> out;
  if (!sampled_blocked(s, tx, rx)) out[-1] = (tx - rx).norm();
  for (const Face& f : reflecting_faces(s)) {
    const double dt = (tx[f.axis] - f.coord) * f.normal_sign, dr = (rx[f.axis] - f.coord) * f.normal_sign;
    if (dt <= 0 || dr <= 0) continue;
    Vec3 img = tx;
    img[f.axis] = 2 * f.coord - tx[f.axis];
    const double t = (f.coord - img[f.axis]) / (rx[f.axis] - img[f.axis]);
    const Vec3 hit = img + (rx - img) * t;
    int k = 0;
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      if (a == f.axis) continue;
      inside = inside && hit[a] >= f.lo[k] && hit[a] <= f.hi[k];
      ++k;
    }
    if (!inside || sampled_blocked(s, tx, hit) || sampled_blocked(s, hit, rx)) continue;
    out[f.id] = (img - rx).norm();
  }
  return out;
}

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const SystemProfile p = SystemProfile::toy();
  const ArrayFrame frame = ArrayFrame::facing_room_center(p.scene.bs_pos);
  double worst_len = 0.0, worst_recip = 0.0;
  int mismatched_sets = 0, paths = 0;
  for (int i = 0; i < 100; ++i) {
    const Scene s = generate_scene(scenario_seed(0, static_cast<std::uint64_t>(i)), p.scene);
    for (const Vec3& ue : sample_user_positions(s, 3, 1000 + i, p.ue_height)) {
      const PathList pl = trace_paths(s, s.bs_pos, ue, 1, frame);
      const auto oracle = oracle_paths(s, s.bs_pos, ue);
      std::map<int, double> got;
      for (const auto& path : pl.paths) got[path.reflector_id.value_or(-1)] = path.length;
      std::set<int> a, b;
      for (const auto& [k, v] : got) a.insert(k);
      for (const auto& [k, v] : oracle) b.insert(k);
      if (a != b) ++mismatched_sets;
      for (const auto& [k, v] : got)
        if (oracle.count(k)) worst_len = std::max(worst_len, std::abs(v - oracle.at(k)));
      paths += static_cast<int>(got.size());

      std::vector<double> fw, bw;
      for (const auto& path : pl.paths) fw.push_back(path.length);
      for (const auto& path : trace_paths(s, ue, s.bs_pos, 1).paths) bw.push_back(path.length);
      std::sort(fw.begin(), fw.end());
      std::sort(bw.begin(), bw.end());
      if (fw.size() != bw.size()) {
        worst_recip = 1.0;
        continue;
      }
      for (std::size_t j = 0; j < fw.size(); ++j) worst_recip = std::max(worst_recip, std::abs(fw[j] - bw[j]));
    }
  }
  const double secs = elapsed(t0);
  report(1, mismatched_sets == 0 && worst_len < 1e-6 && worst_recip < 1e-9 && secs < 60,
         "100 scenes x 3 users, " + std::to_string(paths) + " paths, path-set mismatches " +
             std::to_string(mismatched_sets) + ", max length error " + fmt(worst_len) + " m, reciprocity " +
             fmt(worst_recip) + " m",
         secs);
}

// ---------------------------------------------------------------------------------------------
// 2. channel algebra

void criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2);
  ArrayGeometry g;
  double worst_norm = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double f = g.subcarrier_freq(uniform_int(rng, 0, g.M - 1));
    const CVector a = steering_vector(uniform(rng, 0, kPi), uniform(rng, -kPi, kPi), f, g);
    worst_norm = std::max(worst_norm, std::abs(1.0 - a.norm()));
  }
  double worst_direct = 0.0;
  const double kd = 2 * kPi * g.d() / kSpeedOfLight;
  for (int i = 0; i < 100; ++i) {
    PathList pl;
    const int n = uniform_int(rng, 1, 7);
    for (int j = 0; j < n; ++j) {
      Path p;
      p.length = uniform(rng, 1.0, 30.0);
      p.delay = p.length / kSpeedOfLight;
      p.n_bounces = uniform_int(rng, 0, 1);
      p.aod_elevation = uniform(rng, 0, kPi);
      p.aod_azimuth = uniform(rng, -kPi, kPi);
      pl.paths.push_back(p);
    }
    const CMatrix H = assemble_channel(pl, g);
    // channel model summed term by term
    for (int m = 0; m < g.M; ++m) {
      const double f = g.f_c + (m - (g.M - 1) / 2.0) * g.delta_f;
      for (int nv = 0; nv < g.N_v; ++nv)
        for (int nh = 0; nh < g.N_h; ++nh) {
          cplx h = 0;
          for (const Path& p : pl.paths) {
            const double beta = g.wavelength_c() / (4 * kPi * p.length) * (p.n_bounces ? 0.6 : 1.0);
            const double ph = -2 * kPi * f * p.delay +
                              kd * f * (nv * std::sin(p.aod_azimuth) * std::sin(p.aod_elevation) +
                                        nh * std::cos(p.aod_elevation));
            h += std::polar(beta / std::sqrt(static_cast<double>(g.Nt())), ph);
          }
          worst_direct = std::max(worst_direct, std::abs(H(nv * g.N_h + nh, m) - h));
        }
    }
  }
  report(2, worst_norm < 1e-12 && worst_direct < 1e-12,
         "max |1-||a|||=" + fmt(worst_norm) + " over 1e4 angles, max direct-evaluation error " + fmt(worst_direct) +
             " over 100 path lists",
         elapsed(t0));
}

// ---------------------------------------------------------------------------------------------
// 3. coding

std::vector<Bits> kron_generator(int n) {
  std::vector<Bits> G{{1}};
  for (int size = 1; size < n; size *= 2) {
    std::vector<Bits> next(2 * size, Bits(2 * size, 0));
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) {
        next[r][c] = G[r][c];
        next[size + r][c] = G[r][c];
        next[size + r][size + c] = G[r][c];
      }
    G = next;
  }
  return G;
}

void criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(3);
  int bad_syndromes = 0, bad_roundtrips = 0, bad_generators = 0;
  for (auto [n, m] : {std::pair{16, 8}, std::pair{64, 32}}) {
    const PolarCode code = PolarCode::bhattacharyya(n, m, 5.0);
    const auto P = polar_parity_check(code);
    for (int t = 0; t < 1000; ++t) {
      Bits b(static_cast<std::size_t>(m));
      for (auto& x : b) x = static_cast<std::uint8_t>(uniform_int(rng, 0, 1));
      const Bits x = polar_encode(b, code);
      const Bits syn = syndrome(P, x);
      bad_syndromes += std::any_of(syn.begin(), syn.end(), [](auto v) { return v != 0; });
      const DecodingSample d = make_decoding_sample(b, code, uniform(rng, 0, 6), 7000 + t);
      RVector z(n);
      for (int i = 0; i < n; ++i) z(i) = sign_pos(d.s_hat(i)) * d.s_bpsk(i);  // oracle multiplicative noise
      const Bits est = polar_extract_info(ecct_postprocess(d.s_hat, z), code);
      bad_roundtrips += est != b;
    }
  }
  for (int n = 1; n <= 64; n *= 2) {
    const auto G = polar_generator(n);
    bad_generators += G != kron_generator(n);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        int s = 0;
        for (int k = 0; k < n; ++k) s ^= G[r][k] & G[k][c];
        bad_generators += s != (r == c);
      }
  }
  report(3, bad_syndromes == 0 && bad_roundtrips == 0 && bad_generators == 0,
         "2x1000 messages: nonzero syndromes " + std::to_string(bad_syndromes) + ", failed ecct round trips " +
             std::to_string(bad_roundtrips) + ", generator defects " + std::to_string(bad_generators),
         elapsed(t0));
}

// ---------------------------------------------------------------------------------------------
// 4. baselines

void criterion4() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(4);
  double lim = 0.0;
  for (int t = 0; t < 100; ++t) {
    const CMatrix H = awgn(16, 4, 1.0, rng), y = awgn(16, 3, 1.0, rng);
    lim = std::max(lim, (lmmse_detect(H, y, 1e-12) - zf_detect(H, y)).norm());
  }
  int nonmonotone = 0;
  for (int t = 0; t < 1000; ++t) {
    const CMatrix H = awgn(16, 4, 1.0, rng);
    const auto st = wmmse_precode(H, 1.0, snr_to_sigma2(uniform(rng, 0, 20)));
    for (std::size_t i = 1; i < st.rate_trace.size(); ++i) nonmonotone += st.rate_trace[i] < st.rate_trace[i - 1] - 1e-9;
  }
  int wins = 0;
  const double s2 = snr_to_sigma2(10.0);
  for (int t = 0; t < 500; ++t) {
    const CMatrix H = awgn(16, 4, 1.0, rng);
    wins += sum_rate(H, wmmse_precode(H, 1.0, s2).V, s2) >= sum_rate(H, zf_precode(H, 1.0), s2);
  }
  double single = 0.0;
  for (int t = 0; t < 100; ++t) {
    const CMatrix h = awgn(16, 1, 1.0, rng);
    const double sig2 = snr_to_sigma2(uniform(rng, 0, 20));
    single = std::max(single, std::abs(sum_rate(h, wmmse_precode(h, 1.0, sig2).V, sig2) -
                                       std::log2(1 + h.squaredNorm() / sig2)));
  }
  const double secs = elapsed(t0);
  report(4, lim < 1e-8 && nonmonotone == 0 && wins >= 475 && single < 1e-6 && secs < 300,
         "LMMSE-ZF gap " + fmt(lim) + ", non-monotone WMMSE steps " + std::to_string(nonmonotone) +
             "/1000 runs, WMMSE>=ZF on " + std::to_string(wins) + "/500, K=1 rate error " + fmt(single),
         secs);
}

// ---------------------------------------------------------------------------------------------
// 5. autodiff

double fd_error(const std::vector<Tensor>& leaves, const std::function<Tensor()>& f) {
  for (auto t : leaves) t.zero_grad();
  ad::backward(f());
  double num2 = 0.0, diff2 = 0.0;
  const double h = 1e-5;
  for (auto t : leaves) {
    auto& v = t.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double x0 = v[i];
      double fp, fm;
      {
        ad::NoGradGuard g;
        v[i] = x0 + h;
        fp = f().item();
        v[i] = x0 - h;
        fm = f().item();
      }
      v[i] = x0;
      const double n = (fp - fm) / (2 * h);
      num2 += n * n;
      diff2 += (n - t.grad()[i]) * (n - t.grad()[i]);
    }
  }
  return std::sqrt(diff2) / std::max(std::sqrt(num2), 1e-12);
}

ModelConfig two_block_config() {
  ModelConfig c;
  c.D = 8;
  c.L = 2;
  c.heads = 2;
  c.mlp_ratio = 2;
  c.Nt = 4;
  c.M = 2;
  c.K = 1;
  c.L_p_ce = 2;
  c.L_p_loc = 2;
  c.L_d = 1;
  c.code_n = 4;
  c.code_m = 2;
  c.W = 8;
  c.P = 4;
  c.D_scene = 8;
  c.scene_depth = 1;
  c.scene_heads = 2;
  c.hyper_emb = 4;
  c.hyper_hidden = {6};
  c.seq_cap = 16;
  c.seed = 3;
  return c;
}

double model_fd_error() {
  MuseModel m(two_block_config());
  Rng rng(9);
  for (double& v : m.params().get("embed.pos").tensor.mutable_values()) v = uniform(rng, -0.3, 0.3);
  for (double& v : m.params().get("scene.pos").tensor.mutable_values()) v = uniform(rng, -0.3, 0.3);
  for (double& v : m.params().get("hyper.out.w").tensor.mutable_values()) v *= 50.0;
  PilotObservation obs;
  obs.Nt = 4;
  obs.selected = {0, 2};
  obs.Y_p = awgn(2, 2, 1.0, rng);
  Scene sc;
  sc.cylinders.push_back({{0.0, 0.0}, 2.0});
  const SceneGraph graph = rasterize(sc, 8, 4);
  TaskInput in;
  in.task = TaskId::CE;
  in.pilots = &obs;
  in.graph = &graph;
  const RMatrix feats = m.preprocess(in);
  std::vector<double> tgt(16);
  for (double& v : tgt) v = uniform(rng, -1, 1);
  const Tensor target = Tensor::constant({2, 8}, tgt);
  const auto ids = tokenize_instruction(TaskInstruction::make(TaskId::CE, m.config(), 10).text);
  std::vector<Tensor> leaves;
  for (auto& p : m.params().params()) leaves.push_back(p.tensor);
  return fd_error(leaves, [&] {
    const auto theta = m.hypernet_forward(ids);
    return ad::mse_loss(m.forward_features(in, feats, theta, m.scene_encode(graph)).head, target);
  });
}

void criterion5() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(5);
  auto leaf = [&](std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(r * c);
    for (double& x : v) x = uniform(rng, lo, hi);
    return Tensor::leaf({r, c}, v);
  };
  auto project = [&](const Tensor& y) {
    Rng pr(99);
    std::vector<double> w(y.size());
    for (double& x : w) x = uniform(pr, -1, 1);
    return ad::sum(ad::mul(y, Tensor::constant(y.shape(), w)));
  };
  auto a = leaf(3, 4), b = leaf(4, 2), c = leaf(3, 4, 0.5, 2.0), r = leaf(1, 4, 0.5, 2.0), p = leaf(3, 4, 0.2, 2.0);
  auto k = leaf(3, 4);
  for (double& x : k.mutable_values()) x += x < 0 ? -0.1 : 0.1;
  auto table = leaf(6, 3), logits = leaf(2, 4, -3, 3), pred = leaf(2, 4);
  const Tensor target = Tensor::constant({2, 4}, {0.1, -0.2, 0.3, 0.5, -0.7, 0.2, 0.0, 1.0});
  const Tensor bits = Tensor::constant({2, 4}, {0, 1, 1, 0, 1, 0, 0, 1});
  const std::vector<int> ids{1, 4, 1, 0};
  const std::vector<std::pair<std::string, std::function<double()>>> checks{
      {"matmul", [&] { return fd_error({a, b}, [&] { return project(ad::matmul(a, b)); }); }},
      {"transpose", [&] { return fd_error({a}, [&] { return project(ad::transpose(a)); }); }},
      {"reshape", [&] { return fd_error({a}, [&] { return project(ad::reshape(a, {2, 6})); }); }},
      {"slice", [&] { return fd_error({a}, [&] { return project(ad::slice(a, 1, 3, 1, 4)); }); }},
      {"concat", [&] { return fd_error({a, c}, [&] { return project(ad::concat({a, c}, 0)); }); }},
      {"add", [&] { return fd_error({a, r}, [&] { return project(ad::add(a, r)); }); }},
      {"sub", [&] { return fd_error({a, c}, [&] { return project(ad::sub(a, c)); }); }},
      {"mul", [&] { return fd_error({a, c}, [&] { return project(ad::mul(a, c)); }); }},
      {"div", [&] { return fd_error({a, c}, [&] { return project(ad::div(a, c)); }); }},
      {"scale", [&] { return fd_error({a}, [&] { return project(ad::scale(a, 2.5)); }); }},
      {"add_scalar", [&] { return fd_error({a}, [&] { return project(ad::add_scalar(a, 0.3)); }); }},
      {"relu", [&] { return fd_error({k}, [&] { return project(ad::relu(k)); }); }},
      {"gelu", [&] { return fd_error({a}, [&] { return project(ad::gelu(a)); }); }},
      {"sigmoid", [&] { return fd_error({a}, [&] { return project(ad::sigmoid(a)); }); }},
      {"exp", [&] { return fd_error({a}, [&] { return project(ad::exp(a)); }); }},
      {"log", [&] { return fd_error({p}, [&] { return project(ad::log(p)); }); }},
      {"sqrt", [&] { return fd_error({p}, [&] { return project(ad::sqrt(p)); }); }},
      {"sum", [&] { return fd_error({a}, [&] { return ad::sum(ad::mul(a, a)); }); }},
      {"mean", [&] { return fd_error({a}, [&] { return ad::mean(ad::mul(a, a)); }); }},
      {"sum_axis", [&] { return fd_error({a}, [&] { return project(ad::sum_axis(a, 0)); }); }},
      {"mean_rows", [&] { return fd_error({a}, [&] { return project(ad::mean_rows(a)); }); }},
      {"softmax", [&] { return fd_error({a}, [&] { return project(ad::softmax(a)); }); }},
      {"layer_norm", [&] { return fd_error({a}, [&] { return project(ad::layer_norm(a)); }); }},
      {"embedding", [&] { return fd_error({table}, [&] { return project(ad::embedding_lookup(table, ids)); }); }},
      {"mse", [&] { return fd_error({pred}, [&] { return ad::mse_loss(pred, target); }); }},
      {"bce", [&] { return fd_error({logits}, [&] { return ad::bce_with_logits_loss(logits, bits); }); }},
      {"model", model_fd_error},
  };
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, fn] : checks) {
    const double e = fn();
    if (e > worst) {
      worst = e;
      worst_name = name;
    }
  }
  report(5, worst < 1e-5,
         std::to_string(checks.size()) + " gradient checks, worst relative error " + fmt(worst) + " (" + worst_name + ")",
         elapsed(t0));
}

// ---------------------------------------------------------------------------------------------
// 6. architecture invariants

void criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  const SystemProfile prof = SystemProfile::toy();
  const ScenarioBundle bundle = regenerate_scenario(0, 0, prof);
  std::vector<std::string> problems;

  MuseModel m(ModelConfig::from_profile(prof));
  const auto& cfg = m.config();
  {
    ad::NoGradGuard g;
    for (TaskId t : kAllTasks) {
      const auto th = m.hypernet_forward(tokenize_instruction(TaskInstruction::make(t, cfg, 10).text));
      const std::size_t D = static_cast<std::size_t>(cfg.D), din = static_cast<std::size_t>(cfg.features());
      if (th.W_en.shape() != ad::Shape{din, D} || th.b_en.shape() != ad::Shape{1, D} ||
          th.W_de.shape() != ad::Shape{D, din} || th.b_de.shape() != ad::Shape{1, din})
        problems.push_back("hypernetwork shape");
    }
  }

  {
    MuseModel z(ModelConfig::from_profile(prof));
    z.zero_block_outputs();
    auto& pos = z.params().get("embed.pos").tensor.mutable_values();
    Rng rng(6);
    for (double& v : pos) v = uniform(rng, -1, 1);
    ad::NoGradGuard g;
    const Tensor scene = z.scene_encode(bundle.graph);
    std::vector<double> data(8 * static_cast<std::size_t>(cfg.D));
    for (double& v : data) v = uniform(rng, -1, 1);
    const Tensor x = Tensor::constant({8, static_cast<std::size_t>(cfg.D)}, data);
    const Tensor y = z.backbone_forward(scene, x);
    const Tensor in = ad::concat({scene, z.params().get("embed.cls").tensor, x}, 0);
    double err = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) err = std::max(err, std::abs(y.values()[i] - in.values()[i] - pos[i]));
    if (err > 1e-12) problems.push_back("zero blocks not identity (" + fmt(err) + ")");
  }

  std::set<std::string> groups;
  int generator_weights = 0, stray = 0;
  for (const auto& p : m.params().params()) {
    groups.insert(p.group);
    for (const char* t : {"ce", "det", "precoding", "decoding", "loc"})
      if (p.name.find(std::string(".") + t + ".") != std::string::npos) problems.push_back("task-specific " + p.name);
    const bool emits_theta = p.tensor.shape().size() == 2 && p.tensor.shape()[1] == static_cast<std::size_t>(cfg.theta_size());
    if (emits_theta && p.name.rfind("hyper.out.", 0) != 0) ++stray;
    generator_weights += emits_theta && p.tensor.shape()[0] > 1;
  }
  // the only parameter holding encoder/decoder weights is the hypernetwork output layer
  if (generator_weights != 1 || stray != 0)
    problems.push_back("encoder/decoder census " + std::to_string(generator_weights) + "/" + std::to_string(stray));
  if (groups != std::set<std::string>{"scene_encoder", "hypernet", "backbone", "embeddings"})
    problems.push_back("parameter groups");

  m.params().zero_grad();
  const std::vector<ScenarioBundle> bundles{bundle};
  const Tensor scene = m.scene_encode(bundle.graph);
  Tensor total;
  for (TaskId t : kAllTasks) {
    const auto ex = build_examples(t, bundles).front();
    const auto theta = m.hypernet_forward(tokenize_instruction(TaskInstruction::make(t, cfg, 10).text));
    const auto feats = m.normalize(t, {m.raw_features(ex.in)}, false).front();
    const Tensor l = task_loss(m.forward_features(ex.in, feats, theta, scene), ex, bundle.scene.side);
    total = total.defined() ? ad::add(total, l) : l;
  }
  ad::backward(total);
  std::string norms;
  for (const char* g : {"scene_encoder", "hypernet", "backbone", "embeddings"}) {
    const double n = m.params().group_grad_norm(g);
    norms += std::string(" ") + g + "=" + fmt(n);
    if (!(n > 0.0)) problems.push_back(std::string("zero gradient in ") + g);
  }
  std::string detail = "hypernet 5 tasks, zero-block identity, census, grad norms" + norms;
  for (const auto& p : problems) detail += "; " + p;
  report(6, problems.empty(), detail, elapsed(t0));
}

// ---------------------------------------------------------------------------------------------
// 7 and 8. toy training

double random_guess_distance() {
  Rng rng(8);
  const int n = 2000000;
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    const double dx = uniform(rng, 0, 1) - uniform(rng, 0, 1), dy = uniform(rng, 0, 1) - uniform(rng, 0, 1);
    s += std::sqrt(dx * dx + dy * dy);
  }
  return s / n;
}

void criteria7and8() {
  const auto t0 = std::chrono::steady_clock::now();
  const SystemProfile prof = SystemProfile::toy();
  const Dataset ds = generate_dataset(prof, 0, 1);
  const auto& test = ds.split("test");

  double ls = 0.0;
  int n_ls = 0;
  for (const auto& b : test)
    for (const auto& s : b.samples)
      for (int k = 0; k < prof.K; ++k) {
        ls += nmse(ls_estimate(s.ce[static_cast<std::size_t>(k)]), s.H[static_cast<std::size_t>(k)]);
        ++n_ls;
      }
  ls /= n_ls;

  MuseModel model(ModelConfig::from_profile(prof));
  TrainConfig tc = TrainConfig::for_profile("toy");
  tc.seed = 0;
  tc.epochs = 20;
  const TrainResult tr = fit(model, ds, tc, std::nullopt, [&](const LogRow& r) {
    std::cout << "  epoch " << r.epoch << " train " << fmt(r.loss_total) << " val " << fmt(r.val_total) << " ["
              << std::fixed << std::setprecision(0) << elapsed(t0) << " s]" << std::defaultfloat << std::endl;
  });
  const double l1 = tr.log.front().loss_total, l20 = tr.log.back().loss_total;
  const double drop = (l1 - l20) / std::abs(l1);

  EvalOptions opt;
  opt.snr_db = 10.0;
  opt.tasks = {TaskId::CE, TaskId::LOC};
  const EvalResult ev = evaluate(model, test, prof.snr_db, tc.beta, opt);
  opt.ablate_scene = true;
  opt.tasks = {TaskId::CE};
  const EvalResult ab = evaluate(model, test, prof.snr_db, tc.beta, opt);
  const double ce = ev.metric[static_cast<int>(TaskId::CE)];
  const double loc = ev.metric[static_cast<int>(TaskId::LOC)];
  const double ce_ab = ab.metric[static_cast<int>(TaskId::CE)];
  const std::size_t n_ce = ev.per_example[static_cast<int>(TaskId::CE)].size();
  const double guess = random_guess_distance();
  const double secs = elapsed(t0);

  report(7, drop >= 0.5 && ce < ls && loc < guess,
         "loss drop " + fmt(drop) + " (epoch 1 " + fmt(l1) + ", epoch 20 " + fmt(l20) + "), test CE NMSE " + fmt(ce) +
             " vs LS " + fmt(ls) + ", LOC " + fmt(loc) + " vs random guess " + fmt(guess) + ", best epoch " +
             std::to_string(tr.best_epoch),
         secs);
  // paired per-sample differences, for context only
  const auto& with = ev.per_example[static_cast<int>(TaskId::CE)];
  const auto& without = ab.per_example[static_cast<int>(TaskId::CE)];
  int worse = 0;
  double md = 0.0, sd = 0.0;
  for (std::size_t i = 0; i < n_ce; ++i) {
    const double d = without[i] - with[i];
    worse += d > 0;
    md += d;
    sd += d * d;
  }
  md /= static_cast<double>(n_ce);
  const double se = std::sqrt(std::max(sd / static_cast<double>(n_ce) - md * md, 0.0) / static_cast<double>(n_ce));
  report(8, ce_ab > ce && n_ce >= 500,
         "CE NMSE with scene " + fmt(ce) + ", scene ablated " + fmt(ce_ab) + " over " + std::to_string(n_ce) +
             " test samples (ablation worse on " + std::to_string(worse) + ", mean paired difference " + fmt(md) +
             " +- " + fmt(se) + ")",
         elapsed(t0) - secs);
}

// ---------------------------------------------------------------------------------------------
// 9. determinism

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void criterion9() {
  const auto t0 = std::chrono::steady_clock::now();
  SystemProfile prof = SystemProfile::toy();
  prof.scenarios = 20;
  prof.samples_per_scenario = 3;
  const fs::path root = fs::temp_directory_path() / "musefm_acceptance_c9";
  fs::remove_all(root);
  write_dataset(root / "a", generate_dataset(prof, 11, 1));
  write_dataset(root / "b", generate_dataset(prof, 11, 1));
  bool files_equal = true;
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    files_equal = files_equal && slurp(e.path()) == slurp(root / "b" / fs::relative(e.path(), root / "a"));
  }
  files_equal = files_equal && files > 0;

  const Dataset ds = read_dataset(root / "a");
  int regen_bad = 0;
  for (const auto& [name, bundles] : ds.splits)
    for (const auto& b : bundles) regen_bad += !verify_scenario(b, 11, prof);

  TrainConfig tc = TrainConfig::for_profile("toy");
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.seed = 5;
  std::string logs[2];
  for (int run = 0; run < 2; ++run) {
    MuseModel m(ModelConfig::from_profile(prof));
    const fs::path out = root / ("run" + std::to_string(run));
    fit(m, ds, tc, out);
    logs[run] = slurp(out / "train_log.csv") + slurp(out / "params.bin");
  }
  fs::remove_all(root);
  report(9, files_equal && regen_bad == 0 && logs[0] == logs[1] && !logs[0].empty(),
         std::string("dataset files ") + (files_equal ? "identical" : "differ") + ", regeneration mismatches " +
             std::to_string(regen_bad) + ", seeded training logs and weights " +
             (logs[0] == logs[1] ? "identical" : "differ"),
         elapsed(t0));
}

}  // namespace

int main(int argc, char** argv) {
  // optional arguments select criteria by number; 7 and 8 share one training run
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  auto want = [&](int id) { return only.empty() || only.count(id) > 0; };
  try {
    if (want(1)) criterion1();
    if (want(2)) criterion2();
    if (want(3)) criterion3();
    if (want(4)) criterion4();
    if (want(5)) criterion5();
    if (want(6)) criterion6();
    if (want(7) || want(8)) criteria7and8();
    if (want(9)) criterion9();
  } catch (const std::exception& e) {
    std::cout << "acceptance aborted: " << e.what() << std::endl;
    return 2;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
