#include "musefm/datastore.hpp"

#include <atomic>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/crc.hpp>
#include <json.hpp>

#include "musefm/channel.hpp"

namespace musefm {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSplitNames[] = {"train", "val", "test"};

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f64") return 8;
  if (dtype == "i32") return 4;
  if (dtype == "u8" || dtype == "json") return 1;
  throw RuntimeFailure("unknown dtype '" + dtype + "'");
}

std::size_t prod(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

struct Blob {
  std::string dtype;
  std::vector<std::size_t> shape;
  std::vector<char> bytes;

  template <class T>
  void put(T v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_c(const cplx& z) {
    put(z.real());
    put(z.imag());
  }
};

struct Reader {
  const std::vector<char>* bytes = nullptr;
  std::size_t pos = 0;

  template <class T>
  T get() {
    T v;
    std::memcpy(&v, bytes->data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  cplx get_c() {
    const double re = get<double>();
    const double im = get<double>();
    return {re, im};
  }
};

std::vector<char> read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw RuntimeFailure("dataset file missing: " + p.string());
  return std::vector<char>(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw RuntimeFailure("cannot write " + p.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw RuntimeFailure("short write on " + p.string());
}

bool cmat_equal(const CMatrix& a, const CMatrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(cplx) * static_cast<std::size_t>(a.size())) == 0;
}

bool rvec_equal(const RVector& a, const RVector& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool obs_equal(const PilotObservation& a, const PilotObservation& b) {
  return cmat_equal(a.Y_p, b.Y_p) && a.selected == b.selected && a.Nt == b.Nt && a.snr_db == b.snr_db &&
         a.user_index == b.user_index;
}

bool sample_equal(const ScenarioSample& a, const ScenarioSample& b) {
  if (a.positions.size() != b.positions.size() || a.H.size() != b.H.size()) return false;
  for (std::size_t k = 0; k < a.positions.size(); ++k)
    if (a.positions[k] != b.positions[k]) return false;
  for (std::size_t k = 0; k < a.H.size(); ++k)
    if (!cmat_equal(a.H[k], b.H[k]) || a.channel_scale[k] != b.channel_scale[k] || !obs_equal(a.ce[k], b.ce[k]) ||
        !obs_equal(a.loc[k], b.loc[k]))
      return false;
  return cmat_equal(a.det.H, b.det.H) && cmat_equal(a.det.Y, b.det.Y) && cmat_equal(a.det.X, b.det.X) &&
         a.det.subcarrier == b.det.subcarrier && cmat_equal(a.pre.H_true, b.pre.H_true) &&
         cmat_equal(a.pre.H_noisy, b.pre.H_noisy) && a.pre.sigma2 == b.pre.sigma2 && a.dec.b == b.dec.b &&
         rvec_equal(a.dec.s_hat, b.dec.s_hat) && rvec_equal(a.dec.s_tilde, b.dec.s_tilde) &&
         a.dec.z_tilde == b.dec.z_tilde && a.dec.ebn0_db == b.dec.ebn0_db;
}

json profile_json(const SystemProfile& p) {
  json j = json::object();
  for (const auto& [k, v] : p.to_kv()) j[k] = v;
  return j;
}

SystemProfile profile_from_json(const json& j) {
  KeyValues kv;
  for (auto it = j.begin(); it != j.end(); ++it) kv[it.key()] = it.value().get<std::string>();
  SystemProfile p = SystemProfile::by_name(kv.count("profile") ? kv["profile"] : "toy");
  p.apply(kv);
  return p;
}

}  // namespace

std::uint64_t crc64(const void* data, std::size_t len) {
  boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, 0xFFFFFFFFFFFFFFFFULL, 0xFFFFFFFFFFFFFFFFULL, true, true> crc;
  crc.process_bytes(data, len);
  return crc.checksum();
}

std::string crc64_hex(const void* data, std::size_t len) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(crc64(data, len)));
  return buf;
}

CMatrix ScenarioSample::multiuser(int m) const {
  const int Nt = static_cast<int>(H.front().rows());
  CMatrix out(Nt, static_cast<int>(H.size()));
  for (std::size_t k = 0; k < H.size(); ++k) out.col(static_cast<int>(k)) = H[k].col(m);
  return out;
}

void draw_channels(const Scene& scene, const SystemProfile& profile, std::uint64_t seed, ScenarioSample& out) {
  const ArrayFrame frame = ArrayFrame::facing_room_center(scene.bs_pos);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    out.positions = sample_user_positions(scene, profile.K, derive_seed(seed, 0x9051ULL, attempt), profile.ue_height);
    out.H.clear();
    out.channel_scale.clear();
    bool ok = true;
    for (const auto& pos : out.positions) {
      const PathList paths = trace_paths(scene, scene.bs_pos, pos, 1, frame);
      if (paths.paths.empty()) {
        ok = false;
        break;
      }
      CMatrix H = assemble_channel(paths, profile.array);
      out.channel_scale.push_back(normalize_channel(H));
      out.H.push_back(std::move(H));
    }
    if (ok) return;
  }
  throw RuntimeFailure("draw_channels: no user drop with a propagation path after 1000 attempts");
}

void attach_task_samples(const SystemProfile& profile, std::uint64_t seed, double snr_db,
                         std::optional<double> ebn0_db, ScenarioSample& s) {
  const int K = profile.K;
  s.ce.clear();
  s.loc.clear();
  for (int k = 0; k < K; ++k) {
    s.ce.push_back(make_pilot_obs(s.H[k], profile.L_p_ce, snr_db, derive_seed(seed, 0xCEULL, k),
                                  profile.pilot_selection, k));
    s.loc.push_back(make_pilot_obs(s.H[k], profile.L_p_loc, snr_db, derive_seed(seed, 0x10CULL, k),
                                   profile.pilot_selection, k));
  }
  Rng rng(derive_seed(seed, 0x5C0ULL));
  const int m = uniform_int(rng, 0, profile.M() - 1);
  const CMatrix Hm = s.multiuser(m);
  s.det = make_detection_sample(Hm, profile.L_d, snr_db, derive_seed(seed, 0xDE7ULL));
  s.det.subcarrier = m;
  s.pre = make_precoding_sample(Hm, snr_db, derive_seed(seed, 0x94EULL), profile.P_max);
  s.pre.subcarrier = m;

  const PolarCode code = profile.code();
  Bits b(code.m);
  for (auto& bit : b) bit = static_cast<std::uint8_t>(uniform_int(rng, 0, 1));
  const double e = ebn0_db ? *ebn0_db
                           : profile.ebn0_db[static_cast<std::size_t>(
                                 uniform_int(rng, 0, static_cast<int>(profile.ebn0_db.size()) - 1))];
  s.dec = make_decoding_sample(b, code, e, derive_seed(seed, 0xDECULL));
}

ScenarioBundle regenerate_scenario(std::uint64_t master_seed, std::uint64_t index, const SystemProfile& profile) {
  profile.validate();
  ScenarioBundle b;
  b.index = index;
  b.seed = scenario_seed(master_seed, index);
  SceneProfile sp = profile.scene;
  b.scene = generate_scene(b.seed, sp);
  b.graph = rasterize(b.scene, profile.grid_W, profile.patch);
  b.samples.resize(profile.samples_per_scenario);
  for (int s = 0; s < profile.samples_per_scenario; ++s) {
    const auto seed = sample_seed(b.seed, s);
    draw_channels(b.scene, profile, seed, b.samples[s]);
    attach_task_samples(profile, seed, profile.snr_db, std::nullopt, b.samples[s]);
  }
  return b;
}

const std::vector<ScenarioBundle>& Dataset::split(const std::string& name) const {
  auto it = splits.find(name);
  if (it == splits.end()) throw ValidationError("dataset has no split '" + name + "'");
  return it->second;
}

Dataset generate_dataset(const SystemProfile& profile, std::uint64_t master_seed, int threads) {
  profile.validate();
  const SplitCounts c = split_counts(profile.scenarios, profile.val_fraction, profile.test_fraction);
  std::vector<ScenarioBundle> all(profile.scenarios);
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int i = next++; i < profile.scenarios; i = next++) {
      try {
        all[i] = regenerate_scenario(master_seed, static_cast<std::uint64_t>(i), profile);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int nthreads = std::max(1, std::min(threads, profile.scenarios));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  Dataset ds;
  ds.manifest.profile = profile;
  ds.manifest.master_seed = master_seed;
  const int bounds[4] = {0, c.train, c.train + c.val, profile.scenarios};
  for (int s = 0; s < 3; ++s) {
    auto& idx = ds.manifest.splits[kSplitNames[s]];
    auto& vec = ds.splits[kSplitNames[s]];
    for (int i = bounds[s]; i < bounds[s + 1]; ++i) {
      idx.push_back(static_cast<std::uint64_t>(i));
      vec.push_back(std::move(all[i]));
    }
  }
  return ds;
}

std::string scenes_to_json(const std::vector<ScenarioBundle>& bundles) {
  json arr = json::array();
  for (const auto& b : bundles) {
    json j;
    j["index"] = b.index;
    j["seed"] = b.scene.seed;
    j["side"] = b.scene.side;
    j["height"] = b.scene.height;
    j["bs"] = {b.scene.bs_pos.x(), b.scene.bs_pos.y(), b.scene.bs_pos.z()};
    j["walls"] = json::array();
    for (const auto& w : b.scene.walls) j["walls"].push_back({w.a.x(), w.a.y(), w.b.x(), w.b.y(), w.thickness});
    j["cylinders"] = json::array();
    for (const auto& c : b.scene.cylinders) j["cylinders"].push_back({c.center.x(), c.center.y(), c.radius});
    arr.push_back(j);
  }
  return arr.dump(1);
}

std::vector<Scene> scenes_from_json(const std::string& text, std::vector<std::uint64_t>* indices) {
  std::vector<Scene> out;
  const json arr = json::parse(text);
  for (const auto& j : arr) {
    Scene s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.side = j.at("side").get<double>();
    s.height = j.at("height").get<double>();
    const auto& bs = j.at("bs");
    s.bs_pos = {bs[0].get<double>(), bs[1].get<double>(), bs[2].get<double>()};
    for (const auto& w : j.at("walls"))
      s.walls.push_back({{w[0].get<double>(), w[1].get<double>()}, {w[2].get<double>(), w[3].get<double>()},
                         w[4].get<double>()});
    for (const auto& c : j.at("cylinders"))
      s.cylinders.push_back({{c[0].get<double>(), c[1].get<double>()}, c[2].get<double>()});
    if (indices) indices->push_back(j.at("index").get<std::uint64_t>());
    out.push_back(std::move(s));
  }
  return out;
}

void write_dataset(const fs::path& root, const Dataset& ds) {
  const SystemProfile& p = ds.manifest.profile;
  p.validate();
  const std::size_t Ns = static_cast<std::size_t>(p.samples_per_scenario);
  const std::size_t K = static_cast<std::size_t>(p.K), M = static_cast<std::size_t>(p.M()),
                    Nt = static_cast<std::size_t>(p.Nt()), W = static_cast<std::size_t>(p.grid_W);
  const std::size_t Lce = static_cast<std::size_t>(p.L_p_ce), Lloc = static_cast<std::size_t>(p.L_p_loc),
                    Ld = static_cast<std::size_t>(p.L_d), n = static_cast<std::size_t>(p.code_n),
                    m = static_cast<std::size_t>(p.code_m);

  fs::create_directories(root);
  json manifest;
  manifest["format_version"] = kDatasetFormatVersion;
  manifest["profile"] = profile_json(p);
  manifest["master_seed"] = ds.manifest.master_seed;
  manifest["counts"] = {{"scenarios", p.scenarios}, {"samples_per_scenario", p.samples_per_scenario}};
  manifest["system"] = {{"N_t", p.Nt()}, {"N_h", p.array.N_h}, {"N_v", p.array.N_v}, {"M", p.M()},
                        {"K", p.K},      {"L_p_ce", p.L_p_ce},  {"L_p_loc", p.L_p_loc}, {"L_d", p.L_d},
                        {"code_n", p.code_n}, {"code_m", p.code_m}, {"W", p.grid_W}, {"snr_db", p.snr_db}};
  manifest["splits"] = json::object();
  manifest["arrays"] = json::array();

  for (const char* split : kSplitNames) {
    const auto& bundles = ds.split(split);
    const std::size_t S = bundles.size();
    manifest["splits"][split] = {{"count", S}, {"scenarios", ds.manifest.splits.at(split)}};
    fs::create_directories(root / split);

    std::map<std::string, Blob> blobs;
    auto blob = [&](const std::string& name, const std::string& dtype, std::vector<std::size_t> shape) -> Blob& {
      Blob& b = blobs[name];
      b.dtype = dtype;
      b.shape = std::move(shape);
      b.bytes.reserve(prod(b.shape) * dtype_size(dtype));
      return b;
    };
    Blob& scenes = blob("scenes.u8", "u8", {S, W, W});
    Blob& pos = blob("positions.f64", "f64", {S, Ns, K, 3});
    Blob& chan = blob("channels.f64", "f64", {S, Ns, K, M, Nt, 2});
    Blob& scale = blob("channel_scale.f64", "f64", {S, Ns, K});
    Blob& ce = blob("ce_obs.f64", "f64", {S, Ns, K, Lce, M, 2});
    Blob& cep = blob("ce_pilots.i32", "i32", {S, Ns, K, Lce});
    Blob& loc = blob("loc_obs.f64", "f64", {S, Ns, K, Lloc, M, 2});
    Blob& locp = blob("loc_pilots.i32", "i32", {S, Ns, K, Lloc});
    Blob& dsub = blob("det_subcarrier.i32", "i32", {S, Ns});
    Blob& dx = blob("det_x.f64", "f64", {S, Ns, K, Ld, 2});
    Blob& dy = blob("det_y.f64", "f64", {S, Ns, Nt, Ld, 2});
    Blob& ph = blob("pre_h_noisy.f64", "f64", {S, Ns, Nt, K, 2});
    Blob& bits = blob("dec_bits.u8", "u8", {S, Ns, m});
    Blob& shat = blob("dec_shat.f64", "f64", {S, Ns, n});
    Blob& ebn0 = blob("dec_ebn0.f64", "f64", {S, Ns});

    for (const auto& b : bundles) {
      if (b.graph.W != static_cast<int>(W) || b.samples.size() != Ns)
        throw ValidationError("write_dataset: scenario " + std::to_string(b.index) + " does not match the profile");
      for (auto v : b.graph.grid) scenes.put(v);
      for (const auto& s : b.samples) {
        for (const auto& q : s.positions)
          for (int c = 0; c < 3; ++c) pos.put(q[c]);
        for (std::size_t k = 0; k < K; ++k) {
          for (std::size_t mm = 0; mm < M; ++mm)
            for (std::size_t a = 0; a < Nt; ++a) chan.put_c(s.H[k](a, mm));
          scale.put(s.channel_scale[k]);
          for (std::size_t l = 0; l < Lce; ++l)
            for (std::size_t mm = 0; mm < M; ++mm) ce.put_c(s.ce[k].Y_p(l, mm));
          for (int i : s.ce[k].selected) cep.put(static_cast<std::int32_t>(i));
          for (std::size_t l = 0; l < Lloc; ++l)
            for (std::size_t mm = 0; mm < M; ++mm) loc.put_c(s.loc[k].Y_p(l, mm));
          for (int i : s.loc[k].selected) locp.put(static_cast<std::int32_t>(i));
        }
        dsub.put(static_cast<std::int32_t>(s.det.subcarrier));
        for (std::size_t k = 0; k < K; ++k)
          for (std::size_t t = 0; t < Ld; ++t) dx.put_c(s.det.X(k, t));
        for (std::size_t a = 0; a < Nt; ++a)
          for (std::size_t t = 0; t < Ld; ++t) dy.put_c(s.det.Y(a, t));
        for (std::size_t a = 0; a < Nt; ++a)
          for (std::size_t k = 0; k < K; ++k) ph.put_c(s.pre.H_noisy(a, k));
        for (auto v : s.dec.b) bits.put(v);
        for (Eigen::Index i = 0; i < s.dec.s_hat.size(); ++i) shat.put(s.dec.s_hat(i));
        ebn0.put(s.dec.ebn0_db);
      }
    }

    const std::string sj = scenes_to_json(bundles);
    Blob& js = blobs["scenes.json"];
    js.dtype = "json";
    js.shape = {sj.size()};
    js.bytes.assign(sj.begin(), sj.end());

    for (const auto& [name, b] : blobs) {
      if (b.dtype != "json" && b.bytes.size() != prod(b.shape) * dtype_size(b.dtype))
        throw RuntimeFailure("write_dataset: internal size mismatch for " + name);
      const std::string rel = std::string(split) + "/" + name;
      write_file(root / rel, b.bytes);
      manifest["arrays"].push_back({{"name", name},
                                    {"split", split},
                                    {"dtype", b.dtype},
                                    {"shape", b.shape},
                                    {"byte_offset", 0},
                                    {"bytes", b.bytes.size()},
                                    {"file", rel},
                                    {"crc64", crc64_hex(b.bytes.data(), b.bytes.size())}});
    }
  }
  std::ofstream mf(root / "manifest.json");
  if (!mf) throw RuntimeFailure("cannot write " + (root / "manifest.json").string());
  mf << manifest.dump(1) << '\n';
}

Dataset read_dataset(const fs::path& root) {
  const fs::path mpath = root / "manifest.json";
  if (!fs::exists(mpath)) throw RuntimeFailure("dataset manifest missing: " + mpath.string());
  json manifest;
  try {
    std::ifstream mf(mpath);
    manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw RuntimeFailure("malformed manifest " + mpath.string() + ": " + e.what());
  }
  const int version = manifest.value("format_version", -1);
  if (version != kDatasetFormatVersion)
    throw RuntimeFailure("dataset format version " + std::to_string(version) + " unsupported (expected " +
                         std::to_string(kDatasetFormatVersion) + ")");

  Dataset ds;
  ds.manifest.profile = profile_from_json(manifest.at("profile"));
  ds.manifest.master_seed = manifest.at("master_seed").get<std::uint64_t>();
  const SystemProfile& p = ds.manifest.profile;
  p.validate();
  const int K = p.K, M = p.M(), Nt = p.Nt(), W = p.grid_W, Lce = p.L_p_ce, Lloc = p.L_p_loc, Ld = p.L_d;
  const int Ns = p.samples_per_scenario;
  const PolarCode code = p.code();
  const auto P = polar_parity_check(code);

  std::map<std::string, std::map<std::string, std::vector<char>>> files;
  for (const auto& a : manifest.at("arrays")) {
    ArrayRecord r;
    r.name = a.at("name").get<std::string>();
    r.split = a.at("split").get<std::string>();
    r.dtype = a.at("dtype").get<std::string>();
    r.shape = a.at("shape").get<std::vector<std::size_t>>();
    r.byte_offset = a.at("byte_offset").get<std::uint64_t>();
    r.bytes = a.at("bytes").get<std::uint64_t>();
    r.file = a.at("file").get<std::string>();
    r.crc64 = a.at("crc64").get<std::string>();
    auto bytes = read_file(root / r.file);
    const std::size_t expected = r.dtype == "json" ? r.bytes : prod(r.shape) * dtype_size(r.dtype);
    if (bytes.size() != r.byte_offset + expected || r.bytes != expected)
      throw RuntimeFailure("dataset file " + r.file + " has " + std::to_string(bytes.size()) +
                           " bytes, manifest declares " + std::to_string(r.byte_offset + expected));
    if (crc64_hex(bytes.data(), bytes.size()) != r.crc64)
      throw RuntimeFailure("checksum mismatch in dataset file " + r.file);
    files[r.split][r.name] = std::move(bytes);
    ds.manifest.arrays.push_back(std::move(r));
  }

  for (const auto& [split, info] : manifest.at("splits").items()) {
    auto& idx = ds.manifest.splits[split];
    idx = info.at("scenarios").get<std::vector<std::uint64_t>>();
    auto& f = files[split];
    auto need = [&](const std::string& name) -> const std::vector<char>& {
      auto it = f.find(name);
      if (it == f.end()) throw RuntimeFailure("dataset split " + split + " lacks " + name);
      return it->second;
    };
    const std::string sj(need("scenes.json").begin(), need("scenes.json").end());
    std::vector<std::uint64_t> scene_idx;
    const auto scenes = scenes_from_json(sj, &scene_idx);
    if (scenes.size() != idx.size() || scene_idx != idx)
      throw RuntimeFailure("dataset split " + split + ": scenes.json disagrees with the manifest");

    Reader rs{&need("scenes.u8")}, rpos{&need("positions.f64")}, rch{&need("channels.f64")},
        rsc{&need("channel_scale.f64")}, rce{&need("ce_obs.f64")}, rcep{&need("ce_pilots.i32")},
        rloc{&need("loc_obs.f64")}, rlocp{&need("loc_pilots.i32")}, rsub{&need("det_subcarrier.i32")},
        rdx{&need("det_x.f64")}, rdy{&need("det_y.f64")}, rph{&need("pre_h_noisy.f64")},
        rbits{&need("dec_bits.u8")}, rshat{&need("dec_shat.f64")}, rebn0{&need("dec_ebn0.f64")};

    auto& out = ds.splits[split];
    out.resize(idx.size());
    for (std::size_t si = 0; si < idx.size(); ++si) {
      ScenarioBundle& b = out[si];
      b.index = idx[si];
      b.scene = scenes[si];
      b.seed = b.scene.seed;
      b.graph.W = W;
      b.graph.cell_size = b.scene.side / W;
      b.graph.grid.resize(static_cast<std::size_t>(W) * W);
      for (auto& v : b.graph.grid) v = rs.get<std::uint8_t>();
      b.samples.resize(Ns);
      for (auto& s : b.samples) {
        s.positions.resize(K);
        for (auto& q : s.positions)
          for (int c = 0; c < 3; ++c) q[c] = rpos.get<double>();
        s.H.assign(K, CMatrix(Nt, M));
        s.channel_scale.resize(K);
        s.ce.resize(K);
        s.loc.resize(K);
        for (int k = 0; k < K; ++k) {
          for (int mm = 0; mm < M; ++mm)
            for (int a = 0; a < Nt; ++a) s.H[k](a, mm) = rch.get_c();
          s.channel_scale[k] = rsc.get<double>();
          auto fill_obs = [&](PilotObservation& o, int L, Reader& ro, Reader& rp) {
            o.Y_p.resize(L, M);
            for (int l = 0; l < L; ++l)
              for (int mm = 0; mm < M; ++mm) o.Y_p(l, mm) = ro.get_c();
            o.selected.resize(L);
            for (auto& i : o.selected) i = rp.get<std::int32_t>();
            o.Nt = Nt;
            o.snr_db = p.snr_db;
            o.user_index = k;
          };
          fill_obs(s.ce[k], Lce, rce, rcep);
          fill_obs(s.loc[k], Lloc, rloc, rlocp);
        }
        const int m = rsub.get<std::int32_t>();
        s.det.subcarrier = m;
        s.det.snr_db = p.snr_db;
        s.det.H = s.multiuser(m);
        s.det.X.resize(K, Ld);
        for (int k = 0; k < K; ++k)
          for (int t = 0; t < Ld; ++t) s.det.X(k, t) = rdx.get_c();
        s.det.Y.resize(Nt, Ld);
        for (int a = 0; a < Nt; ++a)
          for (int t = 0; t < Ld; ++t) s.det.Y(a, t) = rdy.get_c();
        s.pre.H_true = s.det.H;
        s.pre.H_noisy.resize(Nt, K);
        for (int a = 0; a < Nt; ++a)
          for (int k = 0; k < K; ++k) s.pre.H_noisy(a, k) = rph.get_c();
        s.pre.sigma2 = snr_to_sigma2(p.snr_db);
        s.pre.P_max = p.P_max;
        s.pre.snr_db = p.snr_db;
        s.pre.subcarrier = m;

        auto& d = s.dec;
        d.b.resize(code.m);
        for (auto& v : d.b) v = rbits.get<std::uint8_t>();
        d.s_code = polar_encode(d.b, code);
        d.s_bpsk.resize(code.n);
        for (int i = 0; i < code.n; ++i) d.s_bpsk(i) = 1.0 - 2.0 * d.s_code[i];
        d.s_hat.resize(code.n);
        for (int i = 0; i < code.n; ++i) d.s_hat(i) = rshat.get<double>();
        d.s_tilde = ecct_preprocess(d.s_hat, P);
        d.z_tilde.resize(code.n);
        for (int i = 0; i < code.n; ++i) d.z_tilde[i] = bin_of(sign_pos(d.s_hat(i)) * d.s_bpsk(i));
        d.ebn0_db = rebn0.get<double>();
      }
    }
  }
  for (const char* split : kSplitNames)
    if (!ds.splits.count(split)) throw RuntimeFailure(std::string("dataset lacks split ") + split);
  return ds;
}

bool verify_scenario(const ScenarioBundle& stored, std::uint64_t master_seed, const SystemProfile& profile) {
  const ScenarioBundle fresh = regenerate_scenario(master_seed, stored.index, profile);
  if (!(fresh.scene == stored.scene) || !(fresh.graph == stored.graph) || fresh.seed != stored.seed ||
      fresh.samples.size() != stored.samples.size())
    return false;
  for (std::size_t i = 0; i < fresh.samples.size(); ++i)
    if (!sample_equal(fresh.samples[i], stored.samples[i])) return false;
  return true;
}

}  // namespace musefm
