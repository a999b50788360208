#include "musefm/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "musefm/baselines.hpp"
#include "musefm/channel.hpp"
#include "musefm/datastore.hpp"
#include "musefm/model.hpp"
#include "musefm/training.hpp"

namespace musefm::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

struct Common {
  std::string profile = "toy";
  std::uint64_t seed = 0;
  std::string config;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--profile", c.profile, "System profile")->check(CLI::IsMember({"toy", "paper"}));
  sub->add_option("--seed", c.seed, "Master seed");
  sub->add_option("--config", c.config, "key=value file overriding defaults");
}

KeyValues load_config(const std::string& path) {
  if (path.empty()) return {};
  if (!fs::exists(path)) throw ValidationError("config file not found: " + path);
  return read_key_values(path);
}

void reject_unknown(const KeyValues& kv, const std::vector<std::string>& consumed) {
  for (const auto& [k, v] : kv)
    if (std::find(consumed.begin(), consumed.end(), k) == consumed.end())
      throw ValidationError("unknown config key '" + k + "'");
}

SystemProfile make_profile(const Common& c, const KeyValues& kv, std::vector<std::string>& consumed) {
  SystemProfile p = SystemProfile::by_name(c.profile);
  p.apply(kv, &consumed);
  p.name = c.profile;
  p.validate();
  return p;
}

std::vector<TaskId> parse_tasks(const std::string& s) {
  if (s == "all") return {kAllTasks.begin(), kAllTasks.end()};
  std::vector<TaskId> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_task(item));
  if (out.empty()) throw ValidationError("--task needs at least one task");
  return out;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw RuntimeFailure("cannot write " + p.string());
  return f;
}

const char* metric_name(TaskId t) {
  switch (t) {
    case TaskId::CE:
    case TaskId::DET: return "nmse";
    case TaskId::PRECODING: return "sum_rate";
    case TaskId::DECODING: return "ber";
    case TaskId::LOC: return "loc_error";
  }
  return "?";
}

const std::string kMetricHeader = "task,method,snr_db,metric,value,count,config_hash";

std::string metric_row(TaskId t, const std::string& method, double snr, double value, std::size_t count,
                       const std::string& hash) {
  return std::string(task_name(t)) + "," + method + "," + fmt(snr) + "," + metric_name(t) + "," + fmt(value) + "," +
         std::to_string(count) + "," + hash;
}

// Test split of a stored dataset, or freshly generated scenarios when no dataset is given.
std::vector<ScenarioBundle> load_bundles(const std::string& dataset, const std::string& split, SystemProfile& profile,
                                         std::uint64_t seed, int scenarios, std::uint64_t* master) {
  if (!dataset.empty()) {
    Dataset ds = read_dataset(dataset);
    profile = ds.manifest.profile;
    if (master) *master = ds.manifest.master_seed;
    return ds.split(split);
  }
  if (scenarios < 1) throw ValidationError("--scenarios must be >= 1");
  std::vector<ScenarioBundle> out;
  for (int i = 0; i < scenarios; ++i) out.push_back(regenerate_scenario(seed, static_cast<std::uint64_t>(i), profile));
  if (master) *master = seed;
  return out;
}

// ---------------------------------------------------------------------------------------------

int cmd_scene_gen(const Common& c, const std::string& out, int count, std::ostream& os) {
  const KeyValues kv = load_config(c.config);
  std::vector<std::string> consumed;
  const SystemProfile p = make_profile(c, kv, consumed);
  reject_unknown(kv, consumed);
  if (count < 1) throw ValidationError("--count must be >= 1");
  KeyValues hk = p.to_kv();
  hk["seed"] = std::to_string(c.seed);
  const std::string hash = config_hash(hk);

  fs::create_directories(out);
  std::vector<ScenarioBundle> bundles(static_cast<std::size_t>(count));
  std::vector<char> grids;
  auto csv = open_out(fs::path(out) / "scenes.csv");
  csv << "index,seed,walls,cylinders,occupied_cells,config_hash\n";
  for (int i = 0; i < count; ++i) {
    auto& b = bundles[static_cast<std::size_t>(i)];
    b.index = static_cast<std::uint64_t>(i);
    b.seed = scenario_seed(c.seed, b.index);
    b.scene = generate_scene(b.seed, p.scene);
    b.graph = rasterize(b.scene, p.grid_W, p.patch);
    grids.insert(grids.end(), b.graph.grid.begin(), b.graph.grid.end());
    csv << i << "," << b.seed << "," << b.scene.walls.size() << "," << b.scene.cylinders.size() << ","
        << b.graph.ones() << "," << hash << "\n";
  }
  auto js = open_out(fs::path(out) / "scenes.json");
  js << scenes_to_json(bundles) << "\n";
  std::ofstream g(fs::path(out) / "scenes.u8", std::ios::binary);
  g.write(grids.data(), static_cast<std::streamsize>(grids.size()));
  if (!g) throw RuntimeFailure("cannot write scenes.u8");
  os << "wrote " << count << " scenes (" << p.grid_W << "x" << p.grid_W << " graphs) to " << out << "\n";
  return 0;
}

int cmd_data_gen(const Common& c, const std::string& out, std::optional<int> scenarios, std::optional<int> samples,
                 int threads, std::ostream& os) {
  const KeyValues kv = load_config(c.config);
  std::vector<std::string> consumed;
  SystemProfile p = make_profile(c, kv, consumed);
  reject_unknown(kv, consumed);
  if (scenarios) p.scenarios = *scenarios;
  if (samples) p.samples_per_scenario = *samples;
  p.validate();
  if (threads < 1) throw ValidationError("--threads must be >= 1");
  const Dataset ds = generate_dataset(p, c.seed, threads);
  write_dataset(out, ds);
  os << "dataset " << out << ": train " << ds.split("train").size() << ", val " << ds.split("val").size()
     << ", test " << ds.split("test").size() << " scenarios x " << p.samples_per_scenario << " samples\n";
  return 0;
}

int cmd_baseline(const Common& c, const std::string& task, const std::string& snr, const std::string& ebn0,
                 const std::string& dataset, int scenarios, const std::string& out, std::ostream& os) {
  const KeyValues kv = load_config(c.config);
  std::vector<std::string> consumed;
  SystemProfile p = make_profile(c, kv, consumed);
  reject_unknown(kv, consumed);
  const auto tasks = parse_tasks(task);
  std::uint64_t master = 0;
  const auto base = load_bundles(dataset, "test", p, c.seed, scenarios, &master);
  const std::vector<double> snrs = snr.empty() ? std::vector<double>{p.snr_db} : parse_grid(snr);
  const std::vector<double> ebn0s = parse_grid(ebn0);
  KeyValues hk = p.to_kv();
  hk["master_seed"] = std::to_string(master);
  hk["command"] = "baseline";
  const std::string hash = config_hash(hk);
  const PolarCode code = p.code();

  std::vector<std::string> rows;
  for (TaskId t : tasks) {
    const bool dec = t == TaskId::DECODING;
    for (double x : dec ? ebn0s : snrs) {
      const auto bundles = dec ? resample_at(base, p, p.snr_db, x) : resample_at(base, p, x);
      std::map<std::string, std::vector<double>> vals;
      Rng guess(derive_seed(c.seed, 0x6E55ULL, static_cast<std::uint64_t>(std::llround(x * 1000))));
      for (const auto& b : bundles)
        for (const auto& s : b.samples) switch (t) {
            case TaskId::CE:
              for (std::size_t k = 0; k < s.ce.size(); ++k) vals["ls"].push_back(nmse(ls_estimate(s.ce[k]), s.H[k]));
              break;
            case TaskId::DET: {
              const double s2 = snr_to_sigma2(s.det.snr_db);
              vals["zf"].push_back(nmse(zf_detect(s.det.H, s.det.Y), s.det.X));
              vals["lmmse"].push_back(nmse(lmmse_detect(s.det.H, s.det.Y, s2), s.det.X));
              break;
            }
            case TaskId::PRECODING: {
              const auto& pr = s.pre;
              vals["zf"].push_back(sum_rate(pr.H_true, zf_precode(pr.H_noisy, pr.P_max), pr.sigma2));
              vals["wmmse"].push_back(sum_rate(pr.H_true, wmmse_precode(pr.H_noisy, pr.P_max, pr.sigma2).V, pr.sigma2));
              break;
            }
            case TaskId::DECODING: {
              Bits hard(static_cast<std::size_t>(code.n));
              for (int i = 0; i < code.n; ++i) hard[i] = bin_of(s.dec.s_hat(i));
              vals["hard"].push_back(ber(polar_extract_info(hard, code), s.dec.b));
              break;
            }
            case TaskId::LOC:
              for (const auto& pos : s.positions) {
                const Vec2 g{uniform(guess, 0.0, 1.0), uniform(guess, 0.0, 1.0)};
                vals["random_guess"].push_back(loc_error(g, normalize_position(pos, 10.0)));
              }
              break;
          }
      for (const auto& [method, v] : vals)
        rows.push_back(metric_row(t, method, x, std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()),
                                  v.size(), hash));
    }
  }
  auto f = open_out(out);
  f << kMetricHeader << "\n";
  for (const auto& r : rows) f << r << "\n";
  os << "wrote " << rows.size() << " baseline rows to " << out << "\n";
  return 0;
}

int cmd_train(const Common& c, const std::string& dataset, const std::string& out, std::optional<int> epochs,
              const std::string& alpha, std::optional<int> batch, std::optional<double> lr, std::ostream& os) {
  if (dataset.empty()) throw ValidationError("train requires --dataset");
  if (out.empty()) throw ValidationError("train requires --out");
  const KeyValues kv = load_config(c.config);
  Dataset ds = read_dataset(dataset);
  const SystemProfile& p = ds.manifest.profile;
  TrainConfig tc = TrainConfig::for_profile(p.name);
  std::vector<std::string> consumed;
  tc.apply(kv, &consumed);
  KeyValues model_kv = ModelConfig::from_profile(p).to_kv();
  for (const auto& [k, v] : kv)
    if (k.rfind("model.", 0) == 0) {
      model_kv[k.substr(6)] = v;
      consumed.push_back(k);
    }
  reject_unknown(kv, consumed);
  tc.seed = c.seed;
  if (epochs) tc.epochs = *epochs;
  if (!alpha.empty()) tc.alpha = parse_weights(alpha);
  if (batch) tc.batch_size = *batch;
  if (lr) tc.lr0 = *lr;
  model_kv["seed"] = std::to_string(c.seed);
  MuseModel model(ModelConfig::from_kv(model_kv));
  const auto res = fit(model, ds, tc, fs::path(out), [&](const LogRow& r) {
    os << "epoch " << r.epoch << " lr " << fmt(r.lr) << " loss " << fmt(r.loss_total) << " val " << fmt(r.val_total)
       << "\n"
       << std::flush;
  });
  os << "best epoch " << res.best_epoch << " (val " << fmt(res.best_val) << "), checkpoint in " << out << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& dataset, const std::string& task, const std::string& snr,
             const std::string& ebn0, const std::string& split, bool ablate, const std::string& out, std::ostream& os) {
  if (checkpoint.empty()) throw ValidationError("eval requires --checkpoint");
  if (dataset.empty()) throw ValidationError("eval requires --dataset");
  const MuseModel model = MuseModel::load(checkpoint);
  const Dataset ds = read_dataset(dataset);
  const SystemProfile& p = ds.manifest.profile;
  const auto& stored = ds.split(split);
  const auto tasks = parse_tasks(task);
  const std::vector<double> snrs = snr.empty() ? std::vector<double>{p.snr_db} : parse_grid(snr);
  const std::vector<double> ebn0s = parse_grid(ebn0);

  KeyValues hk = p.to_kv();
  for (const auto& [k, v] : model.config().to_kv()) hk["model." + k] = v;
  hk["split"] = split;
  hk["ablate_scene"] = ablate ? "1" : "0";
  const std::string hash = config_hash(hk);
  const std::string method = ablate ? "model_no_scene" : "model";
  TaskWeights beta{1, 1, 1, 1, 1};

  fs::create_directories(out);
  auto f = open_out(fs::path(out) / "eval.csv");
  f << kMetricHeader << "\n";
  std::ofstream cdf;
  std::size_t rows = 0;
  for (TaskId t : tasks) {
    const bool dec = t == TaskId::DECODING;
    for (double x : dec ? ebn0s : snrs) {
      std::vector<ScenarioBundle> redrawn;
      const std::vector<ScenarioBundle>* use = &stored;
      if (dec) {
        redrawn = resample_at(stored, p, p.snr_db, x);
        use = &redrawn;
      } else if (x != p.snr_db) {
        redrawn = resample_at(stored, p, x);
        use = &redrawn;
      }
      EvalOptions opt;
      opt.tasks = {t};
      opt.ablate_scene = ablate;
      if (!dec) opt.snr_db = x;
      const EvalResult r = evaluate(model, *use, p.snr_db, beta, opt);
      auto& v = r.per_example[static_cast<std::size_t>(t)];
      const double value = t == TaskId::PRECODING ? -r.metric[static_cast<std::size_t>(t)] : r.metric[static_cast<std::size_t>(t)];
      f << metric_row(t, method, x, value, v.size(), hash) << "\n";
      ++rows;
      if (t == TaskId::LOC) {
        if (!cdf.is_open()) {
          cdf = open_out(fs::path(out) / "loc_cdf.csv");
          cdf << "method,snr_db,error,cdf,config_hash\n";
        }
        std::vector<double> e = v;
        std::sort(e.begin(), e.end());
        for (std::size_t i = 0; i < e.size(); ++i)
          cdf << method << "," << fmt(x) << "," << fmt(e[i]) << "," << fmt(static_cast<double>(i + 1) / e.size()) << ","
              << hash << "\n";
      }
    }
  }
  os << "wrote " << rows << " evaluation rows to " << (fs::path(out) / "eval.csv").string() << "\n";
  return 0;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out, std::ostream& os) {
  if (inputs.empty()) throw ValidationError("report needs at least one input CSV");
  using Key = std::tuple<std::string, std::string, double>;  // task, metric, snr
  std::map<Key, std::map<std::string, std::string>> table;
  std::set<std::string> methods, hashes;
  for (const auto& path : inputs) {
    std::ifstream f(path);
    if (!f) throw RuntimeFailure("cannot read " + path);
    std::string line;
    if (!std::getline(f, line)) throw ValidationError(path + " is empty");
    const auto header = split_csv(line);
    auto col = [&](const std::string& name) {
      auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw ValidationError(path + " lacks column '" + name + "'");
      return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t ct = col("task"), cm = col("method"), cs = col("snr_db"), cme = col("metric"),
                      cv = col("value"), ch = col("config_hash");
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv(line);
      if (cells.size() != header.size()) throw ValidationError(path + ": malformed row '" + line + "'");
      table[{cells[ct], cells[cme], std::stod(cells[cs])}][cells[cm]] = cells[cv];
      methods.insert(cells[cm]);
      hashes.insert(cells[ch]);
    }
  }
  std::string hash_list;
  for (const auto& h : hashes) hash_list += (hash_list.empty() ? "" : ";") + h;
  KeyValues kv{{"inputs", hash_list}};
  const std::string hash = config_hash(kv);
  auto f = open_out(out);
  f << "task,metric,snr_db";
  for (const auto& m : methods) f << "," << m;
  f << ",config_hash\n";
  for (const auto& [key, vals] : table) {
    f << std::get<0>(key) << "," << std::get<1>(key) << "," << fmt(std::get<2>(key));
    for (const auto& m : methods) {
      auto it = vals.find(m);
      f << "," << (it == vals.end() ? "" : it->second);
    }
    f << "," << hash << "\n";
  }
  os << "wrote " << table.size() << " report rows (" << methods.size() << " methods) to " << out << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scene-aware multi-task wireless foundation model toolkit", "musefm"};
  app.require_subcommand(1);

  Common common;

  auto* sg = app.add_subcommand("scene-gen", "Generate random room scenes and their scene graphs");
  add_common(sg, common);
  std::string sg_out = "scenes";
  int sg_count = 10;
  sg->add_option("--out", sg_out, "Output directory");
  sg->add_option("--count", sg_count, "Number of scenes");

  auto* dg = app.add_subcommand("data-gen", "Generate a full dataset for a profile");
  add_common(dg, common);
  std::string dg_out = "dataset";
  std::optional<int> dg_scen, dg_samples;
  int dg_threads = 1;
  dg->add_option("--out", dg_out, "Dataset root");
  dg->add_option("--scenarios", dg_scen, "Override the number of scenarios");
  dg->add_option("--samples", dg_samples, "Override samples per scenario");
  dg->add_option("--threads", dg_threads, "Worker threads (output is identical for any count)");

  auto* bl = app.add_subcommand("baseline", "Classical baselines over an SNR grid");
  add_common(bl, common);
  std::string bl_task = "all", bl_snr, bl_ebn0 = "4,5,6", bl_dataset, bl_out = "baseline.csv";
  int bl_scen = 25;
  bl->add_option("--task", bl_task, "ce, det, precoding, decoding, loc, a comma list or all");
  bl->add_option("--snr", bl_snr, "SNR grid start:stop:step or a comma list (dB)");
  bl->add_option("--ebn0", bl_ebn0, "Eb/N0 grid for decoding (dB)");
  bl->add_option("--dataset", bl_dataset, "Use the test split of this dataset");
  bl->add_option("--scenarios", bl_scen, "Scenarios to generate when no dataset is given");
  bl->add_option("--out", bl_out, "Output CSV");

  auto* tr = app.add_subcommand("train", "Train the model on a dataset");
  add_common(tr, common);
  std::string tr_dataset, tr_out = "checkpoint", tr_alpha;
  std::optional<int> tr_epochs, tr_batch;
  std::optional<double> tr_lr;
  tr->add_option("--dataset", tr_dataset, "Dataset root")->required();
  tr->add_option("--out", tr_out, "Checkpoint directory");
  tr->add_option("--epochs", tr_epochs, "Training epochs");
  tr->add_option("--alpha", tr_alpha, "Task loss weights ce,det,precoding,decoding,loc");
  tr->add_option("--batch-size", tr_batch, "Examples per task per step");
  tr->add_option("--lr", tr_lr, "Initial learning rate");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint over SNR grids");
  std::string ev_ckpt, ev_dataset, ev_task = "all", ev_snr, ev_ebn0 = "4,5,6", ev_split = "test", ev_out = "eval";
  bool ev_ablate = false;
  ev->add_option("--checkpoint", ev_ckpt, "Checkpoint directory")->required();
  ev->add_option("--dataset", ev_dataset, "Dataset root")->required();
  ev->add_option("--task", ev_task, "Tasks to evaluate");
  ev->add_option("--snr", ev_snr, "SNR grid (dB)");
  ev->add_option("--ebn0", ev_ebn0, "Eb/N0 grid for decoding (dB)");
  ev->add_option("--split", ev_split, "Split to evaluate")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_flag("--ablate-scene", ev_ablate, "Replace scene graphs with empty grids");
  ev->add_option("--out", ev_out, "Output directory");

  auto* rp = app.add_subcommand("report", "Merge metric CSVs into one comparison table");
  std::vector<std::string> rp_inputs;
  std::string rp_out = "report.csv";
  rp->add_option("inputs", rp_inputs, "Metric CSV files")->required();
  rp->add_option("--out", rp_out, "Output CSV");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (sg->parsed()) return cmd_scene_gen(common, sg_out, sg_count, out);
    if (dg->parsed()) return cmd_data_gen(common, dg_out, dg_scen, dg_samples, dg_threads, out);
    if (bl->parsed()) return cmd_baseline(common, bl_task, bl_snr, bl_ebn0, bl_dataset, bl_scen, bl_out, out);
    if (tr->parsed()) return cmd_train(common, tr_dataset, tr_out, tr_epochs, tr_alpha, tr_batch, tr_lr, out);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_dataset, ev_task, ev_snr, ev_ebn0, ev_split, ev_ablate, ev_out, out);
    if (rp->parsed()) return cmd_report(rp_inputs, rp_out, out);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace musefm::cli
