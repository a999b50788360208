#include "musefm/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace musefm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ValidationError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

int to_int(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d != std::floor(d)) throw ValidationError("config: '" + key + "' expects an integer, got '" + v + "'");
  return static_cast<int>(d);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + fmt(v[i]);
  return out;
}

}  // namespace

const char* task_name(TaskId t) {
  switch (t) {
    case TaskId::CE: return "ce";
    case TaskId::DET: return "det";
    case TaskId::PRECODING: return "precoding";
    case TaskId::DECODING: return "decoding";
    case TaskId::LOC: return "loc";
  }
  return "?";
}

TaskId parse_task(const std::string& s) {
  const std::string l = lower(s);
  if (l == "ce" || l == "channel_estimation") return TaskId::CE;
  if (l == "det" || l == "detection") return TaskId::DET;
  if (l == "precoding" || l == "pre") return TaskId::PRECODING;
  if (l == "decoding" || l == "dec") return TaskId::DECODING;
  if (l == "loc" || l == "localization") return TaskId::LOC;
  throw ValidationError("unknown task '" + s + "' (expected ce, det, precoding, decoding, loc)");
}

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_key_values(ss.str());
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::vector<double> parse_double_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(to_double("list", item));
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (double d : parse_double_list(s)) {
    if (d != std::floor(d)) throw ValidationError("expected integer list, got '" + s + "'");
    out.push_back(static_cast<int>(d));
  }
  return out;
}

std::vector<double> parse_grid(const std::string& s) {
  if (s.find(':') == std::string::npos) {
    auto v = parse_double_list(s);
    if (v.empty()) throw ValidationError("empty grid '" + s + "'");
    return v;
  }
  std::vector<double> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(to_double("grid", trim(item)));
  if (parts.size() != 3) throw ValidationError("grid must be start:stop:step, got '" + s + "'");
  const double start = parts[0], stop = parts[1], step = parts[2];
  if (!(step > 0.0) || stop < start) throw ValidationError("grid '" + s + "' needs step > 0 and stop >= start");
  std::vector<double> out;
  const auto n = static_cast<long>(std::floor((stop - start) / step + 1e-9));
  for (long i = 0; i <= n; ++i) out.push_back(start + static_cast<double>(i) * step);
  return out;
}

SystemProfile SystemProfile::toy() { return SystemProfile{}; }

SystemProfile SystemProfile::paper() {
  SystemProfile p;
  p.name = "paper";
  p.array.N_h = 16;
  p.array.N_v = 4;
  p.array.M = 48;
  p.K = 4;
  p.L_p_ce = 4;
  p.L_p_loc = 8;
  p.L_d = 4;
  p.code_n = 64;
  p.code_m = 32;
  p.grid_W = 100;
  p.patch = 10;
  p.scenarios = 2600;
  p.samples_per_scenario = 50;
  p.val_fraction = 300.0 / 2600.0;
  p.test_fraction = 300.0 / 2600.0;
  return p;
}

SystemProfile SystemProfile::by_name(const std::string& name) {
  const std::string l = lower(name);
  if (l == "toy") return toy();
  if (l == "paper") return paper();
  throw ValidationError("unknown profile '" + name + "' (expected toy or paper)");
}

KeyValues SystemProfile::to_kv() const {
  KeyValues kv;
  kv["profile"] = name;
  kv["n_h"] = std::to_string(array.N_h);
  kv["n_v"] = std::to_string(array.N_v);
  kv["spacing"] = fmt(array.spacing);
  kv["f_c"] = fmt(array.f_c);
  kv["subcarriers"] = std::to_string(array.M);
  kv["delta_f"] = fmt(array.delta_f);
  kv["users"] = std::to_string(K);
  kv["pilots_ce"] = std::to_string(L_p_ce);
  kv["pilots_loc"] = std::to_string(L_p_loc);
  kv["data_len"] = std::to_string(L_d);
  kv["code_n"] = std::to_string(code_n);
  kv["code_m"] = std::to_string(code_m);
  kv["code_design_ebn0"] = fmt(code_design_ebn0_db);
  kv["grid"] = std::to_string(grid_W);
  kv["patch"] = std::to_string(patch);
  kv["snr_db"] = fmt(snr_db);
  kv["ebn0_db"] = join(ebn0_db);
  kv["p_max"] = fmt(P_max);
  kv["ue_height"] = fmt(ue_height);
  kv["pilot_selection"] = pilot_selection == PilotSelection::Even ? "even" : "random";
  kv["scenarios"] = std::to_string(scenarios);
  kv["samples_per_scenario"] = std::to_string(samples_per_scenario);
  kv["val_fraction"] = fmt(val_fraction);
  kv["test_fraction"] = fmt(test_fraction);
  kv["scene.min_walls"] = std::to_string(scene.min_walls);
  kv["scene.max_walls"] = std::to_string(scene.max_walls);
  kv["scene.min_cylinders"] = std::to_string(scene.min_cylinders);
  kv["scene.max_cylinders"] = std::to_string(scene.max_cylinders);
  kv["scene.wall_thickness"] = fmt(scene.wall_thickness);
  kv["scene.wall_len_min"] = fmt(scene.wall_len_min);
  kv["scene.wall_len_max"] = fmt(scene.wall_len_max);
  kv["scene.cyl_r_min"] = fmt(scene.cyl_r_min);
  kv["scene.cyl_r_max"] = fmt(scene.cyl_r_max);
  kv["scene.bs_x"] = fmt(scene.bs_pos.x());
  kv["scene.bs_y"] = fmt(scene.bs_pos.y());
  kv["scene.bs_z"] = fmt(scene.bs_pos.z());
  return kv;
}

void SystemProfile::apply(const KeyValues& kv, std::vector<std::string>* consumed) {
  using Setter = std::function<void(const std::string&, const std::string&)>;
  const std::map<std::string, Setter> table{
      {"profile", [&](auto&, auto& v) { name = v; }},
      {"n_h", [&](auto& k, auto& v) { array.N_h = to_int(k, v); }},
      {"n_v", [&](auto& k, auto& v) { array.N_v = to_int(k, v); }},
      {"spacing", [&](auto& k, auto& v) { array.spacing = to_double(k, v); }},
      {"f_c", [&](auto& k, auto& v) { array.f_c = to_double(k, v); }},
      {"subcarriers", [&](auto& k, auto& v) { array.M = to_int(k, v); }},
      {"delta_f", [&](auto& k, auto& v) { array.delta_f = to_double(k, v); }},
      {"users", [&](auto& k, auto& v) { K = to_int(k, v); }},
      {"pilots_ce", [&](auto& k, auto& v) { L_p_ce = to_int(k, v); }},
      {"pilots_loc", [&](auto& k, auto& v) { L_p_loc = to_int(k, v); }},
      {"data_len", [&](auto& k, auto& v) { L_d = to_int(k, v); }},
      {"code_n", [&](auto& k, auto& v) { code_n = to_int(k, v); }},
      {"code_m", [&](auto& k, auto& v) { code_m = to_int(k, v); }},
      {"code_design_ebn0", [&](auto& k, auto& v) { code_design_ebn0_db = to_double(k, v); }},
      {"grid", [&](auto& k, auto& v) { grid_W = to_int(k, v); }},
      {"patch", [&](auto& k, auto& v) { patch = to_int(k, v); }},
      {"snr_db", [&](auto& k, auto& v) { snr_db = to_double(k, v); }},
      {"ebn0_db", [&](auto&, auto& v) { ebn0_db = parse_double_list(v); }},
      {"p_max", [&](auto& k, auto& v) { P_max = to_double(k, v); }},
      {"ue_height", [&](auto& k, auto& v) { ue_height = to_double(k, v); }},
      {"pilot_selection",
       [&](auto& k, auto& v) {
         if (v == "even")
           pilot_selection = PilotSelection::Even;
         else if (v == "random")
           pilot_selection = PilotSelection::Random;
         else
           throw ValidationError("config: '" + k + "' expects even or random");
       }},
      {"scenarios", [&](auto& k, auto& v) { scenarios = to_int(k, v); }},
      {"samples_per_scenario", [&](auto& k, auto& v) { samples_per_scenario = to_int(k, v); }},
      {"val_fraction", [&](auto& k, auto& v) { val_fraction = to_double(k, v); }},
      {"test_fraction", [&](auto& k, auto& v) { test_fraction = to_double(k, v); }},
      {"scene.min_walls", [&](auto& k, auto& v) { scene.min_walls = to_int(k, v); }},
      {"scene.max_walls", [&](auto& k, auto& v) { scene.max_walls = to_int(k, v); }},
      {"scene.min_cylinders", [&](auto& k, auto& v) { scene.min_cylinders = to_int(k, v); }},
      {"scene.max_cylinders", [&](auto& k, auto& v) { scene.max_cylinders = to_int(k, v); }},
      {"scene.wall_thickness", [&](auto& k, auto& v) { scene.wall_thickness = to_double(k, v); }},
      {"scene.wall_len_min", [&](auto& k, auto& v) { scene.wall_len_min = to_double(k, v); }},
      {"scene.wall_len_max", [&](auto& k, auto& v) { scene.wall_len_max = to_double(k, v); }},
      {"scene.cyl_r_min", [&](auto& k, auto& v) { scene.cyl_r_min = to_double(k, v); }},
      {"scene.cyl_r_max", [&](auto& k, auto& v) { scene.cyl_r_max = to_double(k, v); }},
      {"scene.bs_x", [&](auto& k, auto& v) { scene.bs_pos.x() = to_double(k, v); }},
      {"scene.bs_y", [&](auto& k, auto& v) { scene.bs_pos.y() = to_double(k, v); }},
      {"scene.bs_z", [&](auto& k, auto& v) { scene.bs_pos.z() = to_double(k, v); }},
  };
  for (const auto& [k, v] : kv) {
    auto it = table.find(k);
    if (it == table.end()) continue;
    it->second(k, v);
    if (consumed) consumed->push_back(k);
  }
}

void SystemProfile::validate() const {
  array.validate();
  if (K < 1 || K > Nt()) throw ValidationError("profile: users must satisfy 1 <= K <= N_t");
  if (L_p_ce < 1 || L_p_ce > Nt() || L_p_loc < 1 || L_p_loc > Nt())
    throw ValidationError("profile: pilot lengths must lie in [1, N_t]");
  if (L_d < 1) throw ValidationError("profile: data_len must be >= 1");
  if (code_n < 2 || (code_n & (code_n - 1)) != 0) throw ValidationError("profile: code_n must be a power of two");
  if (code_m < 1 || code_m >= code_n) throw ValidationError("profile: code_m must lie in [1, code_n)");
  if (grid_W < 8 || patch < 1 || grid_W % patch != 0)
    throw ValidationError("profile: grid must be >= 8 and divisible by patch");
  if (ebn0_db.empty()) throw ValidationError("profile: ebn0_db list is empty");
  if (!(P_max > 0.0)) throw ValidationError("profile: p_max must be positive");
  if (scenarios < 1 || samples_per_scenario < 1) throw ValidationError("profile: counts must be positive");
  if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1.0)
    throw ValidationError("profile: split fractions must be non-negative and sum below 1");
}

SplitCounts split_counts(int scenarios, double val_fraction, double test_fraction) {
  SplitCounts c;
  c.val = static_cast<int>(std::lround(scenarios * val_fraction));
  c.test = static_cast<int>(std::lround(scenarios * test_fraction));
  c.train = scenarios - c.val - c.test;
  if (c.train < 0) throw ValidationError("split_counts: not enough scenarios");
  return c;
}

std::string config_hash(const KeyValues& kv) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : format_key_values(kv)) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace musefm
