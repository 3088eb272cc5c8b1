#include "otafl/config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "otafl/errors.hpp"
#include "otafl/io.hpp"

namespace otafl {

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << content;
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

void ensure_directory(const std::string& path) {
  std::filesystem::create_directories(path);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& v, int line) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0' || !std::isfinite(x))
    throw ConfigError("line " + std::to_string(line) + ": expected a number, got '" + v + "'");
  return x;
}

long long parse_int(const std::string& v, int line) {
  char* end = nullptr;
  const long long x = std::strtoll(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("line " + std::to_string(line) + ": expected an integer, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& v, int line) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("line " + std::to_string(line) + ": expected a boolean, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string val = trim(stripped.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ConfigError("line " + std::to_string(line_no) + ": empty key or value");

    if (key == "case") {
      if (val == "1" || val == "I") cfg.case_no = 1;
      else if (val == "2" || val == "II") cfg.case_no = 2;
      else throw ConfigError("line " + std::to_string(line_no) + ": case must be 1/I or 2/II");
    } else if (key == "task") {
      if (val != "ridge" && val != "nonconvex" && val != "idx")
        throw ConfigError("line " + std::to_string(line_no) + ": unknown task '" + val + "'");
      cfg.task = val;
    } else if (key == "devices") cfg.devices = static_cast<int>(parse_int(val, line_no));
    else if (key == "dim") cfg.dim = static_cast<int>(parse_int(val, line_no));
    else if (key == "samples_per_device")
      cfg.samples_per_device = static_cast<int>(parse_int(val, line_no));
    else if (key == "data_noise_std") cfg.data_noise_std = parse_double(val, line_no);
    else if (key == "ridge_coeff") cfg.ridge_coeff = parse_double(val, line_no);
    else if (key == "w_true_scale") cfg.w_true_scale = parse_double(val, line_no);
    else if (key == "hidden") cfg.hidden = static_cast<int>(parse_int(val, line_no));
    else if (key == "classes") cfg.classes = static_cast<int>(parse_int(val, line_no));
    else if (key == "data_skew") cfg.data_skew = parse_double(val, line_no);
    else if (key == "idx_images") cfg.idx_images = val;
    else if (key == "idx_labels") cfg.idx_labels = val;
    else if (key == "channel_mean") cfg.channel_mean = parse_double(val, line_no);
    else if (key == "sigma2") cfg.sigma2 = parse_double(val, line_no);
    else if (key == "channel_redraw") cfg.channel_redraw = parse_bool(val, line_no);
    else if (key == "b_max") {
      cfg.b_max.clear();
      for (const auto& item : split_list(val)) cfg.b_max.push_back(parse_double(item, line_no));
      if (cfg.b_max.empty())
        throw ConfigError("line " + std::to_string(line_no) + ": b_max needs a value");
    } else if (key == "theta_th") cfg.theta_th = parse_double(val, line_no);
    else if (key == "strategy") {
      cfg.strategies = split_list(val);
      if (cfg.strategies.empty())
        throw ConfigError("line " + std::to_string(line_no) + ": strategy needs a value");
    } else if (key == "p") cfg.p = parse_double(val, line_no);
    else if (key == "eta") cfg.eta = parse_double(val, line_no);
    else if (key == "rounds") cfg.rounds = static_cast<int>(parse_int(val, line_no));
    else if (key == "seeds") cfg.seeds = static_cast<int>(parse_int(val, line_no));
    else if (key == "seed0") cfg.seed0 = static_cast<std::uint64_t>(parse_int(val, line_no));
    else if (key == "eps") cfg.eps = parse_double(val, line_no);
    else if (key == "s") cfg.s_target = parse_double(val, line_no);
    else if (key == "warmup_rounds")
      cfg.warmup_rounds = static_cast<int>(parse_int(val, line_no));
    else if (key == "delta_f") cfg.delta_f = parse_double(val, line_no);
    else if (key == "w0_scale") cfg.w0_scale = parse_double(val, line_no);
    else if (key == "init") {
      if (val != "gaussian" && val != "zero")
        throw ConfigError("line " + std::to_string(line_no) + ": init must be gaussian or zero");
      cfg.init = val;
    } else if (key == "rate_tol") cfg.rate_tol = parse_double(val, line_no);
    else if (key == "oracle_grid") cfg.oracle_grid = static_cast<int>(parse_int(val, line_no));
    else if (key == "workers") cfg.workers = static_cast<int>(parse_int(val, line_no));
    else if (key == "out") cfg.out = val;
    else if (key == "run_name") cfg.run_name = val;
    else throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
  }

  // Cross-field validation.
  if (cfg.devices < 1) throw ConfigError("devices must be >= 1");
  if (cfg.dim < 1) throw ConfigError("dim must be >= 1");
  if (cfg.samples_per_device < 1) throw ConfigError("samples_per_device must be >= 1");
  if (cfg.rounds < 1) throw ConfigError("rounds must be >= 1");
  if (cfg.seeds < 1) throw ConfigError("seeds must be >= 1");
  if (cfg.warmup_rounds < 1) throw ConfigError("warmup_rounds must be >= 1");
  if (!(cfg.data_skew >= 0.0 && cfg.data_skew <= 1.0))
    throw ConfigError("data_skew must lie in [0, 1]");
  if (!(cfg.theta_th >= 0.0 && cfg.theta_th < M_PI / 2.0))
    throw ConfigError("theta_th must lie in [0, pi/2)");
  if (cfg.case_no == 1 && !(cfg.p > 0.5 && cfg.p < 1.0))
    throw ConfigError("case 1 requires 1/2 < p < 1");
  if (cfg.case_no == 2 && !(cfg.eta > 0.0))
    throw ConfigError("case 2 requires eta > 0");
  if (cfg.eps && cfg.s_target)
    throw ConfigError("set at most one of eps and s");
  if (cfg.task == "idx" && (cfg.idx_images.empty() || cfg.idx_labels.empty()))
    throw ConfigError("task idx requires idx_images and idx_labels");
  if (!(cfg.sigma2 >= 0.0)) throw ConfigError("sigma2 must be >= 0");
  if (!(cfg.channel_mean > 0.0)) throw ConfigError("channel_mean must be > 0");
  for (double c : cfg.b_max)
    if (!(c > 0.0)) throw ConfigError("b_max entries must be > 0");
  if (!(cfg.rate_tol > 0.0)) throw ConfigError("rate_tol must be > 0");
  if (cfg.oracle_grid < 2) throw ConfigError("oracle_grid must be >= 2");
  for (const auto& s : cfg.strategies)
    if (s != "normalized" && s != "raw_conservative" && s != "standardized" && s != "ideal")
      throw ConfigError("unknown strategy '" + s + "'");
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  return parse_config(read_text_file(path));
}

Vec ExperimentConfig::resolved_b_max() const {
  if (b_max.size() == 1) return Vec(static_cast<std::size_t>(devices), b_max[0]);
  if (b_max.size() == static_cast<std::size_t>(devices)) return b_max;
  throw ConfigError("b_max must be a scalar or one value per device");
}

std::string ExperimentConfig::resolved_out() const {
  if (!out.empty()) return out;
  if (const char* env = std::getenv("OTAFL_OUT"); env && *env) return env;
  return "out";
}

std::string ExperimentConfig::resolved_run_name() const {
  if (!run_name.empty()) return run_name;
  return "case" + std::to_string(case_no) + "_" + task;
}

std::vector<std::uint64_t> ExperimentConfig::seed_list() const {
  std::vector<std::uint64_t> out(static_cast<std::size_t>(seeds));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = seed0 + i;
  return out;
}

std::string ExperimentConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["case"] = std::to_string(case_no);
  kv["task"] = task;
  kv["devices"] = std::to_string(devices);
  kv["dim"] = std::to_string(dim);
  kv["samples_per_device"] = std::to_string(samples_per_device);
  kv["data_noise_std"] = fmt(data_noise_std);
  kv["ridge_coeff"] = fmt(ridge_coeff);
  kv["w_true_scale"] = fmt(w_true_scale);
  kv["hidden"] = std::to_string(hidden);
  kv["classes"] = std::to_string(classes);
  kv["data_skew"] = fmt(data_skew);
  kv["idx_images"] = idx_images;
  kv["idx_labels"] = idx_labels;
  kv["channel_mean"] = fmt(channel_mean);
  kv["sigma2"] = fmt(sigma2);
  kv["channel_redraw"] = channel_redraw ? "true" : "false";
  std::string caps;
  for (std::size_t i = 0; i < b_max.size(); ++i) {
    if (i) caps += ',';
    caps += fmt(b_max[i]);
  }
  kv["b_max"] = caps;
  kv["theta_th"] = fmt(theta_th);
  std::string strat;
  for (std::size_t i = 0; i < strategies.size(); ++i) {
    if (i) strat += ',';
    strat += strategies[i];
  }
  kv["strategy"] = strat;
  kv["p"] = fmt(p);
  kv["eta"] = fmt(eta);
  kv["rounds"] = std::to_string(rounds);
  kv["seeds"] = std::to_string(seeds);
  kv["seed0"] = std::to_string(seed0);
  kv["eps"] = eps ? fmt(*eps) : "";
  kv["s"] = s_target ? fmt(*s_target) : "";
  kv["warmup_rounds"] = std::to_string(warmup_rounds);
  kv["delta_f"] = delta_f ? fmt(*delta_f) : "";
  kv["w0_scale"] = fmt(w0_scale);
  kv["init"] = init;
  kv["rate_tol"] = fmt(rate_tol);
  kv["oracle_grid"] = std::to_string(oracle_grid);

  std::string out_text;
  for (const auto& [k, v] : kv) {
    out_text += k;
    out_text += '=';
    out_text += v;
    out_text += '\n';
  }
  return out_text;
}

std::string ExperimentConfig::fingerprint() const {
  const std::string text = canonical();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[24];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace otafl
