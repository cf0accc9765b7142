#include "adu/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "adu/errors.hpp"

extern char** environ;

namespace adu::harness {

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::Bits: return "bits";
    case SweepAxis::Users: return "users";
    case SweepAxis::Antennas: return "antennas";
  }
  return "bits";
}

SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "bits") return SweepAxis::Bits;
  if (s == "users") return SweepAxis::Users;
  if (s == "antennas") return SweepAxis::Antennas;
  throw ConfigError("unknown sweep axis: " + s);
}

void TrainingConfig::validate() const {
  if (epochs < 1) throw ConfigError("training: epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("training: batch_size must be >= 2");
  if (!(learning_rate > 0)) throw ConfigError("training: learning_rate must be > 0");
  if (train_samples < 1) throw ConfigError("training: train_samples must be >= 1");
  if (test_samples < 1) throw ConfigError("training: test_samples must be >= 1");
  if (batch_size > train_samples)
    throw ConfigError("training: batch_size exceeds train_samples");
}

void SweepConfig::validate() const {
  if (grid.empty()) throw ConfigError("sweep: grid must be non-empty");
  if (schemes.empty()) throw ConfigError("sweep: schemes must be non-empty");
  for (const std::string& s : schemes)
    if (s != "adu" && s != "adu-novib" && s != "rvq" && s != "perfect")
      throw ConfigError("sweep: unknown scheme " + s);
}

void ExperimentConfig::validate() const {
  layout.validate();
  model.validate();
  training.validate();
  sweep.validate();
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError("bad numeric value for " + key + ": '" + v + "'");
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return static_cast<int>(d);
  } catch (const std::exception&) {
    throw ConfigError("bad integer value for " + key + ": '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    unsigned long long d = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return static_cast<uint64_t>(d);
  } catch (const std::exception&) {
    throw ConfigError("bad unsigned value for " + key + ": '" + v + "'");
  }
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError("bad on/off value for " + key + ": '" + v + "'");
}

template <typename T, typename Fn>
std::vector<T> parse_list(const std::string& key, const std::string& v, Fn fn) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(fn(key, item));
  }
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key,
                                  const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"layout.cells",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.layout.cells = parse_int(k, v);
       }},
      {"layout.users_per_cell",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.layout.users_per_cell = parse_int(k, v);
       }},
      {"layout.bs_antennas",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.layout.bs_antennas = parse_int(k, v);
       }},
      {"layout.user_antennas",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.layout.user_antennas = parse_int(k, v);
       }},
      {"layout.r_min_km",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.layout.r_min_km = parse_double(k, v);
       }},
      {"layout.r_max_km",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.layout.r_max_km = parse_double(k, v);
       }},
      {"layout.cell_spacing_km",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.layout.cell_spacing_km = parse_double(k, v);
       }},
      {"layout.shadow_sigma_db",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.layout.shadow_sigma_db = parse_double(k, v);
       }},
      {"layout.noise_dbm",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.layout.noise_dbm = parse_double(k, v);
       }},
      {"layout.power_dbm",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.layout.power_dbm = parse_double(k, v);
       }},
      {"model.encoder_hidden",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         auto lst = parse_list<int>(k, v, parse_int);
         c.model.encoder_hidden.assign(lst.begin(), lst.end());
       }},
      {"model.pre_hidden",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         auto lst = parse_list<int>(k, v, parse_int);
         c.model.pre_hidden.assign(lst.begin(), lst.end());
       }},
      {"model.feedback_bits",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.model.feedback_bits = parse_int(k, v);
       }},
      {"model.wmmse_iters",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.model.wmmse_iters = parse_int(k, v);
       }},
      {"model.crosslink_policy",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         c.model.policy = model::crosslink_policy_from_string(v);
       }},
      {"model.gamma",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.model.gamma = parse_double(k, v);
       }},
      {"model.vib",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.model.vib = parse_flag(k, v);
       }},
      {"training.epochs",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.training.epochs = parse_int(k, v);
       }},
      {"training.batch_size",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.training.batch_size = parse_int(k, v);
       }},
      {"training.learning_rate",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.training.learning_rate = parse_double(k, v);
       }},
      {"training.adam_beta1",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.training.adam_beta1 = parse_double(k, v);
       }},
      {"training.adam_beta2",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.training.adam_beta2 = parse_double(k, v);
       }},
      {"training.adam_eps",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.training.adam_eps = parse_double(k, v);
       }},
      {"training.alpha0",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.model.anneal.alpha0 = parse_double(k, v);
       }},
      {"training.alpha_rate",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.model.anneal.rate = parse_double(k, v);
       }},
      {"training.alpha_max",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.model.anneal.alpha_max = parse_double(k, v);
       }},
      {"training.seed",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.training.seed = parse_u64(k, v);
       }},
      {"training.train_samples",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.training.train_samples = parse_int(k, v);
       }},
      {"training.test_samples",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.training.test_samples = parse_int(k, v);
       }},
      {"sweep.axis",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         c.sweep.axis = sweep_axis_from_string(v);
       }},
      {"sweep.grid",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.sweep.grid = parse_list<int>(k, v, parse_int);
       }},
      {"sweep.schemes",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.sweep.schemes = parse_list<std::string>(
             k, v, [](const std::string&, const std::string& s) { return s; });
       }},
  };
  return table;
}

void apply_kv(ExperimentConfig& cfg, const std::string& dotted,
              const std::string& value) {
  auto it = setters().find(dotted);
  if (it == setters().end())
    throw ConfigError("unknown configuration key: " + dotted);
  it->second(cfg, dotted, value);
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "layout" && section != "model" && section != "training" &&
          section != "sweep")
        throw ConfigError("unknown configuration section: [" + section + "]");
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": key outside any section");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    apply_kv(cfg, section + "." + key, value);
  }
  return cfg;
}

void apply_env_overrides(ExperimentConfig& cfg) {
  for (char** env = environ; *env != nullptr; ++env) {
    std::string entry(*env);
    if (entry.rfind("ADU_", 0) != 0) continue;
    size_t eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string name = entry.substr(4, eq - 4);
    std::string value = entry.substr(eq + 1);
    size_t us = name.find('_');
    if (us == std::string::npos)
      throw ConfigError("malformed override ADU_" + name);
    std::string section = name.substr(0, us);
    std::string key = name.substr(us + 1);
    for (char& c : section) c = static_cast<char>(std::tolower(c));
    for (char& c : key) c = static_cast<char>(std::tolower(c));
    apply_kv(cfg, section + "." + key, value);
  }
}

ExperimentConfig load_config(const std::string& path, bool apply_env) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  ExperimentConfig cfg = parse_config_text(ss.str());
  if (apply_env) apply_env_overrides(cfg);
  cfg.validate();
  return cfg;
}

}  // namespace adu::harness
