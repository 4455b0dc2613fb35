#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mipseg/common.hpp"
#include "mipseg/unet.hpp"

namespace mipseg {

// Run configuration. File format is one key=value per line with exactly
// these field names; CLI flags override file values.
struct TrainConfig {
  int p = 12;                  // path-1 direction count
  int m = 60;                  // path-2 grid size
  double lr = 0.001;           // initial learning rate
  int plateau_patience = 3;    // stagnant epochs before halving lr
  int early_stop_patience = 5; // stagnant epochs before stopping
  int minibatch = 1;
  int folds = 7;
  std::uint64_t seed = 0;
  int max_epochs = 100;
  int unet_depth = 3;
  int unet_base = 8;
  bool learnable_upsample = false;

  void validate() const {
    if (p < 1) throw ConfigError("p must be >= 1");
    if (180 % p != 0)
      throw ConfigError("p must divide 180 into whole-degree blocks, got p=" + std::to_string(p));
    if (m < 1) throw ConfigError("m must be >= 1");
    if (p > m) throw ConfigError("p must be <= m (p=" + std::to_string(p) +
                                 ", m=" + std::to_string(m) + ")");
    if (lr <= 0) throw ConfigError("lr must be positive");
    if (plateau_patience < 1 || early_stop_patience < 1)
      throw ConfigError("patience values must be >= 1");
    if (minibatch != 1) throw ConfigError("only minibatch size 1 is supported");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    UNetConfig u = unet();
    u.validate();
  }

  UNetConfig unet() const {
    UNetConfig u;
    u.depth = unet_depth;
    u.base_channels = unet_base;
    u.learnable_upsample = learnable_upsample;
    return u;
  }
};

inline std::vector<std::pair<std::string, std::string>> config_to_kv(const TrainConfig& c) {
  auto fmt_double = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return {{"p", std::to_string(c.p)},
          {"m", std::to_string(c.m)},
          {"lr", fmt_double(c.lr)},
          {"plateau_patience", std::to_string(c.plateau_patience)},
          {"early_stop_patience", std::to_string(c.early_stop_patience)},
          {"minibatch", std::to_string(c.minibatch)},
          {"folds", std::to_string(c.folds)},
          {"seed", std::to_string(c.seed)},
          {"max_epochs", std::to_string(c.max_epochs)},
          {"unet_depth", std::to_string(c.unet_depth)},
          {"unet_base", std::to_string(c.unet_base)},
          {"learnable_upsample", c.learnable_upsample ? "1" : "0"}};
}

inline void config_set(TrainConfig& c, const std::string& key, const std::string& value) {
  try {
    if (key == "p")
      c.p = std::stoi(value);
    else if (key == "m")
      c.m = std::stoi(value);
    else if (key == "lr")
      c.lr = std::stod(value);
    else if (key == "plateau_patience")
      c.plateau_patience = std::stoi(value);
    else if (key == "early_stop_patience")
      c.early_stop_patience = std::stoi(value);
    else if (key == "minibatch")
      c.minibatch = std::stoi(value);
    else if (key == "folds")
      c.folds = std::stoi(value);
    else if (key == "seed")
      c.seed = std::stoull(value);
    else if (key == "max_epochs")
      c.max_epochs = std::stoi(value);
    else if (key == "unet_depth")
      c.unet_depth = std::stoi(value);
    else if (key == "unet_base")
      c.unet_base = std::stoi(value);
    else if (key == "learnable_upsample")
      c.learnable_upsample = value == "1" || value == "true";
    else
      throw ConfigError("unknown config key '" + key + "'");
  } catch (const std::invalid_argument&) {
    throw ConfigError("bad value '" + value + "' for config key '" + key + "'");
  } catch (const std::out_of_range&) {
    throw ConfigError("value '" + value + "' out of range for config key '" + key + "'");
  }
}

// key=value per line; blank lines and '#' comments allowed.
inline TrainConfig load_config_file(const std::string& path, TrainConfig base = TrainConfig{}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    size_t b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    size_t e = line.find_last_not_of(" \t\r");
    line = line.substr(b, e - b + 1);
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
    config_set(base, line.substr(0, eq), line.substr(eq + 1));
  }
  return base;
}

}  // namespace mipseg
