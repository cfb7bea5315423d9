#include "shan/run_config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "shan/errors.hpp"

using nlohmann::json;

namespace shan {

namespace {

double want_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config key '" + key + "' must be a number");
  return v.get<double>();
}

long want_integer(const json& v, const std::string& key) {
  if (!v.is_number_integer()) {
    throw ConfigError("config key '" + key + "' must be an integer");
  }
  return v.get<long>();
}

bool want_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("config key '" + key + "' must be a boolean");
  return v.get<bool>();
}

std::string want_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace

RunConfig RunConfig::defaults() { return RunConfig{}; }

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str(), path);
}

RunConfig RunConfig::from_json_text(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(origin + ": config must be a JSON object");

  RunConfig rc;
  TrainConfig& t = rc.train;
  NeuronConfig& n = t.model.neuron;
  for (const auto& [key, value] : j.items()) {
    if (key == "learning_rate") {
      t.learning_rate = want_number(value, key);
    } else if (key == "weight_decay") {
      t.weight_decay = want_number(value, key);
    } else if (key == "epochs") {
      t.epochs = static_cast<int>(want_integer(value, key));
    } else if (key == "patience") {
      t.patience = static_cast<int>(want_integer(value, key));
    } else if (key == "hidden_dim") {
      const long v = want_integer(value, key);
      if (v < 1) throw ConfigError("config key 'hidden_dim' must be positive");
      t.hidden_dim = static_cast<std::size_t>(v);
    } else if (key == "dropout_rate") {
      t.model.dropout_rate = want_number(value, key);
    } else if (key == "activation") {
      t.model.activation = activation_from_string(want_string(value, key));
    } else if (key == "normalize_readout") {
      t.model.normalize_readout = want_bool(value, key);
    } else if (key == "neuron_kind") {
      n.kind = neuron_kind_from_string(want_string(value, key));
    } else if (key == "v_th") {
      n.v_th = want_number(value, key);
    } else if (key == "reset_mode") {
      n.reset_mode = reset_mode_from_string(want_string(value, key));
    } else if (key == "v_reset") {
      n.v_reset = want_number(value, key);
    } else if (key == "leak_target") {
      n.leak_target = leak_target_from_string(want_string(value, key));
    } else if (key == "alpha") {
      n.alpha = want_number(value, key);
    } else if (key == "tau_init") {
      n.tau_init = want_number(value, key);
    } else if (key == "time_steps") {
      n.time_steps = static_cast<int>(want_integer(value, key));
    } else if (key == "surrogate_chain_alpha") {
      n.surrogate_chain_alpha = want_bool(value, key);
    } else if (key == "detach_reset") {
      n.detach_reset = want_bool(value, key);
    } else if (key == "split_ratios") {
      if (!value.is_array() || value.size() != 3) {
        throw ConfigError("config key 'split_ratios' must be an array of 3 numbers");
      }
      for (int k = 0; k < 3; ++k) rc.split_ratios[k] = want_number(value[k], key);
    } else if (key == "split_seed") {
      rc.split_seed = static_cast<std::uint64_t>(want_integer(value, key));
    } else {
      throw ConfigError(origin + ": unknown config key '" + key + "'");
    }
  }
  t.validate();
  return rc;
}

}  // namespace shan
