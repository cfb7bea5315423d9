#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <doctest.h>

#include "shan/checkpoint.hpp"
#include "shan/errors.hpp"
#include "shan/run_config.hpp"

namespace fs = std::filesystem;
using shan::Checkpoint;
using shan::ModelConfig;
using shan::ModelParams;
using shan::NeuronKind;
using shan::RunConfig;

namespace {

struct TempFile {
  fs::path path;
  explicit TempFile(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove(path);
  }
  ~TempFile() { fs::remove(path); }
  std::string str() const { return path.string(); }
};

ModelParams sample_params(NeuronKind kind) {
  std::mt19937_64 rng(7);
  return shan::init_params(6, 4, 3, kind, 2.5, rng);
}

}  // namespace

TEST_CASE("checkpoint round-trip is bitwise") {
  TempFile file("shan_ckpt_roundtrip.bin");
  ModelParams params = sample_params(NeuronKind::PLIF);
  ModelConfig config;
  config.neuron.kind = NeuronKind::PLIF;
  config.neuron.v_th = 0.75;
  config.neuron.alpha = 3.0;
  config.neuron.tau_init = 2.5;
  config.neuron.time_steps = 12;
  config.activation = shan::Activation::elu;
  config.dropout_rate = 0.25;
  config.normalize_readout = true;

  shan::save_checkpoint(file.str(), params, config, {"via_a", "via_b"});
  Checkpoint loaded = shan::load_checkpoint(file.str());

  CHECK(loaded.params.w1.data() == params.w1.data());
  CHECK(loaded.params.w2.data() == params.w2.data());
  CHECK(loaded.params.b.data() == params.b.data());
  CHECK(loaded.params.q.data() == params.q.data());
  CHECK(loaded.params.w3.data() == params.w3.data());
  CHECK(loaded.params.tau_param.data() == params.tau_param.data());
  CHECK(loaded.config.neuron.kind == NeuronKind::PLIF);
  CHECK(loaded.config.neuron.v_th == 0.75);
  CHECK(loaded.config.neuron.alpha == 3.0);
  CHECK(loaded.config.neuron.tau_init == 2.5);
  CHECK(loaded.config.neuron.time_steps == 12);
  CHECK(loaded.config.activation == shan::Activation::elu);
  CHECK(loaded.config.dropout_rate == 0.25);
  CHECK(loaded.config.normalize_readout);
  CHECK(loaded.metapath_names == std::vector<std::string>{"via_a", "via_b"});
}

TEST_CASE("checkpoint without PLIF omits the time constant") {
  TempFile file("shan_ckpt_if.bin");
  ModelParams params = sample_params(NeuronKind::IF);
  ModelConfig config;
  config.neuron.kind = NeuronKind::IF;
  shan::save_checkpoint(file.str(), params, config, {"only"});
  Checkpoint loaded = shan::load_checkpoint(file.str());
  CHECK(loaded.params.w1.data() == params.w1.data());
  CHECK(loaded.config.neuron.kind == NeuronKind::IF);
}

TEST_CASE("checkpoint corruption is rejected") {
  TempFile file("shan_ckpt_corrupt.bin");
  ModelParams params = sample_params(NeuronKind::PLIF);
  shan::save_checkpoint(file.str(), params, ModelConfig{}, {"m"});

  auto bytes = [&] {
    std::ifstream in(file.str(), std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in),
                       std::istreambuf_iterator<char>());
  }();

  SUBCASE("missing file") {
    CHECK_THROWS_AS(shan::load_checkpoint("/nonexistent/shan.ckpt"),
                    shan::DataError);
  }
  SUBCASE("wrong magic") {
    std::string bad = bytes;
    bad[0] = 'Z';
    std::ofstream(file.str(), std::ios::binary) << bad;
    CHECK_THROWS_AS(shan::load_checkpoint(file.str()), shan::DataError);
  }
  SUBCASE("truncated payload") {
    std::ofstream(file.str(), std::ios::binary)
        << bytes.substr(0, bytes.size() - 9);
    CHECK_THROWS_AS(shan::load_checkpoint(file.str()), shan::DataError);
  }
  SUBCASE("trailing garbage") {
    std::ofstream(file.str(), std::ios::binary) << bytes << "extra";
    CHECK_THROWS_AS(shan::load_checkpoint(file.str()), shan::DataError);
  }
  SUBCASE("mangled header json") {
    std::string bad = bytes;
    bad[9] = '@';  // inside the header text
    std::ofstream(file.str(), std::ios::binary) << bad;
    CHECK_THROWS_AS(shan::load_checkpoint(file.str()), shan::DataError);
  }
}

TEST_CASE("run config defaults") {
  RunConfig rc = RunConfig::defaults();
  CHECK(rc.train.learning_rate == 0.005);
  CHECK(rc.train.weight_decay == 0.001);
  CHECK(rc.train.epochs == 200);
  CHECK(rc.train.patience == 100);
  CHECK(rc.train.hidden_dim == 10);
  CHECK(rc.train.model.dropout_rate == 0.5);
  CHECK(rc.train.model.neuron.kind == NeuronKind::PLIF);
  CHECK(rc.train.model.neuron.time_steps == 8);
  CHECK(rc.split_ratios[0] == 0.2);
  CHECK(rc.split_seed == 0);
}

TEST_CASE("run config parsing") {
  SUBCASE("every recognized key applies") {
    RunConfig rc = RunConfig::from_json_text(R"({
      "learning_rate": 0.01,
      "weight_decay": 0.0,
      "epochs": 50,
      "patience": 10,
      "hidden_dim": 8,
      "dropout_rate": 0.25,
      "activation": "elu",
      "normalize_readout": true,
      "neuron_kind": "LIF",
      "v_th": 0.8,
      "reset_mode": "to_constant",
      "v_reset": -0.1,
      "leak_target": "zero",
      "alpha": 4.0,
      "tau_init": 3.0,
      "time_steps": 6,
      "surrogate_chain_alpha": true,
      "detach_reset": true,
      "split_ratios": [0.5, 0.25, 0.25],
      "split_seed": 11
    })", "test");
    CHECK(rc.train.learning_rate == 0.01);
    CHECK(rc.train.epochs == 50);
    CHECK(rc.train.patience == 10);
    CHECK(rc.train.hidden_dim == 8);
    CHECK(rc.train.model.dropout_rate == 0.25);
    CHECK(rc.train.model.activation == shan::Activation::elu);
    CHECK(rc.train.model.normalize_readout);
    CHECK(rc.train.model.neuron.kind == NeuronKind::LIF);
    CHECK(rc.train.model.neuron.v_th == 0.8);
    CHECK(rc.train.model.neuron.reset_mode == shan::ResetMode::to_constant);
    CHECK(rc.train.model.neuron.v_reset == -0.1);
    CHECK(rc.train.model.neuron.leak_target == shan::LeakTarget::zero);
    CHECK(rc.train.model.neuron.alpha == 4.0);
    CHECK(rc.train.model.neuron.tau_init == 3.0);
    CHECK(rc.train.model.neuron.time_steps == 6);
    CHECK(rc.train.model.neuron.surrogate_chain_alpha);
    CHECK(rc.train.model.neuron.detach_reset);
    CHECK(rc.split_ratios[1] == 0.25);
    CHECK(rc.split_seed == 11);
  }
  SUBCASE("unknown keys are rejected") {
    bool threw = false;
    try {
      RunConfig::from_json_text(R"({"learning_rte": 0.01})", "test");
    } catch (const shan::ConfigError& e) {
      threw = true;
      CHECK(std::string(e.what()).find("learning_rte") != std::string::npos);
    }
    CHECK(threw);
  }
  SUBCASE("type mismatches are config errors") {
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"epochs": "many"})", "t"),
                    shan::ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"epochs": 2.5})", "t"),
                    shan::ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"split_ratios": [0.5, 0.5]})", "t"),
                    shan::ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text(R"([1, 2])", "t"),
                    shan::ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json_text("not json", "t"),
                    shan::ConfigError);
  }
  SUBCASE("validation runs after parsing") {
    CHECK_THROWS_AS(RunConfig::from_json_text(R"({"learning_rate": -1.0})", "t"),
                    shan::ConfigError);
    CHECK_THROWS_AS(
        RunConfig::from_json_text(R"({"epochs": 5, "patience": 50})", "t"),
        shan::ConfigError);
  }
  SUBCASE("missing config file") {
    CHECK_THROWS_AS(RunConfig::from_file("/nonexistent/shan.json"),
                    shan::ConfigError);
  }
}
