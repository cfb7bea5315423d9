#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "shan/checkpoint.hpp"
#include "shan/data_io.hpp"
#include "shan/errors.hpp"
#include "shan/model.hpp"

#ifndef CLI_BIN
#error "CLI_BIN must name the command line binary"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
  int exit_code = -1;
  std::string out;
};

CmdResult run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + CLI_BIN + "\" " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CmdResult r;
  char buf[4096];
  std::size_t n = 0;
  while ((n = fread(buf, 1, sizeof buf, pipe)) > 0) r.out.append(buf, n);
  const int status = pclose(pipe);
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() /
             ("shan_cli_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string str() const { return path.string(); }
  std::string sub(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(out.good());
  out << text;
}

int count_data_lines(const std::string& csv_text) {
  std::istringstream ss(csv_text);
  std::string line;
  int lines = 0;
  while (std::getline(ss, line)) {
    if (!line.empty()) ++lines;
  }
  return lines - 1;  // minus the header
}

const char* kSmallSpec =
    R"({"target_count": 40, "num_classes": 2, "feature_dim": 8, "seed": 1})";
const char* kFastConfig =
    R"({"epochs": 12, "patience": 12, "hidden_dim": 8, "time_steps": 4})";

std::string make_dataset(const TempDir& tmp) {
  const std::string spec_path = tmp.sub("spec.json");
  const std::string data_dir = tmp.sub("data");
  spit(spec_path, kSmallSpec);
  CmdResult r = run_cli("gen-synthetic --spec " + spec_path + " --out " + data_dir);
  REQUIRE(r.exit_code == 0);
  return data_dir;
}

}  // namespace

TEST_CASE("gen-synthetic writes a loadable dataset and reports it") {
  TempDir tmp("gen");
  const std::string data_dir = tmp.sub("data");
  CmdResult r = run_cli("gen-synthetic --out " + data_dir);
  REQUIRE(r.exit_code == 0);

  const json j = json::parse(r.out);
  CHECK(j.at("out_dir").get<std::string>() == data_dir);
  CHECK(j.at("target_count").get<int>() == 120);
  CHECK(j.at("num_classes").get<int>() == 3);
  CHECK(j.at("num_metapaths").get<int>() == 2);
  CHECK(j.at("same_class_neighbor_fraction").get<double>() >= 0.75);

  shan::DatasetBundle bundle = shan::load_dataset(data_dir, false);
  CHECK(bundle.features.rows() == 120);
  CHECK(bundle.num_classes == 3);
  CHECK(bundle.adjacencies.size() == 2);
  CHECK(bundle.has_splits);
}

TEST_CASE("gen-synthetic honors a spec file and rejects bad ones") {
  TempDir tmp("genspec");
  const std::string data_dir = tmp.sub("data");
  const std::string spec_path = tmp.sub("spec.json");

  SUBCASE("custom spec values flow through") {
    spit(spec_path, kSmallSpec);
    CmdResult r = run_cli("gen-synthetic --spec " + spec_path + " --out " + data_dir);
    REQUIRE(r.exit_code == 0);
    const json j = json::parse(r.out);
    CHECK(j.at("target_count").get<int>() == 40);
    CHECK(j.at("num_classes").get<int>() == 2);
    CHECK(j.at("seed").get<std::uint64_t>() == 1);
  }
  SUBCASE("unknown spec key") {
    spit(spec_path, R"({"target_cnt": 40})");
    CHECK(run_cli("gen-synthetic --spec " + spec_path + " --out " + data_dir)
              .exit_code == 1);
  }
  SUBCASE("out of range probability") {
    spit(spec_path, R"({"p_intra": 1.5})");
    CHECK(run_cli("gen-synthetic --spec " + spec_path + " --out " + data_dir)
              .exit_code == 1);
  }
  SUBCASE("malformed spec json") {
    spit(spec_path, "{not json");
    CHECK(run_cli("gen-synthetic --spec " + spec_path + " --out " + data_dir)
              .exit_code == 1);
  }
}

TEST_CASE("train then eval then inspect round-trip") {
  TempDir tmp("pipeline");
  const std::string data_dir = make_dataset(tmp);
  const std::string config_path = tmp.sub("config.json");
  const std::string out_dir = tmp.sub("run");
  spit(config_path, kFastConfig);

  CmdResult tr = run_cli("train --data " + data_dir + " --config " + config_path +
                         " --seed 0 --out " + out_dir);
  REQUIRE(tr.exit_code == 0);

  const std::string seed_dir = out_dir + "/seed_0";
  REQUIRE(fs::exists(out_dir + "/summary.json"));
  REQUIRE(fs::exists(seed_dir + "/history.csv"));
  REQUIRE(fs::exists(seed_dir + "/checkpoint.bin"));
  REQUIRE(fs::exists(seed_dir + "/metrics.json"));

  // stdout is exactly the summary document
  CHECK(tr.out == slurp(out_dir + "/summary.json"));
  const json summary = json::parse(tr.out);
  CHECK(summary.at("num_seeds").get<int>() == 1);
  CHECK(summary.at("seeds").size() == 1);
  CHECK(summary.at("seeds")[0].at("seed").get<int>() == 0);
  const double mean_micro = summary.at("mean_test_micro_f1").get<double>();
  CHECK(mean_micro >= 0.0);
  CHECK(mean_micro <= 1.0);
  CHECK(summary.at("std_test_micro_f1").get<double>() == 0.0);

  const json metrics = json::parse(slurp(seed_dir + "/metrics.json"));
  CHECK(metrics.at("seed").get<int>() == 0);
  CHECK(metrics.at("param_count").get<int>() == 161);  // 8*8+8*8+8+8+8*2+1
  const int epochs_run = metrics.at("epochs_run").get<int>();
  CHECK(epochs_run >= 1);
  CHECK(epochs_run <= 12);
  double beta_sum = 0.0;
  for (const auto& [name, value] : metrics.at("beta").items()) {
    beta_sum += value.get<double>();
  }
  CHECK(metrics.at("beta").size() == 2);
  CHECK(std::abs(beta_sum - 1.0) <= 1e-9);

  const std::string history = slurp(seed_dir + "/history.csv");
  CHECK(history.rfind("epoch,train_loss,val_micro_f1,val_macro_f1\n", 0) == 0);
  CHECK(count_data_lines(history) == epochs_run);

  SUBCASE("eval reproduces the recorded test scores bitwise") {
    CmdResult ev = run_cli("eval --data " + data_dir + " --checkpoint " +
                           seed_dir + "/checkpoint.bin");
    REQUIRE(ev.exit_code == 0);
    const json j = json::parse(ev.out);
    CHECK(j.at("test_micro_f1").get<double>() ==
          metrics.at("test_micro_f1").get<double>());
    CHECK(j.at("test_macro_f1").get<double>() ==
          metrics.at("test_macro_f1").get<double>());
    CHECK(j.at("test_size").get<int>() == 28);
  }

  SUBCASE("inspect reports attention and firing statistics") {
    CmdResult in = run_cli("inspect --data " + data_dir + " --checkpoint " +
                           seed_dir + "/checkpoint.bin");
    REQUIRE(in.exit_code == 0);
    const json j = json::parse(in.out);
    CHECK(j.at("param_count").get<int>() == 161);
    CHECK(j.at("beta").size() == 2);
    double sum = 0.0;
    for (const auto& [name, value] : j.at("beta").items()) {
      const double b = value.get<double>();
      CHECK(b >= 0.0);
      sum += b;
    }
    CHECK(std::abs(sum - 1.0) <= 1e-9);
    REQUIRE(j.at("per_class_mean_firing_rate").size() == 2);
    for (const auto& v : j.at("per_class_mean_firing_rate")) {
      CHECK(v.get<double>() >= 0.0);
      CHECK(v.get<double>() <= 1.0);
    }
    const double sparsity = j.at("spike_sparsity").get<double>();
    CHECK(sparsity >= 0.0);
    CHECK(sparsity <= 1.0);
    CHECK(j.at("forward_wall_clock_ms").get<double>() > 0.0);
  }
}

TEST_CASE("multi-seed train aggregates per-seed results") {
  TempDir tmp("multiseed");
  const std::string data_dir = make_dataset(tmp);
  const std::string config_path = tmp.sub("config.json");
  const std::string out_dir = tmp.sub("run");
  spit(config_path, kFastConfig);

  CmdResult tr = run_cli("train --data " + data_dir + " --config " + config_path +
                         " --seed 0 --seed 1 --out " + out_dir);
  REQUIRE(tr.exit_code == 0);
  CHECK(fs::exists(out_dir + "/seed_0/checkpoint.bin"));
  CHECK(fs::exists(out_dir + "/seed_1/checkpoint.bin"));

  const json summary = json::parse(tr.out);
  CHECK(summary.at("num_seeds").get<int>() == 2);
  REQUIRE(summary.at("seeds").size() == 2);
  const double a = summary.at("seeds")[0].at("test_micro_f1").get<double>();
  const double b = summary.at("seeds")[1].at("test_micro_f1").get<double>();
  CHECK(summary.at("mean_test_micro_f1").get<double>() ==
        doctest::Approx((a + b) / 2.0).epsilon(1e-12));
}

TEST_CASE("identical runs produce identical artifacts") {
  TempDir tmp("repeat");
  const std::string data_dir = make_dataset(tmp);
  const std::string config_path = tmp.sub("config.json");
  spit(config_path, kFastConfig);

  const std::string base = "train --data " + data_dir + " --config " + config_path +
                           " --seed 7 --out ";
  REQUIRE(run_cli(base + tmp.sub("run_a")).exit_code == 0);
  REQUIRE(run_cli(base + tmp.sub("run_b")).exit_code == 0);

  CHECK(slurp(tmp.sub("run_a") + "/seed_7/history.csv") ==
        slurp(tmp.sub("run_b") + "/seed_7/history.csv"));
  CHECK(slurp(tmp.sub("run_a") + "/seed_7/checkpoint.bin") ==
        slurp(tmp.sub("run_b") + "/seed_7/checkpoint.bin"));
}

TEST_CASE("a zeroed readout exposes each neuron kind's intrinsic rhythm") {
  TempDir tmp("rhythm");
  const std::string data_dir = make_dataset(tmp);
  shan::DatasetBundle data = shan::load_dataset(data_dir, false);
  std::vector<std::string> names;
  for (const shan::MetaPath& mp : data.metapaths) names.push_back(mp.name);

  auto crafted = [&](shan::NeuronKind kind, const std::string& file) {
    std::mt19937_64 rng(3);
    shan::ModelParams params = shan::init_params(
        data.features.cols(), 8, static_cast<std::size_t>(data.num_classes),
        kind, 2.0, rng);
    for (std::size_t i = 0; i < params.w3.size(); ++i) params.w3[i] = 0.0;
    shan::ModelConfig mc;
    mc.neuron.kind = kind;
    mc.neuron.time_steps = 64;
    mc.dropout_rate = 0.0;
    const std::string path = tmp.sub(file);
    shan::save_checkpoint(path, params, mc, names);
    return path;
  };

  SUBCASE("leaky neurons drift to threshold once per 54 steps") {
    const std::string ckpt = crafted(shan::NeuronKind::LIF, "lif64.bin");
    CmdResult r = run_cli("inspect --data " + data_dir + " --checkpoint " + ckpt);
    REQUIRE(r.exit_code == 0);
    const json j = json::parse(r.out);
    REQUIRE(j.at("per_class_mean_firing_rate").size() == 2);
    for (const auto& v : j.at("per_class_mean_firing_rate")) {
      CHECK(v.get<double>() == 1.0 / 64.0);
    }
    CHECK(j.at("spike_sparsity").get<double>() == 63.0 / 64.0);
  }
  SUBCASE("integrate-only neurons stay silent") {
    const std::string ckpt = crafted(shan::NeuronKind::IF, "if64.bin");
    CmdResult r = run_cli("inspect --data " + data_dir + " --checkpoint " + ckpt);
    REQUIRE(r.exit_code == 0);
    const json j = json::parse(r.out);
    for (const auto& v : j.at("per_class_mean_firing_rate")) {
      CHECK(v.get<double>() == 0.0);
    }
    CHECK(j.at("spike_sparsity").get<double>() == 1.0);
  }
}

TEST_CASE("failures map to distinct exit codes") {
  TempDir tmp("exitcodes");

  SUBCASE("missing dataset directory is a data error") {
    CHECK(run_cli("train --data " + tmp.sub("nope") + " --out " + tmp.sub("run"))
              .exit_code == 2);
  }
  SUBCASE("missing feature files are a data error") {
    const std::string data_dir = make_dataset(tmp);
    fs::remove_all(fs::path(data_dir) / "features");
    CHECK(run_cli("train --data " + data_dir + " --out " + tmp.sub("run"))
              .exit_code == 2);
  }
  SUBCASE("invalid config values are config errors") {
    const std::string data_dir = make_dataset(tmp);
    const std::string config_path = tmp.sub("config.json");
    spit(config_path, R"({"learning_rate": -0.5})");
    CHECK(run_cli("train --data " + data_dir + " --config " + config_path +
                  " --out " + tmp.sub("run"))
              .exit_code == 1);
    spit(config_path, R"({"learning_rate": NaN})");
    CHECK(run_cli("train --data " + data_dir + " --config " + config_path +
                  " --out " + tmp.sub("run2"))
              .exit_code == 1);
    spit(config_path, R"({"epochs": 2.5})");
    CHECK(run_cli("train --data " + data_dir + " --config " + config_path +
                  " --out " + tmp.sub("run3"))
              .exit_code == 1);
  }
  SUBCASE("checkpoint with wrong dimensions is a config error") {
    const std::string data_dir = make_dataset(tmp);
    shan::DatasetBundle data = shan::load_dataset(data_dir, false);
    std::vector<std::string> names;
    for (const shan::MetaPath& mp : data.metapaths) names.push_back(mp.name);
    std::mt19937_64 rng(5);

    const std::string narrow = tmp.sub("narrow.bin");
    shan::save_checkpoint(
        narrow,
        shan::init_params(5, 4, static_cast<std::size_t>(data.num_classes),
                          shan::NeuronKind::PLIF, 2.0, rng),
        shan::ModelConfig{}, names);
    CHECK(run_cli("eval --data " + data_dir + " --checkpoint " + narrow)
              .exit_code == 1);

    const std::string wide = tmp.sub("wide.bin");
    shan::save_checkpoint(
        wide,
        shan::init_params(data.features.cols(), 4, 7, shan::NeuronKind::PLIF,
                          2.0, rng),
        shan::ModelConfig{}, names);
    CHECK(run_cli("eval --data " + data_dir + " --checkpoint " + wide)
              .exit_code == 1);
  }
  SUBCASE("command line misuse fails without touching the model") {
    CHECK(run_cli("train --data somewhere").exit_code != 0);  // --out missing
    CHECK(run_cli("").exit_code != 0);                        // no subcommand
  }
}
