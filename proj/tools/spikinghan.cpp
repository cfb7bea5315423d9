#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "shan/checkpoint.hpp"
#include "shan/data_io.hpp"
#include "shan/errors.hpp"
#include "shan/run_config.hpp"
#include "shan/tape.hpp"
#include "shan/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw shan::DataError("cannot write file: " + path);
  out << text;
  if (!out) throw shan::DataError("short write: " + path);
}

json beta_object(const std::vector<std::string>& names,
                 const std::vector<double>& beta) {
  json obj = json::object();
  for (std::size_t p = 0; p < beta.size(); ++p) {
    obj[p < names.size() ? names[p] : "metapath" + std::to_string(p)] = beta[p];
  }
  return obj;
}

void check_checkpoint_dims(const shan::Checkpoint& ckpt,
                           const shan::DatasetBundle& data) {
  if (ckpt.params.d_in() != data.features.cols()) {
    throw shan::ConfigError(
        "checkpoint expects d_in=" + std::to_string(ckpt.params.d_in()) +
        ", dataset has " + std::to_string(data.features.cols()));
  }
  if (ckpt.params.d_out() != static_cast<std::size_t>(data.num_classes)) {
    throw shan::ConfigError(
        "checkpoint expects d_out=" + std::to_string(ckpt.params.d_out()) +
        ", dataset has " + std::to_string(data.num_classes) + " classes");
  }
}

int run_train(const std::string& data_dir, const std::string& config_path,
              std::vector<std::uint64_t> seeds, const std::string& out_dir,
              bool allow_toy) {
  shan::RunConfig rc = config_path.empty() ? shan::RunConfig::defaults()
                                           : shan::RunConfig::from_file(config_path);
  rc.train.validate();
  shan::DatasetBundle data = shan::load_dataset(data_dir, allow_toy);
  if (!data.has_splits) {
    data.splits = shan::make_splits(data.labels, rc.split_ratios, rc.split_seed);
    data.has_splits = true;
  }
  if (seeds.empty()) seeds.push_back(0);
  fs::create_directories(out_dir);

  std::vector<std::string> mp_names;
  for (const shan::MetaPath& mp : data.metapaths) mp_names.push_back(mp.name);

  json per_seed = json::array();
  std::vector<double> micros, macros;
  for (std::uint64_t seed : seeds) {
    shan::TrainConfig cfg = rc.train;
    cfg.seed = seed;
    shan::TrainResult res = shan::train(data, cfg);

    const std::string seed_dir = out_dir + "/seed_" + std::to_string(seed);
    fs::create_directories(seed_dir);
    shan::write_history_csv(seed_dir + "/history.csv", res.history);
    shan::save_checkpoint(seed_dir + "/checkpoint.bin", res.best_params, cfg.model,
                          mp_names);
    json metrics;
    metrics["seed"] = seed;
    metrics["test_micro_f1"] = res.test_micro_f1;
    metrics["test_macro_f1"] = res.test_macro_f1;
    metrics["best_epoch"] = res.best_epoch;
    metrics["best_val_micro_f1"] = res.best_val_micro_f1;
    metrics["epochs_run"] = res.history.size();
    metrics["param_count"] = res.param_count;
    metrics["wall_clock_ms"] = res.wall_clock_ms;
    metrics["mean_firing_rate"] = res.mean_firing_rate;
    metrics["spike_sparsity"] = res.spike_sparsity;
    metrics["beta"] = beta_object(mp_names, res.beta);
    write_text(seed_dir + "/metrics.json", metrics.dump(2) + "\n");

    micros.push_back(res.test_micro_f1);
    macros.push_back(res.test_macro_f1);
    json entry;
    entry["seed"] = seed;
    entry["test_micro_f1"] = res.test_micro_f1;
    entry["test_macro_f1"] = res.test_macro_f1;
    entry["best_epoch"] = res.best_epoch;
    entry["epochs_run"] = res.history.size();
    entry["wall_clock_ms"] = res.wall_clock_ms;
    per_seed.push_back(entry);
    std::fprintf(stderr, "seed %llu: test_micro_f1=%.4f test_macro_f1=%.4f (%zu epochs)\n",
                 static_cast<unsigned long long>(seed), res.test_micro_f1,
                 res.test_macro_f1, res.history.size());
  }

  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto std_of = [&](const std::vector<double>& v, double mu) {
    double s = 0.0;
    for (double x : v) s += (x - mu) * (x - mu);
    return std::sqrt(s / static_cast<double>(v.size()));
  };
  const double mean_micro = mean_of(micros), mean_macro = mean_of(macros);
  json summary;
  summary["num_seeds"] = seeds.size();
  summary["seeds"] = per_seed;
  summary["mean_test_micro_f1"] = mean_micro;
  summary["std_test_micro_f1"] = std_of(micros, mean_micro);
  summary["mean_test_macro_f1"] = mean_macro;
  summary["std_test_macro_f1"] = std_of(macros, mean_macro);
  const std::string text = summary.dump(2) + "\n";
  write_text(out_dir + "/summary.json", text);
  std::cout << text;
  return 0;
}

int run_eval(const std::string& data_dir, const std::string& ckpt_path,
             bool allow_toy) {
  shan::DatasetBundle data = shan::load_dataset(data_dir, allow_toy);
  shan::Checkpoint ckpt = shan::load_checkpoint(ckpt_path);
  check_checkpoint_dims(ckpt, data);
  if (!data.has_splits) {
    throw shan::DataError("dataset has no splits.json; evaluation needs a test split");
  }
  if (data.splits.test.empty()) throw shan::DataError("test split is empty");

  shan::Tape tape(shan::TapeMode::spiking);
  shan::TapedParams tp = shan::stage_params(tape, ckpt.params, ckpt.config.neuron.kind);
  std::mt19937_64 rng(0);  // eval mode draws nothing
  shan::ForwardResult fwd = shan::model_forward(
      tape, tp, data.features, data.adjacencies, ckpt.config, false, rng);
  const std::vector<int> preds = shan::predict(tape.value(fwd.y_hat));
  std::vector<int> p, t;
  for (int id : data.splits.test) {
    p.push_back(preds[id]);
    t.push_back(data.labels[id]);
  }
  const auto [micro, macro] = shan::f1_scores(p, t, data.num_classes);

  json out;
  out["test_micro_f1"] = micro;
  out["test_macro_f1"] = macro;
  out["test_size"] = data.splits.test.size();
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_inspect(const std::string& data_dir, const std::string& ckpt_path,
                bool allow_toy) {
  shan::DatasetBundle data = shan::load_dataset(data_dir, allow_toy);
  shan::Checkpoint ckpt = shan::load_checkpoint(ckpt_path);
  check_checkpoint_dims(ckpt, data);

  shan::Tape tape(shan::TapeMode::spiking);
  shan::TapedParams tp = shan::stage_params(tape, ckpt.params, ckpt.config.neuron.kind);
  std::mt19937_64 rng(0);
  const auto t0 = std::chrono::steady_clock::now();
  shan::ForwardResult fwd = shan::model_forward(
      tape, tp, data.features, data.adjacencies, ckpt.config, false, rng);
  const auto t1 = std::chrono::steady_clock::now();

  const shan::Tensor& beta = tape.value(fwd.beta);
  std::vector<std::string> mp_names;
  for (const shan::MetaPath& mp : data.metapaths) mp_names.push_back(mp.name);
  const shan::Tensor& rate = fwd.trace.firing_rate;
  std::vector<double> per_class(rate.cols(), 0.0);
  for (std::size_t c = 0; c < rate.cols(); ++c) {
    for (std::size_t i = 0; i < rate.rows(); ++i) per_class[c] += rate.at(i, c);
    per_class[c] /= static_cast<double>(rate.rows());
  }

  json out;
  out["beta"] = beta_object(mp_names, beta.data());
  out["param_count"] = shan::parameter_count(ckpt.params.d_in(), ckpt.params.d_hd(),
                                             ckpt.params.d_out(),
                                             ckpt.config.neuron.kind);
  out["per_class_mean_firing_rate"] = per_class;
  out["spike_sparsity"] = fwd.trace.sparsity();
  out["forward_wall_clock_ms"] =
      std::chrono::duration<double, std::milli>(t1 - t0).count();
  std::cout << out.dump(2) << "\n";
  return 0;
}

int run_gen(const std::string& spec_path, const std::string& out_dir) {
  shan::SyntheticSpec spec;
  if (!spec_path.empty()) {
    std::ifstream in(spec_path, std::ios::binary);
    if (!in) throw shan::ConfigError("cannot open spec file: " + spec_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw shan::ConfigError(spec_path + ": " + e.what());
    }
    if (!j.is_object()) throw shan::ConfigError(spec_path + ": spec must be a JSON object");
    for (const auto& [key, value] : j.items()) {
      try {
        if (key == "target_count") {
          spec.target_count = value.get<int>();
        } else if (key == "num_classes") {
          spec.num_classes = value.get<int>();
        } else if (key == "num_metapaths") {
          spec.num_metapaths = value.get<int>();
        } else if (key == "hubs_per_class") {
          spec.hubs_per_class = value.get<int>();
        } else if (key == "p_intra") {
          spec.p_intra = value.get<double>();
        } else if (key == "p_inter") {
          spec.p_inter = value.get<double>();
        } else if (key == "feature_dim") {
          spec.feature_dim = value.get<int>();
        } else if (key == "snr") {
          spec.snr = value.get<double>();
        } else if (key == "seed") {
          spec.seed = value.get<std::uint64_t>();
        } else {
          throw shan::ConfigError(spec_path + ": unknown spec key '" + key + "'");
        }
      } catch (const json::exception& e) {
        throw shan::ConfigError(spec_path + ": key '" + key + "': " + e.what());
      }
    }
  }
  spec.validate();
  shan::DatasetBundle bundle = shan::generate_synthetic(spec);
  shan::write_dataset(bundle, out_dir);

  json out;
  out["out_dir"] = out_dir;
  out["target_count"] = spec.target_count;
  out["num_classes"] = spec.num_classes;
  out["num_metapaths"] = spec.num_metapaths;
  out["seed"] = spec.seed;
  out["same_class_neighbor_fraction"] = shan::same_class_neighbor_fraction(bundle);
  std::cout << out.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta-path heterogeneous graph attention with a spiking classifier head"};
  app.require_subcommand(1);

  std::string data_dir, config_path, out_dir, ckpt_path, spec_path;
  std::vector<std::uint64_t> seeds;
  bool allow_toy = false;

  CLI::App* ctrain = app.add_subcommand("train", "Train one run per seed");
  ctrain->add_option("--data", data_dir, "Dataset directory")->required();
  ctrain->add_option("--config", config_path, "JSON run config");
  ctrain->add_option("--seed", seeds, "Seed (repeatable; default 0)");
  ctrain->add_option("--out", out_dir, "Output directory")->required();
  ctrain->add_flag("--allow-toy", allow_toy, "Accept graphs with |types|+|relations| <= 2");

  CLI::App* ceval = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  ceval->add_option("--data", data_dir, "Dataset directory")->required();
  ceval->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  ceval->add_flag("--allow-toy", allow_toy, "Accept graphs with |types|+|relations| <= 2");

  CLI::App* cinspect = app.add_subcommand("inspect", "Report attention, firing, and size");
  cinspect->add_option("--data", data_dir, "Dataset directory")->required();
  cinspect->add_option("--checkpoint", ckpt_path, "Checkpoint file")->required();
  cinspect->add_flag("--allow-toy", allow_toy, "Accept graphs with |types|+|relations| <= 2");

  CLI::App* cgen = app.add_subcommand("gen-synthetic", "Write a synthetic dataset");
  cgen->add_option("--spec", spec_path, "JSON generator spec");
  cgen->add_option("--out", out_dir, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (ctrain->parsed()) return run_train(data_dir, config_path, seeds, out_dir, allow_toy);
    if (ceval->parsed()) return run_eval(data_dir, ckpt_path, allow_toy);
    if (cinspect->parsed()) return run_inspect(data_dir, ckpt_path, allow_toy);
    if (cgen->parsed()) return run_gen(spec_path, out_dir);
  } catch (const shan::NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const shan::DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const shan::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
