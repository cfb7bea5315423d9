#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "shan/model.hpp"
#include "shan/tensor.hpp"

namespace shan {

struct DatasetBundle;

struct TrainConfig {
  double learning_rate = 0.005;
  double weight_decay = 0.001;
  int epochs = 200;
  int patience = 100;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 10;  // sized for the bundled desk-scale datasets
  ModelConfig model;  // neuron dynamics, activation, dropout, readout flag

  void validate() const;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long t = 0;

  static AdamState init(const std::vector<Tensor>& params);
};

// Plain (tape-free) evaluation of the semi-supervised loss, usable as an
// oracle: L = -sum over labeled nodes of y_onehot . ln(max(y_hat, eps)).
double masked_cross_entropy(const Tensor& y_hat, const Tensor& y_onehot,
                            const std::vector<int>& labeled_ids,
                            double eps = 1e-8);

// One bias-corrected Adam update in place. Weight decay is added to the
// gradients as lambda * theta. Throws a numeric error naming the parameter
// on any non-finite gradient.
void adam_step(std::vector<Tensor>& params,
               const std::vector<std::string>& names,
               const std::vector<Tensor>& grads, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
               double weight_decay = 0.0);

std::vector<int> predict(const Tensor& y_hat);

// (micro_f1, macro_f1) from pooled counts / unweighted per-class mean.
// A class absent from both predictions and truth contributes 0 to macro.
std::pair<double, double> f1_scores(const std::vector<int>& predictions,
                                    const std::vector<int>& truth,
                                    int num_classes);

struct EpochRecord {
  int epoch;
  // Loss over the train split under the epoch's updated parameters with
  // dropout disabled, so the logged curve is deterministic per seed.
  double train_loss;
  double val_micro_f1;
  double val_macro_f1;
};

struct TrainResult {
  ModelParams best_params;
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double best_val_micro_f1 = 0.0;
  double test_micro_f1 = 0.0;
  double test_macro_f1 = 0.0;
  std::vector<double> beta;  // per meta-path, from the final eval forward
  double mean_firing_rate = 0.0;
  double spike_sparsity = 0.0;
  std::size_t param_count = 0;
  double wall_clock_ms = 0.0;
};

// Full training loop: per epoch a training-mode forward, loss on the train
// ids, backward, Adam update, then a validation pass. Keeps the parameters
// with the best validation micro-F1 (ties to the earlier epoch), stops once
// `patience` epochs pass without improvement, and reports test metrics with
// the best parameters.
TrainResult train(const DatasetBundle& data, const TrainConfig& cfg);

void write_history_csv(const std::string& path,
                       const std::vector<EpochRecord>& history);

}  // namespace shan
