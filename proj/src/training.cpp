#include "shan/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "shan/data_io.hpp"
#include "shan/errors.hpp"
#include "shan/tape.hpp"

namespace shan {

void TrainConfig::validate() const {
  if (!std::isfinite(learning_rate) || learning_rate < 0.0) {
    throw ConfigError("learning_rate must be a finite non-negative real");
  }
  if (!std::isfinite(weight_decay) || weight_decay < 0.0) {
    throw ConfigError("weight_decay must be a finite non-negative real");
  }
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (patience > epochs) throw ConfigError("patience must not exceed epochs");
  if (hidden_dim == 0) throw ConfigError("hidden_dim must be positive");
  if (!(model.dropout_rate >= 0.0 && model.dropout_rate < 1.0)) {
    throw ConfigError("dropout_rate must lie in [0, 1)");
  }
  model.neuron.validate();
}

AdamState AdamState::init(const std::vector<Tensor>& params) {
  AdamState s;
  for (const Tensor& p : params) {
    s.m.push_back(Tensor::zeros(p.shape()));
    s.v.push_back(Tensor::zeros(p.shape()));
  }
  s.t = 0;
  return s;
}

double masked_cross_entropy(const Tensor& y_hat, const Tensor& y_onehot,
                            const std::vector<int>& labeled_ids, double eps) {
  if (y_hat.rank() != 2 || !y_hat.same_shape(y_onehot)) {
    throw ShapeError("masked_cross_entropy: predictions " + y_hat.shape_str() +
                     " vs one-hot labels " + y_onehot.shape_str());
  }
  if (labeled_ids.empty()) throw ConfigError("masked_cross_entropy: labeled set is empty");
  double loss = 0.0;
  for (int i : labeled_ids) {
    if (i < 0 || static_cast<std::size_t>(i) >= y_hat.rows()) {
      throw ConfigError("masked_cross_entropy: labeled id " + std::to_string(i) +
                        " out of range");
    }
    for (std::size_t c = 0; c < y_hat.cols(); ++c) {
      loss -= y_onehot.at(i, c) * std::log(std::max(y_hat.at(i, c), eps));
    }
  }
  return loss;
}

void adam_step(std::vector<Tensor>& params,
               const std::vector<std::string>& names,
               const std::vector<Tensor>& grads, AdamState& state, double lr,
               double beta1, double beta2, double eps, double weight_decay) {
  if (params.size() != grads.size() || params.size() != names.size() ||
      params.size() != state.m.size()) {
    throw ConfigError("adam_step: parameter, gradient, and state counts differ");
  }
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].same_shape(grads[p])) {
      throw ShapeError("adam_step: gradient shape mismatch for " + names[p]);
    }
    if (!grads[p].all_finite()) {
      throw NumericError("non-finite gradient for parameter " + names[p]);
    }
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = params[p];
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = grads[p][i] + weight_decay * theta[i];
      m[i] = beta1 * m[i] + (1.0 - beta1) * g;
      v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

std::vector<int> predict(const Tensor& y_hat) {
  if (y_hat.rank() != 2) {
    throw ShapeError("predict expects [n x classes], got " + y_hat.shape_str());
  }
  std::vector<int> out(y_hat.rows());
  for (std::size_t i = 0; i < y_hat.rows(); ++i) {
    int best = 0;
    for (std::size_t c = 1; c < y_hat.cols(); ++c) {
      if (y_hat.at(i, c) > y_hat.at(i, best)) best = static_cast<int>(c);
    }
    out[i] = best;
  }
  return out;
}

std::pair<double, double> f1_scores(const std::vector<int>& predictions,
                                    const std::vector<int>& truth,
                                    int num_classes) {
  if (predictions.empty()) throw ConfigError("f1_scores: empty input");
  if (predictions.size() != truth.size()) {
    throw ConfigError("f1_scores: prediction and truth lengths differ");
  }
  if (num_classes < 1) throw ConfigError("f1_scores: num_classes must be positive");
  std::vector<long> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i], t = truth[i];
    if (p < 0 || p >= num_classes || t < 0 || t >= num_classes) {
      throw ConfigError("f1_scores: class id out of range at index " + std::to_string(i));
    }
    if (p == t) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  long tp_all = 0, fp_all = 0, fn_all = 0;
  double macro = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    tp_all += tp[c];
    fp_all += fp[c];
    fn_all += fn[c];
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    macro += denom > 0.0 ? 2.0 * static_cast<double>(tp[c]) / denom : 0.0;
  }
  macro /= static_cast<double>(num_classes);
  const double micro_denom = static_cast<double>(2 * tp_all + fp_all + fn_all);
  const double micro =
      micro_denom > 0.0 ? 2.0 * static_cast<double>(tp_all) / micro_denom : 0.0;
  return {micro, macro};
}

namespace {

std::vector<Tensor> pack_params(const ModelParams& p, NeuronKind kind) {
  std::vector<Tensor> out = {p.w1, p.w2, p.b, p.q, p.w3};
  if (kind == NeuronKind::PLIF) out.push_back(p.tau_param);
  return out;
}

void unpack_params(const std::vector<Tensor>& v, NeuronKind kind, ModelParams& p) {
  p.w1 = v[0];
  p.w2 = v[1];
  p.b = v[2];
  p.q = v[3];
  p.w3 = v[4];
  if (kind == NeuronKind::PLIF) p.tau_param = v[5];
}

std::vector<std::string> param_names(NeuronKind kind) {
  std::vector<std::string> names = {"W1", "W2", "b", "q", "W3"};
  if (kind == NeuronKind::PLIF) names.emplace_back("tau_param");
  return names;
}

std::pair<double, double> split_f1(const std::vector<int>& preds,
                                   const std::vector<int>& labels,
                                   const std::vector<int>& ids, int num_classes) {
  std::vector<int> p, t;
  p.reserve(ids.size());
  t.reserve(ids.size());
  for (int id : ids) {
    p.push_back(preds[id]);
    t.push_back(labels[id]);
  }
  return f1_scores(p, t, num_classes);
}

}  // namespace

TrainResult train(const DatasetBundle& data, const TrainConfig& cfg) {
  cfg.validate();
  if (!data.has_splits) throw DataError("dataset has no train/val/test splits");
  if (data.splits.train.empty()) throw DataError("train split is empty");
  if (data.splits.val.empty()) throw DataError("val split is empty");
  if (data.splits.test.empty()) throw DataError("test split is empty");
  if (data.adjacencies.empty()) throw DataError("dataset has no meta-paths");
  data.validate_splits();

  const auto t0 = std::chrono::steady_clock::now();
  const NeuronKind kind = cfg.model.neuron.kind;
  std::mt19937_64 rng(cfg.seed);
  ModelParams params =
      init_params(data.features.cols(), cfg.hidden_dim,
                  static_cast<std::size_t>(data.num_classes), kind,
                  cfg.model.neuron.tau_init, rng);
  const std::vector<std::string> names = param_names(kind);
  std::vector<Tensor> tensors = pack_params(params, kind);
  AdamState adam = AdamState::init(tensors);

  TrainResult res;
  res.param_count = parameter_count(data.features.cols(), cfg.hidden_dim,
                                    static_cast<std::size_t>(data.num_classes), kind);
  double best_val = -1.0;
  ModelParams best_params = params;
  int best_epoch = 0;

  Tape tape(TapeMode::spiking);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    tape.reset();
    TapedParams tp = stage_params(tape, params, kind);
    ForwardResult fwd = model_forward(tape, tp, data.features, data.adjacencies,
                                      cfg.model, /*training=*/true, rng);
    Var loss = tape.masked_nll(fwd.y_hat, data.labels, data.splits.train);
    const double loss_value = tape.value(loss)[0];
    if (!std::isfinite(loss_value)) {
      throw NumericError("training diverged at epoch " + std::to_string(epoch) +
                         ": loss is not finite");
    }
    tape.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(names.size());
    for (const auto& [name, var] : tp.entries()) grads.push_back(tape.grad(var));
    adam_step(tensors, names, grads, adam, cfg.learning_rate, 0.9, 0.999, 1e-8,
              cfg.weight_decay);
    unpack_params(tensors, kind, params);

    tape.reset();
    TapedParams etp = stage_params(tape, params, kind);
    ForwardResult efwd = model_forward(tape, etp, data.features, data.adjacencies,
                                       cfg.model, /*training=*/false, rng);
    // Logged train loss is measured on the updated parameters with dropout
    // disabled, so the history reflects optimization progress rather than
    // per-epoch dropout mask noise.
    Var elogged = tape.masked_nll(efwd.y_hat, data.labels, data.splits.train);
    const double train_loss = tape.value(elogged)[0];
    const std::vector<int> preds = predict(tape.value(efwd.y_hat));
    const auto [val_micro, val_macro] =
        split_f1(preds, data.labels, data.splits.val, data.num_classes);
    res.history.push_back({epoch, train_loss, val_micro, val_macro});

    if (val_micro > best_val) {
      best_val = val_micro;
      best_epoch = epoch;
      best_params = params;
    } else if (epoch - best_epoch >= cfg.patience) {
      break;
    }
  }

  res.best_params = best_params;
  res.best_epoch = best_epoch;
  res.best_val_micro_f1 = best_val;

  tape.reset();
  TapedParams btp = stage_params(tape, best_params, kind);
  ForwardResult bfwd = model_forward(tape, btp, data.features, data.adjacencies,
                                     cfg.model, /*training=*/false, rng);
  const std::vector<int> preds = predict(tape.value(bfwd.y_hat));
  const auto [test_micro, test_macro] =
      split_f1(preds, data.labels, data.splits.test, data.num_classes);
  res.test_micro_f1 = test_micro;
  res.test_macro_f1 = test_macro;
  const Tensor& beta = tape.value(bfwd.beta);
  res.beta.assign(beta.data().begin(), beta.data().end());
  const Tensor& rate = bfwd.trace.firing_rate;
  double rate_sum = 0.0;
  for (std::size_t i = 0; i < rate.size(); ++i) rate_sum += rate[i];
  res.mean_firing_rate = rate.size() ? rate_sum / static_cast<double>(rate.size()) : 0.0;
  res.spike_sparsity = bfwd.trace.sparsity();

  const auto t1 = std::chrono::steady_clock::now();
  res.wall_clock_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
  return res;
}

void write_history_csv(const std::string& path,
                       const std::vector<EpochRecord>& history) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write file: " + path);
  out << "epoch,train_loss,val_micro_f1,val_macro_f1\n";
  char buf[160];
  for (const EpochRecord& r : history) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g\n", r.epoch, r.train_loss,
                  r.val_micro_f1, r.val_macro_f1);
    out << buf;
  }
  if (!out) throw DataError("short write: " + path);
}

}  // namespace shan
