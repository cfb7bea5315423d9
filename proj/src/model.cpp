#include "shan/model.hpp"

#include <cmath>

#include "shan/errors.hpp"

namespace shan {

std::string to_string(NeuronKind k) {
  switch (k) {
    case NeuronKind::IF: return "IF";
    case NeuronKind::LIF: return "LIF";
    case NeuronKind::PLIF: return "PLIF";
  }
  throw ConfigError("unknown neuron kind");
}

std::string to_string(ResetMode m) {
  return m == ResetMode::subtract ? "subtract" : "to_constant";
}

std::string to_string(LeakTarget l) {
  return l == LeakTarget::threshold ? "threshold" : "zero";
}

std::string to_string(Activation a) {
  return a == Activation::relu ? "relu" : "elu";
}

NeuronKind neuron_kind_from_string(const std::string& s) {
  if (s == "IF") return NeuronKind::IF;
  if (s == "LIF") return NeuronKind::LIF;
  if (s == "PLIF") return NeuronKind::PLIF;
  throw ConfigError("unknown neuron kind '" + s + "' (expected IF, LIF, or PLIF)");
}

ResetMode reset_mode_from_string(const std::string& s) {
  if (s == "subtract") return ResetMode::subtract;
  if (s == "to_constant") return ResetMode::to_constant;
  throw ConfigError("unknown reset mode '" + s + "' (expected subtract or to_constant)");
}

LeakTarget leak_target_from_string(const std::string& s) {
  if (s == "threshold") return LeakTarget::threshold;
  if (s == "zero") return LeakTarget::zero;
  throw ConfigError("unknown leak target '" + s + "' (expected threshold or zero)");
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "elu") return Activation::elu;
  throw ConfigError("unknown activation '" + s + "' (expected relu or elu)");
}

void NeuronConfig::validate() const {
  if (!std::isfinite(v_th) || v_th <= 0.0) {
    throw ConfigError("v_th must be a positive finite real");
  }
  if (time_steps < 1) throw ConfigError("time_steps must be >= 1");
  if (!std::isfinite(alpha) || alpha <= 0.0) {
    throw ConfigError("surrogate smoothing alpha must be > 0");
  }
  if (kind != NeuronKind::IF && (!std::isfinite(tau_init) || tau_init <= 1.0)) {
    throw ConfigError("tau_init must be > 1 for leaky neurons");
  }
  if (reset_mode == ResetMode::to_constant) {
    if (!std::isfinite(v_reset) || v_reset >= v_th) {
      throw ConfigError("v_reset must be finite and below v_th");
    }
  }
}

double plif_tau(double tau_param) {
  const double sp = std::max(tau_param, 0.0) + std::log1p(std::exp(-std::abs(tau_param)));
  return 1.0 + sp;
}

double plif_param_for_tau(double tau_m) {
  if (!(tau_m > 1.0)) throw ConfigError("tau_m must be > 1");
  return std::log(std::expm1(tau_m - 1.0));
}

ModelParams init_params(std::size_t d_in, std::size_t d_hd, std::size_t d_out,
                        NeuronKind kind, double tau_init, std::mt19937_64& rng) {
  if (d_in == 0 || d_hd == 0 || d_out == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (kind != NeuronKind::IF && !(tau_init > 1.0)) {
    throw ConfigError("tau_init must be > 1 for leaky neurons");
  }
  auto fill_uniform = [&rng](Tensor& t, double limit) {
    std::uniform_real_distribution<double> uni(-limit, limit);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = uni(rng);
  };
  const auto glorot = [](std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  };

  ModelParams p;
  p.w1 = Tensor({d_in, d_hd});
  fill_uniform(p.w1, glorot(d_in, d_hd));
  p.w2 = Tensor({d_hd, d_hd});
  fill_uniform(p.w2, glorot(d_hd, d_hd));
  p.b = Tensor({d_hd});
  fill_uniform(p.b, 0.01);
  p.q = Tensor({d_hd});
  fill_uniform(p.q, 0.01);
  p.w3 = Tensor({d_hd, d_out});
  fill_uniform(p.w3, glorot(d_hd, d_out));
  p.tau_param = Tensor::scalar(kind == NeuronKind::IF ? 0.0
                                                      : plif_param_for_tau(tau_init));
  return p;
}

std::size_t parameter_count(std::size_t d_in, std::size_t d_hd,
                            std::size_t d_out, NeuronKind kind) {
  if (d_in == 0 || d_hd == 0 || d_out == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  return d_in * d_hd + d_hd * d_hd + d_hd + d_hd + d_hd * d_out +
         (kind == NeuronKind::PLIF ? 1 : 0);
}

std::vector<std::pair<std::string, Var>> TapedParams::entries() const {
  std::vector<std::pair<std::string, Var>> out = {
      {"W1", w1}, {"W2", w2}, {"b", b}, {"q", q}, {"W3", w3}};
  if (tau_param) out.emplace_back("tau_param", *tau_param);
  return out;
}

TapedParams stage_params(Tape& tape, const ModelParams& p, NeuronKind kind) {
  TapedParams tp;
  tp.w1 = tape.input(p.w1, true);
  tp.w2 = tape.input(p.w2, true);
  tp.b = tape.input(p.b, true);
  tp.q = tape.input(p.q, true);
  tp.w3 = tape.input(p.w3, true);
  if (kind == NeuronKind::PLIF) tp.tau_param = tape.input(p.tau_param, true);
  return tp;
}

double SpikeTrace::sparsity() const {
  std::size_t zeros = 0, total = 0;
  for (const Tensor& s : spikes) {
    total += s.size();
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] == 0.0) ++zeros;
  }
  if (total == 0) return 0.0;
  return static_cast<double>(zeros) / static_cast<double>(total);
}

std::pair<Tensor, Tensor> neuron_step(const Tensor& v_prev,
                                      const Tensor& current,
                                      const NeuronConfig& cfg, double tau_m) {
  if (!v_prev.same_shape(current)) {
    throw ShapeError("neuron_step shape mismatch: " + v_prev.shape_str() +
                     " vs " + current.shape_str());
  }
  if (cfg.kind != NeuronKind::IF && !(tau_m > 1.0)) {
    throw ConfigError("tau_m must be > 1 for leaky neurons");
  }
  const double leak = cfg.leak_level();
  Tensor v = v_prev;
  Tensor s(v_prev.shape());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double vi = cfg.kind == NeuronKind::IF
                    ? v_prev[i] + current[i]
                    : v_prev[i] + (current[i] - (v_prev[i] - leak)) * (1.0 / tau_m);
    const double fired = vi >= cfg.v_th ? 1.0 : 0.0;
    if (fired == 1.0) {
      vi = cfg.reset_mode == ResetMode::subtract ? vi - cfg.v_th : cfg.v_reset;
    }
    v[i] = vi;
    s[i] = fired;
  }
  return {std::move(v), std::move(s)};
}

std::vector<Var> shared_graph_conv(Tape& tape, Var features,
                                   const std::vector<MetaPathAdjacency>& adjs,
                                   Var w1, Activation activation) {
  const std::size_t n = tape.value(features).rows();
  Var proj = tape.matmul(features, w1);
  std::vector<Var> out;
  out.reserve(adjs.size());
  for (const MetaPathAdjacency& adj : adjs) {
    if (adj.node_count() != n) {
      throw ShapeError("adjacency over " + std::to_string(adj.node_count()) +
                       " nodes does not match " + std::to_string(n) +
                       " feature rows");
    }
    Var agg = tape.aggregate_neighbors(adj, proj);
    out.push_back(activation == Activation::relu ? tape.relu(agg)
                                                 : tape.elu(agg));
  }
  return out;
}

AttentionResult semantic_attention(Tape& tape, const std::vector<Var>& h_list,
                                   Var w2, Var b, Var q) {
  if (h_list.empty()) throw ConfigError("semantic_attention needs at least one embedding");
  std::vector<Var> scores;
  scores.reserve(h_list.size());
  for (Var h : h_list) {
    Var proj = tape.add_rowvec(tape.matmul(h, w2), b);
    Var per_node = tape.matvec(tape.tanh_eltwise(proj), q);
    scores.push_back(tape.mean_all(per_node));
  }
  AttentionResult res;
  res.beta = tape.softmax_vec(tape.concat_scalars(scores));
  res.fused = tape.weighted_sum(h_list, res.beta);
  return res;
}

HeadResult spiking_head(Tape& tape, Var fused, Var w3,
                        std::optional<Var> tau_param, const NeuronConfig& cfg,
                        double dropout_rate, bool training,
                        std::mt19937_64& rng) {
  cfg.validate();
  if (cfg.kind == NeuronKind::PLIF && !tau_param) {
    throw ConfigError("PLIF head needs a staged tau_param");
  }

  // The input current is computed once and injected at every step.
  Var current = tape.dropout(tape.matmul(fused, w3), dropout_rate, training, rng);
  const Tensor& cur = tape.value(current);
  const std::size_t n = cur.rows(), d_out = cur.cols();

  Var inv_tau;
  if (cfg.kind == NeuronKind::PLIF) {
    inv_tau = tape.reciprocal(tape.softplus_plus_one(*tau_param));
  } else if (cfg.kind == NeuronKind::LIF) {
    inv_tau = tape.constant(Tensor::scalar(1.0 / cfg.tau_init));
  }
  const double leak = cfg.leak_level();

  HeadResult res;
  Var v = tape.constant(Tensor::zeros({n, d_out}));
  Var acc;
  for (int t = 0; t < cfg.time_steps; ++t) {
    Var v_pre;
    if (cfg.kind == NeuronKind::IF) {
      v_pre = tape.add(v, current);
    } else {
      Var drift = tape.sub(current, tape.affine(v, 1.0, -leak));
      v_pre = tape.add(v, tape.scale_by(drift, inv_tau));
    }
    Var spike = tape.heaviside_spike(tape.affine(v_pre, 1.0, -cfg.v_th),
                                     cfg.alpha, cfg.surrogate_chain_alpha);
    Var spike_reset = cfg.detach_reset ? tape.detach(spike) : spike;
    if (cfg.reset_mode == ResetMode::subtract) {
      v = tape.sub(v_pre, tape.affine(spike_reset, cfg.v_th, 0.0));
    } else {
      Var kept = tape.sub(v_pre, tape.mul(spike_reset, v_pre));
      v = tape.add(kept, tape.affine(spike_reset, cfg.v_reset, 0.0));
    }
    res.trace.spikes.push_back(tape.value(spike));
    res.trace.membrane_pre.push_back(tape.value(v_pre));
    res.trace.membrane.push_back(tape.value(v));
    acc = t == 0 ? spike : tape.add(acc, spike);
  }
  res.y_hat = tape.divide_by(acc, static_cast<double>(cfg.time_steps));
  res.trace.firing_rate = tape.value(res.y_hat);
  return res;
}

ForwardResult model_forward(Tape& tape, const TapedParams& params,
                            const Tensor& features,
                            const std::vector<MetaPathAdjacency>& adjs,
                            const ModelConfig& cfg, bool training,
                            std::mt19937_64& rng) {
  if (adjs.empty()) throw ConfigError("model_forward needs at least one meta-path adjacency");
  Var feats = tape.constant(features);
  std::vector<Var> h_list =
      shared_graph_conv(tape, feats, adjs, params.w1, cfg.activation);
  AttentionResult att = semantic_attention(tape, h_list, params.w2, params.b, params.q);
  HeadResult head = spiking_head(tape, att.fused, params.w3, params.tau_param,
                                 cfg.neuron, cfg.dropout_rate, training, rng);

  ForwardResult res;
  res.beta = att.beta;
  res.fused = att.fused;
  res.trace = std::move(head.trace);
  res.y_hat = cfg.normalize_readout ? tape.row_normalize(head.y_hat) : head.y_hat;
  return res;
}

}  // namespace shan
