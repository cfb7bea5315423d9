#pragma once

#include <cstddef>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "shan/hetgraph.hpp"
#include "shan/tape.hpp"
#include "shan/tensor.hpp"

namespace shan {

enum class NeuronKind { IF, LIF, PLIF };
enum class ResetMode { subtract, to_constant };
enum class LeakTarget { threshold, zero };
enum class Activation { relu, elu };

std::string to_string(NeuronKind k);
std::string to_string(ResetMode m);
std::string to_string(LeakTarget l);
std::string to_string(Activation a);
NeuronKind neuron_kind_from_string(const std::string& s);
ResetMode reset_mode_from_string(const std::string& s);
LeakTarget leak_target_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);

struct NeuronConfig {
  NeuronKind kind = NeuronKind::PLIF;
  double v_th = 1.0;
  ResetMode reset_mode = ResetMode::subtract;
  double v_reset = 0.0;
  LeakTarget leak_target = LeakTarget::threshold;
  double alpha = 2.0;     // surrogate smoothing factor
  double tau_init = 2.0;  // membrane time constant (initial value for PLIF)
  int time_steps = 8;
  bool surrogate_chain_alpha = false;
  bool detach_reset = false;

  void validate() const;
  double leak_level() const {
    return leak_target == LeakTarget::threshold ? v_th : 0.0;
  }
};

// The five trainable tensors plus the reparameterized time constant.
// Declaration order W1, W2, b, q, W3, tau_param is the order used for
// initialization draws, optimizer slots, and checkpoint payloads.
struct ModelParams {
  Tensor w1;         // d_in x d_hd
  Tensor w2;         // d_hd x d_hd
  Tensor b;          // d_hd
  Tensor q;          // d_hd
  Tensor w3;         // d_hd x d_out
  Tensor tau_param;  // 1 element; trainable only for PLIF

  std::size_t d_in() const { return w1.rows(); }
  std::size_t d_hd() const { return w1.cols(); }
  std::size_t d_out() const { return w3.cols(); }
};

ModelParams init_params(std::size_t d_in, std::size_t d_hd, std::size_t d_out,
                        NeuronKind kind, double tau_init, std::mt19937_64& rng);

// tau_param value p such that 1 + ln(1 + e^p) equals tau_m.
double plif_param_for_tau(double tau_m);
// The forward map: tau_m = 1 + ln(1 + e^p), always > 1.
double plif_tau(double tau_param);

std::size_t parameter_count(std::size_t d_in, std::size_t d_hd,
                            std::size_t d_out, NeuronKind kind);

struct ModelConfig {
  NeuronConfig neuron;
  Activation activation = Activation::relu;
  double dropout_rate = 0.5;
  bool normalize_readout = false;
};

// Parameters staged on a tape as trainable leaves. tau_param is staged only
// for PLIF; entries() lists (name, var) in declaration order.
struct TapedParams {
  Var w1, w2, b, q, w3;
  std::optional<Var> tau_param;

  std::vector<std::pair<std::string, Var>> entries() const;
};

TapedParams stage_params(Tape& tape, const ModelParams& p, NeuronKind kind);

// Binary spike outputs and membrane history of one forward pass.
// membrane_pre holds the potential right after integration, membrane the
// post-reset value recorded for the same step. In smooth mode the "spikes"
// are the sigmoid relaxation and none of the binary invariants apply.
struct SpikeTrace {
  std::vector<Tensor> spikes;
  std::vector<Tensor> membrane_pre;
  std::vector<Tensor> membrane;
  Tensor firing_rate;  // n x d_out, mean of spikes over time

  double sparsity() const;  // fraction of zero spike entries
};

// One discrete update: integrate, fire, reset. IF adds the raw current;
// LIF/PLIF relax toward the leak level with time constant tau_m:
//   v = v_prev + (current - (v_prev - L)) * (1.0 / tau_m)
// Tests mirror this expression verbatim; keep the arithmetic shape intact.
std::pair<Tensor, Tensor> neuron_step(const Tensor& v_prev,
                                      const Tensor& current,
                                      const NeuronConfig& cfg, double tau_m);

// One embedding per meta-path: the feature projection X*W1 is computed once
// and shared, then aggregated through each adjacency and activated.
std::vector<Var> shared_graph_conv(Tape& tape, Var features,
                                   const std::vector<MetaPathAdjacency>& adjs,
                                   Var w1, Activation activation);

// Per-path importance scores (mean over nodes of q . tanh(h W2 + b)),
// softmax-normalized into beta; fused output is the beta-weighted sum.
struct AttentionResult {
  Var beta;   // P
  Var fused;  // n x d_hd
};
AttentionResult semantic_attention(Tape& tape, const std::vector<Var>& h_list,
                                   Var w2, Var b, Var q);

// Injects the static current dropout(H*W3) for time_steps steps and averages
// the spikes. tau_param must be staged for PLIF so the time constant trains.
struct HeadResult {
  Var y_hat;  // n x d_out
  SpikeTrace trace;
};
HeadResult spiking_head(Tape& tape, Var fused, Var w3,
                        std::optional<Var> tau_param, const NeuronConfig& cfg,
                        double dropout_rate, bool training,
                        std::mt19937_64& rng);

struct ForwardResult {
  Var y_hat;
  Var beta;
  Var fused;
  SpikeTrace trace;
};

ForwardResult model_forward(Tape& tape, const TapedParams& params,
                            const Tensor& features,
                            const std::vector<MetaPathAdjacency>& adjs,
                            const ModelConfig& cfg, bool training,
                            std::mt19937_64& rng);

}  // namespace shan
