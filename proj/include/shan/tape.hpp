#pragma once

#include <functional>
#include <random>
#include <vector>

#include "shan/hetgraph.hpp"
#include "shan/tensor.hpp"

namespace shan {

// Forward behavior of the spike nonlinearity. In spiking mode the step
// function emits exact {0,1} and backpropagation substitutes the logistic
// surrogate; in smooth_surrogate mode the forward itself is the logistic
// sigma(alpha*x), which makes the whole graph differentiable so gradients
// can be checked against finite differences.
enum class TapeMode { spiking, smooth_surrogate };

// Handle into a Tape.
struct Var {
  int id = -1;
};

// Reverse-mode tape. Nodes are recorded in topological order; backward()
// walks them once in reverse. A tape is single-threaded; distinct tapes may
// run concurrently. A second backward() without reset() is an error.
class Tape {
 public:
  explicit Tape(TapeMode mode = TapeMode::spiking) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  TapeMode mode() const { return mode_; }

  Var input(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return input(std::move(value), false); }

  const Tensor& value(Var v) const;
  const Tensor& grad(Var v) const;  // valid only after backward()

  // --- linear algebra ---
  Var matmul(Var a, Var b);                 // [n x k] * [k x m]
  Var matvec(Var x, Var v);                 // [n x d] * [d] -> [n]
  Var add_rowvec(Var x, Var v);             // x[i][c] + v[c]

  // --- elementwise ---
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var affine(Var x, double scale, double shift);  // scale*x + shift
  Var divide_by(Var x, double divisor);
  Var scale_by(Var x, Var scalar);          // scalar is a 1-element node
  Var reciprocal(Var scalar);
  Var softplus_plus_one(Var scalar);        // 1 + ln(1 + e^x), stays > 1
  Var tanh_eltwise(Var x);
  Var relu(Var x);
  Var elu(Var x);
  Var detach(Var x);                        // forward copy, gradient barrier

  // --- vector / reduction ---
  Var softmax_vec(Var x);                   // rank-1, max-subtracted
  Var sum_all(Var x);
  Var mean_all(Var x);                      // value-sorted sum / count
  Var concat_scalars(const std::vector<Var>& xs);
  Var weighted_sum(const std::vector<Var>& xs, Var weights);

  // --- stochastic / spiking ---
  Var dropout(Var x, double rate, bool training, std::mt19937_64& rng);
  // Theta(x): 1 when x >= 0 else 0 (spiking mode). Backward uses the
  // logistic surrogate sigma'(alpha*x), or alpha*sigma'(alpha*x) when
  // chain_alpha is set. In smooth_surrogate mode the forward is
  // sigma(alpha*x) and backward is its true derivative.
  Var heaviside_spike(Var v_minus_th, double alpha, bool chain_alpha = false);

  // --- graph ---
  // out[i] = sum_{j in N_i} coeff(i,j) * x[j]. Row sums are accumulated in
  // value order, so relabeling nodes permutes the output bitwise.
  // The adjacency must outlive the tape.
  Var aggregate_neighbors(const MetaPathAdjacency& adj, Var x);

  // --- loss ---
  // -sum over labeled ids of ln(max(y_hat[i][label[i]], eps)). The clamp
  // keeps the value finite at zero firing rates; its gradient is
  // -1/max(y_hat, eps) so the push direction survives the clamp.
  Var masked_nll(Var y_hat, const std::vector<int>& labels,
                 const std::vector<int>& labeled_ids, double eps = 1e-8);
  Var row_normalize(Var y_hat, double eps = 1e-8);  // optional readout normalization

  void backward(Var loss);
  void reset();
  std::size_t node_count() const { return nodes_.size(); }
  bool backward_ran() const { return backward_ran_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void()> backprop;  // null for leaves
  };

  Var record(Tensor value, bool requires_grad, std::function<void()> backprop);
  Node& node(Var v);
  const Node& node(Var v) const;
  Tensor& grad_buf(Var v) { return node(v).grad; }

  TapeMode mode_;
  std::vector<Node> nodes_;
  bool backward_ran_ = false;
};

// Central finite differences (f(p+eps*e) - f(p-eps*e)) / (2*eps) for every
// coordinate of every parameter tensor, compared against the supplied
// analytic gradients. Returns max over coordinates of |fd - g| / max(1, |g|).
// f must be deterministic. Throws NumericError when f is non-finite.
double finite_difference_check(
    const std::function<double(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& params,
    const std::vector<Tensor>& analytic_grads,
    double epsilon);

double logistic(double x);

}  // namespace shan
