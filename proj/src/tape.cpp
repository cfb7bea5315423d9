#include "shan/tape.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "shan/errors.hpp"

namespace shan {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Var Tape::input(Tensor value, bool requires_grad) {
  return record(std::move(value), requires_grad, nullptr);
}

Var Tape::record(Tensor value, bool requires_grad, std::function<void()> backprop) {
  Node n;
  n.grad = Tensor::zeros(value.shape());
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Tape::Node& Tape::node(Var v) {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ConfigError("invalid tape variable");
  }
  return nodes_[v.id];
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ConfigError("invalid tape variable");
  }
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

const Tensor& Tape::grad(Var v) const {
  if (!backward_ran_) throw ConfigError("grad() requested before backward()");
  return node(v).grad;
}

Var Tape::matmul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& w = value(b);
  if (x.rank() != 2 || w.rank() != 2 || x.cols() != w.rows()) {
    throw ShapeError("matmul shape mismatch: " + x.shape_str() + " * " + w.shape_str());
  }
  const std::size_t n = x.rows(), k = x.cols(), m = w.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x.at(i, p);
      if (xv == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out.at(i, j) += xv * w.at(p, j);
    }
  }
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, a, b, outv, n, k, m] {
      const Tensor& g = nodes_[outv.id].grad;
      const Tensor& x = nodes_[a.id].value;
      const Tensor& w = nodes_[b.id].value;
      if (nodes_[a.id].requires_grad) {
        Tensor& ga = nodes_[a.id].grad;  // g * w^T
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double gv = g.at(i, j);
            if (gv == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) ga.at(i, p) += gv * w.at(p, j);
          }
      }
      if (nodes_[b.id].requires_grad) {
        Tensor& gb = nodes_[b.id].grad;  // x^T * g
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double xv = x.at(i, p);
            if (xv == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) gb.at(p, j) += xv * g.at(i, j);
          }
      }
    };
  }
  return outv;
}

Var Tape::matvec(Var x, Var v) {
  const Tensor& xm = value(x);
  const Tensor& vv = value(v);
  if (xm.rank() != 2 || vv.rank() != 1 || xm.cols() != vv.size()) {
    throw ShapeError("matvec shape mismatch: " + xm.shape_str() + " * " + vv.shape_str());
  }
  const std::size_t n = xm.rows(), d = xm.cols();
  Tensor out({n});
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += xm.at(i, c) * vv[c];
    out[i] = acc;
  }
  const bool rg = node(x).requires_grad || node(v).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, x, v, outv, n, d] {
      const Tensor& g = nodes_[outv.id].grad;
      const Tensor& xm = nodes_[x.id].value;
      const Tensor& vv = nodes_[v.id].value;
      if (nodes_[x.id].requires_grad) {
        Tensor& gx = nodes_[x.id].grad;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < d; ++c) gx.at(i, c) += g[i] * vv[c];
      }
      if (nodes_[v.id].requires_grad) {
        Tensor& gv = nodes_[v.id].grad;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < d; ++c) gv[c] += g[i] * xm.at(i, c);
      }
    };
  }
  return outv;
}

Var Tape::add_rowvec(Var x, Var v) {
  const Tensor& xm = value(x);
  const Tensor& vv = value(v);
  if (xm.rank() != 2 || vv.rank() != 1 || xm.cols() != vv.size()) {
    throw ShapeError("add_rowvec shape mismatch: " + xm.shape_str() + " + " + vv.shape_str());
  }
  const std::size_t n = xm.rows(), d = xm.cols();
  Tensor out = xm;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) out.at(i, c) += vv[c];
  const bool rg = node(x).requires_grad || node(v).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, x, v, outv, n, d] {
      const Tensor& g = nodes_[outv.id].grad;
      if (nodes_[x.id].requires_grad) {
        Tensor& gx = nodes_[x.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (nodes_[v.id].requires_grad) {
        Tensor& gv = nodes_[v.id].grad;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < d; ++c) gv[c] += g.at(i, c);
      }
    };
  }
  return outv;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + " shape mismatch: " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

}  // namespace

Var Tape::add(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  check_same_shape(x, y, "add");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, a, b, outv] {
      const Tensor& g = nodes_[outv.id].grad;
      if (nodes_[a.id].requires_grad) {
        Tensor& ga = nodes_[a.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (nodes_[b.id].requires_grad) {
        Tensor& gb = nodes_[b.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    };
  }
  return outv;
}

Var Tape::sub(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  check_same_shape(x, y, "sub");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, a, b, outv] {
      const Tensor& g = nodes_[outv.id].grad;
      if (nodes_[a.id].requires_grad) {
        Tensor& ga = nodes_[a.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (nodes_[b.id].requires_grad) {
        Tensor& gb = nodes_[b.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    };
  }
  return outv;
}

Var Tape::mul(Var a, Var b) {
  const Tensor& x = value(a);
  const Tensor& y = value(b);
  check_same_shape(x, y, "mul");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  const bool rg = node(a).requires_grad || node(b).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, a, b, outv] {
      const Tensor& g = nodes_[outv.id].grad;
      const Tensor& x = nodes_[a.id].value;
      const Tensor& y = nodes_[b.id].value;
      if (nodes_[a.id].requires_grad) {
        Tensor& ga = nodes_[a.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
      }
      if (nodes_[b.id].requires_grad) {
        Tensor& gb = nodes_[b.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
      }
    };
  }
  return outv;
}

Var Tape::affine(Var x, double scale, double shift) {
  Tensor out = value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * out[i] + shift;
  const bool rg = node(x).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, x, outv, scale] {
      const Tensor& g = nodes_[outv.id].grad;
      Tensor& gx = nodes_[x.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += scale * g[i];
    };
  }
  return outv;
}

Var Tape::divide_by(Var x, double divisor) {
  if (divisor == 0.0) throw ConfigError("divide_by zero divisor");
  Tensor out = value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= divisor;
  const bool rg = node(x).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, x, outv, divisor] {
      const Tensor& g = nodes_[outv.id].grad;
      Tensor& gx = nodes_[x.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / divisor;
    };
  }
  return outv;
}

Var Tape::scale_by(Var x, Var scalar) {
  const Tensor& s = value(scalar);
  if (s.size() != 1) throw ShapeError("scale_by expects a 1-element scalar node");
  const double sv = s[0];
  Tensor out = value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sv;
  const bool rg = node(x).requires_grad || node(scalar).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, x, scalar, outv, sv] {
      const Tensor& g = nodes_[outv.id].grad;
      if (nodes_[x.id].requires_grad) {
        Tensor& gx = nodes_[x.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += sv * g[i];
      }
      if (nodes_[scalar.id].requires_grad) {
        const Tensor& xv = nodes_[x.id].value;
        double acc = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
        nodes_[scalar.id].grad[0] += acc;
      }
    };
  }
  return outv;
}

Var Tape::reciprocal(Var scalar) {
  const Tensor& s = value(scalar);
  if (s.size() != 1) throw ShapeError("reciprocal expects a 1-element scalar node");
  Tensor out = Tensor::scalar(1.0 / s[0]);
  const bool rg = node(scalar).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, scalar, outv] {
      const double sv = nodes_[scalar.id].value[0];
      nodes_[scalar.id].grad[0] -= nodes_[outv.id].grad[0] / (sv * sv);
    };
  }
  return outv;
}

Var Tape::softplus_plus_one(Var scalar) {
  const Tensor& s = value(scalar);
  if (s.size() != 1) throw ShapeError("softplus_plus_one expects a 1-element scalar node");
  const double p = s[0];
  // Stable softplus: ln(1+e^p) = max(p,0) + ln(1+e^{-|p|}).
  const double sp = std::max(p, 0.0) + std::log1p(std::exp(-std::abs(p)));
  const bool rg = node(scalar).requires_grad;
  Var outv = record(Tensor::scalar(1.0 + sp), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, scalar, outv, p] {
      nodes_[scalar.id].grad[0] += nodes_[outv.id].grad[0] * logistic(p);
    };
  }
  return outv;
}

Var Tape::tanh_eltwise(Var x) {
  Tensor out = value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  const bool rg = node(x).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, x, outv] {
      const Tensor& g = nodes_[outv.id].grad;
      const Tensor& y = nodes_[outv.id].value;
      Tensor& gx = nodes_[x.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
    };
  }
  return outv;
}

Var Tape::relu(Var x) {
  Tensor out = value(x);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0.0 ? out[i] : 0.0;
  const bool rg = node(x).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, x, outv] {
      const Tensor& g = nodes_[outv.id].grad;
      const Tensor& xv = nodes_[x.id].value;
      Tensor& gx = nodes_[x.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        if (xv[i] > 0.0) gx[i] += g[i];
    };
  }
  return outv;
}

Var Tape::elu(Var x) {
  Tensor out = value(x);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = out[i] > 0.0 ? out[i] : std::expm1(out[i]);
  const bool rg = node(x).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, x, outv] {
      const Tensor& g = nodes_[outv.id].grad;
      const Tensor& xv = nodes_[x.id].value;
      Tensor& gx = nodes_[x.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i] * (xv[i] > 0.0 ? 1.0 : std::exp(xv[i]));
    };
  }
  return outv;
}

Var Tape::detach(Var x) {
  return record(value(x), false, nullptr);
}

Var Tape::softmax_vec(Var x) {
  const Tensor& v = value(x);
  if (v.rank() != 1) throw ShapeError("softmax expects a rank-1 tensor, got " + v.shape_str());
  if (!v.all_finite()) throw NumericError("softmax input is not finite");
  double mx = v[0];
  for (std::size_t i = 1; i < v.size(); ++i) mx = std::max(mx, v[i]);
  Tensor out({v.size()});
  double denom = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    denom += out[i];
  }
  for (std::size_t i = 0; i < v.size(); ++i) out[i] /= denom;
  const bool rg = node(x).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, x, outv] {
      const Tensor& g = nodes_[outv.id].grad;
      const Tensor& y = nodes_[outv.id].value;
      Tensor& gx = nodes_[x.id].grad;
      double dot = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * y[i];
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += y[i] * (g[i] - dot);
    };
  }
  return outv;
}

Var Tape::sum_all(Var x) {
  const Tensor& v = value(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += v[i];
  const bool rg = node(x).requires_grad;
  Var outv = record(Tensor::scalar(acc), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, x, outv] {
      const double g = nodes_[outv.id].grad[0];
      Tensor& gx = nodes_[x.id].grad;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    };
  }
  return outv;
}

Var Tape::mean_all(Var x) {
  const Tensor& v = value(x);
  std::vector<double> scratch(v.data());
  const double total = stable_sum(scratch);
  const double n = static_cast<double>(v.size());
  const bool rg = node(x).requires_grad;
  Var outv = record(Tensor::scalar(total / n), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, x, outv, n] {
      const double g = nodes_[outv.id].grad[0] / n;
      Tensor& gx = nodes_[x.id].grad;
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    };
  }
  return outv;
}

Var Tape::concat_scalars(const std::vector<Var>& xs) {
  if (xs.empty()) throw ConfigError("concat_scalars needs at least one input");
  Tensor out({xs.size()});
  bool rg = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor& v = value(xs[i]);
    if (v.size() != 1) throw ShapeError("concat_scalars expects 1-element inputs");
    out[i] = v[0];
    rg = rg || node(xs[i]).requires_grad;
  }
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, xs, outv] {
      const Tensor& g = nodes_[outv.id].grad;
      for (std::size_t i = 0; i < xs.size(); ++i)
        if (nodes_[xs[i].id].requires_grad) nodes_[xs[i].id].grad[0] += g[i];
    };
  }
  return outv;
}

Var Tape::weighted_sum(const std::vector<Var>& xs, Var weights) {
  if (xs.empty()) throw ConfigError("weighted_sum needs at least one input");
  const Tensor& w = value(weights);
  if (w.rank() != 1 || w.size() != xs.size()) {
    throw ShapeError("weighted_sum expects one weight per tensor");
  }
  Tensor out = Tensor::zeros(value(xs[0]).shape());
  bool rg = node(weights).requires_grad;
  for (std::size_t p = 0; p < xs.size(); ++p) {
    const Tensor& xp = value(xs[p]);
    check_same_shape(out, xp, "weighted_sum");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[p] * xp[i];
    rg = rg || node(xs[p]).requires_grad;
  }
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, xs, weights, outv] {
      const Tensor& g = nodes_[outv.id].grad;
      const Tensor& w = nodes_[weights.id].value;
      for (std::size_t p = 0; p < xs.size(); ++p) {
        if (nodes_[xs[p].id].requires_grad) {
          Tensor& gx = nodes_[xs[p].id].grad;
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += w[p] * g[i];
        }
        if (nodes_[weights.id].requires_grad) {
          const Tensor& xp = nodes_[xs[p].id].value;
          double acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xp[i];
          nodes_[weights.id].grad[p] += acc;
        }
      }
    };
  }
  return outv;
}

Var Tape::dropout(Var x, double rate, bool training, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
  const Tensor& v = value(x);
  if (!training || rate == 0.0) {
    const bool rg = node(x).requires_grad;
    Var outv = record(v, rg, nullptr);
    if (rg) {
      node(outv).backprop = [this, x, outv] {
        const Tensor& g = nodes_[outv.id].grad;
        Tensor& gx = nodes_[x.id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      };
    }
    return outv;
  }
  // Inverted dropout: survivors scaled by 1/(1-rate); mask kept for backward.
  const double keep_scale = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(v.size());
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Tensor out = v;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double m = uni(rng) < rate ? 0.0 : keep_scale;
    (*mask)[i] = m;
    out[i] *= m;
  }
  const bool rg = node(x).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, x, outv, mask] {
      const Tensor& g = nodes_[outv.id].grad;
      Tensor& gx = nodes_[x.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
    };
  }
  return outv;
}

Var Tape::heaviside_spike(Var v_minus_th, double alpha, bool chain_alpha) {
  if (alpha <= 0.0) throw ConfigError("surrogate smoothing alpha must be > 0");
  const Tensor& v = value(v_minus_th);
  Tensor out = v;
  if (mode_ == TapeMode::spiking) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] >= 0.0 ? 1.0 : 0.0;
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = logistic(alpha * out[i]);
  }
  const bool rg = node(v_minus_th).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    // Spiking mode: surrogate sigma'(alpha*x), optionally with the chain-rule
    // alpha factor. Smooth mode: the true derivative alpha*sigma'(alpha*x),
    // so finite differences of the smooth forward agree with backward.
    const double factor =
        (mode_ == TapeMode::smooth_surrogate || chain_alpha) ? alpha : 1.0;
    node(outv).backprop = [this, v_minus_th, outv, alpha, factor] {
      const Tensor& g = nodes_[outv.id].grad;
      const Tensor& xv = nodes_[v_minus_th.id].value;
      Tensor& gx = nodes_[v_minus_th.id].grad;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double s = logistic(alpha * xv[i]);
        gx[i] += g[i] * factor * s * (1.0 - s);
      }
    };
  }
  return outv;
}

Var Tape::aggregate_neighbors(const MetaPathAdjacency& adj, Var x) {
  const Tensor& xm = value(x);
  if (xm.rank() != 2 || xm.rows() != adj.node_count()) {
    throw ShapeError("aggregate_neighbors: adjacency over " +
                     std::to_string(adj.node_count()) + " nodes vs features " +
                     xm.shape_str());
  }
  const std::size_t n = xm.rows(), d = xm.cols();
  Tensor out({n, d});
  std::vector<double> terms;
  for (std::size_t i = 0; i < n; ++i) {
    const auto nbrs = adj.neighbors(i);
    const auto cfs = adj.coeffs(i);
    for (std::size_t c = 0; c < d; ++c) {
      terms.clear();
      for (std::size_t k = 0; k < nbrs.size(); ++k) {
        terms.push_back(cfs[k] * xm.at(nbrs[k], c));
      }
      out.at(i, c) = stable_sum(terms);
    }
  }
  const bool rg = node(x).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, &adj, x, outv, n, d] {
      const Tensor& g = nodes_[outv.id].grad;
      Tensor& gx = nodes_[x.id].grad;
      for (std::size_t i = 0; i < n; ++i) {
        const auto nbrs = adj.neighbors(i);
        const auto cfs = adj.coeffs(i);
        for (std::size_t k = 0; k < nbrs.size(); ++k) {
          const double cf = cfs[k];
          const auto j = static_cast<std::size_t>(nbrs[k]);
          for (std::size_t c = 0; c < d; ++c) gx.at(j, c) += cf * g.at(i, c);
        }
      }
    };
  }
  return outv;
}

Var Tape::masked_nll(Var y_hat, const std::vector<int>& labels,
                     const std::vector<int>& labeled_ids, double eps) {
  const Tensor& y = value(y_hat);
  if (y.rank() != 2) throw ShapeError("masked_nll expects [n x classes], got " + y.shape_str());
  if (labeled_ids.empty()) throw ConfigError("masked_nll: labeled set is empty");
  if (labels.size() != y.rows()) {
    throw ShapeError("masked_nll: one label per row required");
  }
  const auto classes = static_cast<int>(y.cols());
  double loss = 0.0;
  for (int i : labeled_ids) {
    if (i < 0 || static_cast<std::size_t>(i) >= y.rows()) {
      throw ConfigError("masked_nll: labeled id " + std::to_string(i) + " out of range");
    }
    const int c = labels[i];
    if (c < 0 || c >= classes) {
      throw ConfigError("masked_nll: node " + std::to_string(i) + " has no valid label");
    }
    loss -= std::log(std::max(y.at(i, c), eps));
  }
  const bool rg = node(y_hat).requires_grad;
  Var outv = record(Tensor::scalar(loss), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, y_hat, outv, labels, labeled_ids, eps] {
      const double g = nodes_[outv.id].grad[0];
      const Tensor& y = nodes_[y_hat.id].value;
      Tensor& gy = nodes_[y_hat.id].grad;
      for (int i : labeled_ids) {
        const int c = labels[i];
        const double yv = y.at(i, c);
        // Exact subgradient of ln(max(y, eps)): flat where the clamp is
        // active. A 1/eps-scale pseudo-gradient there would swamp Adam's
        // second-moment estimate and freeze the run after one kick.
        if (yv > eps) gy.at(i, c) -= g / yv;
      }
    };
  }
  return outv;
}

Var Tape::row_normalize(Var y_hat, double eps) {
  const Tensor& y = value(y_hat);
  if (y.rank() != 2) throw ShapeError("row_normalize expects a rank-2 tensor");
  const std::size_t n = y.rows(), d = y.cols();
  Tensor out({n, d});
  auto denoms = std::make_shared<std::vector<double>>(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += y.at(i, c);
    const double denom = std::max(s, eps);
    (*denoms)[i] = denom;
    for (std::size_t c = 0; c < d; ++c) out.at(i, c) = y.at(i, c) / denom;
  }
  const bool rg = node(y_hat).requires_grad;
  Var outv = record(std::move(out), rg, nullptr);
  if (rg) {
    node(outv).backprop = [this, y_hat, outv, denoms, n, d, eps] {
      const Tensor& g = nodes_[outv.id].grad;
      const Tensor& y = nodes_[y_hat.id].value;
      Tensor& gy = nodes_[y_hat.id].grad;
      for (std::size_t i = 0; i < n; ++i) {
        const double denom = (*denoms)[i];
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += y.at(i, c);
        const bool clamped = s <= eps;
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += g.at(i, c) * y.at(i, c);
        for (std::size_t c = 0; c < d; ++c) {
          double grad = g.at(i, c) / denom;
          if (!clamped) grad -= dot / (denom * denom);
          gy.at(i, c) += grad;
        }
      }
    };
  }
  return outv;
}

void Tape::backward(Var loss) {
  if (backward_ran_) {
    throw ConfigError("backward() already ran on this tape; call reset() first");
  }
  const Node& l = node(loss);
  if (l.value.size() != 1) {
    throw ConfigError("backward() requires a scalar loss, got " + l.value.shape_str());
  }
  nodes_[loss.id].grad[0] = 1.0;
  for (std::size_t i = nodes_.size(); i-- > 0;) {
    if (nodes_[i].backprop && nodes_[i].requires_grad) nodes_[i].backprop();
  }
  backward_ran_ = true;
}

void Tape::reset() {
  nodes_.clear();
  backward_ran_ = false;
}

double finite_difference_check(
    const std::function<double(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& params,
    const std::vector<Tensor>& analytic_grads,
    double epsilon) {
  if (params.size() != analytic_grads.size()) {
    throw ConfigError("finite_difference_check: one gradient per parameter required");
  }
  std::vector<Tensor> probe = params;
  double max_err = 0.0;
  for (std::size_t p = 0; p < probe.size(); ++p) {
    if (!params[p].same_shape(analytic_grads[p])) {
      throw ShapeError("finite_difference_check: gradient shape mismatch at parameter " +
                       std::to_string(p));
    }
    for (std::size_t i = 0; i < probe[p].size(); ++i) {
      const double saved = probe[p][i];
      probe[p][i] = saved + epsilon;
      const double fp = f(probe);
      probe[p][i] = saved - epsilon;
      const double fm = f(probe);
      probe[p][i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NumericError("finite_difference_check: objective is not finite");
      }
      const double fd = (fp - fm) / (2.0 * epsilon);
      const double g = analytic_grads[p][i];
      max_err = std::max(max_err, std::abs(fd - g) / std::max(1.0, std::abs(g)));
    }
  }
  return max_err;
}

}  // namespace shan
