// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape and the differentiable operations SwishNet and the SNN
// baseline are built from.
//
// A Tape owns every value produced during a forward pass. Operations return
// Var handles; Tape::backward walks the nodes in reverse execution order and
// each node's closure adds its contribution into the gradients of its inputs,
// so fan-out accumulates naturally.
//
// Sequence ops accept [T x C] or a batched [B x T x C]; dense/softmax ops
// accept [D] or [B x D]. Batch items never interact.
#pragma once

#include <swishnet/error.hpp>
#include <swishnet/kernels.hpp>
#include <swishnet/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace swishnet::ad {

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  /// Leaf node; participates in backward iff value.requires_grad.
  Var leaf(Tensor value) {
    const bool needs = value.requires_grad;
    return push(std::move(value), needs, nullptr);
  }

  Var constant(Tensor value) {
    value.requires_grad = false;
    return push(std::move(value), false, nullptr);
  }

  /// Records an op result. The closure only runs when some input needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward fn) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_.at(v.id).needs_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : nullptr);
  }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool needs_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  /// Gradient of the last backward() root w.r.t. v (zeros if v was unreachable).
  const Tensor& grad(Var v) {
    return grad_buffer(v);
  }

  Tensor& grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape(), 0.0);
    return n.grad;
  }

  void accumulate(Var v, std::span<const double> g) {
    if (!needs_grad(v)) return;
    auto dst = grad_buffer(v).data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
  }

  void backward(Var root) {
    if (value(root).size() != 1) throw ShapeError("backward needs a scalar root, got " + shape_str(value(root).shape()));
    for (Node& n : nodes_) n.grad = Tensor();
    grad_buffer(root)[0] = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.backward || n.grad.size() == 0) continue;
      // Closures may not append nodes, so this reference stays valid.
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Backward backward;
  };

  Var push(Tensor value, bool needs, Backward fn) {
    nodes_.push_back(Node{std::move(value), Tensor(), needs, std::move(fn)});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
};

namespace detail {

struct SeqDims {
  std::size_t batch, time, channels;
  bool batched;
};

inline SeqDims seq_dims(const Tensor& x, const char* op) {
  if (x.rank() == 2) return {1, x.dim(0), x.dim(1), false};
  if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2), true};
  throw ShapeError(std::string(op) + ": expected [T x C] or [B x T x C], got " + shape_str(x.shape()));
}

inline Shape seq_shape(const SeqDims& d, std::size_t time, std::size_t channels) {
  return d.batched ? Shape{d.batch, time, channels} : Shape{time, channels};
}

struct RowDims {
  std::size_t rows, cols;
};

inline RowDims row_dims(const Tensor& x, const char* op) {
  if (x.rank() == 1) return {1, x.dim(0)};
  if (x.rank() == 2) return {x.dim(0), x.dim(1)};
  throw ShapeError(std::string(op) + ": expected [D] or [B x D], got " + shape_str(x.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace detail

/// y[t, o] = b[o] + sum_{k,c} x_pad[s*t + k, c] * w[k, c, o]. A rank-2 weight
/// [C_in x C_out] is a 1x1 convolution.
inline Var conv1d(Tape& tape, Var x, Var w, Var b, std::size_t stride, bool causal) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  const Tensor& bv = tape.value(b);
  const auto d = detail::seq_dims(xv, "conv1d");
  if (stride < 1) throw ShapeError("conv1d: stride must be >= 1");
  std::size_t k, c_in, c_out;
  if (wv.rank() == 3) {
    k = wv.dim(0), c_in = wv.dim(1), c_out = wv.dim(2);
  } else if (wv.rank() == 2) {
    k = 1, c_in = wv.dim(0), c_out = wv.dim(1);
  } else {
    throw ShapeError("conv1d: weight must be [K x C_in x C_out], got " + shape_str(wv.shape()));
  }
  if (k < 1) throw ShapeError("conv1d: kernel size must be >= 1");
  if (c_in != d.channels) {
    throw ShapeError("conv1d: input has " + std::to_string(d.channels) + " channels, weight expects " +
                     std::to_string(c_in));
  }
  if (bv.shape() != Shape{c_out}) throw ShapeError("conv1d: bias must be [" + std::to_string(c_out) + "]");
  const std::size_t t_out = kernels::conv_out_len(d.time, k, stride, causal);
  if (t_out == 0) throw TooShortError("conv1d: input of length " + std::to_string(d.time) + " is shorter than kernel");

  Tensor y(detail::seq_shape(d, t_out, c_out));
  for (std::size_t n = 0; n < d.batch; ++n) {
    kernels::conv1d_forward(xv.data().data() + n * d.time * c_in, d.time, c_in, wv.data().data(), k, c_out,
                            bv.data().data(), stride, causal, y.data().data() + n * t_out * c_out);
  }
  return tape.record(std::move(y), {x, w, b}, [=](Tape& tp, const Tensor& dy) {
    const Tensor& xv2 = tp.value(x);
    const Tensor& wv2 = tp.value(w);
    double* dx = tp.needs_grad(x) ? tp.grad_buffer(x).data().data() : nullptr;
    double* dw = tp.needs_grad(w) ? tp.grad_buffer(w).data().data() : nullptr;
    double* db = tp.needs_grad(b) ? tp.grad_buffer(b).data().data() : nullptr;
    for (std::size_t n = 0; n < d.batch; ++n) {
      kernels::conv1d_backward(xv2.data().data() + n * d.time * c_in, d.time, c_in, wv2.data().data(), k, c_out,
                               stride, causal, dy.data().data() + n * t_out * c_out,
                               dx ? dx + n * d.time * c_in : nullptr, dw, db);
    }
  });
}

/// Per-channel convolution, w is [K x C]; no bias.
inline Var depthwise_conv1d(Tape& tape, Var x, Var w, std::size_t stride, bool causal) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  const auto d = detail::seq_dims(xv, "depthwise_conv1d");
  if (stride < 1) throw ShapeError("depthwise_conv1d: stride must be >= 1");
  if (wv.rank() != 2 || wv.dim(1) != d.channels || wv.dim(0) < 1) {
    throw ShapeError("depthwise_conv1d: weight must be [K x " + std::to_string(d.channels) + "], got " +
                     shape_str(wv.shape()));
  }
  const std::size_t k = wv.dim(0), ch = d.channels;
  const std::size_t t_out = kernels::conv_out_len(d.time, k, stride, causal);
  if (t_out == 0) throw TooShortError("depthwise_conv1d: input shorter than kernel");
  Tensor y(detail::seq_shape(d, t_out, ch));
  for (std::size_t n = 0; n < d.batch; ++n) {
    kernels::depthwise_forward(xv.data().data() + n * d.time * ch, d.time, ch, wv.data().data(), k, stride, causal,
                               y.data().data() + n * t_out * ch);
  }
  return tape.record(std::move(y), {x, w}, [=](Tape& tp, const Tensor& dy) {
    double* dx = tp.needs_grad(x) ? tp.grad_buffer(x).data().data() : nullptr;
    double* dw = tp.needs_grad(w) ? tp.grad_buffer(w).data().data() : nullptr;
    for (std::size_t n = 0; n < d.batch; ++n) {
      kernels::depthwise_backward(tp.value(x).data().data() + n * d.time * ch, d.time, ch, tp.value(w).data().data(),
                                  k, stride, causal, dy.data().data() + n * t_out * ch,
                                  dx ? dx + n * d.time * ch : nullptr, dw);
    }
  });
}

/// Depthwise [K x C_in] convolution followed by a pointwise [C_in x C_out] mix
/// with bias. Equivalent to conv1d with the rank-1 kernel w_depth[k,c] * w_point[c,o].
inline Var separable_conv1d(Tape& tape, Var x, Var w_depth, Var w_point, Var b, std::size_t stride, bool causal) {
  const Var depth = depthwise_conv1d(tape, x, w_depth, stride, causal);
  return conv1d(tape, depth, w_point, b, 1, false);
}

/// tanh(a) * sigmoid(g), elementwise.
inline Var gated(Tape& tape, Var a, Var g) {
  const Tensor& av = tape.value(a);
  const Tensor& gv = tape.value(g);
  detail::require_same_shape(av, gv, "gated");
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::tanh(av[i]) * kernels::sigmoid(gv[i]);
  return tape.record(std::move(y), {a, g}, [=](Tape& tp, const Tensor& dy) {
    const Tensor& av2 = tp.value(a);
    const Tensor& gv2 = tp.value(g);
    const bool need_a = tp.needs_grad(a), need_g = tp.needs_grad(g);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      const double th = std::tanh(av2[i]);
      const double sg = kernels::sigmoid(gv2[i]);
      if (need_a) tp.grad_buffer(a)[i] += dy[i] * (1.0 - th * th) * sg;
      if (need_g) tp.grad_buffer(g)[i] += dy[i] * th * sg * (1.0 - sg);
    }
  });
}

/// Gated activation over a 2W-channel map: first half content, second half gate.
inline Var gated_halves(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  if (xv.rank() < 1 || xv.shape().back() % 2 != 0) {
    throw ShapeError("gated_halves: last axis must be even, got " + shape_str(xv.shape()));
  }
  const std::size_t half = xv.shape().back() / 2;
  const std::size_t rows = xv.size() / (2 * half);
  Shape out_shape = xv.shape();
  out_shape.back() = half;
  Tensor y(out_shape);
  kernels::gated_halves_forward(xv.data().data(), rows, half, y.data().data());
  return tape.record(std::move(y), {x}, [=](Tape& tp, const Tensor& dy) {
    kernels::gated_halves_backward(tp.value(x).data().data(), rows, half, dy.data().data(),
                                   tp.grad_buffer(x).data().data());
  });
}

/// Affine map x W + b over [D_in] or [B x D_in].
inline Var dense(Tape& tape, Var x, Var w, Var b) {
  const Tensor& xv = tape.value(x);
  const Tensor& wv = tape.value(w);
  const auto d = detail::row_dims(xv, "dense");
  if (wv.rank() != 2 || wv.dim(0) != d.cols) {
    throw ShapeError("dense: weight " + shape_str(wv.shape()) + " does not accept input " + shape_str(xv.shape()));
  }
  const std::size_t d_out = wv.dim(1);
  if (tape.value(b).shape() != Shape{d_out}) throw ShapeError("dense: bias must be [" + std::to_string(d_out) + "]");
  Tensor y(xv.rank() == 1 ? Shape{d_out} : Shape{d.rows, d_out});
  kernels::dense_forward(xv.data().data(), d.rows, d.cols, wv.data().data(), d_out, tape.value(b).data().data(),
                         y.data().data());
  return tape.record(std::move(y), {x, w, b}, [=](Tape& tp, const Tensor& dy) {
    double* dx = tp.needs_grad(x) ? tp.grad_buffer(x).data().data() : nullptr;
    double* dw = tp.needs_grad(w) ? tp.grad_buffer(w).data().data() : nullptr;
    double* db = tp.needs_grad(b) ? tp.grad_buffer(b).data().data() : nullptr;
    kernels::dense_backward(tp.value(x).data().data(), d.rows, d.cols, tp.value(w).data().data(), d_out,
                            dy.data().data(), dx, dw, db);
  });
}

inline Var selu(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = kernels::selu(xv[i]);
  return tape.record(std::move(y), {x}, [=](Tape& tp, const Tensor& dy) {
    const Tensor& xv2 = tp.value(x);
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * kernels::selu_grad(xv2[i]);
  });
}

/// Softmax over the last axis.
inline Var softmax(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  const auto d = detail::row_dims(xv, "softmax");
  Tensor y(xv.shape());
  for (std::size_t r = 0; r < d.rows; ++r) {
    kernels::softmax(xv.data().data() + r * d.cols, d.cols, y.data().data() + r * d.cols);
  }
  const Tensor probs = y;
  return tape.record(std::move(y), {x}, [=](Tape& tp, const Tensor& dy) {
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t r = 0; r < d.rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d.cols; ++c) dot += dy[r * d.cols + c] * probs[r * d.cols + c];
      for (std::size_t c = 0; c < d.cols; ++c) {
        dx[r * d.cols + c] += probs[r * d.cols + c] * (dy[r * d.cols + c] - dot);
      }
    }
  });
}

/// Mean over the time axis: [T x C] -> [C], [B x T x C] -> [B x C].
inline Var global_avg_pool_time(Tape& tape, Var x) {
  const Tensor& xv = tape.value(x);
  const auto d = detail::seq_dims(xv, "global_avg_pool_time");
  if (d.time == 0) throw TooShortError("global_avg_pool_time: empty time axis");
  Tensor y(d.batched ? Shape{d.batch, d.channels} : Shape{d.channels});
  for (std::size_t n = 0; n < d.batch; ++n) {
    kernels::mean_rows(xv.data().data() + n * d.time * d.channels, d.time, d.channels,
                       y.data().data() + n * d.channels);
  }
  return tape.record(std::move(y), {x}, [=](Tape& tp, const Tensor& dy) {
    Tensor& dx = tp.grad_buffer(x);
    const double inv = 1.0 / static_cast<double>(d.time);
    for (std::size_t n = 0; n < d.batch; ++n) {
      for (std::size_t t = 0; t < d.time; ++t) {
        for (std::size_t c = 0; c < d.channels; ++c) {
          dx[(n * d.time + t) * d.channels + c] += dy[n * d.channels + c] * inv;
        }
      }
    }
  });
}

/// Concatenates along the last (channel) axis; all leading dims must match.
inline Var concat_channels(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  if (av.rank() != bv.rank() || av.rank() == 0 ||
      !std::equal(av.shape().begin(), av.shape().end() - 1, bv.shape().begin())) {
    throw ShapeError("concat_channels: incompatible " + shape_str(av.shape()) + " and " + shape_str(bv.shape()));
  }
  const std::size_t ca = av.shape().back(), cb = bv.shape().back();
  const std::size_t rows = ca ? av.size() / ca : bv.size() / cb;
  Shape s = av.shape();
  s.back() = ca + cb;
  Tensor y(s);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(av.data().data() + r * ca, ca, y.data().data() + r * (ca + cb));
    std::copy_n(bv.data().data() + r * cb, cb, y.data().data() + r * (ca + cb) + ca);
  }
  return tape.record(std::move(y), {a, b}, [=](Tape& tp, const Tensor& dy) {
    const bool need_a = tp.needs_grad(a), need_b = tp.needs_grad(b);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < ca && need_a; ++c) tp.grad_buffer(a)[r * ca + c] += dy[r * (ca + cb) + c];
      for (std::size_t c = 0; c < cb && need_b; ++c) tp.grad_buffer(b)[r * cb + c] += dy[r * (ca + cb) + ca + c];
    }
  });
}

/// Elementwise a + b (residual / skip summation).
inline Var add(Tape& tape, Var a, Var b) {
  const Tensor& av = tape.value(a);
  const Tensor& bv = tape.value(b);
  detail::require_same_shape(av, bv, "add");
  Tensor y(av.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return tape.record(std::move(y), {a, b}, [=](Tape& tp, const Tensor& dy) {
    tp.accumulate(a, dy.data());
    tp.accumulate(b, dy.data());
  });
}

inline Var add_residual(Tape& tape, Var x, Var residual) { return add(tape, x, residual); }

inline Var scale(Tape& tape, Var x, double factor) {
  const Tensor& xv = tape.value(x);
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * factor;
  return tape.record(std::move(y), {x}, [=](Tape& tp, const Tensor& dy) {
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * factor;
  });
}

/// Scalar sum_i x[i] * weights[i]. Handy for reducing an output to a scalar.
inline Var contract(Tape& tape, Var x, const Tensor& weights) {
  const Tensor& xv = tape.value(x);
  if (weights.size() != xv.size()) throw ShapeError("contract: weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  return tape.record(Tensor({1}, {s}), {x}, [=](Tape& tp, const Tensor& dy) {
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[0] * weights[i];
  });
}

/// Inverted dropout. Identity when !training or rate == 0.
inline Var dropout(Tape& tape, Var x, double rate, bool training, std::mt19937_64& rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("dropout rate must be < 1");
  const Tensor& xv = tape.value(x);
  std::bernoulli_distribution keep(1.0 - rate);
  std::vector<double> mask(xv.size());
  for (double& m : mask) m = keep(rng) ? 1.0 / (1.0 - rate) : 0.0;
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * mask[i];
  return tape.record(std::move(y), {x}, [=, mask = std::move(mask)](Tape& tp, const Tensor& dy) {
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * mask[i];
  });
}

/// SELU's saturation value, -lambda * alpha.
inline constexpr double kAlphaPrime = -1.7580993408473766;

/// Alpha dropout: dropped units are set to alpha' and an affine correction
/// restores zero mean / unit variance. Identity when !training or rate == 0.
inline Var alpha_dropout(Tape& tape, Var x, double rate, bool training, std::mt19937_64& rng) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw ConfigError("alpha dropout rate must be < 1");
  const double keep_p = 1.0 - rate;
  const double a = 1.0 / std::sqrt(keep_p + kAlphaPrime * kAlphaPrime * keep_p * rate);
  const double b = -a * kAlphaPrime * rate;
  const Tensor& xv = tape.value(x);
  std::bernoulli_distribution keep(keep_p);
  std::vector<bool> mask(xv.size());
  Tensor y(xv.shape());
  for (std::size_t i = 0; i < y.size(); ++i) {
    mask[i] = keep(rng);
    y[i] = a * (mask[i] ? xv[i] : kAlphaPrime) + b;
  }
  return tape.record(std::move(y), {x}, [=, mask = std::move(mask)](Tape& tp, const Tensor& dy) {
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (mask[i]) dx[i] += dy[i] * a;
    }
  });
}

namespace detail {

inline void log_softmax_row(const double* x, std::size_t n, double* out) {
  const double m = *std::max_element(x, x + n);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += std::exp(x[i] - m);
  const double lse = m + std::log(s);
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] - lse;
}

}  // namespace detail

/// Mean over rows of -sum_c target[c] * log_softmax(logits)[c]. target has
/// the same shape as logits and is treated as a constant.
inline Var soft_cross_entropy(Tape& tape, Var logits, const Tensor& target) {
  const Tensor& lv = tape.value(logits);
  const auto d = detail::row_dims(lv, "soft_cross_entropy");
  if (target.shape() != lv.shape()) throw ShapeError("soft_cross_entropy: target shape mismatch");
  std::vector<double> logp(lv.size());
  double loss = 0.0;
  for (std::size_t r = 0; r < d.rows; ++r) {
    detail::log_softmax_row(lv.data().data() + r * d.cols, d.cols, logp.data() + r * d.cols);
    for (std::size_t c = 0; c < d.cols; ++c) loss -= target[r * d.cols + c] * logp[r * d.cols + c];
  }
  loss /= static_cast<double>(d.rows);
  return tape.record(Tensor({1}, {loss}), {logits}, [=, logp = std::move(logp)](Tape& tp, const Tensor& dy) {
    Tensor& dx = tp.grad_buffer(logits);
    const double g = dy[0] / static_cast<double>(d.rows);
    for (std::size_t r = 0; r < d.rows; ++r) {
      double mass = 0.0;
      for (std::size_t c = 0; c < d.cols; ++c) mass += target[r * d.cols + c];
      for (std::size_t c = 0; c < d.cols; ++c) {
        const std::size_t i = r * d.cols + c;
        dx[i] += g * (mass * std::exp(logp[i]) - target[i]);
      }
    }
  });
}

/// Mean of -log softmax(logits)[label] over rows, via log-sum-exp.
inline Var cross_entropy(Tape& tape, Var logits, std::span<const int> labels) {
  const Tensor& lv = tape.value(logits);
  const auto d = detail::row_dims(lv, "cross_entropy");
  if (labels.size() != d.rows) throw ShapeError("cross_entropy: one label per row required");
  Tensor onehot(lv.shape(), 0.0);
  for (std::size_t r = 0; r < d.rows; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= d.cols) {
      throw DataError("cross_entropy: label " + std::to_string(labels[r]) + " out of range for " +
                      std::to_string(d.cols) + " classes");
    }
    onehot[r * d.cols + static_cast<std::size_t>(labels[r])] = 1.0;
  }
  return soft_cross_entropy(tape, logits, onehot);
}

inline Var cross_entropy(Tape& tape, Var logits, int label) {
  const int labels[1] = {label};
  return cross_entropy(tape, logits, std::span<const int>(labels));
}

}  // namespace swishnet::ad
