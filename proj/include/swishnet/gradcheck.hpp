// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <swishnet/autodiff.hpp>
#include <swishnet/model.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace swishnet::ad {

/// Builds a scalar from the given leaf variables on a fresh tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares tape gradients against central differences for every entry of
/// every input. Error per entry is |a - n| / max(|a|, |n|, floor); the floor
/// keeps entries whose true gradient is ~0 from dividing noise by noise.
inline GradCheckResult finite_diff_check(const ScalarFn& fn, std::vector<Tensor> inputs, double h = 1e-5,
                                         double floor = 1e-3) {
  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& x : xs) {
      Tensor leaf = x;
      leaf.requires_grad = false;
      vars.push_back(tape.leaf(std::move(leaf)));
    }
    return tape.value(fn(tape, vars))[0];
  };

  Tape tape;
  std::vector<Var> vars;
  for (Tensor& x : inputs) {
    Tensor leaf = x;
    leaf.requires_grad = true;
    vars.push_back(tape.leaf(std::move(leaf)));
  }
  const Var out = fn(tape, vars);
  tape.backward(out);
  std::vector<Tensor> analytic;
  for (Var v : vars) analytic.push_back(tape.grad(v));

  GradCheckResult res;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double orig = inputs[i][j];
      inputs[i][j] = orig + h;
      const double up = evaluate(inputs);
      inputs[i][j] = orig - h;
      const double down = evaluate(inputs);
      inputs[i][j] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i][j];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (err >= res.max_rel_error) res = {err, i, j, a, numeric};
    }
  }
  return res;
}

/// Finite-difference check of a whole model: the scalar is sum(out * weights)
/// over the model output for `input`. Tape gradients w.r.t. every parameter
/// and input entry are compared with central differences evaluated on the
/// compiled float64 path, which is much cheaper than re-taping per entry.
/// Input index 0 is the input tensor, i > 0 is parameter i - 1.
inline GradCheckResult model_grad_check(Model model, Tensor input, const Tensor& weights, double h = 1e-5,
                                        double floor = 1e-3) {
  model.norm = FeatureNorm{};  // the check runs on raw inputs
  ad::Tape tape;
  std::vector<Var> pvars;
  Tensor in_leaf = input;
  in_leaf.requires_grad = true;
  const Var x = tape.leaf(in_leaf);
  // Inline forward_on_tape so the input itself is a differentiable leaf.
  for (const Tensor& t : model.params) {
    Tensor leaf = t;
    leaf.requires_grad = true;
    pvars.push_back(tape.leaf(std::move(leaf)));
  }
  TapeEngine engine(tape, pvars, 0.0, false, nullptr);
  const Var out = contract(tape, run_plan(model.plan, engine, x), weights);
  tape.backward(out);

  auto evaluate = [&]() {
    const auto y = CompiledModel<double>(model).forward(input.data(), input.dim(0));
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * weights[i];
    return s;
  };

  GradCheckResult res;
  auto check = [&](std::size_t which, Tensor& target, const Tensor& analytic) {
    for (std::size_t j = 0; j < target.size(); ++j) {
      const double orig = target[j];
      target[j] = orig + h;
      const double up = evaluate();
      target[j] = orig - h;
      const double down = evaluate();
      target[j] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[j];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      if (err >= res.max_rel_error) res = {err, which, j, a, numeric};
    }
  };
  check(0, input, tape.grad(x));
  for (std::size_t i = 0; i < model.params.size(); ++i) check(i + 1, model.params[i], tape.grad(pvars[i]));
  return res;
}

/// Tensor with i.i.d. N(0, stddev^2) entries.
inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double stddev = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace swishnet::ad
