#pragma once

// Central finite-difference oracle for test code only.
//
// The loss function is a generic callable taking std::vector<BasicTensor<T>>&
// and returning a one-element BasicTensor<T>. Analytic gradients come from the
// production float path (tape + backward); the numeric side re-evaluates the
// same function in double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstddef>
#include <functional>
#include <optional>
#include <utility>
#include <random>
#include <vector>

#include "nfuse/tape.hpp"
#include "nfuse/tensor.hpp"

namespace nfuse::testing {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_at_kink = 0;
  // Location and values of the worst coordinate.
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<std::size_t> checked_per_input;
  std::vector<std::size_t> skipped_per_input;
};

struct GradCheckOptions {
  std::size_t samples_per_input = 16;
  std::uint64_t seed = 1;
  double step = 1e-3;
  // Optional piecewise-smoothness signature of the double-precision forward
  // (ReLU signs, max-pool winners). A coordinate whose signature changes at
  // +-step sits within a step of a kink; it is skipped and another coordinate
  // of the same tensor is drawn instead. It also supplies the loss for the
  // numeric side.
  std::function<std::pair<double, std::vector<std::uint32_t>>(std::vector<Tensor64>&)> probe;
  // Denominator floor of the relative error; gradients below it are compared
  // on an absolute scale.
  double floor = 1e-4;
  // Take the analytic side from the double instantiation instead of float.
  bool analytic_in_double = false;
  // Upper bound on coordinates drawn per input, clean or not.
  std::size_t max_attempts_per_input = SIZE_MAX;
};

inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

template <typename Fn>
std::vector<std::vector<float>> analytic_gradients(Fn&& loss_fn, const std::vector<Tensor64>& inputs) {
  std::vector<Tensor> as_float;
  for (const auto& t : inputs) {
    auto f = t.cast<float>();
    f.set_tracked(true);
    as_float.push_back(f);
  }
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = loss_fn(as_float);
  }
  tape.backward(loss);
  std::vector<std::vector<float>> grads;
  for (const auto& t : as_float) grads.emplace_back(t.grad().begin(), t.grad().end());
  return grads;
}

template <typename Fn>
std::vector<std::vector<double>> analytic_gradients64(Fn&& loss_fn, const std::vector<Tensor64>& inputs) {
  std::vector<Tensor64> tracked;
  for (const auto& t : inputs) {
    auto c = t.clone();
    c.set_tracked(true);
    tracked.push_back(c);
  }
  BasicTape<double> tape;
  Tensor64 loss;
  {
    BasicTapeScope<double> scope(tape);
    loss = loss_fn(tracked);
  }
  tape.backward(loss);
  std::vector<std::vector<double>> grads;
  for (const auto& t : tracked) grads.emplace_back(t.grad().begin(), t.grad().end());
  return grads;
}

template <typename Fn>
double evaluate64(Fn&& loss_fn, std::vector<Tensor64>& inputs) {
  return loss_fn(inputs).item();
}

// Checks up to `samples_per_input` randomly chosen coordinates of every
// input (all of them when the input is smaller).
template <typename Fn>
GradCheckResult check_gradients(Fn&& loss_fn, std::vector<Tensor64> inputs, const GradCheckOptions& opt) {
  std::vector<std::vector<double>> grads;
  if (opt.analytic_in_double) {
    grads = analytic_gradients64(loss_fn, inputs);
  } else {
    for (const auto& g : analytic_gradients(loss_fn, inputs)) grads.emplace_back(g.begin(), g.end());
  }
  std::mt19937_64 rng(opt.seed);
  GradCheckResult result;
  auto central = [&](std::size_t which, std::size_t i, double h) {
    auto values = inputs[which].mutable_data();
    const double saved = values[i];
    values[i] = saved + h;
    const double up = evaluate64(loss_fn, inputs);
    values[i] = saved - h;
    const double down = evaluate64(loss_fn, inputs);
    values[i] = saved;
    return (up - down) / (2 * h);
  };
  std::vector<std::uint32_t> base;
  if (opt.probe) base = opt.probe(inputs).second;
  // Central difference over a kink-free step, or nothing when either side
  // lands on another piece.
  auto clean_central = [&](std::size_t which, std::size_t i) -> std::optional<double> {
    auto values = inputs[which].mutable_data();
    const double saved = values[i];
    values[i] = saved + opt.step;
    const auto up = opt.probe(inputs);
    std::optional<double> numeric;
    if (up.second == base) {
      values[i] = saved - opt.step;
      const auto down = opt.probe(inputs);
      if (down.second == base) numeric = (up.first - down.first) / (2 * opt.step);
    }
    values[i] = saved;
    return numeric;
  };
  result.checked_per_input.assign(inputs.size(), 0);
  result.skipped_per_input.assign(inputs.size(), 0);
  for (std::size_t which = 0; which < inputs.size(); ++which) {
    std::vector<std::size_t> coords(inputs[which].numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    std::shuffle(coords.begin(), coords.end(), rng);
    std::size_t done = 0;
    std::size_t attempts = 0;
    for (auto i : coords) {
      if (done == opt.samples_per_input || attempts++ == opt.max_attempts_per_input) break;
      double numeric;
      if (opt.probe) {
        const auto clean = clean_central(which, i);
        if (!clean) {
          ++result.skipped_at_kink;
          ++result.skipped_per_input[which];
          continue;
        }
        numeric = *clean;
      } else {
        numeric = central(which, i, opt.step);
      }
      const double err = relative_error(grads[which][i], numeric, opt.floor);
      if (err >= result.max_relative_error) {
        result.max_relative_error = err;
        result.worst_input = which;
        result.worst_index = i;
        result.worst_analytic = grads[which][i];
        result.worst_numeric = numeric;
      }
      ++result.checked_per_input[which];
      ++result.checked;
      ++done;
    }
  }
  return result;
}

template <typename Fn>
GradCheckResult check_gradients(Fn&& loss_fn, std::vector<Tensor64> inputs, std::size_t samples_per_input,
                                std::uint64_t seed, double step = 1e-3) {
  GradCheckOptions opt;
  opt.samples_per_input = samples_per_input;
  opt.seed = seed;
  opt.step = step;
  return check_gradients(loss_fn, std::move(inputs), opt);
}

// Uniform values in [lo, hi) that stay at least `margin` away from zero.
inline Tensor64 random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0,
                              double margin = 0.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor64 t(std::move(shape));
  for (auto& v : t.mutable_data()) {
    do {
      v = dist(rng);
    } while (std::abs(v) < margin);
  }
  return t;
}

// Pairwise-distinct values with spacing 0.05, shuffled: no max-pool ties or
// near-ties within a perturbation step.
inline Tensor64 distinct_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor64 t(std::move(shape));
  auto v = t.mutable_data();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = 0.05 * static_cast<double>(i) - 0.025 * static_cast<double>(v.size());
  std::shuffle(v.begin(), v.end(), rng);
  return t;
}

}  // namespace nfuse::testing
