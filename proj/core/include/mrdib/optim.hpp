#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mrdib/rng.hpp"
#include "mrdib/tensor.hpp"

namespace mrdib::num {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment accumulators for one fixed, ordered parameter list.
struct AdamState {
  AdamOptions options;
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  explicit AdamState(AdamOptions opts = {}) : options(opts) {}
};

/// Bias-corrected Adam update of `params` using their accumulated gradients.
/// The parameter list must keep the same order and shapes across calls.
void adam_step(AdamState& state, std::span<Tensor> params);

/// Raw form: one parameter buffer and its gradient (used by adam_step).
void adam_update(std::vector<double>& m, std::vector<double>& v, std::span<double> param,
                 std::span<const double> grad, const AdamOptions& opt, std::uint64_t step);

void zero_grads(std::span<Tensor> params);

/// Glorot/Xavier uniform: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
/// Result is a fan_in x fan_out parameter tensor.
Tensor xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out);
double xavier_bound(std::size_t fan_in, std::size_t fan_out);

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every entry of x.
/// x is perturbed in place during the sweep and restored afterwards.
Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                                  double h = 1e-5);

/// ||a - b|| / max(||a||, ||b||, floor): the gradient-check error measure.
double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8);

}  // namespace mrdib::num
