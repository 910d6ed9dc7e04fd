#include "mrdib/optim.hpp"

#include <algorithm>
#include <cmath>

#include "mrdib/errors.hpp"

namespace mrdib::num {

void adam_update(std::vector<double>& m, std::vector<double>& v, std::span<double> param,
                 std::span<const double> grad, const AdamOptions& opt, std::uint64_t step) {
  require(param.size() == grad.size(), "adam: parameter/gradient size mismatch");
  require(m.size() == param.size() && v.size() == param.size(), "adam: moment size mismatch");
  require(step >= 1, "adam: step counts from 1");
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g;
    v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g * g;
    const double m_hat = m[i] / c1;
    const double v_hat = v[i] / c2;
    param[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.epsilon);
  }
}

void adam_step(AdamState& state, std::span<Tensor> params) {
  if (state.first_moment.empty() && state.step_count == 0) {
    for (const Tensor& p : params) {
      state.first_moment.emplace_back(p.size(), 0.0);
      state.second_moment.emplace_back(p.size(), 0.0);
    }
  }
  require(state.first_moment.size() == params.size(),
          "adam: parameter list length changed between steps");
  for (std::size_t k = 0; k < params.size(); ++k) {
    require(params[k].requires_grad(), "adam: parameter without gradient");
    require(state.first_moment[k].size() == params[k].size(),
            "adam: shape of parameter " + std::to_string(k) + " changed");
  }
  ++state.step_count;
  for (std::size_t k = 0; k < params.size(); ++k) {
    adam_update(state.first_moment[k], state.second_moment[k], params[k].values(),
                params[k].grad(), state.options, state.step_count);
  }
}

void zero_grads(std::span<Tensor> params) {
  for (Tensor& p : params) p.zero_grad();
}

double xavier_bound(std::size_t fan_in, std::size_t fan_out) {
  require(fan_in >= 1 && fan_out >= 1, "xavier: fan_in and fan_out must be positive");
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

Tensor xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double bound = xavier_bound(fan_in, fan_out);
  std::vector<double> w(fan_in * fan_out);
  for (double& x : w) x = rng.uniform(-bound, bound);
  return Tensor::parameter(fan_in, fan_out, std::move(w));
}

Tensor finite_difference_gradient(const std::function<double(const Tensor&)>& f, Tensor x,
                                  double h) {
  require(h > 0.0, "finite difference step must be positive");
  Tensor g(x.rows(), x.cols());
  auto xs = x.values();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double orig = xs[i];
    xs[i] = orig + h;
    const double up = f(x);
    xs[i] = orig - h;
    const double down = f(x);
    xs[i] = orig;
    g.values()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

double relative_error(std::span<const double> a, std::span<const double> b, double floor) {
  require(a.size() == b.size(), "relative_error: size mismatch");
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace mrdib::num
