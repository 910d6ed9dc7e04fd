#include "mrdib/infotheory.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mrdib/errors.hpp"

namespace mrdib::info {

using namespace mrdib::num;

DiagonalGaussian DiagonalGaussian::standard(std::size_t rows, std::size_t dim) {
  return {Tensor(rows, dim, 0.0), Tensor(rows, dim, 0.0)};
}

void DiagonalGaussian::validate() const {
  require(mean.rows() == log_variance.rows() && mean.cols() == log_variance.cols(),
          "DiagonalGaussian: mean " + describe_shape(mean) + " vs log_variance " +
              describe_shape(log_variance));
  for (double v : mean.values()) require(std::isfinite(v), "DiagonalGaussian: non-finite mean");
  for (double v : log_variance.values()) {
    require(std::isfinite(v), "DiagonalGaussian: non-finite log_variance");
  }
}

Tensor kl_per_row(const DiagonalGaussian& q) {
  q.validate();
  // 0.5 * (mu^2 + exp(lv) - lv - 1)
  Tensor terms = add_scalar(sub(add(square(q.mean), exp(q.log_variance)), q.log_variance), -1.0);
  return scale(row_sum(terms), 0.5);
}

Tensor kl_diag_gaussian_to_standard(const DiagonalGaussian& q) { return sum(kl_per_row(q)); }

McEstimate mc_kl_oracle(const DiagonalGaussian& q, std::size_t n_samples, Rng& rng) {
  q.validate();
  require(n_samples >= 1000, "mc_kl_oracle: at least 1000 samples required");
  const auto mu = q.mean.values();
  const auto lv = q.log_variance.values();
  double acc = 0.0, acc2 = 0.0;
  for (std::size_t s = 0; s < n_samples; ++s) {
    double log_ratio = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
      const double sigma = std::exp(0.5 * lv[i]);
      const double z = mu[i] + sigma * rng.normal();
      const double u = (z - mu[i]) / sigma;
      // ln N(z; mu, sigma^2) - ln N(z; 0, 1); the 2*pi terms cancel
      log_ratio += -0.5 * lv[i] - 0.5 * u * u + 0.5 * z * z;
    }
    acc += log_ratio;
    acc2 += log_ratio * log_ratio;
  }
  const double n = static_cast<double>(n_samples);
  const double m = acc / n;
  const double var = std::max(0.0, acc2 / n - m * m) * n / (n - 1.0);
  return {m, std::sqrt(var / n)};
}

LatentSample reparameterize(const DiagonalGaussian& q, Rng& rng, SampleMode mode) {
  q.validate();
  if (mode == SampleMode::mean) {
    return {q.mean, q, Tensor(q.rows(), q.dim(), 0.0)};
  }
  Tensor eps(q.rows(), q.dim());
  for (double& e : eps.values()) e = rng.normal();
  Tensor sigma = exp(scale(q.log_variance, 0.5));
  Tensor z = add(q.mean, mul(sigma, eps));
  return {z, q, eps};
}

double gaussian_mi_analytic(double rho) {
  require(std::abs(rho) < 1.0, "gaussian_mi_analytic: |rho| must be below 1");
  return -0.5 * std::log(1.0 - rho * rho);
}

// ---- MineNetwork -----------------------------------------------------------------

MineNetwork::MineNetwork(std::size_t dim1, std::size_t dim2, std::size_t hidden, Rng& rng)
    : dim1_(dim1), dim2_(dim2), hidden_(hidden) {
  require(dim1 > 0 && dim2 > 0 && hidden > 0, "MineNetwork: dimensions must be positive");
  params_.push_back(xavier_uniform(rng, dim1 + dim2, hidden));
  params_.push_back(Tensor::parameter(1, hidden, std::vector<double>(hidden, 0.0)));
  params_.push_back(xavier_uniform(rng, hidden, hidden));
  params_.push_back(Tensor::parameter(1, hidden, std::vector<double>(hidden, 0.0)));
  params_.push_back(xavier_uniform(rng, hidden, 1));
  params_.push_back(Tensor::parameter(1, 1, {0.0}));
}

MineNetwork MineNetwork::zeros(std::size_t dim1, std::size_t dim2, std::size_t hidden) {
  Rng rng(0);
  MineNetwork f(dim1, dim2, hidden, rng);
  for (Tensor& p : f.params_) std::fill(p.values().begin(), p.values().end(), 0.0);
  return f;
}

Tensor MineNetwork::forward(const Tensor& z1, const Tensor& z2, bool track_weights) const {
  require(!params_.empty(), "MineNetwork: not initialised");
  require(z1.cols() == dim1_ && z2.cols() == dim2_ && z1.rows() == z2.rows(),
          "MineNetwork: input shapes " + describe_shape(z1) + ", " + describe_shape(z2));
  auto w = [&](std::size_t k) { return track_weights ? params_[k] : params_[k].detach(); };
  Tensor h = relu(add(matmul(concat_cols(z1, z2), w(0)), w(1)));
  h = relu(add(matmul(h, w(2)), w(3)));
  return add(matmul(h, w(4)), w(5));
}

// ---- DV bound --------------------------------------------------------------------

Tensor dv_bound(const MineNetwork& f, const Tensor& z1, const Tensor& z2,
                std::span<const std::size_t> permutation, bool track_weights) {
  const std::size_t n = z1.rows();
  require(n >= 2, "dv_bound: batch size must be at least 2");
  require(z2.rows() == n && permutation.size() == n, "dv_bound: batch sizes differ");
  Tensor joint = f.forward(z1, z2, track_weights);
  Tensor marginal = f.forward(z1, index_select_rows(z2, permutation), track_weights);
  Tensor log_mean_exp = add_scalar(logsumexp(marginal), -std::log(static_cast<double>(n)));
  return sub(mean(joint), log_mean_exp);
}

Tensor dv_bound(const MineNetwork& f, const Tensor& z1, const Tensor& z2, Rng& rng,
                bool track_weights) {
  require(z1.rows() >= 2, "dv_bound: batch size must be at least 2");
  const auto perm = rng.permutation(z1.rows());
  return dv_bound(f, z1, z2, perm, track_weights);
}

double MineTrainer::step(MineNetwork& f, const Tensor& z1_in, const Tensor& z2_in, Rng& rng) {
  const std::size_t n = z1_in.rows();
  require(n >= 2, "mine update: batch size must be at least 2");
  const Tensor z1 = z1_in.detach();
  const Tensor z2 = z2_in.detach();
  const auto perm = rng.permutation(n);

  Tensor joint = f.forward(z1, z2);
  Tensor marginal = f.forward(z1, index_select_rows(z2, perm));
  Tensor log_mean_exp = add_scalar(logsumexp(marginal), -std::log(static_cast<double>(n)));
  const double bound = mean(joint).item() - log_mean_exp.item();
  if (!std::isfinite(bound) || bound > kDivergenceLimit) {
    throw NumericalError("MINE diverged: DV bound " + std::to_string(bound) + " nats");
  }

  Tensor mean_exp = exp(log_mean_exp);
  const double batch_mean_exp = mean_exp.item();
  ema_ = has_ema_ ? decay_ * ema_ + (1.0 - decay_) * batch_mean_exp : batch_mean_exp;
  has_ema_ = true;

  // ascend E[f] - E[exp f] / ema, i.e. descend its negation
  Tensor objective = sub(mean(joint), scale(mean_exp, 1.0 / ema_));
  auto& params = f.parameters();
  zero_grads(params);
  backward(neg(objective));
  adam_step(adam_, params);
  return bound;
}

MineTrace train_mine(MineNetwork& f, const SampleStream& stream, std::size_t steps,
                     MineTrainer& trainer, Rng& rng) {
  MineTrace trace;
  trace.bound.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    auto [z1, z2] = stream(rng);
    trace.bound.push_back(trainer.step(f, z1, z2, rng));
  }
  return trace;
}

double estimate_mi(const MineNetwork& f, const Tensor& z1, const Tensor& z2, Rng& rng,
                   std::size_t shuffles) {
  require(shuffles >= 1, "estimate_mi: at least one shuffle");
  NoGradGuard guard;
  double acc = 0.0;
  for (std::size_t s = 0; s < shuffles; ++s) acc += dv_bound(f, z1, z2, rng, false).item();
  return acc / static_cast<double>(shuffles);
}

namespace {

// Rows `rows` of x, standardized with per-column mean/std taken over `fit`.
Tensor standardized_rows(const Tensor& x, std::span<const std::size_t> fit,
                         std::span<const std::size_t> rows) {
  const std::size_t d = x.cols();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  const auto v = x.values();
  for (std::size_t r : fit) {
    for (std::size_t c = 0; c < d; ++c) mu[c] += v[r * d + c];
  }
  for (double& m : mu) m /= static_cast<double>(fit.size());
  for (std::size_t r : fit) {
    for (std::size_t c = 0; c < d; ++c) sd[c] += (v[r * d + c] - mu[c]) * (v[r * d + c] - mu[c]);
  }
  for (double& s : sd) s = std::sqrt(s / static_cast<double>(fit.size()));
  std::vector<double> out;
  out.reserve(rows.size() * d);
  for (std::size_t r : rows) {
    for (std::size_t c = 0; c < d; ++c) {
      out.push_back(sd[c] > 1e-12 ? (v[r * d + c] - mu[c]) / sd[c] : 0.0);
    }
  }
  return Tensor(rows.size(), d, std::move(out));
}

}  // namespace

ProbeResult probe_mutual_information(const Tensor& z1, const Tensor& z2, const ProbeOptions& opt,
                                     Rng& rng) {
  require(z1.rows() == z2.rows(), "probe: z1 and z2 must pair row for row");
  require(opt.holdout_fraction > 0.0 && opt.holdout_fraction < 1.0, "probe: holdout fraction in (0,1)");
  const std::size_t n = z1.rows();
  const auto n_hold = static_cast<std::size_t>(std::floor(static_cast<double>(n) * opt.holdout_fraction));
  require(n_hold >= 2 && n - n_hold >= 2, "probe: need at least 2 training and 2 held-out rows");
  const auto perm = rng.permutation(n);
  const std::vector<std::size_t> fit(perm.begin(), perm.end() - static_cast<std::ptrdiff_t>(n_hold));
  const std::vector<std::size_t> hold(perm.end() - static_cast<std::ptrdiff_t>(n_hold), perm.end());
  const Tensor a_fit = standardized_rows(z1, fit, fit), b_fit = standardized_rows(z2, fit, fit);
  const Tensor a_hold = standardized_rows(z1, fit, hold), b_hold = standardized_rows(z2, fit, hold);

  Rng init = rng.fork(1);
  MineNetwork f(z1.cols(), z2.cols(), opt.hidden, init);
  MineTrainer trainer(AdamOptions{opt.lr});
  const std::size_t batch = std::min(opt.batch, fit.size());
  const SampleStream stream = [&](Rng& r) {
    std::vector<std::size_t> idx(batch);
    for (auto& i : idx) i = r.below(fit.size());
    NoGradGuard guard;
    return PairBatch{index_select_rows(a_fit, idx), index_select_rows(b_fit, idx)};
  };
  Rng train_rng = rng.fork(2);
  train_mine(f, stream, opt.steps, trainer, train_rng);
  Rng eval_rng = rng.fork(3);
  ProbeResult out;
  out.train_estimate = estimate_mi(f, a_fit, b_fit, eval_rng, opt.shuffles);
  out.holdout_estimate = estimate_mi(f, a_hold, b_hold, eval_rng, opt.shuffles);
  return out;
}

}  // namespace mrdib::info
