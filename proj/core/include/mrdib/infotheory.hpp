#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "mrdib/optim.hpp"
#include "mrdib/rng.hpp"
#include "mrdib/tensor.hpp"

namespace mrdib::info {

using num::Rng;
using num::Tensor;

/// Batch of diagonal Gaussians q(z|x): one row per posterior, d columns.
/// The standard-normal prior is mean = 0, log_variance = 0.
struct DiagonalGaussian {
  Tensor mean;
  Tensor log_variance;

  std::size_t rows() const { return mean.rows(); }
  std::size_t dim() const { return mean.cols(); }

  static DiagonalGaussian standard(std::size_t rows, std::size_t dim);
  /// Throws ContractViolation when shapes differ or entries are non-finite.
  void validate() const;
};

/// Closed-form KL(q || N(0, I)) summed over every row and dimension, in nats:
/// 0.5 * sum(mu^2 + sigma^2 - ln sigma^2 - 1).
Tensor kl_diag_gaussian_to_standard(const DiagonalGaussian& q);
/// Same quantity per row (rows x 1).
Tensor kl_per_row(const DiagonalGaussian& q);

struct McEstimate {
  double value = 0.0;
  double standard_error = 0.0;
};

/// Monte-Carlo E_q[ln q(z) - ln p(z)] over the flattened posterior.
/// Independent of the closed form; n_samples must be at least 1000.
McEstimate mc_kl_oracle(const DiagonalGaussian& q, std::size_t n_samples, Rng& rng);

enum class SampleMode { sample, mean };

struct LatentSample {
  Tensor z;
  DiagonalGaussian posterior;
  Tensor epsilon;
};

/// z = mu + exp(0.5 * log_variance) * eps. In mean mode eps = 0 and z = mu.
LatentSample reparameterize(const DiagonalGaussian& q, Rng& rng, SampleMode mode);

/// -0.5 ln(1 - rho^2): MI of a bivariate standard Gaussian with correlation rho.
double gaussian_mi_analytic(double rho);

/// Statistics network f(z1, z2) -> scalar: two relu hidden layers.
class MineNetwork {
 public:
  MineNetwork() = default;
  MineNetwork(std::size_t dim1, std::size_t dim2, std::size_t hidden, Rng& rng);
  /// All weights zero, hence f == 0.
  static MineNetwork zeros(std::size_t dim1, std::size_t dim2, std::size_t hidden);

  /// n x 1 statistics for paired rows. With track_weights = false the
  /// weights enter as constants so no gradient reaches the network.
  Tensor forward(const Tensor& z1, const Tensor& z2, bool track_weights = true) const;

  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t input_dim() const { return dim1_ + dim2_; }

 private:
  std::size_t dim1_ = 0, dim2_ = 0, hidden_ = 0;
  // w1, b1, w2, b2, w3, b3
  std::vector<Tensor> params_;
};

/// Donsker-Varadhan bound on I(Z1; Z2):
///   mean(f(z1, z2)) - ln mean(exp(f(z1, z2[perm])))
/// where the marginal pairs come from permuting z2 within the batch.
Tensor dv_bound(const MineNetwork& f, const Tensor& z1, const Tensor& z2,
                std::span<const std::size_t> permutation, bool track_weights = true);
Tensor dv_bound(const MineNetwork& f, const Tensor& z1, const Tensor& z2, Rng& rng,
                bool track_weights = true);

/// Ascent on the DV bound for the statistics network only. The gradient of
/// the log-partition term uses an exponential moving average of
/// E[exp(f)] in its denominator.
class MineTrainer {
 public:
  static constexpr double kDivergenceLimit = 50.0;

  explicit MineTrainer(num::AdamOptions opts = {}, double ema_decay = 0.99)
      : adam_(opts), decay_(ema_decay) {}

  /// One update on a joint batch (inputs are detached). Returns the DV bound
  /// of the batch before the update. Throws NumericalError on divergence.
  double step(MineNetwork& f, const Tensor& z1, const Tensor& z2, Rng& rng);

  const num::AdamState& adam() const { return adam_; }
  std::uint64_t updates() const { return adam_.step_count; }
  double ema() const { return ema_; }

 private:
  num::AdamState adam_;
  double decay_;
  double ema_ = 0.0;
  bool has_ema_ = false;
};

using PairBatch = std::pair<Tensor, Tensor>;
using SampleStream = std::function<PairBatch(Rng&)>;

struct MineTrace {
  std::vector<double> bound;
};

MineTrace train_mine(MineNetwork& f, const SampleStream& stream, std::size_t steps,
                     MineTrainer& trainer, Rng& rng);

/// DV bound of a fixed network on a (large) sample, averaged over `shuffles`
/// independent marginal permutations. No gradients are recorded.
double estimate_mi(const MineNetwork& f, const Tensor& z1, const Tensor& z2, Rng& rng,
                   std::size_t shuffles = 4);

/// Post-hoc dependence probe between paired representations: a fresh
/// statistics network is trained on a random subset of rows and the DV bound
/// is read on the held-out rows, so memorized pairings do not count.
/// Columns are standardized with the training rows' statistics.
struct ProbeOptions {
  std::size_t hidden = 64;
  std::size_t steps = 1500;
  std::size_t batch = 128;
  double lr = 1e-3;
  double holdout_fraction = 0.5;
  std::size_t shuffles = 32;
};

struct ProbeResult {
  double train_estimate = 0.0;
  double holdout_estimate = 0.0;
};

ProbeResult probe_mutual_information(const Tensor& z1, const Tensor& z2, const ProbeOptions& options,
                                     Rng& rng);

}  // namespace mrdib::info
