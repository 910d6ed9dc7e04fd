#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "mrdib/data.hpp"
#include "mrdib/infotheory.hpp"
#include "mrdib/model.hpp"
#include "mrdib/optim.hpp"

namespace mrdib::objectives {

using model::HostModel;
using num::Rng;
using num::Tensor;

/// Coefficients of the combined objective. A zero coefficient removes its
/// term from the computation graph entirely.
struct LossWeights {
  double alpha1 = 0.0;  // compression (KL to the prior)
  double alpha2 = 0.0;  // redundancy (DV bound between the two latents)
  double alpha3 = 0.0;  // unique information (unimodal likelihoods)
  std::size_t mine_steps_per_model_step = 1;

  void validate() const;
};

struct LossBreakdown {
  double nll_joint = 0.0;
  double kl_sum = 0.0;
  double redundancy = 0.0;
  double nll_unimodal_sum = 0.0;
  double total = 0.0;
};

/// nll_joint + a1 kl_sum + a2 redundancy + a3 nll_unimodal_sum on plain numbers.
double weighted_total(const LossBreakdown& parts, const LossWeights& weights);

/// B positives with K sampled negatives each (negatives row-major, B x K).
struct NegativeSampleBatch {
  std::vector<std::size_t> users;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
  std::size_t k = 0;

  std::size_t size() const { return users.size(); }
  /// Candidate list per instance: positive first, then its negatives.
  std::size_t slot_item(std::size_t b, std::size_t j) const {
    return j == 0 ? positives[b] : negatives[b * k + j - 1];
  }
};

NegativeSampleBatch make_batch(const data::InteractionDataset& dataset,
                               std::span<const std::pair<std::size_t, std::size_t>> pairs,
                               std::size_t k, Rng& rng);

/// -ln(e^{s+} / (e^{s+} + sum_j e^{s-_j})) per row (column 0 holds s+),
/// averaged over rows.
Tensor sampled_softmax_nll(const Tensor& scores);

/// Latents for the distinct items of a batch: one reparameterized draw per
/// distinct item, shared by every slot that references it.
struct BatchLatents {
  std::vector<std::size_t> items;           // distinct global item ids, ascending
  std::vector<std::size_t> slot_users;      // B*(1+K)
  std::vector<std::size_t> slot_items;      // B*(1+K)
  std::vector<std::size_t> slot_local;      // B*(1+K), rows into `items`
  std::vector<std::size_t> positive_local;  // B
  model::LatentPair latents;
  std::size_t batch = 0;
  std::size_t width = 0;  // 1 + K
};

BatchLatents encode_batch(const HostModel& host, const NegativeSampleBatch& batch, Rng& rng);

/// Slot scores (B x (1+K)) through the given decoder path.
Tensor slot_scores(const HostModel& host, const BatchLatents& lat, model::ScoreMode mode);

struct MibTerms {
  Tensor nll_joint;
  Tensor kl_sum;
};

MibTerms mib_loss(const HostModel& host, const BatchLatents& lat);
/// Likelihood of the host-only variant (base-mode scores).
Tensor host_nll(const HostModel& host, const NegativeSampleBatch& batch);
Tensor unique_loss(const HostModel& host, const BatchLatents& lat);
/// DV bound on the batch latents with the statistics network frozen.
Tensor redundancy_loss(const HostModel& host, const BatchLatents& lat,
                       std::span<const std::size_t> permutation);
Tensor redundancy_loss(const HostModel& host, const BatchLatents& lat, Rng& rng);

/// One ascent step of the statistics network on detached batch latents.
/// Encoder and decoder parameters are not touched.
double mine_update(HostModel& host, const BatchLatents& lat, info::MineTrainer& trainer, Rng& rng);

struct TotalLoss {
  Tensor total;
  LossBreakdown parts;
};

/// total = nll_joint + a1 kl_sum + a2 redundancy + a3 nll_unimodal_sum.
/// Throws NumericalError naming the first non-finite component.
TotalLoss mrdib_total(const HostModel& host, const NegativeSampleBatch& batch,
                      const BatchLatents* lat, const LossWeights& weights, Rng& mine_rng);

struct TrainOptions {
  std::size_t batch_size = 2048;
  std::size_t negatives = 4;
  num::AdamOptions adam;
};

/// Mutable training state owned by one loop: optimizers and the random
/// streams for shuffling, negatives, latent draws and the statistics network.
struct TrainerState {
  TrainOptions options;
  num::AdamState adam_model;
  info::MineTrainer mine;
  Rng shuffle_rng;
  Rng negative_rng;
  Rng latent_rng;
  Rng mine_rng;
  std::size_t epochs_done = 0;

  TrainerState(TrainOptions opts, std::uint64_t seed);
};

struct EpochStats {
  LossBreakdown mean;
  std::size_t batches = 0;
  std::size_t mine_updates = 0;
};

/// One pass over the training split: per batch, mine updates on the
/// schedule, then one backward pass through the total and an Adam step on
/// the model parameters.
EpochStats train_epoch(HostModel& host, const data::InteractionDataset& dataset,
                       const LossWeights& weights, TrainerState& state);

}  // namespace mrdib::objectives
