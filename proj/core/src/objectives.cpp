#include "mrdib/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mrdib/errors.hpp"

namespace mrdib::objectives {

using namespace mrdib::num;
using model::ScoreMode;

void LossWeights::validate() const {
  require(alpha1 >= 0.0 && alpha2 >= 0.0 && alpha3 >= 0.0, "loss weights must be non-negative");
  require(mine_steps_per_model_step >= 1, "mine_steps_per_model_step must be positive");
}

double weighted_total(const LossBreakdown& p, const LossWeights& w) {
  return p.nll_joint + w.alpha1 * p.kl_sum + w.alpha2 * p.redundancy + w.alpha3 * p.nll_unimodal_sum;
}

NegativeSampleBatch make_batch(const data::InteractionDataset& dataset,
                               std::span<const std::pair<std::size_t, std::size_t>> pairs,
                               std::size_t k, Rng& rng) {
  require(k >= 1, "make_batch: K must be at least 1");
  NegativeSampleBatch b;
  b.k = k;
  b.users.reserve(pairs.size());
  b.positives.reserve(pairs.size());
  b.negatives.reserve(pairs.size() * k);
  for (const auto& [u, i] : pairs) {
    b.users.push_back(u);
    b.positives.push_back(i);
    const auto neg = data::sample_negatives(dataset, u, k, rng);
    b.negatives.insert(b.negatives.end(), neg.begin(), neg.end());
  }
  return b;
}

Tensor sampled_softmax_nll(const Tensor& scores) {
  require(scores.cols() >= 2, "sampled_softmax_nll: need a positive and at least one negative");
  require(scores.rows() >= 1, "sampled_softmax_nll: empty batch");
  return mean(sub(row_logsumexp(scores), slice_cols(scores, 0, 1)));
}

BatchLatents encode_batch(const HostModel& host, const NegativeSampleBatch& batch, Rng& rng) {
  require(batch.size() > 0, "empty batch");
  BatchLatents lat;
  lat.batch = batch.size();
  lat.width = 1 + batch.k;
  const std::size_t slots = lat.batch * lat.width;
  lat.slot_users.reserve(slots);
  lat.slot_items.reserve(slots);
  for (std::size_t b = 0; b < lat.batch; ++b) {
    for (std::size_t j = 0; j < lat.width; ++j) {
      lat.slot_users.push_back(batch.users[b]);
      lat.slot_items.push_back(batch.slot_item(b, j));
    }
  }
  lat.items = lat.slot_items;
  std::sort(lat.items.begin(), lat.items.end());
  lat.items.erase(std::unique(lat.items.begin(), lat.items.end()), lat.items.end());
  std::vector<std::size_t> local_of(host.n_items(), 0);
  for (std::size_t r = 0; r < lat.items.size(); ++r) local_of[lat.items[r]] = r;
  lat.slot_local.reserve(slots);
  for (std::size_t it : lat.slot_items) lat.slot_local.push_back(local_of[it]);
  lat.positive_local.reserve(lat.batch);
  for (std::size_t it : batch.positives) lat.positive_local.push_back(local_of[it]);
  lat.latents = host.encode_items(lat.items, rng, info::SampleMode::sample);
  return lat;
}

Tensor slot_scores(const HostModel& host, const BatchLatents& lat, ScoreMode mode) {
  Tensor side = host.decode(lat.latents, mode);
  Tensor s = model::score_pairs(host, lat.slot_users, lat.slot_items, side, lat.slot_local);
  return reshape(s, lat.batch, lat.width);
}

MibTerms mib_loss(const HostModel& host, const BatchLatents& lat) {
  require(lat.batch > 0, "mib_loss: empty batch");
  Tensor nll = sampled_softmax_nll(slot_scores(host, lat, ScoreMode::joint));
  Tensor kl_items = add(info::kl_per_row(lat.latents.visual.posterior),
                        info::kl_per_row(lat.latents.textual.posterior));
  Tensor kl = mean(index_select_rows(kl_items, lat.positive_local));
  return {nll, kl};
}

Tensor host_nll(const HostModel& host, const NegativeSampleBatch& batch) {
  require(batch.size() > 0, "host_nll: empty batch");
  const std::size_t width = 1 + batch.k;
  std::vector<std::size_t> users, items;
  users.reserve(batch.size() * width);
  items.reserve(batch.size() * width);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    for (std::size_t j = 0; j < width; ++j) {
      users.push_back(batch.users[b]);
      items.push_back(batch.slot_item(b, j));
    }
  }
  std::vector<std::size_t> distinct = items;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<std::size_t> local;
  local.reserve(items.size());
  for (std::size_t it : items) {
    local.push_back(static_cast<std::size_t>(
        std::lower_bound(distinct.begin(), distinct.end(), it) - distinct.begin()));
  }
  Tensor side = host.project_features(distinct);
  Tensor s = model::score_pairs(host, users, items, side, local);
  return sampled_softmax_nll(reshape(s, batch.size(), width));
}

Tensor unique_loss(const HostModel& host, const BatchLatents& lat) {
  require(lat.batch > 0, "unique_loss: empty batch");
  return add(sampled_softmax_nll(slot_scores(host, lat, ScoreMode::unimodal1)),
             sampled_softmax_nll(slot_scores(host, lat, ScoreMode::unimodal2)));
}

Tensor redundancy_loss(const HostModel& host, const BatchLatents& lat,
                       std::span<const std::size_t> permutation) {
  require(lat.items.size() >= 2, "redundancy_loss: need at least 2 distinct items in the batch");
  return info::dv_bound(host.mine(), lat.latents.visual.z, lat.latents.textual.z, permutation,
                        /*track_weights=*/false);
}

Tensor redundancy_loss(const HostModel& host, const BatchLatents& lat, Rng& rng) {
  require(lat.items.size() >= 2, "redundancy_loss: need at least 2 distinct items in the batch");
  const auto perm = rng.permutation(lat.items.size());
  return redundancy_loss(host, lat, perm);
}

double mine_update(HostModel& host, const BatchLatents& lat, info::MineTrainer& trainer, Rng& rng) {
  require(lat.items.size() >= 2, "mine_update: need at least 2 distinct items in the batch");
  return trainer.step(host.mine(), lat.latents.visual.z.detach(), lat.latents.textual.z.detach(), rng);
}

namespace {
void check_finite(double v, const char* component) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string("non-finite ") + component + " term in the training objective");
  }
}
}  // namespace

TotalLoss mrdib_total(const HostModel& host, const NegativeSampleBatch& batch,
                      const BatchLatents* lat, const LossWeights& w, Rng& mine_rng) {
  w.validate();
  TotalLoss out;
  if (host.config().variant == model::Variant::host_only) {
    out.total = host_nll(host, batch);
    out.parts.nll_joint = out.total.item();
    check_finite(out.parts.nll_joint, "nll_joint");
    out.parts.total = out.parts.nll_joint;
    return out;
  }
  require(lat != nullptr, "mrdib_total: latents required for the representation variants");
  MibTerms mib = mib_loss(host, *lat);
  out.parts.nll_joint = mib.nll_joint.item();
  check_finite(out.parts.nll_joint, "nll_joint");
  Tensor total = mib.nll_joint;
  if (w.alpha1 > 0.0) {
    out.parts.kl_sum = mib.kl_sum.item();
    check_finite(out.parts.kl_sum, "kl_sum");
    total = add(total, scale(mib.kl_sum, w.alpha1));
  }
  if (w.alpha2 > 0.0) {
    Tensor red = redundancy_loss(host, *lat, mine_rng);
    out.parts.redundancy = red.item();
    check_finite(out.parts.redundancy, "redundancy");
    total = add(total, scale(red, w.alpha2));
  }
  if (w.alpha3 > 0.0) {
    Tensor uni = unique_loss(host, *lat);
    out.parts.nll_unimodal_sum = uni.item();
    check_finite(out.parts.nll_unimodal_sum, "nll_unimodal_sum");
    total = add(total, scale(uni, w.alpha3));
  }
  out.parts.total = total.item();
  check_finite(out.parts.total, "total");
  out.total = total;
  return out;
}

TrainerState::TrainerState(TrainOptions opts, std::uint64_t seed)
    : options(opts),
      adam_model(opts.adam),
      mine(opts.adam),
      shuffle_rng(Rng(seed).fork(101)),
      negative_rng(Rng(seed).fork(102)),
      latent_rng(Rng(seed).fork(103)),
      mine_rng(Rng(seed).fork(104)) {}

EpochStats train_epoch(HostModel& host, const data::InteractionDataset& dataset,
                       const LossWeights& weights, TrainerState& state) {
  weights.validate();
  const auto variant = host.config().variant;
  const bool representation = variant != model::Variant::host_only;
  require(weights.alpha2 == 0.0 || host.has_mine(),
          "alpha2 > 0 needs the statistics network (full variant)");
  require(weights.alpha3 == 0.0 || host.has_unimodal_decoders(),
          "alpha3 > 0 needs the unimodal decoders (full variant)");
  require(state.options.batch_size >= 1, "batch size must be positive");

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  pairs.reserve(dataset.n_train());
  for (std::size_t u = 0; u < dataset.n_users(); ++u) {
    for (std::size_t i : dataset.train[u]) pairs.emplace_back(u, i);
  }
  require(!pairs.empty(), "train_epoch: empty training split");
  state.shuffle_rng.shuffle(pairs);

  std::vector<Tensor> params = host.parameters();
  EpochStats stats;
  double weight_sum = 0.0;
  for (std::size_t start = 0; start < pairs.size(); start += state.options.batch_size) {
    const std::size_t end = std::min(pairs.size(), start + state.options.batch_size);
    const std::span<const std::pair<std::size_t, std::size_t>> chunk(pairs.data() + start, end - start);
    NegativeSampleBatch batch = make_batch(dataset, chunk, state.options.negatives, state.negative_rng);

    std::optional<BatchLatents> lat;
    if (representation) lat = encode_batch(host, batch, state.latent_rng);

    if (weights.alpha2 > 0.0 && lat->items.size() >= 2) {
      for (std::size_t s = 0; s < weights.mine_steps_per_model_step; ++s) {
        mine_update(host, *lat, state.mine, state.mine_rng);
        ++stats.mine_updates;
      }
    }

    TotalLoss loss = mrdib_total(host, batch, lat ? &*lat : nullptr, weights, state.mine_rng);
    zero_grads(params);
    backward(loss.total);
    adam_step(state.adam_model, params);

    const double wgt = static_cast<double>(batch.size());
    weight_sum += wgt;
    stats.mean.nll_joint += wgt * loss.parts.nll_joint;
    stats.mean.kl_sum += wgt * loss.parts.kl_sum;
    stats.mean.redundancy += wgt * loss.parts.redundancy;
    stats.mean.nll_unimodal_sum += wgt * loss.parts.nll_unimodal_sum;
    stats.mean.total += wgt * loss.parts.total;
    ++stats.batches;
  }
  stats.mean.nll_joint /= weight_sum;
  stats.mean.kl_sum /= weight_sum;
  stats.mean.redundancy /= weight_sum;
  stats.mean.nll_unimodal_sum /= weight_sum;
  stats.mean.total /= weight_sum;
  ++state.epochs_done;
  return stats;
}

}  // namespace mrdib::objectives
