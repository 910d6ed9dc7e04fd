#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "mrdib/errors.hpp"
#include "mrdib/objectives.hpp"
#include "test_support.hpp"

using namespace mrdib;
using model::HostModel;
using num::Tensor;
using objectives::LossWeights;

namespace {

model::ModelConfig small_config(model::Variant v = model::Variant::full) {
  model::ModelConfig c;
  c.variant = v;
  c.dims = {6, 10, 8, 8};
  return c;
}

struct Fixture {
  data::InteractionDataset ds;
  data::FeatureMatrix visual, textual;

  explicit Fixture(std::uint64_t seed, std::size_t users = 20, std::size_t items = 24) {
    ds = testkit::ring_dataset(users, items, 8, seed);
    num::Rng rng(seed + 100);
    visual = testkit::random_features("visual", ds.n_items(), 5, rng);
    textual = testkit::random_features("textual", ds.n_items(), 4, rng);
  }

  HostModel host(model::Variant v, std::uint64_t seed) const {
    return HostModel(small_config(v), ds.n_users(), ds.n_items(), visual, textual, seed);
  }

  objectives::NegativeSampleBatch batch(std::size_t n, num::Rng& rng) const {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t u = 0; u < ds.n_users() && pairs.size() < n; ++u)
      for (std::size_t i : ds.train[u])
        if (pairs.size() < n) pairs.emplace_back(u, i);
    return objectives::make_batch(ds, pairs, 4, rng);
  }
};

double grad_norm(const Tensor& t) {
  double s = 0.0;
  for (double g : t.grad()) s += g * g;
  return std::sqrt(s);
}

std::vector<double> snapshot(const std::vector<model::NamedTensor>& params) {
  std::vector<double> out;
  for (const auto& [name, t] : params) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

}  // namespace

TEST(SampledSoftmax, Examples) {
  EXPECT_NEAR(objectives::sampled_softmax_nll(Tensor::row({2.0, 0.0})).item(), 0.1269, 5e-5);
  EXPECT_NEAR(objectives::sampled_softmax_nll(Tensor::row({2.0, 0.0})).item(), std::log1p(std::exp(-2.0)),
              1e-15);
  EXPECT_NEAR(objectives::sampled_softmax_nll(Tensor::row({0.3, 0.3})).item(), std::log(2.0), 1e-15);
  EXPECT_LT(objectives::sampled_softmax_nll(Tensor::row({80.0, 0.0, -1.0})).item(), 1e-30);
  EXPECT_THROW(objectives::sampled_softmax_nll(Tensor::row({1.0})), ContractViolation);
}

TEST(SampledSoftmax, AveragesRows) {
  Tensor s(2, 2, std::vector<double>{2.0, 0.0, 0.0, 0.0});
  EXPECT_NEAR(objectives::sampled_softmax_nll(s).item(),
              0.5 * (std::log1p(std::exp(-2.0)) + std::log(2.0)), 1e-15);
}

TEST(UniqueLoss, HandExamples) {
  const double uniform = objectives::sampled_softmax_nll(Tensor::row({0.0, 0.0})).item();
  const double sep = objectives::sampled_softmax_nll(Tensor::row({2.0, 0.0})).item();
  EXPECT_NEAR(2.0 * uniform, 1.3863, 5e-5);
  // 0.1269 + 0.6931 from the rounded parts
  EXPECT_NEAR(sep + uniform, std::log1p(std::exp(-2.0)) + std::log(2.0), 1e-15);
  EXPECT_NEAR(sep + uniform, 0.8200, 1e-4);
}

TEST(UniqueLoss, SumsBothUnimodalLikelihoods) {
  Fixture fx(1);
  HostModel host = fx.host(model::Variant::full, 2);
  num::Rng rng(3);
  const auto batch = fx.batch(12, rng);
  const auto lat = objectives::encode_batch(host, batch, rng);
  const double expect =
      objectives::sampled_softmax_nll(objectives::slot_scores(host, lat, model::ScoreMode::unimodal1)).item() +
      objectives::sampled_softmax_nll(objectives::slot_scores(host, lat, model::ScoreMode::unimodal2)).item();
  EXPECT_NEAR(objectives::unique_loss(host, lat).item(), expect, 1e-12);
}

TEST(Batch, NegativesAvoidTrainingPositives) {
  Fixture fx(2);
  num::Rng rng(1);
  const auto batch = fx.batch(40, rng);
  EXPECT_EQ(batch.negatives.size(), 40u * 4);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    EXPECT_EQ(batch.slot_item(b, 0), batch.positives[b]);
    for (std::size_t j = 1; j <= 4; ++j) EXPECT_FALSE(fx.ds.in_train(batch.users[b], batch.slot_item(b, j)));
  }
}

TEST(Batch, LatentsAreSharedPerDistinctItem) {
  Fixture fx(3);
  HostModel host = fx.host(model::Variant::full, 1);
  num::Rng rng(5);
  const auto batch = fx.batch(16, rng);
  const auto lat = objectives::encode_batch(host, batch, rng);
  EXPECT_TRUE(std::is_sorted(lat.items.begin(), lat.items.end()));
  EXPECT_EQ(lat.latents.visual.z.rows(), lat.items.size());
  for (std::size_t s = 0; s < lat.slot_items.size(); ++s) EXPECT_EQ(lat.items[lat.slot_local[s]], lat.slot_items[s]);
  for (std::size_t b = 0; b < lat.batch; ++b) EXPECT_EQ(lat.items[lat.positive_local[b]], batch.positives[b]);
}

TEST(MibLoss, ZeroEncodersGiveZeroKl) {
  Fixture fx(4);
  HostModel host = fx.host(model::Variant::mib_only, 1);
  for (auto m : {model::Modality::visual, model::Modality::textual})
    for (auto& [name, t] : host.encoder(m).named_parameters("e")) {
      Tensor h = t;
      for (double& v : h.values()) v = 0.0;
    }
  num::Rng rng(1);
  const auto batch = fx.batch(10, rng);
  const auto lat = objectives::encode_batch(host, batch, rng);
  const auto terms = objectives::mib_loss(host, lat);
  EXPECT_EQ(terms.kl_sum.item(), 0.0);
  EXPECT_NEAR(terms.nll_joint.item(),
              objectives::sampled_softmax_nll(objectives::slot_scores(host, lat, model::ScoreMode::joint)).item(),
              1e-15);
}

TEST(MibLoss, KlIsMeanOverPositiveInstances) {
  Fixture fx(5);
  HostModel host = fx.host(model::Variant::mib_only, 2);
  num::Rng rng(1);
  const auto batch = fx.batch(10, rng);
  const auto lat = objectives::encode_batch(host, batch, rng);
  const Tensor kv = info::kl_per_row(lat.latents.visual.posterior);
  const Tensor kt = info::kl_per_row(lat.latents.textual.posterior);
  double expect = 0.0;
  for (std::size_t r : lat.positive_local) expect += kv.values()[r] + kt.values()[r];
  expect /= static_cast<double>(lat.batch);
  EXPECT_NEAR(objectives::mib_loss(host, lat).kl_sum.item(), expect, 1e-12);
}

TEST(Redundancy, ZeroNetworkGivesZeroAndFrozenWeights) {
  Fixture fx(6);
  HostModel host = fx.host(model::Variant::full, 3);
  num::Rng rng(1);
  const auto batch = fx.batch(16, rng);
  const auto lat = objectives::encode_batch(host, batch, rng);
  const Tensor r = objectives::redundancy_loss(host, lat, rng);
  auto params = host.parameters();
  num::zero_grads(params);
  for (auto& p : host.mine().parameters()) p.zero_grad();
  num::backward(r);
  for (const auto& p : host.mine().parameters()) EXPECT_EQ(grad_norm(p), 0.0);
  EXPECT_GT(grad_norm(host.encoder(model::Modality::visual).named_parameters("e")[0].second), 0.0);

  for (auto& p : host.mine().parameters())
    for (double& v : p.values()) v = 0.0;
  EXPECT_EQ(objectives::redundancy_loss(host, lat, rng).item(), 0.0);
}

TEST(MineUpdate, LeavesModelParametersUntouched) {
  Fixture fx(7);
  HostModel host = fx.host(model::Variant::full, 4);
  num::Rng rng(1);
  const auto batch = fx.batch(16, rng);
  const auto lat = objectives::encode_batch(host, batch, rng);
  const auto before = snapshot(host.named_parameters());
  std::vector<double> mine_before;
  for (const auto& p : host.mine().parameters()) mine_before.insert(mine_before.end(), p.values().begin(), p.values().end());
  info::MineTrainer trainer;
  for (int i = 0; i < 5; ++i) objectives::mine_update(host, lat, trainer, rng);
  EXPECT_EQ(snapshot(host.named_parameters()), before);
  for (const auto& [name, t] : host.named_parameters())
    for (double g : t.grad()) EXPECT_EQ(g, 0.0) << name;
  std::vector<double> mine_after;
  for (const auto& p : host.mine().parameters()) mine_after.insert(mine_after.end(), p.values().begin(), p.values().end());
  EXPECT_NE(mine_after, mine_before);
  EXPECT_EQ(trainer.updates(), 5u);
}

TEST(MineUpdate, ScheduleRunsConfiguredStepsPerModelStep) {
  Fixture fx(8);
  HostModel host = fx.host(model::Variant::full, 5);
  LossWeights w;
  w.alpha2 = 0.05;
  w.mine_steps_per_model_step = 3;
  objectives::TrainOptions opt;
  opt.batch_size = 16;
  objectives::TrainerState st(opt, 1);
  const auto stats = objectives::train_epoch(host, fx.ds, w, st);
  EXPECT_GT(stats.batches, 1u);
  EXPECT_EQ(stats.mine_updates, 3 * stats.batches);
  EXPECT_EQ(st.mine.updates(), 3 * stats.batches);
  EXPECT_EQ(st.adam_model.step_count, stats.batches);
}

TEST(Total, HandArithmetic) {
  objectives::LossBreakdown parts{0.1269, 0.5, 0.02, 0.82, 0.0};
  LossWeights w{0.01, 0.05, 0.005};
  EXPECT_NEAR(objectives::weighted_total(parts, w), 0.1370, 1e-12);
}

TEST(Total, ReconstructsFromParts) {
  num::Rng seeds(9);
  for (int t = 0; t < 20; ++t) {
    Fixture fx(seeds.next_u64() % 1000);
    HostModel host = fx.host(model::Variant::full, seeds.next_u64());
    num::Rng rng(seeds.next_u64());
    const auto batch = fx.batch(12, rng);
    const auto lat = objectives::encode_batch(host, batch, rng);
    LossWeights w{rng.uniform(0, 0.1), rng.uniform(0, 0.1), rng.uniform(0, 0.1)};
    const auto total = objectives::mrdib_total(host, batch, &lat, w, rng);
    EXPECT_NEAR(total.parts.total, objectives::weighted_total(total.parts, w), 1e-12);
    EXPECT_EQ(total.total.item(), total.parts.total);
    EXPECT_GE(total.parts.nll_joint, 0.0);
    EXPECT_GE(total.parts.kl_sum, 0.0);
    EXPECT_GE(total.parts.nll_unimodal_sum, 0.0);
  }
}

TEST(Total, ZeroAlphasReduceToJointLikelihood) {
  Fixture fx(10);
  HostModel host = fx.host(model::Variant::full, 1);
  num::Rng rng(2);
  const auto batch = fx.batch(12, rng);
  const auto lat = objectives::encode_batch(host, batch, rng);
  const auto total = objectives::mrdib_total(host, batch, &lat, LossWeights{}, rng);
  EXPECT_EQ(total.parts.total, total.parts.nll_joint);
  EXPECT_EQ(total.parts.kl_sum, 0.0);
  EXPECT_EQ(total.parts.redundancy, 0.0);
  EXPECT_EQ(total.parts.nll_unimodal_sum, 0.0);
  EXPECT_EQ(total.parts.total, objectives::mib_loss(host, lat).nll_joint.item());
}

TEST(Total, RemovedTermsLeaveNoGradient) {
  Fixture fx(11);
  HostModel host = fx.host(model::Variant::full, 1);
  num::Rng rng(2);
  const auto batch = fx.batch(12, rng);
  const auto lat = objectives::encode_batch(host, batch, rng);
  auto params = host.parameters();

  LossWeights no_unique{0.01, 0.05, 0.0};
  num::zero_grads(params);
  for (auto& p : host.mine().parameters()) p.zero_grad();
  num::backward(objectives::mrdib_total(host, batch, &lat, no_unique, rng).total);
  for (auto arity : {model::Decoder::Arity::unimodal1, model::Decoder::Arity::unimodal2})
    for (const auto& [name, t] : host.decoder(arity).named_parameters("d")) EXPECT_EQ(grad_norm(t), 0.0);
  for (const auto& p : host.mine().parameters()) EXPECT_EQ(grad_norm(p), 0.0);

  LossWeights with_unique{0.0, 0.0, 0.01};
  num::zero_grads(params);
  num::backward(objectives::mrdib_total(host, batch, &lat, with_unique, rng).total);
  EXPECT_GT(grad_norm(host.decoder(model::Decoder::Arity::unimodal1).named_parameters("d")[0].second), 0.0);
}

TEST(Total, HostOnlyUsesBaseScores) {
  Fixture fx(12);
  HostModel host = fx.host(model::Variant::host_only, 1);
  num::Rng rng(2);
  const auto batch = fx.batch(12, rng);
  const auto total = objectives::mrdib_total(host, batch, nullptr, LossWeights{}, rng);
  EXPECT_NEAR(total.parts.nll_joint, objectives::host_nll(host, batch).item(), 1e-15);
  EXPECT_EQ(total.parts.total, total.parts.nll_joint);
}

TEST(Total, NonFiniteComponentIsNamed) {
  Fixture fx(13);
  HostModel host = fx.host(model::Variant::full, 1);
  Tensor ue = host.user_embedding();
  ue.values()[0] = std::numeric_limits<double>::quiet_NaN();
  num::Rng rng(2);
  const auto batch = fx.batch(12, rng);
  const auto lat = objectives::encode_batch(host, batch, rng);
  try {
    objectives::mrdib_total(host, batch, &lat, LossWeights{0.01, 0, 0}, rng);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("nll_joint"), std::string::npos);
  }
}

TEST(Weights, NegativeAlphaRejected) {
  LossWeights w{-0.1, 0, 0};
  EXPECT_THROW(w.validate(), ContractViolation);
  LossWeights s{0, 0, 0, 0};
  EXPECT_THROW(s.validate(), ContractViolation);
}

TEST(TrainEpoch, Deterministic) {
  Fixture fx(14);
  LossWeights w{0.01, 0.05, 0.005, 2};
  objectives::TrainOptions opt;
  opt.batch_size = 32;
  std::vector<double> runs[2];
  for (auto& out : runs) {
    HostModel host = fx.host(model::Variant::full, 7);
    objectives::TrainerState st(opt, 7);
    for (int e = 0; e < 2; ++e) {
      const auto s = objectives::train_epoch(host, fx.ds, w, st);
      out.push_back(s.mean.total);
    }
    const auto snap = snapshot(host.checkpoint_tensors());
    out.insert(out.end(), snap.begin(), snap.end());
  }
  EXPECT_EQ(runs[0], runs[1]);
}

TEST(TrainEpoch, PluginOffMatchesPureHostBitwise) {
  Fixture fx(15);
  objectives::TrainOptions opt;
  opt.batch_size = 32;
  HostModel full = fx.host(model::Variant::full, 3);
  HostModel mib = fx.host(model::Variant::mib_only, 3);
  objectives::TrainerState sf(opt, 3), sm(opt, 3);
  for (int e = 0; e < 3; ++e) {
    const auto a = objectives::train_epoch(full, fx.ds, LossWeights{}, sf);
    const auto b = objectives::train_epoch(mib, fx.ds, LossWeights{}, sm);
    EXPECT_EQ(a.mean.total, b.mean.total);
    EXPECT_EQ(a.mean.nll_joint, a.mean.total);
  }
  const auto pm = mib.named_parameters();
  const auto pf = full.named_parameters();
  for (std::size_t k = 0; k < pm.size(); ++k) {
    ASSERT_EQ(pm[k].first, pf[k].first);
    for (std::size_t i = 0; i < pm[k].second.size(); ++i)
      ASSERT_EQ(pm[k].second.values()[i], pf[k].second.values()[i]) << pm[k].first;
  }
}

TEST(TrainEpoch, VariantGuards) {
  Fixture fx(16);
  HostModel mib = fx.host(model::Variant::mib_only, 1);
  objectives::TrainerState st({}, 1);
  EXPECT_THROW(objectives::train_epoch(mib, fx.ds, LossWeights{0, 0.05, 0}, st), ContractViolation);
  EXPECT_THROW(objectives::train_epoch(mib, fx.ds, LossWeights{0, 0, 0.05}, st), ContractViolation);
}

TEST(GradCheck, LossTerms) {
  // Each term is a deterministic function of the parameters once the batch,
  // the reparameterization noise and the marginal permutation are fixed.
  Fixture fx(17, 10, 12);
  HostModel host = fx.host(model::Variant::full, 2);
  num::Rng brng(4);
  const auto batch = fx.batch(6, brng);
  const std::uint64_t latent_seed = 99;
  auto term = [&](int which) {
    num::Rng rng(latent_seed);
    const auto lat = objectives::encode_batch(host, batch, rng);
    switch (which) {
      case 0: return objectives::mib_loss(host, lat).nll_joint;
      case 1: return objectives::mib_loss(host, lat).kl_sum;
      case 2: return objectives::unique_loss(host, lat);
      case 3: {
        num::Rng prng(5);
        return objectives::redundancy_loss(host, lat, prng);
      }
      default: {
        num::Rng prng(5);
        return objectives::mrdib_total(host, batch, &lat, LossWeights{0.01, 0.05, 0.005}, prng).total;
      }
    }
  };
  auto params = host.parameters();
  for (int which = 0; which < 5; ++which) {
    num::zero_grads(params);
    num::backward(term(which));
    std::vector<double> analytic, numeric;
    for (auto& p : params) {
      for (std::size_t k = 0; k < p.size(); k += 3) {
        analytic.push_back(p.grad()[k]);
        const double x = p.values()[k];
        p.values()[k] = x + 1e-5;
        const double up = term(which).item();
        p.values()[k] = x - 1e-5;
        const double down = term(which).item();
        p.values()[k] = x;
        numeric.push_back((up - down) / 2e-5);
      }
    }
    EXPECT_LT(num::relative_error(analytic, numeric), 1e-4) << "term " << which;
  }
}
