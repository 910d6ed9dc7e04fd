#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "mrdib/errors.hpp"
#include "mrdib/synth.hpp"
#include "test_support.hpp"

using namespace mrdib;
using data::ItemBits;
using data::SynthConfig;
using data::UserKey;

namespace {

struct Classes {
  bool unique, redundant, synergy;
};

// Exhaustive Bayes accuracy for predicting relevance from a view of the item
// bits, with one bit per enabled class and uniform item bits.
template <typename View>
double bayes_accuracy(const Classes& c, const UserKey& key, View view) {
  std::map<std::vector<int>, std::pair<int, int>> groups;  // view -> (negatives, positives)
  const int n_bits = 5;
  int total = 0;
  for (int mask = 0; mask < (1 << n_bits); ++mask) {
    auto bit = [&](int k) { return (mask >> k) & 1; };
    ItemBits it;
    if (c.unique) {
      it.unique1 = {bit(0)};
      it.unique2 = {bit(1)};
    }
    if (c.redundant) it.redundant = {bit(2)};
    if (c.synergy) {
      it.synergy_a = {bit(3)};
      it.synergy_b = {bit(4)};
    }
    const bool y = data::is_relevant(key, it);
    auto& g = groups[view(it)];
    (y ? g.second : g.first) += 1;
    ++total;
  }
  int correct = 0;
  for (const auto& [v, g] : groups) correct += std::max(g.first, g.second);
  return static_cast<double>(correct) / total;
}

std::vector<int> cat(std::initializer_list<const std::vector<int>*> parts) {
  std::vector<int> v;
  for (const auto* p : parts) v.insert(v.end(), p->begin(), p->end());
  return v;
}

double plugin_mi(const std::vector<std::vector<int>>& x, const std::vector<int>& y) {
  std::map<std::vector<int>, double> px;
  std::map<std::pair<std::vector<int>, int>, double> pxy;
  double py1 = 0.0;
  const double n = static_cast<double>(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    px[x[i]] += 1.0 / n;
    pxy[{x[i], y[i]}] += 1.0 / n;
    py1 += y[i] / n;
  }
  double mi = 0.0;
  for (const auto& [k, p] : pxy) {
    const double py = k.second ? py1 : 1.0 - py1;
    mi += p * std::log(p / (px[k.first] * py));
  }
  return mi;
}

std::vector<int> sign_code(std::span<const double> row, std::size_t begin, std::size_t end) {
  std::vector<int> out;
  for (std::size_t d = begin; d < end; ++d) out.push_back(row[d] > 0 ? 1 : 0);
  return out;
}

}  // namespace

TEST(Synth, ConfigNeedsAnInformationClass) {
  SynthConfig c;
  EXPECT_THROW(data::synth_pid_generate(c), ContractViolation);
  c.bits_redundant = 1;
  EXPECT_NO_THROW(data::synth_pid_generate(c));
}

TEST(Synth, BayesRatesFollowConstructionForEveryClassCombination) {
  num::Rng rng(3);
  for (int combo = 1; combo < 8; ++combo) {
    const Classes c{(combo & 1) != 0, (combo & 2) != 0, (combo & 4) != 0};
    UserKey key;
    auto kb = [&] { return std::vector<int>{static_cast<int>(rng.below(2))}; };
    if (c.unique) {
      key.unique1 = kb();
      key.unique2 = kb();
    }
    if (c.redundant) key.redundant = kb();
    if (c.synergy) key.synergy = kb();

    const double joint = bayes_accuracy(c, key, [](const ItemBits& b) {
      return cat({&b.unique1, &b.unique2, &b.redundant, &b.synergy_a, &b.synergy_b});
    });
    const double x1 = bayes_accuracy(c, key, [](const ItemBits& b) { return cat({&b.unique1, &b.redundant, &b.synergy_a}); });
    const double x2 = bayes_accuracy(c, key, [](const ItemBits& b) { return cat({&b.unique2, &b.redundant, &b.synergy_b}); });

    // Visible conditions pass with probability q; each hidden enabled class
    // then still has to match with probability 1/2.
    const int hidden = (c.unique ? 1 : 0) + (c.synergy ? 1 : 0);
    const double q = std::pow(0.5, (c.unique ? 1 : 0) + (c.redundant ? 1 : 0));
    const double p = std::pow(0.5, hidden);
    const double expect_unimodal = (1 - q) + q * std::max(p, 1 - p);
    EXPECT_DOUBLE_EQ(joint, 1.0) << "combo " << combo;
    EXPECT_DOUBLE_EQ(x1, expect_unimodal) << "combo " << combo;
    EXPECT_DOUBLE_EQ(x2, expect_unimodal) << "combo " << combo;
  }
}

TEST(Synth, SynergyOnlyIsInvisibleToEachModality) {
  const Classes c{false, false, true};
  UserKey key;
  key.synergy = {1};
  EXPECT_DOUBLE_EQ(bayes_accuracy(c, key, [](const ItemBits& b) { return b.synergy_a; }), 0.5);
  EXPECT_DOUBLE_EQ(bayes_accuracy(c, key, [](const ItemBits& b) { return b.synergy_b; }), 0.5);
  EXPECT_DOUBLE_EQ(bayes_accuracy(c, key, [](const ItemBits& b) { return cat({&b.synergy_a, &b.synergy_b}); }), 1.0);
}

TEST(Synth, NoiselessFeaturesAreSignCodesInLedgerOrder) {
  SynthConfig c;
  c.n_users = 5;
  c.n_items = 40;
  c.bits_unique_1 = 2;
  c.bits_unique_2 = 1;
  c.bits_redundant = 3;
  c.bits_synergy = 2;
  c.noise_dims = 3;
  c.noise_sigma = 0.0;
  c.seed = 9;
  const auto ds = data::synth_pid_generate(c);
  ASSERT_EQ(ds.visual.cols, c.visual_dims());
  ASSERT_EQ(ds.textual.cols, c.textual_dims());
  for (std::size_t i = 0; i < c.n_items; ++i) {
    const auto v = ds.visual.row(i);
    const auto t = ds.textual.row(i);
    const auto& b = ds.items[i];
    EXPECT_EQ(sign_code(v, 0, 2), b.unique1);
    EXPECT_EQ(sign_code(v, 2, 5), b.redundant);
    EXPECT_EQ(sign_code(v, 5, 7), b.synergy_a);
    EXPECT_EQ(sign_code(t, 0, 1), b.unique2);
    EXPECT_EQ(sign_code(t, 1, 4), b.redundant);
    EXPECT_EQ(sign_code(t, 4, 6), b.synergy_b);
    for (std::size_t d = 0; d < 7; ++d) EXPECT_EQ(std::abs(v[d]), 1.0);
  }
}

TEST(Synth, RedundantOnlyGivesEqualPluginInformation) {
  SynthConfig c;
  c.n_users = 3;
  c.n_items = 400;
  c.bits_redundant = 3;
  c.noise_dims = 0;
  c.noise_sigma = 0.0;
  c.seed = 5;
  const auto ds = data::synth_pid_generate(c);
  for (std::size_t u = 0; u < c.n_users; ++u) {
    std::vector<std::vector<int>> x1, x2, x12;
    std::vector<int> y;
    for (std::size_t i = 0; i < c.n_items; ++i) {
      x1.push_back(sign_code(ds.visual.row(i), 0, 3));
      x2.push_back(sign_code(ds.textual.row(i), 0, 3));
      auto both = x1.back();
      both.insert(both.end(), x2.back().begin(), x2.back().end());
      x12.push_back(both);
      y.push_back(ds.relevant(u, i) ? 1 : 0);
    }
    const double i1 = plugin_mi(x1, y), i2 = plugin_mi(x2, y), i12 = plugin_mi(x12, y);
    EXPECT_GT(i1, 0.3);
    EXPECT_NEAR(i1, i2, 1e-12);
    EXPECT_NEAR(i1, i12, 1e-12);
  }
}

TEST(Synth, UniqueBitLivesInOneModality) {
  const Classes c{true, false, false};
  UserKey key;
  key.unique1 = {0};
  key.unique2 = {1};
  // predicting the unique1 bit itself
  auto acc = [&](auto view) {
    std::map<std::vector<int>, std::pair<int, int>> g;
    for (int mask = 0; mask < 4; ++mask) {
      ItemBits it;
      it.unique1 = {mask & 1};
      it.unique2 = {(mask >> 1) & 1};
      auto& e = g[view(it)];
      (it.unique1[0] ? e.second : e.first) += 1;
    }
    int correct = 0;
    for (const auto& [k, e] : g) correct += std::max(e.first, e.second);
    return correct / 4.0;
  };
  EXPECT_DOUBLE_EQ(acc([](const ItemBits& b) { return b.unique1; }), 1.0);
  EXPECT_DOUBLE_EQ(acc([](const ItemBits& b) { return b.unique2; }), 0.5);
  (void)c;
}

TEST(Synth, InteractionsAreRelevantItems) {
  SynthConfig c;
  c.n_users = 20;
  c.n_items = 60;
  c.bits_unique_1 = 1;
  c.bits_synergy = 1;
  c.positives_per_user = 6;
  c.seed = 2;
  const auto ds = data::synth_pid_generate(c);
  std::map<std::string, std::size_t> per_user;
  for (const auto& r : ds.interactions) {
    const std::size_t u = std::stoul(r.user.substr(1));
    const std::size_t i = std::stoul(r.item.substr(1));
    EXPECT_TRUE(ds.relevant(u, i));
    ++per_user[r.user];
  }
  for (const auto& [u, n] : per_user) EXPECT_LE(n, 6u);
}

TEST(Synth, LedgerDisjointAndCovering) {
  SynthConfig c;
  c.bits_unique_1 = 2;
  c.bits_unique_2 = 3;
  c.bits_redundant = 1;
  c.bits_synergy = 2;
  c.noise_dims = 4;
  const auto ds = data::synth_pid_generate(c);
  auto check = [](const std::vector<data::DimRange>& ranges, std::size_t dims) {
    std::size_t at = 0;
    for (const auto& r : ranges) {
      EXPECT_EQ(r.begin, at);
      EXPECT_GT(r.end, r.begin);
      at = r.end;
    }
    EXPECT_EQ(at, dims);
  };
  check(ds.ledger.visual, c.visual_dims());
  check(ds.ledger.textual, c.textual_dims());
  const auto j = nlohmann::json::parse(ds.ledger.to_json());
  EXPECT_EQ(j["visual"][0]["class"], "unique1");
  EXPECT_EQ(j["textual"][0]["class"], "unique2");
}

TEST(Synth, DeterministicFiles) {
  SynthConfig c;
  c.n_users = 30;
  c.n_items = 50;
  c.bits_unique_1 = 1;
  c.bits_redundant = 1;
  c.seed = 77;
  testkit::TempDir a, b;
  data::write_synth(data::synth_pid_generate(c), a.path().string());
  data::write_synth(data::synth_pid_generate(c), b.path().string());
  for (const char* f : {"interactions.tsv", "visual.mmf", "visual.mmf.ids", "textual.mmf", "textual.mmf.ids", "ledger.json"}) {
    ASSERT_TRUE(std::filesystem::exists(a.file(f))) << f;
    EXPECT_EQ(testkit::read_file(a.file(f)), testkit::read_file(b.file(f))) << f;
  }
}

TEST(Synth, FilesReloadIntoSameDataset) {
  SynthConfig c;
  c.n_users = 30;
  c.n_items = 50;
  c.bits_unique_2 = 2;
  c.bits_synergy = 1;
  c.seed = 8;
  const auto ds = data::synth_pid_generate(c);
  testkit::TempDir tmp;
  data::write_synth(ds, tmp.path().string());
  EXPECT_EQ(data::load_interactions(tmp.file("interactions.tsv")), ds.interactions);
  const auto v = data::load_features(tmp.file("visual.mmf"), ds.item_ids, "visual");
  const auto t = data::load_features(tmp.file("textual.mmf"), ds.item_ids, "textual");
  ASSERT_EQ(v.values.size(), ds.visual.values.size());
  for (std::size_t k = 0; k < v.values.size(); ++k)
    EXPECT_EQ(v.values[k], static_cast<double>(static_cast<float>(ds.visual.values[k])));
  EXPECT_EQ(t.cols, ds.textual.cols);
}

TEST(Synth, IndexedViewAlignsFeatures) {
  SynthConfig c;
  c.n_users = 40;
  c.n_items = 60;
  c.bits_redundant = 1;
  c.seed = 4;
  const auto ds = data::synth_pid_generate(c);
  const auto ix = data::index_synth(ds, 12);
  ASSERT_EQ(ix.visual.rows, ix.dataset.n_items());
  for (std::size_t i = 0; i < ix.dataset.n_items(); ++i) {
    const auto a = ix.visual.row(i);
    const auto b = ds.visual.row(ix.source_item[i]);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
    EXPECT_EQ(ix.dataset.item_ids[i], ds.item_ids[ix.source_item[i]]);
  }
  for (std::size_t u = 0; u < ix.dataset.n_users(); ++u)
    for (std::size_t i : ix.dataset.positives[u]) EXPECT_TRUE(data::synth_relevant(ds, ix, u, i));
}
