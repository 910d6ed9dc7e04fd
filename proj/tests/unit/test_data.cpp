#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "mrdib/data.hpp"
#include "mrdib/errors.hpp"
#include "test_support.hpp"

using namespace mrdib;
using data::Interaction;

namespace {

Interaction row(const std::string& u, const std::string& i) { return {u, i, std::nullopt}; }

std::set<std::pair<std::string, std::string>> pairs_of(const std::vector<Interaction>& rows) {
  std::set<std::pair<std::string, std::string>> s;
  for (const auto& r : rows) s.emplace(r.user, r.item);
  return s;
}

// Naive fixpoint: recount everything after every single removal pass.
std::set<std::pair<std::string, std::string>> naive_core(std::set<std::pair<std::string, std::string>> s,
                                                         std::size_t k) {
  for (;;) {
    std::map<std::string, std::size_t> uc, ic;
    for (const auto& [u, i] : s) {
      ++uc[u];
      ++ic[i];
    }
    std::set<std::pair<std::string, std::string>> next;
    for (const auto& p : s)
      if (uc[p.first] >= k && ic[p.second] >= k) next.insert(p);
    if (next == s) return s;
    s = std::move(next);
  }
}

std::vector<Interaction> complete(std::size_t users, std::size_t items) {
  std::vector<Interaction> rows;
  for (std::size_t u = 0; u < users; ++u)
    for (std::size_t i = 0; i < items; ++i) rows.push_back(row("u" + std::to_string(u), "i" + std::to_string(i)));
  return rows;
}

}  // namespace

TEST(Interactions, ParsesRows) {
  std::istringstream in("a\tx\t10\nb\ty\nc\tz\t-3\n");
  const auto rows = data::parse_interactions(in);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].timestamp, 10);
  EXPECT_FALSE(rows[1].timestamp.has_value());
  EXPECT_EQ(rows[2].timestamp, -3);
}

TEST(Interactions, MissingColumnNamesLine) {
  std::istringstream in("a\tx\nb\nc\tz\n");
  try {
    data::parse_interactions(in);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Interactions, NonIntegerTimestampRejected) {
  std::istringstream in("a\tx\t12.5\n");
  EXPECT_THROW(data::parse_interactions(in), DataError);
}

TEST(Interactions, DuplicatesKeepEarliestTimestamp) {
  std::istringstream in("a\tx\t30\na\tx\t10\na\tx\t20\nb\tx\n");
  const auto rows = data::parse_interactions(in);
  ASSERT_EQ(rows.size(), 2u);
  const auto it = std::find_if(rows.begin(), rows.end(), [](const Interaction& r) { return r.user == "a"; });
  ASSERT_NE(it, rows.end());
  EXPECT_EQ(it->timestamp, 10);
}

TEST(Interactions, FileRoundTripAndMissingFile) {
  testkit::TempDir tmp;
  const std::vector<Interaction> rows{{"u1", "i1", 5}, {"u2", "i1", std::nullopt}};
  data::write_interactions(tmp.file("x.tsv"), rows);
  EXPECT_EQ(data::load_interactions(tmp.file("x.tsv")), rows);
  EXPECT_THROW(data::load_interactions(tmp.file("missing.tsv")), DataError);
}

TEST(FiveCore, AlreadyCoreUnchanged) {
  const auto rows = complete(5, 6);
  EXPECT_EQ(pairs_of(data::five_core_filter(rows)), pairs_of(rows));
}

TEST(FiveCore, CascadeRemovesUserThenItem) {
  // K(5,5) plus user x on {j, i0, i1, i2} and item j held by u0..u3 and x.
  // x has 4 interactions and goes first; j then drops to 4 and follows.
  auto rows = complete(5, 5);
  for (const char* i : {"j", "i0", "i1", "i2"}) rows.push_back(row("x", i));
  for (const char* u : {"u0", "u1", "u2", "u3"}) rows.push_back(row(u, "j"));
  const auto out = data::five_core_filter(rows);
  EXPECT_EQ(pairs_of(out), pairs_of(complete(5, 5)));
}

TEST(FiveCore, AnnihilationIsReported) {
  std::istringstream in("u\ti\nu\ti\nu\ti\nu\ti\nu\ti\n");
  const auto rows = data::parse_interactions(in);
  ASSERT_EQ(rows.size(), 1u);
  try {
    data::five_core_filter(rows);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("annihilated"), std::string::npos);
  }
}

TEST(FiveCore, MatchesNaiveFixpointAndIsIdempotent) {
  num::Rng rng(31);
  for (int t = 0; t < 100; ++t) {
    std::vector<Interaction> rows;
    const std::size_t nu = 5 + rng.below(20), ni = 5 + rng.below(20);
    const double p = rng.uniform(0.2, 0.7);
    for (std::size_t u = 0; u < nu; ++u)
      for (std::size_t i = 0; i < ni; ++i)
        if (rng.uniform() < p) rows.push_back(row("u" + std::to_string(u), "i" + std::to_string(i)));
    const auto expect = naive_core(pairs_of(rows), 5);
    if (expect.empty()) {
      EXPECT_THROW(data::five_core_filter(rows), DataError);
      continue;
    }
    const auto once = data::five_core_filter(rows);
    EXPECT_EQ(pairs_of(once), expect);
    EXPECT_EQ(pairs_of(data::five_core_filter(once)), expect);
    // order independence
    auto shuffled = rows;
    rng.shuffle(shuffled);
    EXPECT_EQ(pairs_of(data::five_core_filter(shuffled)), expect);
  }
}

TEST(Index, DenseLexicographicIds) {
  const std::vector<Interaction> rows{row("b", "y"), row("a", "z"), row("a", "x")};
  const auto ds = data::index_interactions(rows);
  EXPECT_EQ(ds.user_ids, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(ds.item_ids, (std::vector<std::string>{"x", "y", "z"}));
  EXPECT_EQ(ds.positives[0], (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(ds.item_index.at("z"), 2u);
}

TEST(Split, TenGivesEightOneOne) {
  const auto ds = data::index_interactions(complete(1, 10));
  num::Rng rng(1);
  const auto s = data::split_811(ds, rng);
  EXPECT_EQ(s.train[0].size(), 8u);
  EXPECT_EQ(s.valid[0].size(), 1u);
  EXPECT_EQ(s.test[0].size(), 1u);
}

TEST(Split, FiveGivesThreeOneOne) {
  const auto ds = data::index_interactions(complete(1, 5));
  num::Rng rng(1);
  const auto s = data::split_811(ds, rng);
  EXPECT_EQ(s.train[0].size(), 3u);
  EXPECT_EQ(s.valid[0].size(), 1u);
  EXPECT_EQ(s.test[0].size(), 1u);
}

TEST(Split, TooFewPositivesIsContractViolation) {
  const auto ds = data::index_interactions(complete(1, 2));
  num::Rng rng(1);
  EXPECT_THROW(data::split_811(ds, rng), ContractViolation);
}

TEST(Split, SeededAndPartitioning) {
  const auto ds = data::index_interactions(complete(6, 23));
  num::Rng a(4), b(4), c(5);
  const auto s1 = data::split_811(ds, a);
  const auto s2 = data::split_811(ds, b);
  const auto s3 = data::split_811(ds, c);
  EXPECT_EQ(s1.train, s2.train);
  EXPECT_EQ(s1.valid, s2.valid);
  EXPECT_EQ(s1.test, s2.test);
  EXPECT_NE(s1.test, s3.test);
  for (std::size_t u = 0; u < ds.n_users(); ++u) {
    std::vector<std::size_t> all = s1.train[u];
    all.insert(all.end(), s1.valid[u].begin(), s1.valid[u].end());
    all.insert(all.end(), s1.test[u].begin(), s1.test[u].end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, ds.positives[u]);
    EXPECT_EQ(s1.valid[u].size(), 2u);
    EXPECT_EQ(s1.test[u].size(), 2u);
  }
}

TEST(Negatives, AvoidPositivesAndSeeded) {
  data::InteractionDataset ds = data::index_interactions(std::vector<Interaction>{
      row("u", "0"), row("u", "1"), row("v", "2"), row("v", "3"), row("v", "4")});
  ds.train = ds.positives;
  num::Rng a(3), b(3);
  const auto d1 = data::sample_negatives(ds, 0, 2, a);
  const auto d2 = data::sample_negatives(ds, 0, 2, b);
  EXPECT_EQ(d1, d2);
  ASSERT_EQ(d1.size(), 2u);
  for (std::size_t i : d1) EXPECT_GE(i, 2u);
}

TEST(Negatives, UniformOverEligibleItems) {
  data::InteractionDataset ds = data::index_interactions(std::vector<Interaction>{
      row("u", "0"), row("u", "1"), row("v", "2"), row("v", "3"), row("v", "4"), row("v", "5")});
  ds.train = ds.positives;
  num::Rng rng(11);
  const std::size_t n = 100000;
  std::vector<std::size_t> counts(ds.n_items(), 0);
  for (std::size_t i : data::sample_negatives(ds, 0, n, rng)) ++counts[i];
  EXPECT_EQ(counts[0] + counts[1], 0u);
  const double p = 1.0 / 4.0;
  const double sigma = std::sqrt(n * p * (1 - p));
  for (std::size_t i = 2; i < 6; ++i) EXPECT_LE(std::abs(static_cast<double>(counts[i]) - n * p), 3 * sigma);
}

TEST(Negatives, NoEligibleItemsIsContractViolation) {
  data::InteractionDataset ds = data::index_interactions(std::vector<Interaction>{row("u", "0"), row("u", "1")});
  ds.train = ds.positives;
  num::Rng rng(1);
  EXPECT_THROW(data::sample_negatives(ds, 0, 1, rng), ContractViolation);
}

TEST(Mmf1, ExactByteLayout) {
  data::RawMatrix m{1, 2, {1.0f, -2.0f}};
  const std::string bytes = data::encode_mmf1(m);
  ASSERT_EQ(bytes.size(), 12u + 8u);
  EXPECT_EQ(bytes.substr(0, 4), "MMF1");
  EXPECT_EQ(bytes.substr(4, 4), std::string("\x01\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(8, 4), std::string("\x02\x00\x00\x00", 4));
  EXPECT_EQ(bytes.substr(12, 4), std::string("\x00\x00\x80\x3f", 4));
  EXPECT_EQ(bytes.substr(16, 4), std::string("\x00\x00\x00\xc0", 4));
}

TEST(Mmf1, RoundTripIsBitExact) {
  num::Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    data::RawMatrix m;
    m.rows = static_cast<std::uint32_t>(rng.below(6));
    m.cols = static_cast<std::uint32_t>(rng.below(6));
    for (std::size_t k = 0; k < std::size_t{m.rows} * m.cols; ++k)
      m.values.push_back(static_cast<float>(rng.normal() * std::pow(10.0, rng.uniform(-30, 30))));
    EXPECT_EQ(data::decode_mmf1(data::encode_mmf1(m)), m);
  }
}

TEST(Mmf1, Errors) {
  EXPECT_THROW(data::decode_mmf1("MMF2\x01\0\0\0\x01\0\0\0\0\0\0\0"), DataError);
  std::string good = data::encode_mmf1({2, 2, {1, 2, 3, 4}});
  EXPECT_THROW(data::decode_mmf1(good.substr(0, good.size() - 1)), DataError);
  EXPECT_THROW(data::decode_mmf1("MM"), DataError);
  EXPECT_THROW(data::encode_mmf1({1, 1, {std::numeric_limits<float>::quiet_NaN()}}), DataError);
  EXPECT_THROW(data::encode_mmf1({1, 1, {std::numeric_limits<float>::infinity()}}), DataError);
  testkit::TempDir tmp;
  EXPECT_THROW(data::read_mmf1(tmp.file("none.mmf")), DataError);
}

TEST(Features, LoadReordersByVocabulary) {
  testkit::TempDir tmp;
  data::FeatureMatrix f{"visual", 3, 2, {1, 2, 3, 4, 5, 6}};
  data::save_features(tmp.file("v.mmf"), f, {"c", "a", "b"});
  const auto loaded = data::load_features(tmp.file("v.mmf"), {"a", "b", "c"}, "visual");
  EXPECT_EQ(loaded.rows, 3u);
  EXPECT_EQ(loaded.cols, 2u);
  EXPECT_EQ(loaded.values, (std::vector<double>{3, 4, 5, 6, 1, 2}));
  EXPECT_EQ(loaded.modality, "visual");
}

TEST(Features, MissingItemIsListed) {
  testkit::TempDir tmp;
  data::FeatureMatrix f{"visual", 2, 1, {1, 2}};
  data::save_features(tmp.file("v.mmf"), f, {"a", "b"});
  try {
    data::load_features(tmp.file("v.mmf"), {"a", "b", "zz9"}, "visual");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("zz9"), std::string::npos) << e.what();
  }
}

TEST(Features, SidecarMismatchRejected) {
  testkit::TempDir tmp;
  data::write_mmf1(tmp.file("v.mmf"), {2, 1, {1, 2}});
  testkit::write_file(data::sidecar_path(tmp.file("v.mmf")), "a\t0\nb\t5\n");
  EXPECT_THROW(data::load_features(tmp.file("v.mmf"), {"a", "b"}, "visual"), DataError);
}
