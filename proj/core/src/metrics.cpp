#include "mrdib/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "mrdib/errors.hpp"

namespace mrdib::eval {

namespace {

bool contains(std::span<const std::size_t> sorted, std::size_t x) {
  return std::binary_search(sorted.begin(), sorted.end(), x);
}

void check_args(std::span<const std::size_t> ranked, std::span<const std::size_t> relevant,
                std::size_t k) {
  require(k >= 1, "metric cutoff must be positive");
  require(!relevant.empty(), "metric needs a non-empty relevant set");
  require(ranked.size() <= k, "ranked list longer than the cutoff");
}

std::size_t hits(std::span<const std::size_t> ranked, std::span<const std::size_t> relevant) {
  std::size_t h = 0;
  for (std::size_t it : ranked) h += contains(relevant, it) ? 1 : 0;
  return h;
}

}  // namespace

double recall_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> relevant,
                   std::size_t k) {
  check_args(ranked, relevant, k);
  return static_cast<double>(hits(ranked, relevant)) / static_cast<double>(relevant.size());
}

double precision_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> relevant,
                      std::size_t k) {
  check_args(ranked, relevant, k);
  return static_cast<double>(hits(ranked, relevant)) / static_cast<double>(k);
}

double map_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> relevant,
                std::size_t k) {
  check_args(ranked, relevant, k);
  double sum = 0.0;
  std::size_t h = 0;
  for (std::size_t p = 0; p < ranked.size(); ++p) {
    if (contains(relevant, ranked[p])) {
      ++h;
      sum += static_cast<double>(h) / static_cast<double>(p + 1);
    }
  }
  return sum / static_cast<double>(std::min(relevant.size(), k));
}

double ndcg_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> relevant,
                 std::size_t k) {
  check_args(ranked, relevant, k);
  double dcg = 0.0;
  for (std::size_t p = 0; p < ranked.size(); ++p) {
    if (contains(relevant, ranked[p])) dcg += 1.0 / std::log2(static_cast<double>(p + 2));
  }
  double idcg = 0.0;
  const std::size_t ideal = std::min(relevant.size(), k);
  for (std::size_t p = 0; p < ideal; ++p) idcg += 1.0 / std::log2(static_cast<double>(p + 2));
  return dcg / idcg;
}

UserMetrics user_metrics(std::span<const std::size_t> ranked, std::span<const std::size_t> relevant,
                         std::size_t k) {
  return {recall_at_k(ranked, relevant, k), precision_at_k(ranked, relevant, k),
          map_at_k(ranked, relevant, k), ndcg_at_k(ranked, relevant, k)};
}

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  std::vector<std::size_t> idx;
  idx.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] != -std::numeric_limits<double>::infinity()) idx.push_back(i);
  }
  const std::size_t n = std::min(k, idx.size());
  auto better = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(), better);
  idx.resize(n);
  return idx;
}

std::string MetricsReport::to_json(bool include_per_user) const {
  nlohmann::json j;
  j["k"] = k;
  j["recall"] = recall;
  j["precision"] = precision;
  j["map"] = map;
  j["ndcg"] = ndcg;
  j["n_users"] = n_users;
  if (include_per_user) {
    nlohmann::json pu;
    pu["user"] = users;
    std::vector<double> r, p, m, n;
    for (const auto& u : per_user) {
      r.push_back(u.recall);
      p.push_back(u.precision);
      m.push_back(u.map);
      n.push_back(u.ndcg);
    }
    pu["recall"] = r;
    pu["precision"] = p;
    pu["map"] = m;
    pu["ndcg"] = n;
    j["per_user"] = pu;
  }
  return j.dump();
}

SplitKind split_from_string(const std::string& s) {
  if (s == "valid") return SplitKind::valid;
  if (s == "test") return SplitKind::test;
  throw ContractViolation("unknown split '" + s + "' (expected valid or test)");
}

const char* to_string(SplitKind s) { return s == SplitKind::valid ? "valid" : "test"; }

std::vector<std::size_t> ranking_mask(const data::InteractionDataset& ds, std::size_t user,
                                      SplitKind split) {
  std::vector<std::size_t> mask = ds.train[user];
  if (split == SplitKind::test) {
    mask.insert(mask.end(), ds.valid[user].begin(), ds.valid[user].end());
    std::sort(mask.begin(), mask.end());
  }
  return mask;
}

namespace {
const std::vector<std::size_t>& split_items(const data::InteractionDataset& ds, std::size_t u,
                                            SplitKind split) {
  return split == SplitKind::valid ? ds.valid[u] : ds.test[u];
}
}  // namespace

MetricsReport evaluate_ranker(const data::InteractionDataset& ds, SplitKind split,
                              const Ranker& ranker, std::size_t k) {
  MetricsReport rep;
  rep.k = k;
  std::vector<double> row(ds.n_items());
  for (std::size_t u = 0; u < ds.n_users(); ++u) {
    const auto& rel = split_items(ds, u, split);
    if (rel.empty()) continue;
    ranker(u, row);
    for (std::size_t i : ranking_mask(ds, u, split)) row[i] = -std::numeric_limits<double>::infinity();
    const auto ranked = top_k(row, k);
    rep.users.push_back(u);
    rep.per_user.push_back(user_metrics(ranked, rel, k));
  }
  require(!rep.users.empty(), std::string("evaluation split '") + to_string(split) + "' is empty");
  for (const auto& m : rep.per_user) {
    rep.recall += m.recall;
    rep.precision += m.precision;
    rep.map += m.map;
    rep.ndcg += m.ndcg;
  }
  rep.n_users = rep.users.size();
  const double n = static_cast<double>(rep.n_users);
  rep.recall /= n;
  rep.precision /= n;
  rep.map /= n;
  rep.ndcg /= n;
  return rep;
}

model::ScoreMode natural_score_mode(const model::HostModel& host) {
  return host.config().variant == model::Variant::host_only ? model::ScoreMode::base
                                                            : model::ScoreMode::joint;
}

MetricsReport evaluate(const model::HostModel& host, const data::InteractionDataset& ds,
                       SplitKind split, std::size_t k) {
  return evaluate(host, ds, split, natural_score_mode(host), host.config().item_id_embedding, k);
}

MetricsReport evaluate(const model::HostModel& host, const data::InteractionDataset& ds,
                       SplitKind split, model::ScoreMode mode, bool include_item_embedding,
                       std::size_t k) {
  require(host.n_items() == ds.n_items() && host.n_users() == ds.n_users(),
          "model and dataset disagree on the catalog size");
  const model::ScoreMatrixView view(host, mode, include_item_embedding);
  return evaluate_ranker(
      ds, split, [&](std::size_t u, std::span<double> out) { view.row_into(u, out); }, k);
}

double random_ranker_recall(const data::InteractionDataset& ds, SplitKind split, std::size_t k) {
  double sum = 0.0;
  std::size_t users = 0;
  for (std::size_t u = 0; u < ds.n_users(); ++u) {
    if (split_items(ds, u, split).empty()) continue;
    const std::size_t candidates = ds.n_items() - ranking_mask(ds, u, split).size();
    sum += static_cast<double>(std::min(k, candidates)) / static_cast<double>(candidates);
    ++users;
  }
  require(users > 0, "random_ranker_recall: empty split");
  return sum / static_cast<double>(users);
}

bool EarlyStopper::should_stop(std::size_t epoch, double recall) {
  if (!best_epoch || recall > best_value) {
    best_value = recall;
    best_epoch = epoch;
  }
  return epoch - *best_epoch > patience;
}

}  // namespace mrdib::eval
