#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mrdib/data.hpp"
#include "mrdib/model.hpp"

namespace mrdib::eval {

inline constexpr std::size_t kDefaultCutoff = 5;

// `relevant` must be sorted ascending and non-empty; `ranked` holds at most
// k distinct items, best first.
double recall_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> relevant,
                   std::size_t k = kDefaultCutoff);
double precision_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> relevant,
                      std::size_t k = kDefaultCutoff);
/// Truncated AP, normalized by min(|relevant|, k).
double map_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> relevant,
                std::size_t k = kDefaultCutoff);
double ndcg_at_k(std::span<const std::size_t> ranked, std::span<const std::size_t> relevant,
                 std::size_t k = kDefaultCutoff);

struct UserMetrics {
  double recall = 0.0, precision = 0.0, map = 0.0, ndcg = 0.0;
};

UserMetrics user_metrics(std::span<const std::size_t> ranked, std::span<const std::size_t> relevant,
                         std::size_t k = kDefaultCutoff);

/// Indices of the k best finite scores, descending; ties go to the lower
/// index. Entries equal to -infinity are never returned.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k = kDefaultCutoff);

struct MetricsReport {
  std::size_t k = kDefaultCutoff;
  double recall = 0.0, precision = 0.0, map = 0.0, ndcg = 0.0;
  std::size_t n_users = 0;
  std::vector<std::size_t> users;  // evaluated users, ascending
  std::vector<UserMetrics> per_user;

  /// {"k","recall","precision","map","ndcg","n_users"} plus optional
  /// per-user arrays.
  std::string to_json(bool include_per_user = false) const;
};

enum class SplitKind { valid, test };

SplitKind split_from_string(const std::string& s);
const char* to_string(SplitKind s);

/// Items hidden from the ranking of `user` on `split`: train positives, and
/// validation positives as well on the test split.
std::vector<std::size_t> ranking_mask(const data::InteractionDataset& ds, std::size_t user,
                                      SplitKind split);

/// Fills a full catalog score row for one user.
using Ranker = std::function<void(std::size_t user, std::span<double> out)>;

MetricsReport evaluate_ranker(const data::InteractionDataset& ds, SplitKind split,
                              const Ranker& ranker, std::size_t k = kDefaultCutoff);

/// Joint path for the representation variants, base path for host-only.
model::ScoreMode natural_score_mode(const model::HostModel& host);

MetricsReport evaluate(const model::HostModel& host, const data::InteractionDataset& ds,
                       SplitKind split, std::size_t k = kDefaultCutoff);
MetricsReport evaluate(const model::HostModel& host, const data::InteractionDataset& ds,
                       SplitKind split, model::ScoreMode mode, bool include_item_embedding,
                       std::size_t k = kDefaultCutoff);

/// Expected Recall@k of a uniformly random ranking over the unmasked
/// candidates, averaged like evaluate().
double random_ranker_recall(const data::InteractionDataset& ds, SplitKind split,
                            std::size_t k = kDefaultCutoff);

/// Recall@5 early stopping. Epochs are counted from 0.
struct EarlyStopper {
  std::size_t patience = 20;
  double best_value = -std::numeric_limits<double>::infinity();
  std::optional<std::size_t> best_epoch;

  /// Records the epoch's value; true once epoch - best_epoch > patience.
  bool should_stop(std::size_t epoch, double recall);
  bool improved_at(std::size_t epoch) const { return best_epoch && *best_epoch == epoch; }
};

}  // namespace mrdib::eval
