#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mrdib/rng.hpp"

namespace mrdib::data {

struct Interaction {
  std::string user;
  std::string item;
  std::optional<std::int64_t> timestamp;

  bool operator==(const Interaction&) const = default;
};

/// Parses `user<TAB>item[<TAB>timestamp]` rows. Malformed rows are collected
/// and reported together (with 1-based line numbers) in a DataError.
/// Duplicate (user, item) pairs keep the earliest timestamp.
std::vector<Interaction> parse_interactions(std::istream& in);
std::vector<Interaction> load_interactions(const std::string& path);
void write_interactions(const std::string& path, std::span<const Interaction> rows);

/// Removes users and items with fewer than `min_count` interactions until no
/// more can be removed. Throws DataError("dataset annihilated") when nothing
/// survives.
std::vector<Interaction> five_core_filter(std::span<const Interaction> rows,
                                          std::size_t min_count = 5);

enum class Split { train, valid, test };

/// Users and items are indexed densely in lexicographic order of their ids.
/// Per-user item lists are sorted ascending.
struct InteractionDataset {
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::unordered_map<std::string, std::size_t> user_index;
  std::unordered_map<std::string, std::size_t> item_index;
  std::vector<std::vector<std::size_t>> positives;
  std::vector<std::vector<std::size_t>> train;
  std::vector<std::vector<std::size_t>> valid;
  std::vector<std::vector<std::size_t>> test;

  std::size_t n_users() const { return user_ids.size(); }
  std::size_t n_items() const { return item_ids.size(); }
  const std::vector<std::vector<std::size_t>>& split(Split s) const;
  bool in_train(std::size_t user, std::size_t item) const;
  std::size_t n_train() const;
};

InteractionDataset index_interactions(std::span<const Interaction> rows);

/// Per-user random partition: valid = test = max(1, floor(n / 10)), the rest
/// goes to train. Users with fewer than 3 positives are a contract violation.
InteractionDataset split_811(const InteractionDataset& dataset, num::Rng& rng);

/// K uniform draws over the catalog rejecting the user's training positives.
std::vector<std::size_t> sample_negatives(const InteractionDataset& dataset, std::size_t user,
                                          std::size_t k, num::Rng& rng);

// ---- feature container ---------------------------------------------------------
//
// "MMF1" magic, u32 LE rows, u32 LE cols, rows*cols f32 LE row-major.
// Sidecar TSV `item_id<TAB>row_index` maps external item ids to rows.

struct RawMatrix {
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<float> values;

  bool operator==(const RawMatrix&) const = default;
};

void write_mmf1(const std::string& path, const RawMatrix& m);
RawMatrix read_mmf1(const std::string& path);
std::string encode_mmf1(const RawMatrix& m);
RawMatrix decode_mmf1(const std::string& bytes);

std::string sidecar_path(const std::string& feature_path);
void write_id_map(const std::string& path, std::span<const std::string> ids);
std::vector<std::pair<std::string, std::size_t>> read_id_map(const std::string& path);

/// |I| x d_m item features, rows aligned with the dataset's item indexing.
struct FeatureMatrix {
  std::string modality;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }
};

/// Reads a container plus its sidecar id map and reorders rows to the dense
/// item indexing. Missing items are listed in the DataError.
FeatureMatrix load_features(const std::string& path, const std::vector<std::string>& item_ids,
                            const std::string& modality);
/// Writes features for `item_ids` (row i is item_ids[i]) with a sidecar map.
void save_features(const std::string& path, const FeatureMatrix& features,
                   const std::vector<std::string>& item_ids);

}  // namespace mrdib::data
