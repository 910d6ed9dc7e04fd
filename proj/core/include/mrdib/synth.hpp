#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mrdib/data.hpp"

namespace mrdib::data {

/// Synthetic two-modality catalog with planted information classes.
///
/// Every item draws independent fair bits per class. A user holds a key bit
/// for every class bit; the item is relevant iff, for each enabled class, a
/// strict majority of its bits match the key. Synergy bits come in pairs
/// (a in the visual features, b in the textual ones) and match through
/// a XOR b, so neither modality alone says anything about them.
struct SynthConfig {
  std::size_t n_users = 200;
  std::size_t n_items = 300;
  std::size_t bits_unique_1 = 0;
  std::size_t bits_unique_2 = 0;
  std::size_t bits_redundant = 0;
  std::size_t bits_synergy = 0;
  std::size_t noise_dims = 4;
  double noise_sigma = 0.1;
  /// Positives drawn per user from the relevant items; 0 keeps all of them.
  std::size_t positives_per_user = 0;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t visual_dims() const { return bits_unique_1 + bits_redundant + bits_synergy + noise_dims; }
  std::size_t textual_dims() const { return bits_unique_2 + bits_redundant + bits_synergy + noise_dims; }
};

struct DimRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string label;  // unique1 | unique2 | redundant | synergy | noise
};

/// Which feature dimensions carry which information class.
struct GroundTruthLedger {
  std::vector<DimRange> visual;
  std::vector<DimRange> textual;

  std::string to_json() const;
};

struct ItemBits {
  std::vector<int> unique1, unique2, redundant, synergy_a, synergy_b;
};

struct UserKey {
  std::vector<int> unique1, unique2, redundant, synergy;
};

bool is_relevant(const UserKey& key, const ItemBits& item);

struct SynthDataset {
  SynthConfig config;
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::vector<UserKey> users;
  std::vector<ItemBits> items;
  std::vector<Interaction> interactions;
  FeatureMatrix visual;
  FeatureMatrix textual;
  GroundTruthLedger ledger;

  bool relevant(std::size_t user, std::size_t item) const { return is_relevant(users[user], items[item]); }
};

SynthDataset synth_pid_generate(const SynthConfig& config);

/// Writes interactions.tsv, visual.mmf, textual.mmf (+ .ids sidecars) and
/// ledger.json into `dir`, creating it if needed.
void write_synth(const SynthDataset& ds, const std::string& dir);

/// A synthetic dataset after 5-core filtering, indexing and the per-user
/// split, with features aligned to the dense item indexing.
struct IndexedSynth {
  InteractionDataset dataset;
  FeatureMatrix visual;
  FeatureMatrix textual;
  std::vector<std::size_t> source_user;  // dense user -> generator user
  std::vector<std::size_t> source_item;  // dense item -> generator item
};

IndexedSynth index_synth(const SynthDataset& ds, std::uint64_t split_seed);

/// Ground-truth relevance of dense (user, item) pairs.
bool synth_relevant(const SynthDataset& ds, const IndexedSynth& ix, std::size_t user,
                    std::size_t item);

}  // namespace mrdib::data
