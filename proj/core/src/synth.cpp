#include "mrdib/synth.hpp"

#include <cstdio>
#include <filesystem>
#include <unordered_map>
#include <algorithm>

#include <json.hpp>

#include "mrdib/errors.hpp"

namespace mrdib::data {

namespace {

std::string make_id(char prefix, std::size_t i, std::size_t n) {
  const int width = static_cast<int>(std::to_string(n > 0 ? n - 1 : 0).size());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, i);
  return buf;
}

std::vector<int> draw_bits(num::Rng& rng, std::size_t n) {
  std::vector<int> v(n);
  for (int& b : v) b = static_cast<int>(rng.next_u64() >> 63);
  return v;
}

// strict majority of matching positions; an empty class imposes nothing
bool majority_match(const std::vector<int>& bits, const std::vector<int>& key) {
  if (bits.empty()) return true;
  std::size_t hits = 0;
  for (std::size_t j = 0; j < bits.size(); ++j) hits += bits[j] == key[j] ? 1 : 0;
  return 2 * hits > bits.size();
}

void append_range(std::vector<DimRange>& out, std::size_t& at, std::size_t width,
                  const char* label) {
  if (width == 0) return;
  out.push_back({at, at + width, label});
  at += width;
}

}  // namespace

void SynthConfig::validate() const {
  require(n_users > 0 && n_items > 0, "synth: n_users and n_items must be positive");
  require(bits_unique_1 + bits_unique_2 + bits_redundant + bits_synergy > 0,
          "synth: at least one information class must have bits");
  require(noise_sigma >= 0.0, "synth: noise_sigma must be non-negative");
}

bool is_relevant(const UserKey& key, const ItemBits& item) {
  if (!majority_match(item.unique1, key.unique1)) return false;
  if (!majority_match(item.unique2, key.unique2)) return false;
  if (!majority_match(item.redundant, key.redundant)) return false;
  std::vector<int> x(item.synergy_a.size());
  for (std::size_t j = 0; j < x.size(); ++j) x[j] = item.synergy_a[j] ^ item.synergy_b[j];
  return majority_match(x, key.synergy);
}

std::string GroundTruthLedger::to_json() const {
  auto ranges = [](const std::vector<DimRange>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : v) a.push_back({{"begin", r.begin}, {"end", r.end}, {"class", r.label}});
    return a;
  };
  nlohmann::json j;
  j["visual"] = ranges(visual);
  j["textual"] = ranges(textual);
  return j.dump(2) + "\n";
}

SynthDataset synth_pid_generate(const SynthConfig& cfg) {
  cfg.validate();
  num::Rng root(cfg.seed);
  num::Rng bit_rng = root.fork(1);
  num::Rng key_rng = root.fork(2);
  num::Rng noise_rng = root.fork(3);
  num::Rng pick_rng = root.fork(4);

  SynthDataset ds;
  ds.config = cfg;
  for (std::size_t u = 0; u < cfg.n_users; ++u) ds.user_ids.push_back(make_id('u', u, cfg.n_users));
  for (std::size_t i = 0; i < cfg.n_items; ++i) ds.item_ids.push_back(make_id('i', i, cfg.n_items));

  ds.items.resize(cfg.n_items);
  for (auto& it : ds.items) {
    it.unique1 = draw_bits(bit_rng, cfg.bits_unique_1);
    it.unique2 = draw_bits(bit_rng, cfg.bits_unique_2);
    it.redundant = draw_bits(bit_rng, cfg.bits_redundant);
    it.synergy_a = draw_bits(bit_rng, cfg.bits_synergy);
    it.synergy_b = draw_bits(bit_rng, cfg.bits_synergy);
  }
  ds.users.resize(cfg.n_users);
  for (auto& k : ds.users) {
    k.unique1 = draw_bits(key_rng, cfg.bits_unique_1);
    k.unique2 = draw_bits(key_rng, cfg.bits_unique_2);
    k.redundant = draw_bits(key_rng, cfg.bits_redundant);
    k.synergy = draw_bits(key_rng, cfg.bits_synergy);
  }

  // feature layout: [unique, redundant, synergy, noise] per modality
  std::size_t at = 0;
  append_range(ds.ledger.visual, at, cfg.bits_unique_1, "unique1");
  append_range(ds.ledger.visual, at, cfg.bits_redundant, "redundant");
  append_range(ds.ledger.visual, at, cfg.bits_synergy, "synergy");
  append_range(ds.ledger.visual, at, cfg.noise_dims, "noise");
  at = 0;
  append_range(ds.ledger.textual, at, cfg.bits_unique_2, "unique2");
  append_range(ds.ledger.textual, at, cfg.bits_redundant, "redundant");
  append_range(ds.ledger.textual, at, cfg.bits_synergy, "synergy");
  append_range(ds.ledger.textual, at, cfg.noise_dims, "noise");

  auto build = [&](const char* modality, std::size_t dims, auto&& informative) {
    FeatureMatrix fm;
    fm.modality = modality;
    fm.rows = cfg.n_items;
    fm.cols = dims;
    fm.values.reserve(fm.rows * fm.cols);
    for (std::size_t i = 0; i < cfg.n_items; ++i) {
      std::vector<int> bits = informative(ds.items[i]);
      for (int b : bits) fm.values.push_back((b ? 1.0 : -1.0) + cfg.noise_sigma * noise_rng.normal());
      for (std::size_t n = 0; n < cfg.noise_dims; ++n) {
        fm.values.push_back(noise_rng.normal() + cfg.noise_sigma * noise_rng.normal());
      }
    }
    return fm;
  };
  auto concat = [](std::initializer_list<const std::vector<int>*> parts) {
    std::vector<int> v;
    for (const auto* p : parts) v.insert(v.end(), p->begin(), p->end());
    return v;
  };
  ds.visual = build("visual", cfg.visual_dims(), [&](const ItemBits& b) {
    return concat({&b.unique1, &b.redundant, &b.synergy_a});
  });
  ds.textual = build("textual", cfg.textual_dims(), [&](const ItemBits& b) {
    return concat({&b.unique2, &b.redundant, &b.synergy_b});
  });

  for (std::size_t u = 0; u < cfg.n_users; ++u) {
    std::vector<std::size_t> rel;
    for (std::size_t i = 0; i < cfg.n_items; ++i) {
      if (ds.relevant(u, i)) rel.push_back(i);
    }
    if (cfg.positives_per_user > 0 && rel.size() > cfg.positives_per_user) {
      pick_rng.shuffle(rel);
      rel.resize(cfg.positives_per_user);
      std::sort(rel.begin(), rel.end());
    }
    for (std::size_t i : rel) ds.interactions.push_back({ds.user_ids[u], ds.item_ids[i], std::nullopt});
  }
  return ds;
}

void write_synth(const SynthDataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  write_interactions((base / "interactions.tsv").string(), ds.interactions);
  save_features((base / "visual.mmf").string(), ds.visual, ds.item_ids);
  save_features((base / "textual.mmf").string(), ds.textual, ds.item_ids);
  std::FILE* f = std::fopen((base / "ledger.json").string().c_str(), "wb");
  if (!f) throw DataError("cannot write ledger in '" + dir + "'");
  const std::string text = ds.ledger.to_json();
  std::fwrite(text.data(), 1, text.size(), f);
  std::fclose(f);
}

IndexedSynth index_synth(const SynthDataset& ds, std::uint64_t split_seed) {
  IndexedSynth ix;
  const auto kept = five_core_filter(ds.interactions);
  num::Rng rng(split_seed);
  ix.dataset = split_811(index_interactions(kept), rng);
  std::unordered_map<std::string, std::size_t> item_src, user_src;
  for (std::size_t i = 0; i < ds.item_ids.size(); ++i) item_src.emplace(ds.item_ids[i], i);
  for (std::size_t u = 0; u < ds.user_ids.size(); ++u) user_src.emplace(ds.user_ids[u], u);
  for (const auto& id : ix.dataset.user_ids) ix.source_user.push_back(user_src.at(id));
  for (const auto& id : ix.dataset.item_ids) ix.source_item.push_back(item_src.at(id));
  auto gather = [&](const FeatureMatrix& src) {
    FeatureMatrix fm;
    fm.modality = src.modality;
    fm.rows = ix.source_item.size();
    fm.cols = src.cols;
    fm.values.reserve(fm.rows * fm.cols);
    for (std::size_t s : ix.source_item) {
      const auto r = src.row(s);
      fm.values.insert(fm.values.end(), r.begin(), r.end());
    }
    return fm;
  };
  ix.visual = gather(ds.visual);
  ix.textual = gather(ds.textual);
  return ix;
}

bool synth_relevant(const SynthDataset& ds, const IndexedSynth& ix, std::size_t user,
                    std::size_t item) {
  return ds.relevant(ix.source_user[user], ix.source_item[item]);
}

}  // namespace mrdib::data
