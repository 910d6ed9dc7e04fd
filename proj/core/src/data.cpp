#include "mrdib/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "mrdib/errors.hpp"

namespace mrdib::data {

namespace {

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    if (tab == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
}

std::string pair_key(const std::string& u, const std::string& i) {
  std::string k;
  k.reserve(u.size() + i.size() + 1);
  k.append(u).push_back('\t');
  k.append(i);
  return k;
}

std::vector<Interaction> deduplicate(std::span<const Interaction> rows) {
  std::vector<Interaction> out;
  std::unordered_map<std::string, std::size_t> where;
  for (const auto& r : rows) {
    auto [it, inserted] = where.emplace(pair_key(r.user, r.item), out.size());
    if (inserted) {
      out.push_back(r);
      continue;
    }
    auto& kept = out[it->second];
    if (r.timestamp && (!kept.timestamp || *r.timestamp < *kept.timestamp)) {
      kept.timestamp = r.timestamp;
    }
  }
  return out;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream out(path, mode);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  return out;
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) s.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace

// ---- interactions ------------------------------------------------------------------

std::vector<Interaction> parse_interactions(std::istream& in) {
  std::vector<Interaction> rows;
  std::vector<std::string> problems;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    if (fields.size() < 2 || fields.size() > 3 || fields[0].empty() || fields[1].empty()) {
      problems.push_back("line " + std::to_string(line_no) + ": expected user<TAB>item[<TAB>timestamp]");
      continue;
    }
    Interaction r{std::string(fields[0]), std::string(fields[1]), std::nullopt};
    if (fields.size() == 3) {
      std::int64_t ts = 0;
      const auto f = fields[2];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), ts);
      if (ec != std::errc() || ptr != f.data() + f.size() || f.empty()) {
        problems.push_back("line " + std::to_string(line_no) + ": non-integer timestamp '" +
                           std::string(f) + "'");
        continue;
      }
      r.timestamp = ts;
    }
    rows.push_back(std::move(r));
  }
  if (!problems.empty()) {
    std::string msg = "malformed interactions:";
    for (const auto& p : problems) msg += "\n  " + p;
    throw DataError(msg);
  }
  return deduplicate(rows);
}

std::vector<Interaction> load_interactions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read interactions file '" + path + "'");
  return parse_interactions(in);
}

void write_interactions(const std::string& path, std::span<const Interaction> rows) {
  auto out = open_out(path);
  for (const auto& r : rows) {
    out << r.user << '\t' << r.item;
    if (r.timestamp) out << '\t' << *r.timestamp;
    out << '\n';
  }
}

std::vector<Interaction> five_core_filter(std::span<const Interaction> rows,
                                          std::size_t min_count) {
  require(!rows.empty(), "five_core_filter: empty interaction list");
  std::vector<Interaction> cur = deduplicate(rows);
  while (true) {
    std::unordered_map<std::string, std::size_t> users, items;
    for (const auto& r : cur) {
      ++users[r.user];
      ++items[r.item];
    }
    std::vector<Interaction> next;
    next.reserve(cur.size());
    for (const auto& r : cur) {
      if (users[r.user] >= min_count && items[r.item] >= min_count) next.push_back(r);
    }
    if (next.empty()) throw DataError("dataset annihilated by the 5-core filter");
    if (next.size() == cur.size()) return next;
    cur = std::move(next);
  }
}

// ---- dataset -----------------------------------------------------------------------

const std::vector<std::vector<std::size_t>>& InteractionDataset::split(Split s) const {
  switch (s) {
    case Split::train: return train;
    case Split::valid: return valid;
    case Split::test: return test;
  }
  return train;
}

bool InteractionDataset::in_train(std::size_t user, std::size_t item) const {
  const auto& t = train[user];
  return std::binary_search(t.begin(), t.end(), item);
}

std::size_t InteractionDataset::n_train() const {
  std::size_t n = 0;
  for (const auto& t : train) n += t.size();
  return n;
}

InteractionDataset index_interactions(std::span<const Interaction> rows) {
  const auto unique = deduplicate(rows);
  InteractionDataset ds;
  std::vector<std::string> users, items;
  for (const auto& r : unique) {
    users.push_back(r.user);
    items.push_back(r.item);
  }
  auto sort_unique = [](std::vector<std::string>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  sort_unique(users);
  sort_unique(items);
  ds.user_ids = std::move(users);
  ds.item_ids = std::move(items);
  for (std::size_t u = 0; u < ds.user_ids.size(); ++u) ds.user_index[ds.user_ids[u]] = u;
  for (std::size_t i = 0; i < ds.item_ids.size(); ++i) ds.item_index[ds.item_ids[i]] = i;
  ds.positives.assign(ds.user_ids.size(), {});
  for (const auto& r : unique) ds.positives[ds.user_index[r.user]].push_back(ds.item_index[r.item]);
  for (auto& p : ds.positives) std::sort(p.begin(), p.end());
  ds.train = ds.positives;
  ds.valid.assign(ds.user_ids.size(), {});
  ds.test.assign(ds.user_ids.size(), {});
  return ds;
}

InteractionDataset split_811(const InteractionDataset& dataset, num::Rng& rng) {
  InteractionDataset out = dataset;
  const std::size_t n_users = dataset.n_users();
  out.train.assign(n_users, {});
  out.valid.assign(n_users, {});
  out.test.assign(n_users, {});
  for (std::size_t u = 0; u < n_users; ++u) {
    std::vector<std::size_t> items = dataset.positives[u];
    const std::size_t n = items.size();
    require(n >= 3, "split_811: user '" + dataset.user_ids[u] + "' has " + std::to_string(n) +
                        " interactions; at least 3 are needed");
    const std::size_t holdout = std::max<std::size_t>(1, n / 10);
    rng.shuffle(items);
    out.valid[u].assign(items.begin(), items.begin() + holdout);
    out.test[u].assign(items.begin() + holdout, items.begin() + 2 * holdout);
    out.train[u].assign(items.begin() + 2 * holdout, items.end());
    for (auto* s : {&out.train[u], &out.valid[u], &out.test[u]}) std::sort(s->begin(), s->end());
  }
  return out;
}

std::vector<std::size_t> sample_negatives(const InteractionDataset& dataset, std::size_t user,
                                          std::size_t k, num::Rng& rng) {
  require(user < dataset.n_users(), "sample_negatives: unknown user index");
  require(dataset.n_items() > dataset.train[user].size(),
          "sample_negatives: user '" + dataset.user_ids[user] + "' has no eligible negatives");
  std::vector<std::size_t> out;
  out.reserve(k);
  while (out.size() < k) {
    const std::size_t item = static_cast<std::size_t>(rng.below(dataset.n_items()));
    if (!dataset.in_train(user, item)) out.push_back(item);
  }
  return out;
}

// ---- MMF1 ----------------------------------------------------------------------------

std::string encode_mmf1(const RawMatrix& m) {
  require(m.values.size() == static_cast<std::size_t>(m.rows) * m.cols,
          "MMF1: value count does not match rows x cols");
  std::string bytes = "MMF1";
  bytes.reserve(12 + 4 * m.values.size());
  put_u32(bytes, m.rows);
  put_u32(bytes, m.cols);
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    const float v = m.values[i];
    if (!std::isfinite(v)) {
      throw DataError("MMF1: refusing to write non-finite value at row " +
                      std::to_string(i / std::max<std::uint32_t>(1, m.cols)));
    }
    std::uint32_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    put_u32(bytes, bits);
  }
  return bytes;
}

RawMatrix decode_mmf1(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "MMF1") != 0) {
    throw DataError("MMF1: bad magic");
  }
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  RawMatrix m;
  m.rows = get_u32(p + 4);
  m.cols = get_u32(p + 8);
  const std::size_t n = static_cast<std::size_t>(m.rows) * m.cols;
  if (bytes.size() != 12 + 4 * n) {
    throw DataError("MMF1: payload of " + std::to_string(bytes.size() - 12) + " bytes does not match " +
                    std::to_string(m.rows) + "x" + std::to_string(m.cols));
  }
  m.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = get_u32(p + 12 + 4 * i);
    std::memcpy(&m.values[i], &bits, sizeof bits);
  }
  return m;
}

void write_mmf1(const std::string& path, const RawMatrix& m) {
  const std::string bytes = encode_mmf1(m);
  auto out = open_out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to '" + path + "'");
}

RawMatrix read_mmf1(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read feature file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return decode_mmf1(ss.str());
  } catch (const DataError& e) {
    throw DataError(std::string(e.what()) + " in '" + path + "'");
  }
}

std::string sidecar_path(const std::string& feature_path) { return feature_path + ".ids"; }

void write_id_map(const std::string& path, std::span<const std::string> ids) {
  auto out = open_out(path);
  for (std::size_t i = 0; i < ids.size(); ++i) out << ids[i] << '\t' << i << '\n';
}

std::vector<std::pair<std::string, std::size_t>> read_id_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read id map '" + path + "'");
  std::vector<std::pair<std::string, std::size_t>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_tabs(line);
    std::size_t row = 0;
    bool ok = fields.size() == 2 && !fields[0].empty();
    if (ok) {
      auto [ptr, ec] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), row);
      ok = ec == std::errc() && ptr == fields[1].data() + fields[1].size();
    }
    if (!ok) throw DataError(path + ": line " + std::to_string(line_no) + ": expected item_id<TAB>row_index");
    out.emplace_back(std::string(fields[0]), row);
  }
  return out;
}

FeatureMatrix load_features(const std::string& path, const std::vector<std::string>& item_ids,
                            const std::string& modality) {
  const RawMatrix raw = read_mmf1(path);
  const auto id_map = read_id_map(sidecar_path(path));
  std::unordered_map<std::string, std::size_t> row_of;
  for (const auto& [id, row] : id_map) {
    if (row >= raw.rows) {
      throw DataError(path + ": id map row " + std::to_string(row) + " for item '" + id +
                      "' exceeds " + std::to_string(raw.rows) + " rows");
    }
    row_of[id] = row;
  }
  std::vector<std::string> missing;
  for (const auto& id : item_ids) {
    if (!row_of.count(id)) missing.push_back(id);
  }
  if (!missing.empty()) {
    std::string msg = path + ": no feature row for " + std::to_string(missing.size()) + " item(s):";
    for (std::size_t k = 0; k < missing.size() && k < 20; ++k) msg += " " + missing[k];
    if (missing.size() > 20) msg += " ...";
    throw DataError(msg);
  }
  FeatureMatrix fm;
  fm.modality = modality;
  fm.rows = item_ids.size();
  fm.cols = raw.cols;
  fm.values.resize(fm.rows * fm.cols);
  for (std::size_t i = 0; i < item_ids.size(); ++i) {
    const std::size_t src = row_of[item_ids[i]];
    for (std::size_t c = 0; c < fm.cols; ++c) {
      fm.values[i * fm.cols + c] = static_cast<double>(raw.values[src * fm.cols + c]);
    }
  }
  return fm;
}

void save_features(const std::string& path, const FeatureMatrix& features,
                   const std::vector<std::string>& item_ids) {
  require(item_ids.size() == features.rows, "save_features: id count differs from row count");
  RawMatrix raw;
  raw.rows = static_cast<std::uint32_t>(features.rows);
  raw.cols = static_cast<std::uint32_t>(features.cols);
  raw.values.reserve(features.values.size());
  for (double v : features.values) raw.values.push_back(static_cast<float>(v));
  write_mmf1(path, raw);
  write_id_map(sidecar_path(path), item_ids);
}

}  // namespace mrdib::data
