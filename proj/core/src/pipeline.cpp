#include "mrdib/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mrdib/errors.hpp"

namespace mrdib::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---- strict JSON access -------------------------------------------------------

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ContractViolation("unknown key '" + key + "' in " + where);
  }
}

const json& object_at(const json& obj, const std::string& key, const std::string& where) {
  const json& v = obj.at(key);
  if (!v.is_object()) throw ContractViolation(where + "." + key + " must be an object");
  return v;
}

double number(const json& obj, const std::string& key, double fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ContractViolation(where + "." + key + " must be a number");
  return v.get<double>();
}

std::size_t count(const json& obj, const std::string& key, std::size_t fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ContractViolation(where + "." + key + " must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

std::string text(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) return {};
  const json& v = obj.at(key);
  if (!v.is_string()) throw ContractViolation(where + "." + key + " must be a string");
  return v.get<std::string>();
}

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || base.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base) / path).lexically_normal().string();
}

json parse_json(const std::string& s, const std::string& what) {
  try {
    return json::parse(s);
  } catch (const json::parse_error& e) {
    throw ContractViolation(what + " is not valid JSON: " + e.what());
  }
}

std::string read_file(const std::string& path, bool data_error) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    const std::string msg = "cannot read '" + path + "'";
    if (data_error) throw DataError(msg);
    throw ContractViolation(msg);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << content;
  if (!out) throw DataError("write failed for '" + path + "'");
}

json weights_json(const objectives::LossWeights& w) {
  return {{"alpha1", w.alpha1}, {"alpha2", w.alpha2}, {"alpha3", w.alpha3}};
}

json loss_json(const objectives::LossBreakdown& l) {
  return {{"nll_joint", l.nll_joint},
          {"kl_sum", l.kl_sum},
          {"redundancy", l.redundancy},
          {"nll_unimodal_sum", l.nll_unimodal_sum},
          {"total", l.total}};
}

json metrics_json(const eval::MetricsReport& r) { return json::parse(r.to_json()); }

}  // namespace

// ---- RunConfig -------------------------------------------------------------------

RunConfig RunConfig::from_json_text(const std::string& s, const std::string& base_dir) {
  const json j = parse_json(s, "config");
  if (!j.is_object()) throw ContractViolation("config must be a JSON object");
  reject_unknown(j, {"data", "output_dir", "model", "alphas", "optimizer", "seed", "mode"}, "config");
  RunConfig c;
  if (j.contains("data")) {
    const json& d = object_at(j, "data", "config");
    reject_unknown(d, {"interactions", "visual", "textual", "min_count"}, "config.data");
    c.interactions = resolve(text(d, "interactions", "data"), base_dir);
    c.visual = resolve(text(d, "visual", "data"), base_dir);
    c.textual = resolve(text(d, "textual", "data"), base_dir);
    c.min_count = count(d, "min_count", c.min_count, "data");
  }
  c.output_dir = resolve(text(j, "output_dir", "config"), base_dir);
  if (j.contains("model")) {
    const json& m = object_at(j, "model", "config");
    reject_unknown(m, {"latent", "encoder_hidden", "decoder_hidden", "mine_hidden", "item_id_embedding"},
                   "config.model");
    c.dims.latent = count(m, "latent", c.dims.latent, "model");
    c.dims.encoder_hidden = count(m, "encoder_hidden", c.dims.encoder_hidden, "model");
    c.dims.decoder_hidden = count(m, "decoder_hidden", c.dims.decoder_hidden, "model");
    c.dims.mine_hidden = count(m, "mine_hidden", c.dims.mine_hidden, "model");
    if (m.contains("item_id_embedding")) {
      if (!m.at("item_id_embedding").is_boolean()) {
        throw ContractViolation("model.item_id_embedding must be a boolean");
      }
      c.item_id_embedding = m.at("item_id_embedding").get<bool>();
    }
  }
  if (j.contains("alphas")) {
    const json& a = object_at(j, "alphas", "config");
    reject_unknown(a, {"alpha1", "alpha2", "alpha3"}, "config.alphas");
    c.weights.alpha1 = number(a, "alpha1", 0.0, "alphas");
    c.weights.alpha2 = number(a, "alpha2", 0.0, "alphas");
    c.weights.alpha3 = number(a, "alpha3", 0.0, "alphas");
  }
  if (j.contains("optimizer")) {
    const json& o = object_at(j, "optimizer", "config");
    reject_unknown(o, {"lr", "batch_size", "negatives", "max_epochs", "patience", "mine_steps_per_model_step"},
                   "config.optimizer");
    c.lr = number(o, "lr", c.lr, "optimizer");
    c.batch_size = count(o, "batch_size", c.batch_size, "optimizer");
    c.negatives = count(o, "negatives", c.negatives, "optimizer");
    c.max_epochs = count(o, "max_epochs", c.max_epochs, "optimizer");
    c.patience = count(o, "patience", c.patience, "optimizer");
    c.weights.mine_steps_per_model_step =
        count(o, "mine_steps_per_model_step", c.weights.mine_steps_per_model_step, "optimizer");
  }
  if (!j.contains("seed")) throw ContractViolation("config.seed is required");
  const json& seed = j.at("seed");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<std::int64_t>() >= 0)) {
    throw ContractViolation("config.seed must be a non-negative integer");
  }
  c.seed = j.at("seed").get<std::uint64_t>();
  const std::string mode = text(j, "mode", "config");
  if (!mode.empty()) c.mode = model::variant_from_string(mode);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::string& path) {
  // anchor relative paths so configs written back out stay loadable from anywhere
  return from_json_text(read_file(path, false), fs::absolute(path).parent_path().string());
}

std::string RunConfig::to_json() const {
  json j;
  j["data"] = {{"interactions", interactions}, {"visual", visual}, {"textual", textual}, {"min_count", min_count}};
  j["output_dir"] = output_dir;
  j["model"] = {{"latent", dims.latent},
                {"encoder_hidden", dims.encoder_hidden},
                {"decoder_hidden", dims.decoder_hidden},
                {"mine_hidden", dims.mine_hidden},
                {"item_id_embedding", item_id_embedding}};
  j["alphas"] = weights_json(weights);
  j["optimizer"] = {{"lr", lr},
                    {"batch_size", batch_size},
                    {"negatives", negatives},
                    {"max_epochs", max_epochs},
                    {"patience", patience},
                    {"mine_steps_per_model_step", weights.mine_steps_per_model_step}};
  j["seed"] = seed;
  j["mode"] = model::to_string(mode);
  return j.dump(2) + "\n";
}

void RunConfig::validate() const {
  weights.validate();
  require(std::isfinite(weights.alpha1) && std::isfinite(weights.alpha2) && std::isfinite(weights.alpha3),
          "alphas must be finite");
  require(dims.latent > 0 && dims.encoder_hidden > 0 && dims.decoder_hidden > 0 && dims.mine_hidden > 0,
          "model dimensions must be positive");
  require(lr > 0.0 && std::isfinite(lr), "optimizer.lr must be positive");
  require(batch_size > 0, "optimizer.batch_size must be positive");
  require(negatives > 0, "optimizer.negatives must be positive");
  require(max_epochs > 0, "optimizer.max_epochs must be positive");
  require(min_count > 0, "data.min_count must be positive");
}

objectives::LossWeights RunConfig::effective_weights() const {
  objectives::LossWeights w = weights;
  if (mode == model::Variant::host_only) w.alpha1 = w.alpha2 = w.alpha3 = 0.0;
  if (mode == model::Variant::mib_only) w.alpha2 = w.alpha3 = 0.0;
  return w;
}

model::ModelConfig RunConfig::model_config() const {
  model::ModelConfig m;
  m.dims = dims;
  m.variant = mode;
  m.item_id_embedding = item_id_embedding;
  return m;
}

objectives::TrainOptions RunConfig::train_options() const {
  objectives::TrainOptions o;
  o.batch_size = batch_size;
  o.negatives = negatives;
  o.adam.lr = lr;
  return o;
}

std::uint64_t split_seed(std::uint64_t run_seed) { return num::Rng(run_seed).fork(7).next_u64(); }

PreparedData prepare_data(const RunConfig& config) {
  require(!config.interactions.empty() && !config.visual.empty() && !config.textual.empty(),
          "config.data needs interactions, visual and textual paths");
  const auto rows = data::load_interactions(config.interactions);
  const auto kept = data::five_core_filter(rows, config.min_count);
  num::Rng rng(split_seed(config.seed));
  PreparedData out;
  out.dataset = data::split_811(data::index_interactions(kept), rng);
  out.visual = data::load_features(config.visual, out.dataset.item_ids, "visual");
  out.textual = data::load_features(config.textual, out.dataset.item_ids, "textual");
  return out;
}

// ---- checkpoints ------------------------------------------------------------------

namespace {

std::string tensor_file(const std::string& name) { return name + ".mmf"; }

data::RawMatrix to_raw(const num::Tensor& t) {
  data::RawMatrix m;
  m.rows = static_cast<std::uint32_t>(t.rows());
  m.cols = static_cast<std::uint32_t>(t.cols());
  m.values.reserve(t.size());
  for (double v : t.values()) m.values.push_back(static_cast<float>(v));
  return m;
}

std::vector<model::NamedTensor> stored_tensors(const model::HostModel& host) {
  auto out = host.checkpoint_tensors();
  out.emplace_back("features.visual", host.visual_features());
  out.emplace_back("features.textual", host.textual_features());
  return out;
}

// Parameter values as the checkpoint stores them (single precision).
using Snapshot = std::vector<std::vector<double>>;

Snapshot snapshot(const model::HostModel& host) {
  Snapshot s;
  for (const auto& [name, t] : host.checkpoint_tensors()) s.emplace_back(t.values().begin(), t.values().end());
  return s;
}

void restore_rounded(const model::HostModel& host, const Snapshot& s) {
  const auto tensors = host.checkpoint_tensors();
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    num::Tensor t = tensors[k].second;
    auto dst = t.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<double>(static_cast<float>(s[k][i]));
  }
}

}  // namespace

void save_checkpoint(const std::string& dir, const model::HostModel& host, const RunConfig& config,
                     const data::InteractionDataset& dataset, std::size_t epoch) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "mrdib-checkpoint";
  manifest["version"] = 1;
  manifest["epoch"] = epoch;
  manifest["mode"] = model::to_string(config.mode);
  manifest["config"] = json::parse(config.to_json());
  manifest["user_ids"] = dataset.user_ids;
  manifest["item_ids"] = dataset.item_ids;
  json tensors = json::array();
  for (const auto& [name, t] : stored_tensors(host)) {
    data::write_mmf1((fs::path(dir) / tensor_file(name)).string(), to_raw(t));
    tensors.push_back({{"name", name}, {"file", tensor_file(name)}, {"rows", t.rows()}, {"cols", t.cols()}});
  }
  manifest["tensors"] = tensors;
  write_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& dir) {
  const std::string mpath = (fs::path(dir) / "manifest.json").string();
  if (!fs::exists(mpath)) throw DataError("no checkpoint manifest at '" + mpath + "'");
  json m;
  try {
    m = json::parse(read_file(mpath, true));
  } catch (const json::parse_error& e) {
    throw DataError("corrupt checkpoint manifest: " + std::string(e.what()));
  }
  Checkpoint ck;
  std::map<std::string, data::RawMatrix> raw;
  try {
    if (m.value("format", "") != "mrdib-checkpoint") throw DataError("not an mrdib checkpoint: '" + dir + "'");
    ck.config = RunConfig::from_json_text(m.at("config").dump());
    ck.epoch = m.at("epoch").get<std::size_t>();
    ck.user_ids = m.at("user_ids").get<std::vector<std::string>>();
    ck.item_ids = m.at("item_ids").get<std::vector<std::string>>();
    for (const auto& t : m.at("tensors")) {
      const std::string name = t.at("name").get<std::string>();
      data::RawMatrix r = data::read_mmf1((fs::path(dir) / t.at("file").get<std::string>()).string());
      if (r.rows != t.at("rows").get<std::uint32_t>() || r.cols != t.at("cols").get<std::uint32_t>()) {
        throw DataError("checkpoint tensor '" + name + "' does not match its manifest shape");
      }
      raw.emplace(name, std::move(r));
    }
  } catch (const json::exception& e) {
    throw DataError("corrupt checkpoint manifest: " + std::string(e.what()));
  } catch (const ContractViolation& e) {
    throw DataError("corrupt checkpoint manifest: " + std::string(e.what()));
  }
  auto features = [&](const std::string& key, const char* modality) {
    auto it = raw.find(key);
    if (it == raw.end()) throw DataError("checkpoint lacks '" + key + "'");
    data::FeatureMatrix fm;
    fm.modality = modality;
    fm.rows = it->second.rows;
    fm.cols = it->second.cols;
    fm.values.assign(it->second.values.begin(), it->second.values.end());
    return fm;
  };
  const auto visual = features("features.visual", "visual");
  const auto textual = features("features.textual", "textual");
  if (visual.rows != ck.item_ids.size()) throw DataError("checkpoint features disagree with its item ids");
  ck.model = std::make_shared<model::HostModel>(ck.config.model_config(), ck.user_ids.size(),
                                                ck.item_ids.size(), visual, textual, ck.config.seed);
  for (const auto& [name, t] : ck.model->checkpoint_tensors()) {
    auto it = raw.find(name);
    if (it == raw.end()) throw DataError("checkpoint lacks tensor '" + name + "'");
    if (it->second.rows != t.rows() || it->second.cols != t.cols()) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + std::to_string(it->second.rows) + "x" +
                      std::to_string(it->second.cols) + ", model expects " + num::describe_shape(t));
    }
    num::Tensor dst = t;
    auto v = dst.values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(it->second.values[i]);
  }
  return ck;
}

eval::MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const PreparedData& data,
                                        eval::SplitKind split) {
  if (ckpt.user_ids != data.dataset.user_ids || ckpt.item_ids != data.dataset.item_ids) {
    throw DataError("checkpoint ids do not match the dataset described by the config");
  }
  return eval::evaluate(*ckpt.model, data.dataset, split);
}

Embeddings item_embeddings(const model::HostModel& host) {
  require(host.has_encoders(), "embedding export needs a model with modality encoders");
  std::vector<std::size_t> all(host.n_items());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  num::NoGradGuard guard;
  num::Rng unused(0);
  const auto lat = host.encode_items(all, unused, info::SampleMode::mean);
  auto to_fm = [](const num::Tensor& t, const char* name) {
    data::FeatureMatrix fm;
    fm.modality = name;
    fm.rows = t.rows();
    fm.cols = t.cols();
    fm.values.assign(t.values().begin(), t.values().end());
    return fm;
  };
  return {to_fm(lat.visual.posterior.mean, "z1"), to_fm(lat.textual.posterior.mean, "z2")};
}

void export_embeddings(const Checkpoint& ckpt, const std::string& out_dir) {
  const Embeddings e = item_embeddings(*ckpt.model);
  fs::create_directories(out_dir);
  data::save_features((fs::path(out_dir) / "z1.mmf").string(), e.visual, ckpt.item_ids);
  data::save_features((fs::path(out_dir) / "z2.mmf").string(), e.textual, ckpt.item_ids);
}

// ---- training ---------------------------------------------------------------------

TrainResult run_training(const RunConfig& config, const PreparedData& data, const TrainHooks& hooks) {
  config.validate();
  const auto& ds = data.dataset;
  auto host = std::make_shared<model::HostModel>(config.model_config(), ds.n_users(), ds.n_items(),
                                                 data.visual, data.textual, config.seed);
  const objectives::LossWeights weights = config.effective_weights();
  objectives::TrainerState state(config.train_options(), config.seed);
  eval::EarlyStopper stopper;
  stopper.patience = config.patience;

  TrainResult result;
  std::ofstream log;
  if (hooks.write_outputs) {
    require(!config.output_dir.empty(), "config.output_dir is required to write outputs");
    fs::create_directories(config.output_dir);
    result.log_path = (fs::path(config.output_dir) / "train_log.jsonl").string();
    log.open(result.log_path, std::ios::binary | std::ios::trunc);
    if (!log) throw DataError("cannot write '" + result.log_path + "'");
    json rec{{"event", "model"},
             {"mode", model::to_string(config.mode)},
             {"parameter_count", host->parameter_count()},
             {"components", host->components()},
             {"alphas", weights_json(weights)},
             {"seed", config.seed}};
    log << rec.dump() << "\n";
  }

  Snapshot best = snapshot(*host);
  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const auto stats = objectives::train_epoch(*host, ds, weights, state);
    const auto valid = eval::evaluate(*host, ds, eval::SplitKind::valid);
    const bool stop = stopper.should_stop(epoch, valid.recall);
    EpochRecord rec{epoch, stats.mean, stats.mine_updates, valid.recall, stopper.improved_at(epoch)};
    if (rec.improved) best = snapshot(*host);
    result.history.push_back(rec);
    result.epochs_run = epoch + 1;
    if (log.is_open()) {
      json j{{"event", "epoch"},
             {"epoch", epoch},
             {"loss", loss_json(rec.loss)},
             {"mine_updates", rec.mine_updates},
             {"valid_recall5", rec.valid_recall},
             {"improved", rec.improved}};
      log << j.dump() << "\n";
      log.flush();
    }
    if (hooks.on_epoch && !hooks.on_epoch(rec)) break;
    if (stop) {
      result.stopped_early = true;
      break;
    }
  }
  result.best_epoch = *stopper.best_epoch;
  result.best_valid_recall = stopper.best_value;

  // The restored parameters are exactly what the checkpoint holds.
  restore_rounded(*host, best);
  result.test = eval::evaluate(*host, ds, eval::SplitKind::test);
  result.model = host;
  if (hooks.write_outputs) {
    result.checkpoint_path = (fs::path(config.output_dir) / "checkpoint").string();
    save_checkpoint(result.checkpoint_path, *host, config, ds, result.best_epoch);
    json j{{"event", "test"},
           {"best_epoch", result.best_epoch},
           {"best_valid_recall5", result.best_valid_recall},
           {"stopped_early", result.stopped_early},
           {"metrics", metrics_json(result.test)}};
    log << j.dump() << "\n";
    write_file((fs::path(config.output_dir) / "report.json").string(), result.test.to_json() + "\n");
  }
  return result;
}

// ---- synthetic generator config -----------------------------------------------

data::SynthConfig synth_config_from_json_text(const std::string& s) {
  const json j = parse_json(s, "synth config");
  if (!j.is_object()) throw ContractViolation("synth config must be a JSON object");
  reject_unknown(j, {"n_users", "n_items", "bits_unique_1", "bits_unique_2", "bits_redundant", "bits_synergy",
                     "noise_dims", "noise_sigma", "positives_per_user", "seed"},
                 "synth config");
  data::SynthConfig c;
  c.n_users = count(j, "n_users", c.n_users, "synth");
  c.n_items = count(j, "n_items", c.n_items, "synth");
  c.bits_unique_1 = count(j, "bits_unique_1", c.bits_unique_1, "synth");
  c.bits_unique_2 = count(j, "bits_unique_2", c.bits_unique_2, "synth");
  c.bits_redundant = count(j, "bits_redundant", c.bits_redundant, "synth");
  c.bits_synergy = count(j, "bits_synergy", c.bits_synergy, "synth");
  c.noise_dims = count(j, "noise_dims", c.noise_dims, "synth");
  c.noise_sigma = number(j, "noise_sigma", c.noise_sigma, "synth");
  c.positives_per_user = count(j, "positives_per_user", c.positives_per_user, "synth");
  c.seed = count(j, "seed", c.seed, "synth");
  c.validate();
  return c;
}

data::SynthConfig load_synth_config(const std::string& path) {
  return synth_config_from_json_text(read_file(path, false));
}

std::string synth_config_to_json(const data::SynthConfig& c) {
  json j{{"n_users", c.n_users},
         {"n_items", c.n_items},
         {"bits_unique_1", c.bits_unique_1},
         {"bits_unique_2", c.bits_unique_2},
         {"bits_redundant", c.bits_redundant},
         {"bits_synergy", c.bits_synergy},
         {"noise_dims", c.noise_dims},
         {"noise_sigma", c.noise_sigma},
         {"positives_per_user", c.positives_per_user},
         {"seed", c.seed}};
  return j.dump(2) + "\n";
}

// ---- sweeps -------------------------------------------------------------------------

SweepSpec SweepSpec::from_json_text(const std::string& s) {
  const json j = parse_json(s, "grid");
  if (!j.is_object()) throw ContractViolation("grid must be a JSON object");
  reject_unknown(j, {"alpha1", "alpha2", "alpha3", "allow_custom"}, "grid");
  SweepSpec spec;
  auto list = [&](const char* key) {
    std::vector<double> v;
    if (!j.contains(key)) return v;
    const json& a = j.at(key);
    if (!a.is_array()) throw ContractViolation(std::string("grid.") + key + " must be an array");
    for (const auto& x : a) {
      if (!x.is_number()) throw ContractViolation(std::string("grid.") + key + " must hold numbers");
      v.push_back(x.get<double>());
    }
    return v;
  };
  spec.alpha1 = list("alpha1");
  spec.alpha2 = list("alpha2");
  spec.alpha3 = list("alpha3");
  if (j.contains("allow_custom")) {
    if (!j.at("allow_custom").is_boolean()) throw ContractViolation("grid.allow_custom must be a boolean");
    spec.allow_custom = j.at("allow_custom").get<bool>();
  }
  spec.validate();
  return spec;
}

SweepSpec SweepSpec::load(const std::string& path) { return from_json_text(read_file(path, false)); }

void SweepSpec::validate() const {
  require(!alpha1.empty() && !alpha2.empty() && !alpha3.empty(), "grid needs at least one value per alpha");
  for (const auto* axis : {&alpha1, &alpha2, &alpha3}) {
    for (double v : *axis) {
      require(std::isfinite(v) && v >= 0.0, "grid values must be finite and non-negative");
      if (!allow_custom) {
        const bool declared = std::find(std::begin(kAlphaGrid), std::end(kAlphaGrid), v) != std::end(kAlphaGrid);
        require(declared, "grid value " + std::to_string(v) +
                              " is outside {0.0001, 0.001, 0.005, 0.01, 0.05}; set allow_custom to extend it");
      }
    }
  }
}

std::string SweepResult::to_json() const {
  json board = json::array();
  std::size_t rank = 1;
  for (const auto& e : leaderboard) {
    board.push_back({{"rank", rank++},
                     {"alphas", weights_json(e.weights)},
                     {"valid_recall5", e.valid_recall},
                     {"best_epoch", e.best_epoch},
                     {"test", metrics_json(e.test)}});
  }
  json j;
  j["leaderboard"] = board;
  j["best_config"] = json::parse(best.to_json());
  return j.dump(2) + "\n";
}

namespace {
std::string alpha_tag(const objectives::LossWeights& w) {
  std::ostringstream ss;
  ss << "a1_" << w.alpha1 << "_a2_" << w.alpha2 << "_a3_" << w.alpha3;
  return ss.str();
}
}  // namespace

SweepResult run_sweep(const RunConfig& base, const SweepSpec& spec, std::optional<std::size_t> budget,
                      const std::function<void(const std::string&)>& progress) {
  spec.validate();
  const std::size_t n = spec.points();
  if (budget) {
    require(n <= *budget, "grid has " + std::to_string(n) + " points, above --budget " + std::to_string(*budget));
  } else {
    require(n <= kSweepGuardRail, "grid has " + std::to_string(n) + " points; more than " +
                                      std::to_string(kSweepGuardRail) + " needs an explicit --budget");
  }
  const PreparedData data = prepare_data(base);
  std::vector<std::pair<SweepEntry, RunConfig>> runs;
  for (double a1 : spec.alpha1) {
    for (double a2 : spec.alpha2) {
      for (double a3 : spec.alpha3) {
        RunConfig c = base;
        c.weights.alpha1 = a1;
        c.weights.alpha2 = a2;
        c.weights.alpha3 = a3;
        if (!base.output_dir.empty()) {
          c.output_dir = (fs::path(base.output_dir) / "sweep" / alpha_tag(c.weights)).string();
        }
        if (progress) progress("sweep point " + std::to_string(runs.size() + 1) + "/" + std::to_string(n) + " " +
                               alpha_tag(c.weights));
        TrainHooks hooks;
        hooks.write_outputs = !c.output_dir.empty();
        const TrainResult r = run_training(c, data, hooks);
        runs.push_back({SweepEntry{c.weights, r.best_valid_recall, r.test, r.best_epoch}, c});
      }
    }
  }
  std::stable_sort(runs.begin(), runs.end(),
                   [](const auto& a, const auto& b) { return a.first.valid_recall > b.first.valid_recall; });
  SweepResult out;
  for (auto& [entry, cfg] : runs) out.leaderboard.push_back(entry);
  out.best = runs.front().second;
  out.best.output_dir = base.output_dir;
  return out;
}

// ---- ablation ----------------------------------------------------------------------

std::vector<std::pair<std::string, RunConfig>> ablation_variants(const RunConfig& base) {
  std::vector<std::pair<std::string, RunConfig>> v;
  auto add = [&](const std::string& name, auto&& edit) {
    RunConfig c = base;
    edit(c);
    if (!base.output_dir.empty()) c.output_dir = (fs::path(base.output_dir) / "ablate" / name).string();
    v.emplace_back(name, c);
  };
  add("full", [](RunConfig& c) { c.mode = model::Variant::full; });
  add("a1-", [](RunConfig& c) { c.mode = model::Variant::full; c.weights.alpha1 = 0.0; });
  add("a2-", [](RunConfig& c) { c.mode = model::Variant::full; c.weights.alpha2 = 0.0; });
  add("a3-", [](RunConfig& c) { c.mode = model::Variant::full; c.weights.alpha3 = 0.0; });
  add("a2-a3-", [](RunConfig& c) {
    c.mode = model::Variant::mib_only;
    c.weights.alpha2 = c.weights.alpha3 = 0.0;
  });
  add("host-only", [](RunConfig& c) {
    c.mode = model::Variant::host_only;
    c.weights.alpha1 = c.weights.alpha2 = c.weights.alpha3 = 0.0;
  });
  return v;
}

AblationResult run_ablation(const RunConfig& base, const std::function<void(const std::string&)>& progress) {
  const PreparedData data = prepare_data(base);
  AblationResult out;
  for (const auto& [name, cfg] : ablation_variants(base)) {
    if (progress) progress("ablation variant " + name);
    TrainHooks hooks;
    hooks.write_outputs = !cfg.output_dir.empty();
    const TrainResult r = run_training(cfg, data, hooks);
    AblationRow row;
    row.variant = name;
    row.weights = cfg.effective_weights();
    row.mode = cfg.mode;
    row.test = r.test;
    if (!r.history.empty()) row.last_epoch = r.history.back().loss;
    out.rows.push_back(row);
  }
  return out;
}

std::string AblationResult::to_json() const {
  json rows_j = json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"variant", r.variant},
                      {"mode", model::to_string(r.mode)},
                      {"alphas", weights_json(r.weights)},
                      {"test", metrics_json(r.test)},
                      {"last_epoch_loss", loss_json(r.last_epoch)}});
  }
  return json{{"rows", rows_j}}.dump(2) + "\n";
}

std::string AblationResult::to_markdown() const {
  std::ostringstream ss;
  ss << "| variant | alpha1 | alpha2 | alpha3 | REC@5 | PREC@5 | MAP@5 | NDCG@5 |\n";
  ss << "|---|---|---|---|---|---|---|---|\n";
  ss.setf(std::ios::fixed);
  for (const auto& r : rows) {
    ss.precision(4);
    ss << "| " << r.variant << " | " << r.weights.alpha1 << " | " << r.weights.alpha2 << " | " << r.weights.alpha3
       << " | " << r.test.recall << " | " << r.test.precision << " | " << r.test.map << " | " << r.test.ndcg
       << " |\n";
  }
  return ss.str();
}

}  // namespace mrdib::pipeline
