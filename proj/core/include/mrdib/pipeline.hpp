#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mrdib/data.hpp"
#include "mrdib/metrics.hpp"
#include "mrdib/model.hpp"
#include "mrdib/objectives.hpp"
#include "mrdib/synth.hpp"

namespace mrdib::pipeline {

/// Everything a training run needs. Relative paths in a config file are
/// resolved against the file's directory.
struct RunConfig {
  std::string interactions;
  std::string visual;
  std::string textual;
  std::string output_dir;
  std::size_t min_count = 5;

  model::Dims dims;
  bool item_id_embedding = true;
  objectives::LossWeights weights;
  double lr = 1e-3;
  std::size_t batch_size = 2048;
  std::size_t negatives = 4;
  std::size_t max_epochs = 200;
  std::size_t patience = 20;
  std::uint64_t seed = 0;
  model::Variant mode = model::Variant::full;

  /// Throws ContractViolation on unknown keys, wrong types, a missing seed or
  /// out-of-range values.
  static RunConfig from_json_text(const std::string& text, const std::string& base_dir = "");
  static RunConfig load(const std::string& path);
  std::string to_json() const;
  void validate() const;

  /// Weights with the terms the mode does not build forced to zero.
  objectives::LossWeights effective_weights() const;
  model::ModelConfig model_config() const;
  objectives::TrainOptions train_options() const;
};

/// Seed of the per-user split, derived from the run seed so that every run
/// sharing a seed sees the same partition.
std::uint64_t split_seed(std::uint64_t run_seed);

struct PreparedData {
  data::InteractionDataset dataset;
  data::FeatureMatrix visual;
  data::FeatureMatrix textual;
};

/// Load, 5-core filter, index, split, and align features.
PreparedData prepare_data(const RunConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  objectives::LossBreakdown loss;
  std::size_t mine_updates = 0;
  double valid_recall = 0.0;
  bool improved = false;
};

struct TrainResult {
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_valid_recall = 0.0;
  bool stopped_early = false;
  eval::MetricsReport test;
  std::vector<EpochRecord> history;
  std::string log_path;         // empty when nothing was written
  std::string checkpoint_path;  // empty when nothing was written
  std::shared_ptr<model::HostModel> model;  // best-validation parameters
};

struct TrainHooks {
  /// Called after every epoch; returning false stops training.
  std::function<bool(const EpochRecord&)> on_epoch;
  /// Write log, checkpoint and report under config.output_dir.
  bool write_outputs = true;
};

/// Trains until early stop or max_epochs, restores the best-validation
/// parameters (as stored in the checkpoint) and evaluates the test split.
TrainResult run_training(const RunConfig& config, const PreparedData& data,
                         const TrainHooks& hooks = {});

// ---- checkpoints ---------------------------------------------------------------
//
// A directory holding manifest.json (config, mode, ids, tensor names and
// shapes) and one MMF1 file per tensor. Feature matrices are included so
// the checkpoint alone can encode items.

void save_checkpoint(const std::string& dir, const model::HostModel& host, const RunConfig& config,
                     const data::InteractionDataset& dataset, std::size_t epoch);

struct Checkpoint {
  RunConfig config;
  std::vector<std::string> user_ids;
  std::vector<std::string> item_ids;
  std::size_t epoch = 0;
  std::shared_ptr<model::HostModel> model;
};

/// Throws DataError for a missing or corrupt checkpoint.
Checkpoint load_checkpoint(const std::string& dir);

/// Evaluates a checkpoint on the dataset described by `config`; ids must
/// match the checkpoint's.
eval::MetricsReport evaluate_checkpoint(const Checkpoint& ckpt, const PreparedData& data,
                                        eval::SplitKind split);

/// Posterior means of both modalities for every item (|I| x d each).
struct Embeddings {
  data::FeatureMatrix visual;
  data::FeatureMatrix textual;
};

Embeddings item_embeddings(const model::HostModel& host);
void export_embeddings(const Checkpoint& ckpt, const std::string& out_dir);

/// Strict parse of a synthetic-generator config; unknown keys are rejected.
data::SynthConfig synth_config_from_json_text(const std::string& text);
data::SynthConfig load_synth_config(const std::string& path);
std::string synth_config_to_json(const data::SynthConfig& config);

// ---- sweeps and ablations ------------------------------------------------------

inline constexpr double kAlphaGrid[] = {0.0001, 0.001, 0.005, 0.01, 0.05};
inline constexpr std::size_t kSweepGuardRail = 27;

struct SweepSpec {
  std::vector<double> alpha1, alpha2, alpha3;
  bool allow_custom = false;

  static SweepSpec from_json_text(const std::string& text);
  static SweepSpec load(const std::string& path);
  std::size_t points() const { return alpha1.size() * alpha2.size() * alpha3.size(); }
  /// Values outside the declared grid need allow_custom.
  void validate() const;
};

struct SweepEntry {
  objectives::LossWeights weights;
  double valid_recall = 0.0;
  eval::MetricsReport test;
  std::size_t best_epoch = 0;
};

struct SweepResult {
  std::vector<SweepEntry> leaderboard;  // best first, ties in grid order
  RunConfig best;
  std::string to_json() const;
};

/// Refuses more than kSweepGuardRail points unless `budget` allows them.
SweepResult run_sweep(const RunConfig& base, const SweepSpec& spec, std::optional<std::size_t> budget,
                      const std::function<void(const std::string&)>& progress = {});

struct AblationRow {
  std::string variant;
  objectives::LossWeights weights;
  model::Variant mode = model::Variant::full;
  eval::MetricsReport test;
  objectives::LossBreakdown last_epoch;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::string to_json() const;
  std::string to_markdown() const;
};

/// full, a1-, a2-, a3-, a2-a3- (MIB only) and host-only under one seed.
std::vector<std::pair<std::string, RunConfig>> ablation_variants(const RunConfig& base);
AblationResult run_ablation(const RunConfig& base,
                            const std::function<void(const std::string&)>& progress = {});

}  // namespace mrdib::pipeline
