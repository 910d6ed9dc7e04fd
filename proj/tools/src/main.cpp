#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mrdib/errors.hpp"
#include "mrdib/pipeline.hpp"
#include "mrdib/synth.hpp"

namespace {

namespace fs = std::filesystem;
using namespace mrdib;

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

void write_text(const fs::path& path, const std::string& content) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << content;
}

void note(const std::string& msg) { std::cerr << msg << "\n"; }

struct TrainArgs {
  std::string config;
  std::optional<double> alpha1, alpha2, alpha3;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
};

int cmd_train(const TrainArgs& a) {
  pipeline::RunConfig cfg = pipeline::RunConfig::load(a.config);
  if (a.alpha1) cfg.weights.alpha1 = *a.alpha1;
  if (a.alpha2) cfg.weights.alpha2 = *a.alpha2;
  if (a.alpha3) cfg.weights.alpha3 = *a.alpha3;
  if (a.seed) cfg.seed = *a.seed;
  if (a.mode) cfg.mode = model::variant_from_string(*a.mode);
  cfg.validate();
  require(!cfg.output_dir.empty(), "config.output_dir is required for train");

  const auto data = pipeline::prepare_data(cfg);
  note("dataset: " + std::to_string(data.dataset.n_users()) + " users, " +
       std::to_string(data.dataset.n_items()) + " items, " + std::to_string(data.dataset.n_train()) +
       " training interactions");
  pipeline::TrainHooks hooks;
  hooks.on_epoch = [](const pipeline::EpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu  total %.5f  valid R@5 %.4f%s", r.epoch, r.loss.total,
                  r.valid_recall, r.improved ? "  *" : "");
    note(buf);
    return true;
  };
  const auto result = pipeline::run_training(cfg, data, hooks);
  note("best epoch " + std::to_string(result.best_epoch) + ", checkpoint " + result.checkpoint_path);
  std::cout << result.test.to_json() << "\n";
  return kOk;
}

int cmd_sweep(const std::string& config, const std::string& grid, std::optional<std::size_t> budget) {
  const auto cfg = pipeline::RunConfig::load(config);
  const auto spec = pipeline::SweepSpec::load(grid);
  const auto result = pipeline::run_sweep(cfg, spec, budget, note);
  const std::string json = result.to_json();
  if (!cfg.output_dir.empty()) {
    write_text(fs::path(cfg.output_dir) / "leaderboard.json", json);
    write_text(fs::path(cfg.output_dir) / "best_config.json", result.best.to_json());
  }
  std::cout << json;
  return kOk;
}

int cmd_ablate(const std::string& config) {
  const auto cfg = pipeline::RunConfig::load(config);
  const auto result = pipeline::run_ablation(cfg, note);
  if (!cfg.output_dir.empty()) {
    write_text(fs::path(cfg.output_dir) / "ablation.json", result.to_json());
    write_text(fs::path(cfg.output_dir) / "ablation.md", result.to_markdown());
  }
  std::cout << result.to_markdown();
  return kOk;
}

int cmd_synth(const std::string& config, const std::string& out) {
  const auto sc = pipeline::load_synth_config(config);
  const auto ds = data::synth_pid_generate(sc);
  data::write_synth(ds, out);
  note("wrote " + std::to_string(ds.interactions.size()) + " interactions for " +
       std::to_string(sc.n_users) + " users and " + std::to_string(sc.n_items) + " items to " + out);
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& config, const std::string& split) {
  const auto which = eval::split_from_string(split);
  const auto ckpt = pipeline::load_checkpoint(checkpoint);
  const auto cfg = pipeline::RunConfig::load(config);
  const auto data = pipeline::prepare_data(cfg);
  std::cout << pipeline::evaluate_checkpoint(ckpt, data, which).to_json() << "\n";
  return kOk;
}

int cmd_export(const std::string& checkpoint, const std::string& out) {
  const auto ckpt = pipeline::load_checkpoint(checkpoint);
  pipeline::export_embeddings(ckpt, out);
  note("wrote z1.mmf and z2.mmf (" + std::to_string(ckpt.item_ids.size()) + " x " +
       std::to_string(ckpt.config.dims.latent) + ") to " + out);
  return kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"mrdib: multimodal recommendation with disentangled information bottlenecks"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "train one model and evaluate its best checkpoint");
  t->add_option("--config", train.config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  t->add_option("--alpha1", train.alpha1, "compression weight");
  t->add_option("--alpha2", train.alpha2, "redundancy weight");
  t->add_option("--alpha3", train.alpha3, "unique-information weight");
  t->add_option("--seed", train.seed, "run seed");
  t->add_option("--mode", train.mode, "model variant")->check(CLI::IsMember({"full", "mib-only", "host-only"}));

  std::string config, grid, checkpoint, out, split;
  std::optional<std::size_t> budget;
  auto* s = app.add_subcommand("sweep", "grid search over the alpha weights");
  s->add_option("--config", config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  s->add_option("--grid", grid, "grid spec (JSON)")->required()->check(CLI::ExistingFile);
  s->add_option("--budget", budget, "maximum number of grid points to allow");

  auto* ab = app.add_subcommand("ablate", "train the ablation variants under one seed");
  ab->add_option("--config", config, "run config (JSON)")->required()->check(CLI::ExistingFile);

  auto* sy = app.add_subcommand("synth", "generate a synthetic dataset with planted information classes");
  sy->add_option("--config", config, "synthetic generator config (JSON)")->required()->check(CLI::ExistingFile);
  sy->add_option("--out", out, "output directory")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  ev->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  ev->add_option("--config", config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split, "valid or test")->required()->check(CLI::IsMember({"valid", "test"}));

  auto* ex = app.add_subcommand("export-embeddings", "write item-level Z1/Z2 posterior means");
  ex->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  ex->add_option("--out", out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (t->parsed()) return cmd_train(train);
    if (s->parsed()) return cmd_sweep(config, grid, budget);
    if (ab->parsed()) return cmd_ablate(config);
    if (sy->parsed()) return cmd_synth(config, out);
    if (ev->parsed()) return cmd_eval(checkpoint, config, split);
    if (ex->parsed()) return cmd_export(checkpoint, out);
  } catch (const ContractViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return kNumerical;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}
