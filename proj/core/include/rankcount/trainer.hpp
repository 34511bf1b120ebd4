#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rankcount/data.hpp"
#include "rankcount/model.hpp"

namespace rankcount {

enum class Regime { finetune, alternating, multitask };

Regime regime_from_string(const std::string& s);
const char* to_string(Regime regime);

/// All training hyperparameters. Every field is addressable by its key in a
/// flat key=value config file (see apply_config_entry) and by `--set` on the
/// command line.
struct TrainConfig {
  Regime regime = Regime::multitask;
  double lambda = 100.0;
  double epsilon = 0.0;
  double lr = 1e-2;
  double lr_decay_factor = 0.1;
  std::int64_t lr_decay_interval = 10000;
  std::int64_t total_iterations = 20000;
  /// Finetune regime: ranking-only iterations before the counting phase.
  /// Negative means total_iterations / 2. Zero degenerates to counting-only
  /// training.
  std::int64_t phase1_iterations = -1;
  double weight_decay = 5e-4;
  std::int64_t alternating_period = 300;
  /// Off by default; plain SGD matches the paper's description.
  double momentum = 0.0;
  /// Alternating phases share one global iteration counter for the lr
  /// schedule by default; per_task restarts the clock per task instead.
  bool lr_clock_per_task = false;
  std::uint64_t seed = 1;
  std::int64_t checkpoint_every = 1000;
  std::int64_t eval_every = 0;

  // Chain-generation parameters; train validates the supplied manifest
  // against k.
  int k = 5;
  double s = 0.75;
  double r = 8.0;

  // Data geometry.
  int input_size = 224;
  int counting_batch = 25;
  int ranking_sets = 5;
  int min_patch_side = 56;
  int max_patch_side = 448;
  double sigma_px = 15.0;
  bool log_uniform_scales = false;

  // Model.
  int in_channels = 1;
  std::vector<int> widths = {16, 32, 64, 64};

  /// Paper-faithful values: lr 1e-6 (assumes a pretrained backbone), 20K
  /// iterations, input 224.
  static TrainConfig preset_paper();
  /// From-scratch desk-scale values: small widths, input 64, lr 1e-2.
  static TrainConfig preset_toy();
  static TrainConfig preset(const std::string& name);

  std::int64_t resolved_phase1() const {
    return phase1_iterations >= 0 ? phase1_iterations : total_iterations / 2;
  }
  /// lr * decay^floor(iteration / interval); iterations are 0-based, so the
  /// first decay applies at iteration lr_decay_interval exactly.
  double lr_at(std::int64_t iteration) const;
  BatchConfig batch_config() const;
  ModelConfig model_config() const;
  void validate() const;
};

/// Sets one field by key ("lambda", "lr", "widths", ...). Unknown keys throw.
void apply_config_entry(TrainConfig& config, const std::string& key,
                        const std::string& value);
/// Flat `key = value` file; '#' starts a comment. Later entries win.
TrainConfig load_train_config(const std::filesystem::path& path, TrainConfig base);
/// Serializes every field (the reproducibility record of a run).
std::string dump_train_config(const TrainConfig& config);

// --- Logs ------------------------------------------------------------------

struct IterRecord {
  std::int64_t iteration = 0;
  std::string phase;  // "counting", "ranking" or "mixed"
  bool has_counting = false;
  double loss_counting = 0.0;
  bool has_ranking = false;
  double loss_ranking = 0.0;
  int active_pairs = 0;
  double lr = 0.0;
};

struct EvalRecord {
  std::int64_t iteration = 0;
  double mae = 0.0;
  double mse = 0.0;
};

struct TrainLog {
  std::vector<IterRecord> iterations;
  std::vector<EvalRecord> evals;

  void write_csv(const std::filesystem::path& path) const;
  void write_eval_csv(const std::filesystem::path& path) const;
};

struct TrainHooks {
  /// Returns (MAE, MSE) on a held-out set; sampled every eval_every
  /// iterations when set.
  std::function<std::pair<double, double>(const CountingNet&)> evaluate;
};

struct TrainResult {
  CountingNet net;
  TrainLog log;
};

/// Checkpoints are written into out_dir (when non-empty) every
/// checkpoint_every iterations, at the finetune phase boundary
/// ("phase1.ckpt"), and at the end ("final.ckpt").
TrainResult train(const CountingNet& initial, const DataSources& sources,
                  const TrainConfig& config, const std::filesystem::path& out_dir = {},
                  const TrainHooks& hooks = {});

/// The three combination strategies, callable directly.
TrainResult train_finetune(const CountingNet& initial, const DataSources& sources,
                           const TrainConfig& config,
                           const std::filesystem::path& out_dir = {},
                           const TrainHooks& hooks = {});
TrainResult train_alternating(const CountingNet& initial, const DataSources& sources,
                              const TrainConfig& config,
                              const std::filesystem::path& out_dir = {},
                              const TrainHooks& hooks = {});
TrainResult train_multitask(const CountingNet& initial, const DataSources& sources,
                            const TrainConfig& config,
                            const std::filesystem::path& out_dir = {},
                            const TrainHooks& hooks = {});

}  // namespace rankcount
