#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "modest/adapter_net.hpp"
#include "modest/embedding_store.hpp"
#include "modest/eval_metrics.hpp"
#include "modest/loss_core.hpp"

namespace modest {

enum class LossMode { ccl, infonce, kl_only, rp_only };
enum class AlphaScheduleKind { fixed, dynamic };
enum class RpPosition { pre_adapter, post_adapter };

std::string to_string(LossMode m);
LossMode loss_mode_from_string(std::string_view s);

struct AlphaSchedule {
  AlphaScheduleKind kind = AlphaScheduleKind::fixed;
  double alpha_start = 0.1;  // dynamic schedule endpoints
  double alpha_end = 0.01;
};

/// Full hyperparameter record. Serializes to key-sorted JSON whose content
/// hash is the run identity.
struct RunConfig {
  Index batch_size = 10000;
  Index epochs = 500;
  double tau = 0.07;
  double sigma = 0.01;
  double alpha = 0.1;
  double lambda = 1.0;
  AlphaSchedule alpha_schedule;
  bool use_fusemix = false;
  double beta_param = 1.0;
  bool symmetric_loss = true;
  LossMode loss_mode = LossMode::ccl;
  Similarity similarity = Similarity::cosine;
  RpPosition rp_position = RpPosition::pre_adapter;
  AdapterConfig adapter_x;  // in_dim 0 means: take from the dataset
  AdapterConfig adapter_y;
  LrSchedule schedule;  // total_steps 0: epochs * batches; warmup 0: 5% of total
  std::uint64_t master_seed = 0;
};

std::string run_config_to_json(const RunConfig& c);
RunConfig run_config_from_json(const std::string& text);
std::uint64_t run_config_hash(const RunConfig& c);

struct EpochRecord {
  Index epoch = 0;
  double mean_loss = 0.0;
  double mean_entropy = 0.0;
  double mean_grad_l1 = 0.0;
  double alpha = 0.0;  // effective smoothing used this epoch
  double lr = 0.0;     // rate at the final optimizer step of the epoch
  double wall_seconds = 0.0;
};

struct RunLog {
  std::vector<EpochRecord> epochs;
};

// JSON-lines serialization. Timing is non-deterministic, so it goes to a
// separate sidecar; the metric log is byte-stable across identical runs.
std::string run_log_to_jsonl(const RunLog& log);
std::string run_timing_to_jsonl(const RunLog& log);

struct Checkpoint {
  AdapterNetwork<float> adapter_x;
  AdapterNetwork<float> adapter_y;
  OptimizerState<float> opt_x;
  OptimizerState<float> opt_y;
  Index epoch = 0;  // completed epochs
  std::int64_t global_step = 0;
  std::uint64_t config_hash = 0;
  std::uint64_t master_seed = 0;  // noise streams are derived per epoch/batch
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Seeded shuffle of all row indices partitioned into floor(count/n) full
/// batches; the remainder is dropped.
std::vector<std::vector<Index>> make_epoch_batches(Index count, Index n,
                                                   std::uint64_t epoch_seed);

/// One training run. Construct, then step epochs; checkpoints taken between
/// epochs resume bit-exactly.
class Trainer {
 public:
  Trainer(RunConfig config, const PairedDataset& ds);
  Trainer(RunConfig config, const PairedDataset& ds, const Checkpoint& ckpt);

  void run_epoch();
  bool done() const { return next_epoch_ >= config_.epochs; }
  Index next_epoch() const { return next_epoch_; }

  const RunConfig& config() const { return config_; }
  const RunLog& log() const { return log_; }
  const AdapterNetwork<float>& adapter_x() const { return adapter_x_; }
  const AdapterNetwork<float>& adapter_y() const { return adapter_y_; }

  Checkpoint checkpoint() const;

 private:
  RunConfig config_;
  const PairedDataset& ds_;
  AdapterNetwork<float> adapter_x_;
  AdapterNetwork<float> adapter_y_;
  OptimizerState<float> opt_x_;
  OptimizerState<float> opt_y_;
  RunLog log_;
  Index next_epoch_ = 0;
  std::int64_t global_step_ = 0;
};

struct TrainedAdapters {
  AdapterNetwork<float> x;
  AdapterNetwork<float> y;
};

/// Runs the whole schedule and returns adapters with noise disabled for any
/// subsequent inference.
std::pair<TrainedAdapters, RunLog> train(const RunConfig& config, const PairedDataset& ds);

/// Fills dataset-dependent defaults (adapter in_dims, schedule lengths) the
/// same way train() does, so configs can be hashed before running.
RunConfig resolve_config(RunConfig config, const PairedDataset& ds);

struct GridCell {
  double sigma = 0.0;
  double alpha = 0.0;
  RetrievalReport t2i;
  RetrievalReport i2t;
  double mean_r1 = 0.0;
};

/// One full train + eval per (sigma, alpha) cell, seeds fixed across cells,
/// sorted by mean R@1 descending. Cells fan out across worker threads capped
/// by MODEST_ALIGN_THREADS.
std::vector<GridCell> grid_search(const RunConfig& base, std::span<const double> sigmas,
                                  std::span<const double> alphas, const PairedDataset& train_ds,
                                  const PairedDataset& eval_ds);

std::string grid_to_csv(std::span<const GridCell> cells);

/// Worker-parallelism cap from MODEST_ALIGN_THREADS (defaults to the
/// hardware concurrency).
int thread_cap();

}  // namespace modest
