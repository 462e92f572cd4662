// SPDX-License-Identifier: Apache-2.0
//
// Training loop. Each iteration:
//   1. z ~ N(0, I), x_hat = G(z), z_hat = E(x)
//   2. one Adam step on theta_D with L_D (encoder and generator outputs
//      detached)
//   3. D re-evaluated with the updated theta_D; one Adam step on theta_G with
//      L_EG and on theta_E with L_EG + lambda * L_T
// The first warmup_epochs run with lambda = 0 and draw no triplets.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/optim/adam.h>

#include "tbigan/datasets.hpp"
#include "tbigan/losses.hpp"
#include "tbigan/models.hpp"
#include "tbigan/sampler.hpp"

namespace tbigan {

/// Independent RNG streams derived from the run seed.
enum class SeedStream : uint64_t {
  init = 0,
  prior = 1,
  noise = 2,
  triplet = 3,
  epoch = 4,
  eval_triplets = 5,
};
uint64_t stream_seed(uint64_t seed, SeedStream stream);

struct TrainConfig {
  ModelTag model = ModelTag::triplet_bigan;
  double lambda = 1.0;
  int64_t warmup_epochs = 10;
  int64_t total_epochs = 50;
  int64_t batch_size = 64;
  double learning_rate = 1e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int64_t n_per_class = 100;
  uint64_t seed = 0;
  bool hard_negatives = false;
  int64_t checkpoint_every = 0;  // epochs; 0 = only at completion
  // Single-threaded, deterministic kernels, wall_time_s logged as 0.
  bool deterministic = true;
  // Fixed triplets used for the per-epoch triplet accuracy.
  int64_t eval_triplets = 1000;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const LabeledIndex& index);
void from_json(const nlohmann::json& j, LabeledIndex& index);

/// One line of metrics.jsonl.
struct EpochRecord {
  int64_t epoch = 0;
  double l_d = 0.0;
  double l_eg = 0.0;
  std::optional<double> l_t;
  std::optional<double> l_teg;
  // On the fixed evaluation triplets, deterministic codes.
  double d_plus_mean = 0.0;
  double d_minus_mean = 0.0;
  double triplet_accuracy = 0.0;
  double wall_time_s = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

void to_json(nlohmann::json& j, const EpochRecord& r);
void from_json(const nlohmann::json& j, EpochRecord& r);
/// Compact single-line JSON as written to metrics.jsonl.
std::string metrics_line(const EpochRecord& r);

struct TripletMetrics {
  double accuracy = 0.0;
  double d_plus_mean = 0.0;
  double d_minus_mean = 0.0;
};

/// Fraction of triplets with d+ < d- (and mean distances) under the
/// deterministic encoder of `params`.
TripletMetrics triplet_metrics(ModelParams& params, const LabeledImages& train,
                               const TripletIndices& triplets);

inline constexpr uint32_t kCheckpointVersion = 1;

/// Versioned container: magic, version, payload size, CRC32, payload.
void write_checkpoint_file(const std::filesystem::path& path,
                           const std::string& payload);
/// Throws CheckpointError on bad magic, version mismatch, truncation or CRC
/// mismatch.
std::string read_checkpoint_file(const std::filesystem::path& path);

/// Serializable training state plus the loop that advances it.
class Trainer {
 public:
  Trainer(const ArchitectureConfig& arch, const TrainConfig& config,
          const DatasetSplit& split, LabeledIndex index);

  /// Restores every parameter, optimizer moment, RNG stream and counter.
  static Trainer resume(const std::filesystem::path& checkpoint,
                        const DatasetSplit& split);

  /// One iteration on unlabeled batch `x`. `triplet` must be given iff the
  /// effective lambda is positive (and always for the triplet-only model).
  LossReport train_step(const torch::Tensor& x, const TripletBatch* triplet);

  /// Runs one epoch of ceil(|train| / batch_size) iterations.
  EpochRecord run_epoch();

  /// Called after each epoch with the record and whether a checkpoint is due.
  using EpochCallback = std::function<void(const EpochRecord&, Trainer&)>;
  /// Runs epochs until total_epochs.
  void fit(const EpochCallback& on_epoch = {});

  void save_checkpoint(const std::filesystem::path& path,
                       const nlohmann::json& metadata = {}) const;
  /// Metadata stored with a checkpoint, without restoring the state.
  static nlohmann::json read_metadata(const std::filesystem::path& checkpoint);

  /// Extends (or shortens, not below the current epoch) the run.
  void set_total_epochs(int64_t total);

  /// lambda in effect for the current epoch (0 during warm-up).
  double effective_lambda() const;
  bool uses_triplets() const;

  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  const TrainConfig& config() const { return config_; }
  const LabeledIndex& index() const { return index_; }
  int64_t epoch() const { return epoch_; }
  int64_t global_step() const { return global_step_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  const TripletIndices& eval_triplets() const { return eval_triplets_; }

  /// Draws the triplet batch the next train_step would use.
  TripletBatch next_triplet_batch(int64_t size);

 private:
  Trainer(ModelParams params, const TrainConfig& config,
          const DatasetSplit& split, LabeledIndex index);

  void refresh_hard_negatives();
  LossReport triplet_only_step(const TripletBatch& triplet);

  TrainConfig config_;
  const DatasetSplit* split_;
  LabeledIndex index_;
  ModelParams params_;
  std::unique_ptr<torch::optim::Adam> opt_e_;
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
  at::Generator prior_gen_;
  at::Generator noise_gen_;
  Rng triplet_rng_;
  UnsupervisedSampler unsupervised_;
  HardNegativeTable hard_negatives_;
  TripletIndices eval_triplets_;
  int64_t epoch_ = 0;
  int64_t global_step_ = 0;
  std::vector<EpochRecord> history_;
};

/// Model parameters stored in a checkpoint, without optimizer state.
ModelParams load_model(const std::filesystem::path& checkpoint);

/// Puts libtorch into single-threaded deterministic mode.
void enable_deterministic_backend();

}  // namespace tbigan
