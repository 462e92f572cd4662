// SPDX-License-Identifier: Apache-2.0
//
// Run-directory level operations behind the command-line tool.
//
// A run directory holds:
//   config.txt        resolved configuration
//   metrics.jsonl     one EpochRecord per line
//   checkpoints/      epoch_NNNN.ckpt and final.ckpt
//   report.json       EvalReport (after eval)
//   report.txt        human-readable summary

#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tbigan/config.hpp"
#include "tbigan/eval.hpp"
#include "tbigan/trainer.hpp"

namespace tbigan {

struct RunPaths {
  std::filesystem::path dir;

  std::filesystem::path config() const { return dir / "config.txt"; }
  std::filesystem::path metrics() const { return dir / "metrics.jsonl"; }
  std::filesystem::path checkpoints() const { return dir / "checkpoints"; }
  std::filesystem::path final_checkpoint() const { return checkpoints() / "final.ckpt"; }
  std::filesystem::path epoch_checkpoint(int64_t epoch) const;
  std::filesystem::path report_json() const { return dir / "report.json"; }
  std::filesystem::path report_txt() const { return dir / "report.txt"; }
  std::filesystem::path lock() const { return dir / ".lock"; }
};

/// Exclusive lock file; a second holder fails with UsageError.
class RunLock {
 public:
  explicit RunLock(std::filesystem::path path);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

DatasetSplit load_split(const ExperimentConfig& config);

struct TrainResult {
  RunPaths paths;
  std::vector<EpochRecord> history;
};

/// Fresh run into config.output_dir.
TrainResult run_train(const ExperimentConfig& config, std::ostream* log = nullptr);

struct ResumeOptions {
  std::optional<int64_t> total_epochs;
  std::optional<std::filesystem::path> data_root;
  std::optional<std::filesystem::path> output_dir;
};

/// Continues the run stored in `checkpoint`; metrics.jsonl is rewritten from
/// the checkpoint history before new epochs are appended.
TrainResult resume_train(const std::filesystem::path& checkpoint,
                         const ResumeOptions& options = {},
                         std::ostream* log = nullptr);

/// Experiment configuration stored in a checkpoint.
ExperimentConfig checkpoint_config(const std::filesystem::path& checkpoint);

/// Accepts a checkpoint file or a run directory (uses its final.ckpt).
std::filesystem::path resolve_checkpoint(const std::filesystem::path& path);

/// Embeds the labeled train subset as the database and `config.eval.queries`
/// as queries, then runs k-NN and retrieval.
EvalReport evaluate(ModelParams& params, const DatasetSplit& split,
                    const LabeledIndex& index, const ExperimentConfig& config);

struct EvalOverrides {
  std::optional<std::filesystem::path> data_root;
  std::optional<int64_t> k;
  std::optional<EmbeddingSource> queries;
  std::optional<std::filesystem::path> output_dir;
};

/// Evaluates a checkpoint and writes report.json and report.txt.
EvalReport run_eval(const std::filesystem::path& checkpoint,
                    const EvalOverrides& overrides = {});

std::string render_report(const EvalReport& report);

void run_embed(const std::filesystem::path& checkpoint, EmbeddingSource source,
               const std::filesystem::path& out,
               const std::optional<std::filesystem::path>& data_root = {});

/// Grid of `queries` test images (chosen with `seed`) and their `top` nearest
/// labeled train images.
void run_retrieve_grid(const std::filesystem::path& checkpoint, int64_t queries,
                       int64_t top, uint64_t seed, const std::filesystem::path& out,
                       const std::optional<std::filesystem::path>& data_root = {});

/// Reads report.json files; directories are searched recursively.
std::vector<EvalReport> collect_reports(const std::vector<std::filesystem::path>& paths);

struct SweepSpec {
  std::vector<ModelTag> models;
  std::vector<int64_t> latent_dims;
  std::vector<int64_t> n_per_class;
};

struct SweepResult {
  std::vector<EvalReport> reports;
  std::vector<std::string> failures;
  std::string tables;
};

/// Trains and evaluates every (model, m, n) cell under `dir/<model>_m<m>_n<n>`.
/// Cells that already have report.json are reused. A failing cell is logged
/// and skipped. Writes dir/tables.txt and dir/failures.txt.
SweepResult run_sweep(const KeyValues& base, const SweepSpec& spec,
                      const std::filesystem::path& dir, std::ostream* log = nullptr);

}  // namespace tbigan
