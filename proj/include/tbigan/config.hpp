// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration. The file format is flat "key = value" text with
// dotted sections ("train.lambda = 1.0"); '#' starts a comment and a
// "[section]" line prefixes the keys below it. Command-line flags are applied
// on top of file values before resolution.

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include <json.hpp>

#include "tbigan/datasets.hpp"
#include "tbigan/eval.hpp"
#include "tbigan/models.hpp"
#include "tbigan/trainer.hpp"

namespace tbigan {

using KeyValues = std::map<std::string, std::string>;

struct EvalOptions {
  int64_t k = 9;
  KnnWeighting weighting = KnnWeighting::inverse_distance;
  EmbeddingSource queries = EmbeddingSource::test;
  int64_t batch_size = 256;

  bool operator==(const EvalOptions&) const = default;
};

struct ExperimentConfig {
  DatasetId dataset = DatasetId::synthetic;
  std::filesystem::path data_root;
  SyntheticOptions synthetic;
  ArchitectureConfig arch;
  TrainConfig train;
  EvalOptions eval;
  std::filesystem::path output_dir = "runs/default";

  ModelTag model() const { return train.model; }
};

KeyValues parse_key_values(std::string_view text);
KeyValues read_config_file(const std::filesystem::path& path);

/// Applies defaults (model-dependent for lambda and warm-up) and validates.
/// Throws UsageError naming the offending key.
ExperimentConfig resolve_config(const KeyValues& values);

/// Every key with its resolved value; resolve_config(to_key_values(c)) == c.
KeyValues to_key_values(const ExperimentConfig& config);
std::string render_config(const ExperimentConfig& config);

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Keys recognised by resolve_config.
const std::vector<std::string>& known_config_keys();

}  // namespace tbigan
