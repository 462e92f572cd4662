// SPDX-License-Identifier: Apache-2.0
//
// Dataset ingestion (CIFAR10 binary batches, SVHN cropped-digit .mat files),
// the deterministic train/validation/labeled splits used by every experiment,
// and a procedural shapes dataset for desk-scale runs.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <torch/types.h>

namespace tbigan {

struct ImageShape {
  int64_t channels = 3;
  int64_t height = 32;
  int64_t width = 32;

  int64_t pixels() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

/// Images stored as uint8 [N, C, H, W] with an aligned label vector.
/// Pixel value v maps to v / 255 in [0, 1] when a batch is materialized.
struct LabeledImages {
  torch::Tensor images;
  std::vector<int64_t> labels;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
  ImageShape shape() const;

  /// Float [B, C, H, W] batch in [0, 1] for the given row indices.
  torch::Tensor batch(std::span<const int64_t> indices,
                      torch::ScalarType dtype = torch::kFloat32) const;
  /// Every image as a float batch.
  torch::Tensor all(torch::ScalarType dtype = torch::kFloat32) const;

  LabeledImages subset(std::span<const int64_t> indices) const;
};

struct DatasetSplit {
  std::string name;
  LabeledImages train;
  LabeledImages validation;
  LabeledImages test;
  int64_t class_count = 0;
  ImageShape image_shape;
};

/// The labeled part of the training set: class id -> sorted train indices.
struct LabeledIndex {
  std::map<int64_t, std::vector<int64_t>> per_class_indices;
  int64_t n_per_class = 0;
  uint64_t seed = 0;

  /// All labeled indices, class-major, ascending within a class.
  std::vector<int64_t> flat() const;
  /// Class of each entry of flat().
  std::vector<int64_t> flat_labels() const;
  int64_t size() const;
};

enum class DatasetId { cifar10, svhn, synthetic };

DatasetId parse_dataset_id(std::string_view name);
std::string_view to_string(DatasetId id);

/// Parameters of the procedural shapes dataset.
struct SyntheticOptions {
  int64_t class_count = 3;
  int64_t per_class = 200;
  int64_t image_size = 16;
  uint64_t seed = 7;
  int64_t test_per_class = 100;
};

inline constexpr int64_t kValidationPerClass = 50;

/// Loads a dataset and carves the validation split out of its train part.
/// `root` is ignored for the synthetic dataset.
DatasetSplit load_dataset(DatasetId id, const std::filesystem::path& root,
                          const SyntheticOptions& synthetic = {});

/// Moves the last `per_class` examples of every class (in stored order) to
/// the validation part. Both parts keep the original relative order.
std::pair<LabeledImages, LabeledImages> make_validation_split(
    const LabeledImages& data, int64_t class_count,
    int64_t per_class = kValidationPerClass);

/// Seeded uniform choice of `n_per_class` labeled examples per class.
LabeledIndex select_labeled_subset(const DatasetSplit& split,
                                   int64_t n_per_class, uint64_t seed);

/// Procedural dataset: `per_class` train images per class (plus 50 per class
/// for validation and `test_per_class` for test). Classes are distinct
/// parametric patterns with jittered placement, scale, colour, and noise.
DatasetSplit synthetic_shapes(int64_t class_count, int64_t per_class,
                              int64_t image_size, uint64_t seed,
                              int64_t test_per_class = 100);

inline constexpr int64_t kMaxSyntheticClasses = 10;

/// One CIFAR10 binary batch file (records of 1 label byte + 3072 pixels).
LabeledImages read_cifar10_batch(const std::filesystem::path& file);

/// SVHN cropped-digits MATLAB v5 file with variables X (32x32x3xN uint8) and
/// y (N x 1). Label 10 (digit zero) is remapped to class 0.
LabeledImages read_svhn_mat(const std::filesystem::path& file);

/// --data-root flag value, else $TBIGAN_DATA_ROOT, else "data".
std::filesystem::path resolve_data_root(
    const std::optional<std::filesystem::path>& flag);

}  // namespace tbigan
