// SPDX-License-Identifier: Apache-2.0
//
// Triplet sampling from the labeled subset and epoch batching of the
// unlabeled training set.

#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <torch/types.h>

#include "tbigan/datasets.hpp"

namespace tbigan {

using Rng = std::mt19937_64;

std::string rng_state(const Rng& rng);
void set_rng_state(Rng& rng, const std::string& state);

/// Train-set indices of sampled triplets, before images are gathered.
struct TripletIndices {
  std::vector<int64_t> anchor;
  std::vector<int64_t> positive;
  std::vector<int64_t> negative;
  std::vector<int64_t> anchor_class;
  std::vector<int64_t> negative_class;

  int64_t size() const { return static_cast<int64_t>(anchor.size()); }
};

struct TripletBatch {
  torch::Tensor anchor;
  torch::Tensor positive;
  torch::Tensor negative;
  std::vector<int64_t> anchor_class;
  std::vector<int64_t> negative_class;
  std::array<std::vector<int64_t>, 3> source_indices;

  int64_t size() const { return static_cast<int64_t>(anchor_class.size()); }
};

/// For every labeled example, its nearest other-class labeled example under
/// the Euclidean distance between codes (ties: lowest train index).
class HardNegativeTable {
 public:
  HardNegativeTable() = default;

  /// `codes` holds one row of width `m` per entry of index.flat().
  HardNegativeTable(const LabeledIndex& index, std::span<const float> codes,
                    int64_t m);

  /// Hard negative (train index) for a labeled train index.
  int64_t negative_for(int64_t train_index) const;
  bool empty() const { return negative_.empty(); }

 private:
  std::vector<int64_t> train_index_;  // sorted
  std::vector<int64_t> negative_;     // aligned with train_index_
};

/// Anchors uniform over labeled examples (anchors from singleton classes are
/// redrawn), positive uniform over the anchor's other same-class examples,
/// negative uniform over all other-class examples.
TripletIndices sample_triplet_indices(const LabeledIndex& index, int64_t batch,
                                      Rng& rng);

/// Anchors and positives as above; negatives from `table`.
TripletIndices sample_hard_negative_indices(const LabeledIndex& index,
                                            int64_t batch,
                                            const HardNegativeTable& table,
                                            Rng& rng);

TripletBatch gather_triplets(const TripletIndices& idx, const LabeledImages& train,
                             torch::ScalarType dtype = torch::kFloat32);

TripletBatch sample_triplet_batch(const LabeledIndex& index,
                                  const DatasetSplit& split, int64_t batch,
                                  Rng& rng);

TripletBatch sample_hard_negative_batch(const LabeledIndex& index,
                                        const DatasetSplit& split, int64_t batch,
                                        const HardNegativeTable& table, Rng& rng);

/// A fresh shuffle of [0, size) cut into ceil(size / batch) batches whose
/// sizes differ by at most one.
std::vector<std::vector<int64_t>> epoch_batches(int64_t size, int64_t batch,
                                                Rng& rng);

/// Stateful wrapper over epoch_batches that hands out one batch at a time.
class UnsupervisedSampler {
 public:
  UnsupervisedSampler(int64_t size, int64_t batch, uint64_t seed);

  int64_t batches_per_epoch() const;
  /// Next batch of train indices; reshuffles at each epoch boundary.
  std::vector<int64_t> next();

  /// Only valid at an epoch boundary.
  std::string state() const;
  void set_state(const std::string& state);

 private:
  int64_t size_;
  int64_t batch_;
  Rng rng_;
  std::vector<std::vector<int64_t>> epoch_;
  size_t cursor_ = 0;
};

/// Image batch for `unsupervised_batch` style callers.
torch::Tensor unsupervised_batch(const DatasetSplit& split,
                                 UnsupervisedSampler& sampler,
                                 torch::ScalarType dtype = torch::kFloat32);

}  // namespace tbigan
