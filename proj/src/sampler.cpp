// SPDX-License-Identifier: Apache-2.0

#include "tbigan/sampler.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <sstream>

#include <torch/torch.h>

#include "tbigan/error.hpp"

namespace tbigan {

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void set_rng_state(Rng& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (is.fail()) throw DataError("malformed RNG state");
}

namespace {

// Class-major view of a LabeledIndex with the block of every class.
struct FlatIndex {
  std::vector<int64_t> train_index;
  std::vector<int64_t> label;
  std::vector<int64_t> block_start;  // per flat position, start of its class
  std::vector<int64_t> block_size;

  explicit FlatIndex(const LabeledIndex& index) {
    for (const auto& [cls, idx] : index.per_class_indices) {
      const auto start = static_cast<int64_t>(train_index.size());
      for (auto i : idx) {
        train_index.push_back(i);
        label.push_back(cls);
        block_start.push_back(start);
        block_size.push_back(static_cast<int64_t>(idx.size()));
      }
    }
  }
  int64_t size() const { return static_cast<int64_t>(train_index.size()); }
};

void check_samplable(const FlatIndex& flat, int64_t batch) {
  if (batch < 1) throw ContractError("triplet batch must be positive");
  bool has_pair = false;
  bool has_other = false;
  for (int64_t i = 0; i < flat.size(); ++i) {
    has_pair |= flat.block_size[static_cast<size_t>(i)] >= 2;
    has_other |= flat.block_size[static_cast<size_t>(i)] < flat.size();
  }
  if (!has_pair || !has_other) {
    throw ContractError(
        "triplet sampling needs a class with >= 2 labeled examples and at "
        "least two labeled classes");
  }
}

using Uniform = std::uniform_int_distribution<int64_t>;

// Draws anchor and positive flat positions.
std::pair<int64_t, int64_t> draw_anchor_positive(const FlatIndex& flat, Rng& rng) {
  int64_t a = 0;
  do {
    a = Uniform(0, flat.size() - 1)(rng);
  } while (flat.block_size[static_cast<size_t>(a)] < 2);
  const auto start = flat.block_start[static_cast<size_t>(a)];
  const auto n = flat.block_size[static_cast<size_t>(a)];
  int64_t p = start + Uniform(0, n - 2)(rng);
  if (p >= a) ++p;
  return {a, p};
}

int64_t draw_negative(const FlatIndex& flat, int64_t a, Rng& rng) {
  const auto start = flat.block_start[static_cast<size_t>(a)];
  const auto n = flat.block_size[static_cast<size_t>(a)];
  int64_t r = Uniform(0, flat.size() - n - 1)(rng);
  if (r >= start) r += n;
  return r;
}

}  // namespace

HardNegativeTable::HardNegativeTable(const LabeledIndex& index,
                                     std::span<const float> codes, int64_t m) {
  const FlatIndex flat(index);
  const auto n = flat.size();
  if (static_cast<int64_t>(codes.size()) != n * m) {
    throw ContractError("hard-negative codes do not match the labeled index");
  }
  std::vector<std::pair<int64_t, int64_t>> pairs;  // (train index, negative)
  pairs.reserve(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int64_t best_idx = -1;
    for (int64_t j = 0; j < n; ++j) {
      if (flat.label[static_cast<size_t>(j)] == flat.label[static_cast<size_t>(i)]) continue;
      double d = 0.0;
      for (int64_t k = 0; k < m; ++k) {
        const double diff = static_cast<double>(codes[static_cast<size_t>(i * m + k)]) -
                            static_cast<double>(codes[static_cast<size_t>(j * m + k)]);
        d += diff * diff;
      }
      const auto tj = flat.train_index[static_cast<size_t>(j)];
      if (d < best || (d == best && tj < best_idx)) {
        best = d;
        best_idx = tj;
      }
    }
    pairs.emplace_back(flat.train_index[static_cast<size_t>(i)], best_idx);
  }
  std::sort(pairs.begin(), pairs.end());
  for (auto [t, neg] : pairs) {
    train_index_.push_back(t);
    negative_.push_back(neg);
  }
}

int64_t HardNegativeTable::negative_for(int64_t train_index) const {
  auto it = std::lower_bound(train_index_.begin(), train_index_.end(), train_index);
  if (it == train_index_.end() || *it != train_index) {
    throw ContractError("index " + std::to_string(train_index) +
                        " is not in the hard-negative table");
  }
  const auto neg = negative_[static_cast<size_t>(it - train_index_.begin())];
  if (neg < 0) throw ContractError("no other-class example for hard negative");
  return neg;
}

TripletIndices sample_triplet_indices(const LabeledIndex& index, int64_t batch,
                                      Rng& rng) {
  const FlatIndex flat(index);
  check_samplable(flat, batch);
  TripletIndices out;
  for (int64_t b = 0; b < batch; ++b) {
    const auto [a, p] = draw_anchor_positive(flat, rng);
    const auto n = draw_negative(flat, a, rng);
    out.anchor.push_back(flat.train_index[static_cast<size_t>(a)]);
    out.positive.push_back(flat.train_index[static_cast<size_t>(p)]);
    out.negative.push_back(flat.train_index[static_cast<size_t>(n)]);
    out.anchor_class.push_back(flat.label[static_cast<size_t>(a)]);
    out.negative_class.push_back(flat.label[static_cast<size_t>(n)]);
  }
  return out;
}

TripletIndices sample_hard_negative_indices(const LabeledIndex& index,
                                            int64_t batch,
                                            const HardNegativeTable& table,
                                            Rng& rng) {
  const FlatIndex flat(index);
  check_samplable(flat, batch);
  if (table.empty()) throw ContractError("hard-negative table is empty");
  std::map<int64_t, int64_t> label_of;
  for (int64_t i = 0; i < flat.size(); ++i) {
    label_of[flat.train_index[static_cast<size_t>(i)]] = flat.label[static_cast<size_t>(i)];
  }
  TripletIndices out;
  for (int64_t b = 0; b < batch; ++b) {
    const auto [a, p] = draw_anchor_positive(flat, rng);
    const auto anchor = flat.train_index[static_cast<size_t>(a)];
    const auto neg = table.negative_for(anchor);
    out.anchor.push_back(anchor);
    out.positive.push_back(flat.train_index[static_cast<size_t>(p)]);
    out.negative.push_back(neg);
    out.anchor_class.push_back(flat.label[static_cast<size_t>(a)]);
    out.negative_class.push_back(label_of.at(neg));
  }
  return out;
}

TripletBatch gather_triplets(const TripletIndices& idx, const LabeledImages& train,
                             torch::ScalarType dtype) {
  TripletBatch out;
  out.anchor = train.batch(idx.anchor, dtype);
  out.positive = train.batch(idx.positive, dtype);
  out.negative = train.batch(idx.negative, dtype);
  out.anchor_class = idx.anchor_class;
  out.negative_class = idx.negative_class;
  out.source_indices = {idx.anchor, idx.positive, idx.negative};
  return out;
}

TripletBatch sample_triplet_batch(const LabeledIndex& index,
                                  const DatasetSplit& split, int64_t batch,
                                  Rng& rng) {
  return gather_triplets(sample_triplet_indices(index, batch, rng), split.train);
}

TripletBatch sample_hard_negative_batch(const LabeledIndex& index,
                                        const DatasetSplit& split, int64_t batch,
                                        const HardNegativeTable& table, Rng& rng) {
  return gather_triplets(sample_hard_negative_indices(index, batch, table, rng),
                         split.train);
}

std::vector<std::vector<int64_t>> epoch_batches(int64_t size, int64_t batch,
                                                Rng& rng) {
  if (size < 1 || batch < 1) throw ContractError("epoch needs size, batch >= 1");
  if (batch > size) {
    throw ContractError("batch " + std::to_string(batch) +
                        " exceeds train size " + std::to_string(size));
  }
  std::vector<int64_t> perm(static_cast<size_t>(size));
  std::iota(perm.begin(), perm.end(), int64_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  const int64_t count = (size + batch - 1) / batch;
  const int64_t base = size / count;
  const int64_t extra = size % count;
  std::vector<std::vector<int64_t>> out;
  auto it = perm.begin();
  for (int64_t b = 0; b < count; ++b) {
    const int64_t n = base + (b < extra ? 1 : 0);
    out.emplace_back(it, it + n);
    it += n;
  }
  return out;
}

UnsupervisedSampler::UnsupervisedSampler(int64_t size, int64_t batch,
                                         uint64_t seed)
    : size_(size), batch_(batch), rng_(seed) {
  if (size < 1 || batch < 1 || batch > size) {
    throw ContractError("invalid unsupervised sampler size/batch");
  }
}

int64_t UnsupervisedSampler::batches_per_epoch() const {
  return (size_ + batch_ - 1) / batch_;
}

std::vector<int64_t> UnsupervisedSampler::next() {
  if (cursor_ >= epoch_.size()) {
    epoch_ = epoch_batches(size_, batch_, rng_);
    cursor_ = 0;
  }
  return epoch_[cursor_++];
}

std::string UnsupervisedSampler::state() const {
  if (cursor_ < epoch_.size()) {
    throw ContractError("unsupervised sampler state requested mid-epoch");
  }
  return rng_state(rng_);
}

void UnsupervisedSampler::set_state(const std::string& state) {
  set_rng_state(rng_, state);
  epoch_.clear();
  cursor_ = 0;
}

torch::Tensor unsupervised_batch(const DatasetSplit& split,
                                 UnsupervisedSampler& sampler,
                                 torch::ScalarType dtype) {
  return split.train.batch(sampler.next(), dtype);
}

}  // namespace tbigan
