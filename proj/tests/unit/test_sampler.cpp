// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "tbigan/error.hpp"
#include "tbigan/sampler.hpp"

using namespace tbigan;

namespace {

// Class c owns train indices [c * stride, c * stride + n).
LabeledIndex make_index(int64_t classes, int64_t n, int64_t stride) {
  LabeledIndex index;
  index.n_per_class = n;
  for (int64_t c = 0; c < classes; ++c) {
    auto& v = index.per_class_indices[c];
    for (int64_t i = 0; i < n; ++i) v.push_back(c * stride + i);
  }
  return index;
}

int64_t class_of(const LabeledIndex& index, int64_t train) {
  for (const auto& [c, v] : index.per_class_indices) {
    if (std::binary_search(v.begin(), v.end(), train)) return c;
  }
  return -1;
}

}  // namespace

TEST_SUITE("sampler") {

TEST_CASE("random triplets satisfy the class constraints") {
  const auto index = make_index(10, 500, 1000);
  Rng rng(5);
  const auto t = sample_triplet_indices(index, 64, rng);
  REQUIRE(t.size() == 64);
  for (int64_t i = 0; i < 64; ++i) {
    const auto k = static_cast<size_t>(i);
    CHECK(class_of(index, t.anchor[k]) == t.anchor_class[k]);
    CHECK(class_of(index, t.positive[k]) == t.anchor_class[k]);
    CHECK(class_of(index, t.negative[k]) == t.negative_class[k]);
    CHECK(t.negative_class[k] != t.anchor_class[k]);
    CHECK(t.positive[k] != t.anchor[k]);
  }
}

TEST_CASE("triplet sampling is deterministic for a seed") {
  const auto index = make_index(3, 20, 100);
  Rng a(11), b(11);
  const auto x = sample_triplet_indices(index, 32, a);
  const auto y = sample_triplet_indices(index, 32, b);
  CHECK(x.anchor == y.anchor);
  CHECK(x.positive == y.positive);
  CHECK(x.negative == y.negative);
}

TEST_CASE("anchor classes are uniform") {
  const auto index = make_index(3, 10, 50);
  Rng rng(17);
  const auto t = sample_triplet_indices(index, 10000, rng);
  std::map<int64_t, int64_t> counts;
  for (auto c : t.anchor_class) ++counts[c];
  const double expected = 10000.0 / 3.0;
  const double sigma = std::sqrt(10000.0 * (1.0 / 3.0) * (2.0 / 3.0));
  for (const auto& [c, n] : counts) {
    CAPTURE(c);
    CHECK(std::abs(static_cast<double>(n) - expected) < 3.0 * sigma);
  }
}

TEST_CASE("singleton classes never provide anchors") {
  LabeledIndex index;
  index.n_per_class = 1;
  index.per_class_indices[0] = {3};
  index.per_class_indices[1] = {10, 11, 12};
  Rng rng(2);
  const auto t = sample_triplet_indices(index, 500, rng);
  for (auto c : t.anchor_class) CHECK(c == 1);
  for (auto n : t.negative) CHECK(n == 3);
}

TEST_CASE("hard negative on the one-dimensional toy example") {
  LabeledIndex index;
  index.n_per_class = 2;
  index.per_class_indices[0] = {0, 1};  // A: 0.0, 0.2
  index.per_class_indices[1] = {2, 3};  // B: 0.3, 5.0
  const std::vector<float> codes{0.0f, 0.2f, 0.3f, 5.0f};
  const HardNegativeTable table(index, codes, 1);
  CHECK(codes[static_cast<size_t>(table.negative_for(0))] == doctest::Approx(0.3));
  CHECK(table.negative_for(3) == 1);
  CHECK_THROWS_AS(table.negative_for(7), ContractError);
}

TEST_CASE("hard negatives match an exhaustive scan") {
  // 200 labeled points in 4 classes with interleaved train indices; small
  // integer grid coordinates create many exact ties.
  LabeledIndex index;
  index.n_per_class = 50;
  std::vector<int64_t> labels(200);
  for (int64_t i = 0; i < 200; ++i) {
    labels[static_cast<size_t>(i)] = i % 4;
    index.per_class_indices[i % 4].push_back(i);
  }
  Rng rng(23);
  std::uniform_int_distribution<int> cell(0, 6);
  oracle::Matrix by_train(200, std::vector<double>(3));
  for (auto& row : by_train) {
    for (auto& v : row) v = cell(rng);
  }
  std::vector<float> codes;
  for (auto t : index.flat()) {
    for (auto v : by_train[static_cast<size_t>(t)]) codes.push_back(static_cast<float>(v));
  }
  const HardNegativeTable table(index, codes, 3);
  const auto expected = oracle::hard_negatives(by_train, labels);
  for (int64_t t = 0; t < 200; ++t) {
    CAPTURE(t);
    CHECK(table.negative_for(t) == expected[static_cast<size_t>(t)]);
  }
  Rng draw(1);
  const auto hard = sample_hard_negative_indices(index, 50, table, draw);
  for (int64_t i = 0; i < hard.size(); ++i) {
    const auto k = static_cast<size_t>(i);
    CHECK(hard.negative[k] == table.negative_for(hard.anchor[k]));
  }
}

TEST_CASE("gathered triplet batches carry images of the chosen rows") {
  const auto split = synthetic_shapes(3, 20, 16, 4, 2);
  const auto index = select_labeled_subset(split, 5, 1);
  Rng rng(8);
  const auto b = sample_triplet_batch(index, split, 6, rng);
  CHECK(b.anchor.sizes() == torch::IntArrayRef{6, 3, 16, 16});
  const std::vector<int64_t> first{b.source_indices[2][0]};
  CHECK(torch::equal(b.negative[0], split.train.batch(first)[0]));
}

TEST_CASE("epoch batches are balanced and cover every example once") {
  for (auto [size, batch] : std::vector<std::pair<int64_t, int64_t>>{
           {600, 64}, {100, 100}, {101, 10}, {7, 3}}) {
    Rng rng(3);
    const auto batches = epoch_batches(size, batch, rng);
    CHECK(static_cast<int64_t>(batches.size()) == (size + batch - 1) / batch);
    std::set<int64_t> seen;
    size_t lo = SIZE_MAX, hi = 0;
    for (const auto& b : batches) {
      lo = std::min(lo, b.size());
      hi = std::max(hi, b.size());
      seen.insert(b.begin(), b.end());
    }
    CHECK(hi - lo <= 1);
    CHECK(static_cast<int64_t>(hi) <= batch);
    CHECK(static_cast<int64_t>(seen.size()) == size);
  }
  Rng a(9), b(9);
  CHECK(epoch_batches(50, 8, a) == epoch_batches(50, 8, b));
  Rng c(9);
  CHECK(epoch_batches(50, 50, c).size() == 1);
}

TEST_CASE("unsupervised sampler state round trip at an epoch boundary") {
  UnsupervisedSampler s(30, 8, 4);
  CHECK(s.batches_per_epoch() == 4);
  for (int i = 0; i < 4; ++i) s.next();
  const auto state = s.state();
  UnsupervisedSampler t(30, 8, 99);
  t.set_state(state);
  for (int i = 0; i < 8; ++i) CHECK(s.next() == t.next());
  s.next();
  CHECK_THROWS_AS(s.state(), ContractError);
}

TEST_CASE("rng state round trip") {
  Rng a(77);
  a();
  Rng b;
  set_rng_state(b, rng_state(a));
  CHECK(a() == b());
}

}  // TEST_SUITE
