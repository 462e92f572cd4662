// SPDX-License-Identifier: Apache-2.0

#include "tbigan/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <random>

#include <torch/torch.h>

#include "mat_reader.hpp"
#include "tbigan/error.hpp"

namespace tbigan {

namespace fs = std::filesystem;

ImageShape LabeledImages::shape() const {
  if (!images.defined() || images.dim() != 4) return {};
  return {images.size(1), images.size(2), images.size(3)};
}

torch::Tensor LabeledImages::batch(std::span<const int64_t> indices,
                                   torch::ScalarType dtype) const {
  auto idx = torch::tensor(std::vector<int64_t>(indices.begin(), indices.end()),
                           torch::kInt64);
  return images.index_select(0, idx).to(dtype).div_(255.0);
}

torch::Tensor LabeledImages::all(torch::ScalarType dtype) const {
  return images.to(dtype).div_(255.0);
}

LabeledImages LabeledImages::subset(std::span<const int64_t> indices) const {
  LabeledImages out;
  auto idx = torch::tensor(std::vector<int64_t>(indices.begin(), indices.end()),
                           torch::kInt64);
  out.images = images.index_select(0, idx).contiguous();
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels.at(static_cast<size_t>(i)));
  return out;
}

std::vector<int64_t> LabeledIndex::flat() const {
  std::vector<int64_t> out;
  for (const auto& [cls, idx] : per_class_indices) {
    out.insert(out.end(), idx.begin(), idx.end());
  }
  return out;
}

std::vector<int64_t> LabeledIndex::flat_labels() const {
  std::vector<int64_t> out;
  for (const auto& [cls, idx] : per_class_indices) {
    out.insert(out.end(), idx.size(), cls);
  }
  return out;
}

int64_t LabeledIndex::size() const {
  int64_t n = 0;
  for (const auto& [cls, idx] : per_class_indices) n += static_cast<int64_t>(idx.size());
  return n;
}

DatasetId parse_dataset_id(std::string_view name) {
  if (name == "cifar10") return DatasetId::cifar10;
  if (name == "svhn") return DatasetId::svhn;
  if (name == "synthetic") return DatasetId::synthetic;
  throw UsageError("unknown dataset '" + std::string(name) +
                   "' (expected cifar10, svhn or synthetic)");
}

std::string_view to_string(DatasetId id) {
  switch (id) {
    case DatasetId::cifar10: return "cifar10";
    case DatasetId::svhn: return "svhn";
    case DatasetId::synthetic: return "synthetic";
  }
  return "?";
}

namespace {

LabeledImages concat(const std::vector<LabeledImages>& parts) {
  LabeledImages out;
  std::vector<torch::Tensor> tensors;
  for (const auto& p : parts) {
    tensors.push_back(p.images);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  out.images = torch::cat(tensors, 0).contiguous();
  return out;
}

void check_labels(const LabeledImages& d, int64_t class_count,
                  const std::string& what) {
  for (auto l : d.labels) {
    if (l < 0 || l >= class_count) {
      throw DataError(what + ": label " + std::to_string(l) +
                      " outside [0, " + std::to_string(class_count) + ")");
    }
  }
}

fs::path first_existing(const fs::path& root,
                        std::initializer_list<fs::path> candidates) {
  for (const auto& c : candidates) {
    if (fs::exists(root / c)) return root / c;
  }
  return root / *candidates.begin();
}

DatasetSplit finish_split(std::string name, LabeledImages train,
                          LabeledImages test, int64_t class_count) {
  DatasetSplit split;
  split.name = std::move(name);
  split.class_count = class_count;
  check_labels(train, class_count, split.name + " train");
  check_labels(test, class_count, split.name + " test");
  auto [tr, va] = make_validation_split(train, class_count);
  split.train = std::move(tr);
  split.validation = std::move(va);
  split.test = std::move(test);
  split.image_shape = split.train.shape();
  return split;
}

}  // namespace

LabeledImages read_cifar10_batch(const fs::path& file) {
  constexpr int64_t kRecord = 1 + 3 * 32 * 32;
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError(file.string() + ": cannot open CIFAR10 batch");
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  if (buf.empty() || buf.size() % kRecord != 0) {
    throw DataError(file.string() + ": size " + std::to_string(buf.size()) +
                    " is not a multiple of the 3073-byte CIFAR10 record");
  }
  const int64_t n = static_cast<int64_t>(buf.size()) / kRecord;
  LabeledImages out;
  out.images = torch::empty({n, 3, 32, 32}, torch::kUInt8);
  auto* dst = out.images.data_ptr<uint8_t>();
  out.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    const uint8_t* rec = buf.data() + i * kRecord;
    if (rec[0] > 9) {
      throw DataError(file.string() + ": record " + std::to_string(i) +
                      " has label " + std::to_string(rec[0]));
    }
    out.labels[static_cast<size_t>(i)] = rec[0];
    std::copy(rec + 1, rec + kRecord, dst + i * (kRecord - 1));
  }
  return out;
}

LabeledImages read_svhn_mat(const fs::path& file) {
  auto vars = detail::read_mat_file(file);
  auto xi = vars.find("X");
  auto yi = vars.find("y");
  if (xi == vars.end() || yi == vars.end()) {
    throw DataError(file.string() + ": missing X or y variable");
  }
  const auto& x = xi->second;
  const auto& y = yi->second;
  if (x.dims.size() != 4 || x.dims[2] != 3) {
    throw DataError(file.string() + ": X must be H x W x 3 x N");
  }
  const int64_t h = x.dims[0], w = x.dims[1], n = x.dims[3];
  if (y.numel() != n) {
    throw DataError(file.string() + ": y has " + std::to_string(y.numel()) +
                    " entries for " + std::to_string(n) + " images");
  }
  LabeledImages out;
  out.images = torch::empty({n, 3, h, w}, torch::kUInt8);
  auto* dst = out.images.data_ptr<uint8_t>();
  // Column-major X(r, c, ch, i) -> row-major [i, ch, r, c].
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < 3; ++ch) {
      for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
          const int64_t src = r + h * (c + w * (ch + 3 * i));
          dst[((i * 3 + ch) * h + r) * w + c] =
              static_cast<uint8_t>(x.at(src));
        }
      }
    }
  }
  out.labels.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    auto label = static_cast<int64_t>(y.at(i));
    if (label == 10) label = 0;
    if (label < 0 || label > 9) {
      throw DataError(file.string() + ": label " + std::to_string(label) +
                      " outside 0..10");
    }
    out.labels[static_cast<size_t>(i)] = label;
  }
  return out;
}

std::pair<LabeledImages, LabeledImages> make_validation_split(
    const LabeledImages& data, int64_t class_count, int64_t per_class) {
  std::vector<std::vector<int64_t>> by_class(static_cast<size_t>(class_count));
  for (int64_t i = 0; i < data.size(); ++i) {
    const auto l = data.labels[static_cast<size_t>(i)];
    if (l < 0 || l >= class_count) {
      throw DataError("validation split: label " + std::to_string(l) +
                      " outside class range");
    }
    by_class[static_cast<size_t>(l)].push_back(i);
  }
  std::vector<bool> in_validation(static_cast<size_t>(data.size()), false);
  for (int64_t c = 0; c < class_count; ++c) {
    const auto& idx = by_class[static_cast<size_t>(c)];
    if (static_cast<int64_t>(idx.size()) < per_class) {
      throw DataError("validation split: class " + std::to_string(c) +
                      " has " + std::to_string(idx.size()) +
                      " examples, need at least " + std::to_string(per_class));
    }
    for (auto it = idx.end() - per_class; it != idx.end(); ++it) {
      in_validation[static_cast<size_t>(*it)] = true;
    }
  }
  std::vector<int64_t> train_idx, val_idx;
  for (int64_t i = 0; i < data.size(); ++i) {
    (in_validation[static_cast<size_t>(i)] ? val_idx : train_idx).push_back(i);
  }
  return {data.subset(train_idx), data.subset(val_idx)};
}

LabeledIndex select_labeled_subset(const DatasetSplit& split,
                                   int64_t n_per_class, uint64_t seed) {
  if (n_per_class <= 0) {
    throw UsageError("n_per_class must be positive (got " +
                     std::to_string(n_per_class) +
                     "); use lambda = 0 for an unsupervised run");
  }
  std::vector<std::vector<int64_t>> by_class(
      static_cast<size_t>(split.class_count));
  for (int64_t i = 0; i < split.train.size(); ++i) {
    by_class[static_cast<size_t>(split.train.labels[static_cast<size_t>(i)])]
        .push_back(i);
  }
  LabeledIndex index;
  index.n_per_class = n_per_class;
  index.seed = seed;
  std::mt19937_64 rng(seed);
  for (int64_t c = 0; c < split.class_count; ++c) {
    const auto& pool = by_class[static_cast<size_t>(c)];
    if (static_cast<int64_t>(pool.size()) < n_per_class) {
      throw UsageError("n_per_class = " + std::to_string(n_per_class) +
                       " exceeds the " + std::to_string(pool.size()) +
                       " training examples of class " + std::to_string(c));
    }
    auto& chosen = index.per_class_indices[c];
    std::sample(pool.begin(), pool.end(), std::back_inserter(chosen),
                n_per_class, rng);
  }
  return index;
}

namespace {

// Signed-distance style masks in a frame centred on the shape, scaled so the
// shape occupies |dx|, |dy| < 1.
bool pattern_hit(int64_t pattern, double dx, double dy) {
  const double r = std::sqrt(dx * dx + dy * dy);
  const double ax = std::abs(dx), ay = std::abs(dy);
  const bool in_box = ax < 1.0 && ay < 1.0;
  switch (pattern) {
    case 0: return r < 1.0;                                        // disk
    case 1: return in_box && (ax < 0.3 || ay < 0.3);               // plus
    case 2: return in_box && static_cast<int>((dy + 1.0) * 2.5) % 2 == 0;  // h stripes
    case 3: return in_box && static_cast<int>((dx + 1.0) * 2.5) % 2 == 0;  // v stripes
    case 4: return r < 1.0 && r > 0.55;                            // ring
    case 5: return in_box && (std::abs(dx - dy) < 0.35 || std::abs(dx + dy) < 0.35);
    case 6: return in_box && std::max(ax, ay) > 0.6;               // square outline
    case 7: return dy > -1.0 && dy < 1.0 && ax < (dy + 1.0) / 2.0; // triangle
    case 8: return in_box && ((static_cast<int>((dx + 1.0) * 2) +
                               static_cast<int>((dy + 1.0) * 2)) % 2 == 0);
    case 9: return r < 1.0 && dx < 0.0;                            // half disk
    default: return false;
  }
}

LabeledImages render_shapes(int64_t class_count, int64_t per_class,
                            int64_t size, std::mt19937_64& rng) {
  const int64_t n = class_count * per_class;
  LabeledImages out;
  out.images = torch::empty({n, 3, size, size}, torch::kUInt8);
  out.labels.resize(static_cast<size_t>(n));
  auto* dst = out.images.data_ptr<uint8_t>();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  const double s = static_cast<double>(size);
  for (int64_t i = 0; i < n; ++i) {
    // Interleaved class order so "last k of each class" is well spread.
    const int64_t cls = i % class_count;
    out.labels[static_cast<size_t>(i)] = cls;
    const double radius = s * (0.25 + 0.12 * unit(rng));
    const double cx = s / 2.0 + (unit(rng) - 0.5) * (s - 2.0 * radius) * 0.6;
    const double cy = s / 2.0 + (unit(rng) - 0.5) * (s - 2.0 * radius) * 0.6;
    double fg[3], bg[3];
    for (int ch = 0; ch < 3; ++ch) {
      fg[ch] = 0.55 + 0.45 * unit(rng);
      bg[ch] = 0.35 * unit(rng);
    }
    for (int64_t y = 0; y < size; ++y) {
      for (int64_t x = 0; x < size; ++x) {
        const double dx = (static_cast<double>(x) + 0.5 - cx) / radius;
        const double dy = (static_cast<double>(y) + 0.5 - cy) / radius;
        const bool hit = pattern_hit(cls, dx, dy);
        for (int64_t ch = 0; ch < 3; ++ch) {
          double v = (hit ? fg[ch] : bg[ch]) + noise(rng);
          v = std::clamp(v, 0.0, 1.0);
          dst[((i * 3 + ch) * size + y) * size + x] =
              static_cast<uint8_t>(std::lround(v * 255.0));
        }
      }
    }
  }
  return out;
}

}  // namespace

DatasetSplit synthetic_shapes(int64_t class_count, int64_t per_class,
                              int64_t image_size, uint64_t seed,
                              int64_t test_per_class) {
  if (class_count < 2) {
    throw UsageError("synthetic dataset needs at least 2 classes (got " +
                     std::to_string(class_count) + ")");
  }
  if (class_count > kMaxSyntheticClasses) {
    throw UsageError("synthetic dataset supports at most " +
                     std::to_string(kMaxSyntheticClasses) + " classes");
  }
  if (image_size < 8) {
    throw UsageError("synthetic image_size must be >= 8 (got " +
                     std::to_string(image_size) + ")");
  }
  if (per_class < 1 || test_per_class < 1) {
    throw UsageError("synthetic per-class counts must be positive");
  }
  std::mt19937_64 rng(seed);
  auto train = render_shapes(class_count, per_class + kValidationPerClass,
                             image_size, rng);
  auto test = render_shapes(class_count, test_per_class, image_size, rng);
  return finish_split("synthetic", std::move(train), std::move(test),
                      class_count);
}

DatasetSplit load_dataset(DatasetId id, const fs::path& root,
                          const SyntheticOptions& synthetic) {
  switch (id) {
    case DatasetId::synthetic:
      return synthetic_shapes(synthetic.class_count, synthetic.per_class,
                              synthetic.image_size, synthetic.seed,
                              synthetic.test_per_class);
    case DatasetId::cifar10: {
      const fs::path dir = fs::exists(root / "cifar-10-batches-bin")
                               ? root / "cifar-10-batches-bin"
                               : root;
      std::vector<LabeledImages> parts;
      for (int b = 1; b <= 5; ++b) {
        parts.push_back(read_cifar10_batch(
            dir / ("data_batch_" + std::to_string(b) + ".bin")));
      }
      auto test = read_cifar10_batch(dir / "test_batch.bin");
      return finish_split("cifar10", concat(parts), std::move(test), 10);
    }
    case DatasetId::svhn: {
      auto train = read_svhn_mat(
          first_existing(root, {"train_32x32.mat", "svhn/train_32x32.mat"}));
      auto test = read_svhn_mat(
          first_existing(root, {"test_32x32.mat", "svhn/test_32x32.mat"}));
      return finish_split("svhn", std::move(train), std::move(test), 10);
    }
  }
  throw UsageError("unknown dataset id");
}

fs::path resolve_data_root(const std::optional<fs::path>& flag) {
  if (flag && !flag->empty()) return *flag;
  if (const char* env = std::getenv("TBIGAN_DATA_ROOT"); env && *env) {
    return env;
  }
  return "data";
}

}  // namespace tbigan
