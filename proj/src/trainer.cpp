// SPDX-License-Identifier: Apache-2.0

#include "tbigan/trainer.hpp"

#include <zlib.h>

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <unordered_map>

#include <torch/torch.h>

#include "tbigan/error.hpp"
#include "tbigan/eval.hpp"

namespace tbigan {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw UsageError("invalid train." + field + ": " + why);
  };
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda", "must be >= 0");
  if (total_epochs < 1) fail("epochs", "must be >= 1");
  if (warmup_epochs < 0) fail("warmup_epochs", "must be >= 0");
  if (warmup_epochs > total_epochs) fail("warmup_epochs", "exceeds total epochs");
  if (batch_size < 2) fail("batch_size", "must be >= 2");
  if (!(learning_rate > 0.0)) fail("lr", "must be > 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) fail("adam_beta1", "must lie in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) fail("adam_beta2", "must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps", "must be > 0");
  if (n_per_class < 1) fail("n_per_class", "must be >= 1");
  if (checkpoint_every < 0) fail("checkpoint_every", "must be >= 0");
  if (eval_triplets < 1) fail("eval_triplets", "must be >= 1");
  if (model == ModelTag::bigan && lambda != 0.0) {
    fail("lambda", "the bigan model trains without the triplet term");
  }
  if (model == ModelTag::triplet && warmup_epochs != 0) {
    fail("warmup_epochs", "the triplet model has no adversarial warm-up");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", std::string(to_string(c.model))},
                     {"lambda", c.lambda},
                     {"warmup_epochs", c.warmup_epochs},
                     {"total_epochs", c.total_epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_eps", c.adam_eps},
                     {"n_per_class", c.n_per_class},
                     {"seed", c.seed},
                     {"hard_negatives", c.hard_negatives},
                     {"checkpoint_every", c.checkpoint_every},
                     {"deterministic", c.deterministic},
                     {"eval_triplets", c.eval_triplets}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.model = parse_model_tag(j.at("model").get<std::string>());
  j.at("lambda").get_to(c.lambda);
  j.at("warmup_epochs").get_to(c.warmup_epochs);
  j.at("total_epochs").get_to(c.total_epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("adam_beta1").get_to(c.adam_beta1);
  j.at("adam_beta2").get_to(c.adam_beta2);
  j.at("adam_eps").get_to(c.adam_eps);
  j.at("n_per_class").get_to(c.n_per_class);
  j.at("seed").get_to(c.seed);
  j.at("hard_negatives").get_to(c.hard_negatives);
  j.at("checkpoint_every").get_to(c.checkpoint_every);
  j.at("deterministic").get_to(c.deterministic);
  j.at("eval_triplets").get_to(c.eval_triplets);
}

void to_json(nlohmann::json& j, const LabeledIndex& index) {
  nlohmann::json classes = nlohmann::json::object();
  for (const auto& [cls, idx] : index.per_class_indices) {
    classes[std::to_string(cls)] = idx;
  }
  j = nlohmann::json{{"n_per_class", index.n_per_class},
                     {"seed", index.seed},
                     {"classes", classes}};
}

void from_json(const nlohmann::json& j, LabeledIndex& index) {
  j.at("n_per_class").get_to(index.n_per_class);
  j.at("seed").get_to(index.seed);
  index.per_class_indices.clear();
  for (const auto& [key, value] : j.at("classes").items()) {
    index.per_class_indices[std::stoll(key)] = value.get<std::vector<int64_t>>();
  }
}

void to_json(nlohmann::json& j, const EpochRecord& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  j = nlohmann::json{{"epoch", r.epoch},
                     {"l_d", r.l_d},
                     {"l_eg", r.l_eg},
                     {"l_t", opt(r.l_t)},
                     {"l_teg", opt(r.l_teg)},
                     {"d_plus_mean", r.d_plus_mean},
                     {"d_minus_mean", r.d_minus_mean},
                     {"triplet_accuracy", r.triplet_accuracy},
                     {"wall_time_s", r.wall_time_s}};
}

void from_json(const nlohmann::json& j, EpochRecord& r) {
  auto opt = [&](const char* key) -> std::optional<double> {
    if (j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
  };
  j.at("epoch").get_to(r.epoch);
  j.at("l_d").get_to(r.l_d);
  j.at("l_eg").get_to(r.l_eg);
  r.l_t = opt("l_t");
  r.l_teg = opt("l_teg");
  j.at("d_plus_mean").get_to(r.d_plus_mean);
  j.at("d_minus_mean").get_to(r.d_minus_mean);
  j.at("triplet_accuracy").get_to(r.triplet_accuracy);
  j.at("wall_time_s").get_to(r.wall_time_s);
}

std::string metrics_line(const EpochRecord& r) {
  return nlohmann::json(r).dump();
}

TripletMetrics triplet_metrics(ModelParams& params, const LabeledImages& train,
                               const TripletIndices& triplets) {
  torch::NoGradGuard no_grad;
  // Encode each distinct image once.
  std::vector<int64_t> unique;
  std::unordered_map<int64_t, int64_t> row_of;
  for (const auto* list : {&triplets.anchor, &triplets.positive, &triplets.negative}) {
    for (auto i : *list) {
      if (row_of.emplace(i, static_cast<int64_t>(unique.size())).second) {
        unique.push_back(i);
      }
    }
  }
  const auto codes =
      embed(params, train.subset(unique), 256, EmbeddingSource::train_labeled);
  auto dist = [&](int64_t a, int64_t b) {
    const auto ra = codes.row(row_of.at(a));
    const auto rb = codes.row(row_of.at(b));
    double s = 0.0;
    for (size_t k = 0; k < ra.size(); ++k) {
      const double d = static_cast<double>(ra[k]) - static_cast<double>(rb[k]);
      s += d * d;
    }
    return std::sqrt(s);
  };
  TripletMetrics m;
  int64_t correct = 0;
  for (int64_t t = 0; t < triplets.size(); ++t) {
    const auto dp = dist(triplets.anchor[static_cast<size_t>(t)],
                         triplets.positive[static_cast<size_t>(t)]);
    const auto dm = dist(triplets.anchor[static_cast<size_t>(t)],
                         triplets.negative[static_cast<size_t>(t)]);
    correct += dp < dm;
    m.d_plus_mean += dp;
    m.d_minus_mean += dm;
  }
  const auto n = static_cast<double>(triplets.size());
  m.accuracy = static_cast<double>(correct) / n;
  m.d_plus_mean /= n;
  m.d_minus_mean /= n;
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

constexpr char kMagic[8] = {'T', 'B', 'I', 'G', 'A', 'N', 'C', 'K'};
constexpr size_t kHeaderSize = 8 + 4 + 8 + 4;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t offset) {
  T v;
  std::memcpy(&v, in.data() + offset, sizeof(T));
  return v;
}

uint32_t crc_of(const char* data, size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<uint32_t>(crc);
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  // splitmix64 finalizer over (seed, stream).
  uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum Stream : uint64_t {
  kInitStream = 0,
  kPriorStream = 1,
  kNoiseStream = 2,
  kTripletStream = 3,
  kEpochStream = 4,
  kEvalTripletStream = 5,
};

}  // namespace

uint64_t stream_seed(uint64_t seed, SeedStream stream) {
  return mix_seed(seed, static_cast<uint64_t>(stream));
}

void write_checkpoint_file(const fs::path& path, const std::string& payload) {
  std::string header;
  header.append(kMagic, sizeof kMagic);
  put<uint32_t>(header, kCheckpointVersion);
  put<uint64_t>(header, payload.size());
  put<uint32_t>(header, crc_of(payload.data(), payload.size()));
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    out.flush();
    if (!out) throw DataError("checkpoint write failed (disk full?): " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_checkpoint_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < kHeaderSize || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(path.string() + ": not a tbigan checkpoint");
  }
  const auto version = take<uint32_t>(data, 8);
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": checkpoint format version " +
                          std::to_string(version) + ", this build reads version " +
                          std::to_string(kCheckpointVersion));
  }
  const auto size = take<uint64_t>(data, 12);
  const auto crc = take<uint32_t>(data, 20);
  if (data.size() - kHeaderSize != size) {
    throw CheckpointError(path.string() + ": integrity error, payload is " +
                          std::to_string(data.size() - kHeaderSize) +
                          " bytes, header says " + std::to_string(size));
  }
  std::string payload = data.substr(kHeaderSize);
  if (crc_of(payload.data(), payload.size()) != crc) {
    throw CheckpointError(path.string() + ": integrity error, CRC mismatch");
  }
  return payload;
}

// ---------------------------------------------------------------------------
// Trainer

void enable_deterministic_backend() {
  torch::set_num_threads(1);
  at::globalContext().setDeterministicAlgorithms(true, /*warn_only=*/false);
}

namespace {

std::unique_ptr<torch::optim::Adam> make_adam(torch::nn::Module& m,
                                              const TrainConfig& c) {
  return std::make_unique<torch::optim::Adam>(
      m.parameters(), torch::optim::AdamOptions(c.learning_rate)
                          .betas({c.adam_beta1, c.adam_beta2})
                          .eps(c.adam_eps));
}

void check_index(const LabeledIndex& index, const DatasetSplit& split) {
  for (const auto& [cls, idx] : index.per_class_indices) {
    for (auto i : idx) {
      if (i < 0 || i >= split.train.size() ||
          split.train.labels[static_cast<size_t>(i)] != cls) {
        throw DataError("labeled index entry " + std::to_string(i) +
                        " is not a class-" + std::to_string(cls) +
                        " training example");
      }
    }
  }
}

double finite_or_throw(const torch::Tensor& t, const char* term) {
  const double v = t.item<double>();
  if (!std::isfinite(v)) {
    throw NumericalError(std::string("non-finite ") + term + " (" +
                         std::to_string(v) + ")");
  }
  return v;
}

torch::Tensor stack_triplet(const TripletBatch& t, torch::ScalarType dtype) {
  return torch::cat({t.anchor, t.positive, t.negative}, 0).to(dtype);
}

}  // namespace

Trainer::Trainer(const ArchitectureConfig& arch, const TrainConfig& config,
                 const DatasetSplit& split, LabeledIndex index)
    : Trainer(ModelParams(arch, mix_seed(config.seed, kInitStream)), config,
              split, std::move(index)) {}

Trainer::Trainer(ModelParams params, const TrainConfig& config,
                 const DatasetSplit& split, LabeledIndex index)
    : config_(config),
      split_(&split),
      index_(std::move(index)),
      params_(std::move(params)),
      prior_gen_(make_generator(mix_seed(config.seed, kPriorStream))),
      noise_gen_(make_generator(mix_seed(config.seed, kNoiseStream))),
      triplet_rng_(mix_seed(config.seed, kTripletStream)),
      unsupervised_(split.train.size(), std::min(config.batch_size, split.train.size()),
                    mix_seed(config.seed, kEpochStream)) {
  config_.validate();
  if (config_.deterministic) enable_deterministic_backend();
  if (!(params_.config.image_shape == split.train.shape())) {
    throw UsageError("architecture image shape does not match the dataset");
  }
  check_index(index_, split);
  opt_e_ = make_adam(*params_.encoder, config_);
  opt_g_ = make_adam(*params_.generator, config_);
  opt_d_ = make_adam(*params_.discriminator, config_);
  Rng eval_rng(mix_seed(config_.seed, kEvalTripletStream));
  eval_triplets_ = sample_triplet_indices(index_, config_.eval_triplets, eval_rng);
}

double Trainer::effective_lambda() const {
  if (config_.model == ModelTag::bigan) return 0.0;
  if (config_.model == ModelTag::triplet) return 1.0;
  return epoch_ < config_.warmup_epochs ? 0.0 : config_.lambda;
}

bool Trainer::uses_triplets() const { return effective_lambda() > 0.0; }

TripletBatch Trainer::next_triplet_batch(int64_t size) {
  const auto idx = config_.hard_negatives
                       ? sample_hard_negative_indices(index_, size, hard_negatives_,
                                                      triplet_rng_)
                       : sample_triplet_indices(index_, size, triplet_rng_);
  return gather_triplets(idx, split_->train, params_.dtype());
}

void Trainer::refresh_hard_negatives() {
  auto snapshot = params_.snapshot();
  const auto flat = index_.flat();
  const auto codes = embed(snapshot, split_->train.subset(flat), 256,
                           EmbeddingSource::train_labeled);
  hard_negatives_ = HardNegativeTable(index_, codes.vectors, codes.m);
}

LossReport Trainer::triplet_only_step(const TripletBatch& triplet) {
  const auto b = triplet.size();
  opt_e_->zero_grad();
  auto codes = encode(params_, stack_triplet(triplet, params_.dtype()),
                      EncodeMode::train, noise_gen_)
                   .z;
  auto [d_plus, d_minus] = triplet_distances(codes.narrow(0, 0, b), codes.narrow(0, b, b),
                                             codes.narrow(0, 2 * b, b));
  auto l_t = triplet_loss_from_distances(d_plus, d_minus);
  LossReport r;
  r.l_t = finite_or_throw(l_t, "l_t");
  r.l_teg = r.l_t;
  r.d_plus_mean = d_plus.mean().item<double>();
  r.d_minus_mean = d_minus.mean().item<double>();
  l_t.backward();
  opt_e_->step();
  ++global_step_;
  r.check_finite();
  return r;
}

LossReport Trainer::train_step(const torch::Tensor& x, const TripletBatch* triplet) {
  const double lambda = effective_lambda();
  if ((lambda > 0.0) != (triplet != nullptr)) {
    throw ContractError(lambda > 0.0 ? "train_step needs a triplet batch"
                                     : "train_step got a triplet batch with lambda = 0");
  }
  if (config_.model == ModelTag::triplet) return triplet_only_step(*triplet);

  const auto dtype = params_.dtype();
  const auto b = x.size(0);
  const auto m = params_.config.latent_dim;
  auto images = x.to(dtype);

  // (1) forward passes
  auto z = sample_prior(b, m, prior_gen_, dtype);
  auto x_hat = generate(params_, z, EncodeMode::train);
  auto z_hat = encode(params_, images, EncodeMode::train, noise_gen_).z;

  // (2) discriminator update
  opt_d_->zero_grad();
  auto d_real = discriminate(params_, images, z_hat.detach());
  auto d_fake = discriminate(params_, x_hat.detach(), z);
  auto l_d = discriminator_loss(d_real, d_fake);
  LossReport r;
  r.l_d = finite_or_throw(l_d, "l_d");
  r.d_real_mean = d_real.mean().item<double>();
  r.d_fake_mean = d_fake.mean().item<double>();
  l_d.backward();
  opt_d_->step();

  // (3) generator and encoder update against the updated discriminator
  opt_g_->zero_grad();
  opt_e_->zero_grad();
  auto l_eg = encoder_generator_loss(discriminate(params_, images, z_hat),
                                     discriminate(params_, x_hat, z));
  r.l_eg = finite_or_throw(l_eg, "l_eg");
  torch::Tensor objective = l_eg;
  if (triplet) {
    const auto t = triplet->size();
    auto codes = encode(params_, stack_triplet(*triplet, dtype), EncodeMode::train,
                        noise_gen_)
                     .z;
    auto [d_plus, d_minus] = triplet_distances(
        codes.narrow(0, 0, t), codes.narrow(0, t, t), codes.narrow(0, 2 * t, t));
    auto l_t = triplet_loss_from_distances(d_plus, d_minus);
    r.l_t = finite_or_throw(l_t, "l_t");
    r.d_plus_mean = d_plus.mean().item<double>();
    r.d_minus_mean = d_minus.mean().item<double>();
    objective = combined_loss(l_eg, l_t, lambda);
    r.l_teg = finite_or_throw(objective, "l_teg");
  }
  objective.backward();
  opt_g_->step();
  opt_e_->step();
  ++global_step_;
  r.check_finite();
  return r;
}

EpochRecord Trainer::run_epoch() {
  const auto start = std::chrono::steady_clock::now();
  const bool triplets = uses_triplets();
  if (triplets && config_.hard_negatives) refresh_hard_negatives();

  EpochRecord rec;
  double l_t_sum = 0.0, l_teg_sum = 0.0;
  int64_t steps = 0, triplet_steps = 0;
  const auto batches = unsupervised_.batches_per_epoch();
  for (int64_t s = 0; s < batches; ++s) {
    const auto idx = unsupervised_.next();
    std::optional<TripletBatch> triplet;
    if (triplets) triplet = next_triplet_batch(static_cast<int64_t>(idx.size()));
    LossReport r;
    if (config_.model == ModelTag::triplet) {
      r = train_step(torch::Tensor(), &*triplet);
    } else {
      r = train_step(split_->train.batch(idx, params_.dtype()),
                     triplet ? &*triplet : nullptr);
    }
    rec.l_d += r.l_d;
    rec.l_eg += r.l_eg;
    if (r.l_t) {
      l_t_sum += *r.l_t;
      l_teg_sum += *r.l_teg;
      ++triplet_steps;
    }
    ++steps;
  }
  ++epoch_;
  rec.epoch = epoch_;
  rec.l_d /= static_cast<double>(steps);
  rec.l_eg /= static_cast<double>(steps);
  if (triplet_steps > 0) {
    rec.l_t = l_t_sum / static_cast<double>(triplet_steps);
    rec.l_teg = l_teg_sum / static_cast<double>(triplet_steps);
  }
  auto snapshot = params_.snapshot();
  const auto tm = triplet_metrics(snapshot, split_->train, eval_triplets_);
  rec.triplet_accuracy = tm.accuracy;
  rec.d_plus_mean = tm.d_plus_mean;
  rec.d_minus_mean = tm.d_minus_mean;
  if (!config_.deterministic) {
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                          .count();
  }
  history_.push_back(rec);
  return rec;
}

void Trainer::fit(const EpochCallback& on_epoch) {
  while (epoch_ < config_.total_epochs) {
    const auto rec = run_epoch();
    if (on_epoch) on_epoch(rec, *this);
  }
}

namespace {

void write_string(torch::serialize::OutputArchive& ar, const std::string& key,
                  const std::string& value) {
  ar.write(key, c10::IValue(value));
}

std::string read_string(torch::serialize::InputArchive& ar, const std::string& key) {
  c10::IValue v;
  ar.read(key, v);
  return v.toStringRef();
}

torch::Tensor generator_state(at::Generator gen) {
  std::lock_guard<std::mutex> lock(gen.mutex());
  return gen.get_state();
}

void set_generator_state(at::Generator& gen, const torch::Tensor& state) {
  std::lock_guard<std::mutex> lock(gen.mutex());
  gen.set_state(state);
}

torch::serialize::InputArchive open_archive(const fs::path& path) {
  const auto payload = read_checkpoint_file(path);
  torch::serialize::InputArchive ar;
  try {
    std::istringstream in(payload);
    ar.load_from(in);
  } catch (const c10::Error& e) {
    throw CheckpointError(path.string() + ": unreadable checkpoint payload");
  }
  return ar;
}

}  // namespace

void Trainer::save_checkpoint(const fs::path& path, const nlohmann::json& metadata) const {
  nlohmann::json state{{"arch", params_.config},
                       {"train", config_},
                       {"index", index_},
                       {"epoch", epoch_},
                       {"global_step", global_step_},
                       {"history", history_},
                       {"triplet_rng", rng_state(triplet_rng_)},
                       {"epoch_rng", unsupervised_.state()}};
  torch::serialize::OutputArchive ar;
  write_string(ar, "state", state.dump());
  write_string(ar, "metadata", metadata.dump());
  for (auto s : {Submodel::encoder, Submodel::generator, Submodel::discriminator}) {
    torch::serialize::OutputArchive sub;
    params_.module(s).save(sub);
    ar.write(std::string("model.") + std::string(to_string(s)), sub);
  }
  const std::pair<const char*, torch::optim::Adam*> opts[] = {
      {"optim.encoder", opt_e_.get()},
      {"optim.generator", opt_g_.get()},
      {"optim.discriminator", opt_d_.get()}};
  for (const auto& [name, opt] : opts) {
    torch::serialize::OutputArchive sub;
    opt->save(sub);
    ar.write(name, sub);
  }
  ar.write("rng.prior", generator_state(prior_gen_));
  ar.write("rng.noise", generator_state(noise_gen_));
  std::ostringstream out;
  ar.save_to(out);
  write_checkpoint_file(path, out.str());
}

nlohmann::json Trainer::read_metadata(const fs::path& checkpoint) {
  auto ar = open_archive(checkpoint);
  return nlohmann::json::parse(read_string(ar, "metadata"));
}

void Trainer::set_total_epochs(int64_t total) {
  if (total < epoch_) {
    throw UsageError("total epochs " + std::to_string(total) +
                     " is below the checkpoint epoch " + std::to_string(epoch_));
  }
  auto next = config_;
  next.total_epochs = total;
  next.validate();
  config_ = next;
}

ModelParams load_model(const fs::path& checkpoint) {
  auto ar = open_archive(checkpoint);
  ArchitectureConfig arch;
  try {
    arch = nlohmann::json::parse(read_string(ar, "state")).at("arch").get<ArchitectureConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(checkpoint.string() + ": corrupt state record");
  }
  ModelParams params(arch, 0);
  try {
    for (auto s : {Submodel::encoder, Submodel::generator, Submodel::discriminator}) {
      torch::serialize::InputArchive sub;
      ar.read(std::string("model.") + std::string(to_string(s)), sub);
      params.module(s).load(sub);
    }
  } catch (const c10::Error& e) {
    throw CheckpointError(checkpoint.string() + ": " + e.what_without_backtrace());
  }
  return params;
}

Trainer Trainer::resume(const fs::path& checkpoint, const DatasetSplit& split) {
  auto ar = open_archive(checkpoint);
  nlohmann::json state;
  try {
    state = nlohmann::json::parse(read_string(ar, "state"));
  } catch (const std::exception& e) {
    throw CheckpointError(checkpoint.string() + ": corrupt state record");
  }
  const auto arch = state.at("arch").get<ArchitectureConfig>();
  const auto config = state.at("train").get<TrainConfig>();
  auto index = state.at("index").get<LabeledIndex>();
  Trainer t(ModelParams(arch, 0), config, split, std::move(index));
  try {
    for (auto s : {Submodel::encoder, Submodel::generator, Submodel::discriminator}) {
      torch::serialize::InputArchive sub;
      ar.read(std::string("model.") + std::string(to_string(s)), sub);
      t.params_.module(s).load(sub);
    }
    const std::pair<const char*, torch::optim::Adam*> opts[] = {
        {"optim.encoder", t.opt_e_.get()},
        {"optim.generator", t.opt_g_.get()},
        {"optim.discriminator", t.opt_d_.get()}};
    for (const auto& [name, opt] : opts) {
      torch::serialize::InputArchive sub;
      ar.read(name, sub);
      opt->load(sub);
    }
    torch::Tensor prior, noise;
    ar.read("rng.prior", prior);
    ar.read("rng.noise", noise);
    set_generator_state(t.prior_gen_, prior);
    set_generator_state(t.noise_gen_, noise);
  } catch (const c10::Error& e) {
    throw CheckpointError(checkpoint.string() + ": " + e.what_without_backtrace());
  }
  set_rng_state(t.triplet_rng_, state.at("triplet_rng").get<std::string>());
  t.unsupervised_.set_state(state.at("epoch_rng").get<std::string>());
  t.epoch_ = state.at("epoch").get<int64_t>();
  t.global_step_ = state.at("global_step").get<int64_t>();
  t.history_ = state.at("history").get<std::vector<EpochRecord>>();
  return t;
}

}  // namespace tbigan
