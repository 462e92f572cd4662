// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>

#include <torch/torch.h>

#include "tbigan/error.hpp"
#include "tbigan/trainer.hpp"

using namespace tbigan;
namespace fs = std::filesystem;

namespace {

const DatasetSplit& small_split() {
  static const DatasetSplit split = synthetic_shapes(3, 40, 16, 5, 10);
  return split;
}

TrainConfig small_config(ModelTag model) {
  TrainConfig c;
  c.model = model;
  c.lambda = model == ModelTag::bigan ? 0.0 : 1.0;
  c.warmup_epochs = model == ModelTag::triplet_bigan ? 1 : 0;
  c.total_epochs = 3;
  c.batch_size = 32;
  c.n_per_class = 8;
  c.seed = 3;
  c.eval_triplets = 50;
  return c;
}

Trainer make_trainer(const TrainConfig& c) {
  return Trainer(ArchitectureConfig::tiny(), c, small_split(),
                 select_labeled_subset(small_split(), c.n_per_class, c.seed));
}

bool same_parameters(const ModelParams& a, const ModelParams& b, Submodel s) {
  const auto pa = a.module(s).parameters();
  const auto pb = b.module(s).parameters();
  for (size_t i = 0; i < pa.size(); ++i) {
    if (!torch::equal(pa[i], pb[i])) return false;
  }
  return true;
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("tbigan_trainer_" + name);
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("config validation") {
  auto c = small_config(ModelTag::bigan);
  c.lambda = 0.5;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = small_config(ModelTag::triplet);
  c.warmup_epochs = 2;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = small_config(ModelTag::triplet_bigan);
  c.warmup_epochs = 4;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = small_config(ModelTag::triplet_bigan);
  c.lambda = -1.0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = small_config(ModelTag::triplet_bigan);
  nlohmann::json j = c;
  CHECK(j.get<TrainConfig>() == c);
}

TEST_CASE("effective lambda follows the warm-up schedule") {
  auto t = make_trainer(small_config(ModelTag::triplet_bigan));
  CHECK(t.effective_lambda() == 0.0);
  CHECK_FALSE(t.uses_triplets());
  t.run_epoch();
  CHECK(t.effective_lambda() == 1.0);
  CHECK(make_trainer(small_config(ModelTag::bigan)).effective_lambda() == 0.0);
  CHECK(make_trainer(small_config(ModelTag::triplet)).effective_lambda() == 1.0);
}

TEST_CASE("train_step requires a triplet batch exactly when lambda is positive") {
  auto t = make_trainer(small_config(ModelTag::triplet_bigan));
  const std::vector<int64_t> rows{0, 1, 2, 3};
  auto x = small_split().train.batch(rows);
  auto triplet = t.next_triplet_batch(4);
  CHECK_THROWS_AS(t.train_step(x, &triplet), ContractError);
  t.train_step(x, nullptr);
  t.run_epoch();
  CHECK_THROWS_AS(t.train_step(x, nullptr), ContractError);
  const auto r = t.train_step(x, &triplet);
  CHECK(r.l_t.has_value());
  CHECK(*r.l_teg == doctest::Approx(r.l_eg + *r.l_t));
}

TEST_CASE("200 steps on synthetic data stay finite") {
  auto c = small_config(ModelTag::triplet_bigan);
  c.warmup_epochs = 0;
  auto t = make_trainer(c);
  std::mt19937_64 rng(1);
  for (int step = 0; step < 200; ++step) {
    std::vector<int64_t> rows(16);
    for (auto& r : rows) r = static_cast<int64_t>(rng() % 120);
    auto triplet = t.next_triplet_batch(16);
    const auto r = t.train_step(small_split().train.batch(rows), &triplet);
    REQUIRE(std::isfinite(r.l_d));
    REQUIRE(std::isfinite(r.l_eg));
    REQUIRE(std::isfinite(*r.l_t));
  }
  CHECK(t.global_step() == 200);
}

TEST_CASE("warm-up epochs match a plain BiGAN run step for step") {
  auto tb = small_config(ModelTag::triplet_bigan);
  tb.warmup_epochs = 2;
  auto plain = small_config(ModelTag::bigan);
  auto a = make_trainer(tb);
  auto b = make_trainer(plain);
  for (int e = 0; e < 2; ++e) {
    const auto ra = a.run_epoch();
    const auto rb = b.run_epoch();
    CHECK(ra == rb);
  }
  for (auto s : {Submodel::encoder, Submodel::generator, Submodel::discriminator}) {
    CHECK(same_parameters(a.params(), b.params(), s));
  }
  // The triplet term then changes the trajectory.
  const auto ra = a.run_epoch();
  const auto rb = b.run_epoch();
  CHECK(ra.l_t.has_value());
  CHECK_FALSE(rb.l_t.has_value());
  CHECK_FALSE(same_parameters(a.params(), b.params(), Submodel::encoder));
}

TEST_CASE("warmup equal to total epochs is pure BiGAN training") {
  auto c = small_config(ModelTag::triplet_bigan);
  c.total_epochs = 2;
  c.warmup_epochs = 2;
  auto t = make_trainer(c);
  t.fit();
  for (const auto& r : t.history()) CHECK_FALSE(r.l_t.has_value());
}

TEST_CASE("triplet-only model trains the encoder alone") {
  auto t = make_trainer(small_config(ModelTag::triplet));
  const auto before = t.params().snapshot();
  const auto r = t.run_epoch();
  CHECK(r.l_d == 0.0);
  CHECK(r.l_eg == 0.0);
  REQUIRE(r.l_t.has_value());
  CHECK_FALSE(same_parameters(before, t.params(), Submodel::encoder));
  CHECK(same_parameters(before, t.params(), Submodel::generator));
  CHECK(same_parameters(before, t.params(), Submodel::discriminator));
}

TEST_CASE("epoch records and metrics lines") {
  auto t = make_trainer(small_config(ModelTag::triplet_bigan));
  t.fit();
  REQUIRE(t.history().size() == 3);
  CHECK(t.global_step() == 3 * 4);  // ceil(120 / 32) batches per epoch
  for (const auto& r : t.history()) {
    CHECK(r.wall_time_s == 0.0);
    CHECK(r.triplet_accuracy >= 0.0);
    CHECK(r.triplet_accuracy <= 1.0);
    const auto back = nlohmann::json::parse(metrics_line(r)).get<EpochRecord>();
    CHECK(back == r);
  }
  CHECK(metrics_line(t.history()[0]).find('\n') == std::string::npos);
}

TEST_CASE("checkpoint resume reproduces the next epoch exactly") {
  auto c = small_config(ModelTag::triplet_bigan);
  c.hard_negatives = true;
  auto full = make_trainer(c);
  full.run_epoch();
  full.run_epoch();
  const auto path = temp_file("resume.ckpt");
  full.save_checkpoint(path, {{"note", "x"}});
  const auto expected = full.run_epoch();

  auto resumed = Trainer::resume(path, small_split());
  CHECK(resumed.epoch() == 2);
  CHECK(resumed.history().size() == 2);
  CHECK(Trainer::read_metadata(path).at("note") == "x");
  const auto got = resumed.run_epoch();
  CHECK(got == expected);
  for (auto s : {Submodel::encoder, Submodel::generator, Submodel::discriminator}) {
    CHECK(same_parameters(full.params(), resumed.params(), s));
  }
  const auto loaded = load_model(path);
  CHECK(loaded.config == ArchitectureConfig::tiny());
}

TEST_CASE("corrupt checkpoints are rejected") {
  auto t = make_trainer(small_config(ModelTag::bigan));
  const auto path = temp_file("corrupt.ckpt");
  t.save_checkpoint(path);
  const auto size = fs::file_size(path);

  SUBCASE("truncated") {
    fs::resize_file(path, size - 10);
    CHECK_THROWS_AS(Trainer::resume(path, small_split()), CheckpointError);
  }
  SUBCASE("flipped payload byte") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size / 2));
    f.put('\x5a');
    f.close();
    CHECK_THROWS_AS(Trainer::resume(path, small_split()), CheckpointError);
  }
  SUBCASE("version mismatch names both versions") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const uint32_t v = 7;
    f.write(reinterpret_cast<const char*>(&v), 4);
    f.close();
    try {
      Trainer::resume(path, small_split());
      FAIL("expected CheckpointError");
    } catch (const CheckpointError& e) {
      const std::string what = e.what();
      CHECK(what.find('7') != std::string::npos);
      CHECK(what.find('1') != std::string::npos);
    }
  }
  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
    f.close();
    CHECK_THROWS_AS(Trainer::resume(path, small_split()), CheckpointError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(Trainer::resume(temp_file("absent.ckpt"), small_split()), DataError);
  }
}

TEST_CASE("non-finite training aborts with a numerical error") {
  auto t = make_trainer(small_config(ModelTag::bigan));
  {
    torch::NoGradGuard g;
    for (auto& p : t.params().discriminator->parameters()) p.fill_(NAN);
  }
  const std::vector<int64_t> rows{0, 1, 2, 3};
  CHECK_THROWS_AS(t.train_step(small_split().train.batch(rows), nullptr), NumericalError);
}

TEST_CASE("set_total_epochs cannot go below the current epoch") {
  auto t = make_trainer(small_config(ModelTag::bigan));
  t.run_epoch();
  t.run_epoch();
  CHECK_THROWS_AS(t.set_total_epochs(1), UsageError);
  t.set_total_epochs(5);
  CHECK(t.config().total_epochs == 5);
}

TEST_CASE("seed streams are distinct") {
  std::set<uint64_t> seen;
  for (auto s : {SeedStream::init, SeedStream::prior, SeedStream::noise, SeedStream::triplet,
                 SeedStream::epoch, SeedStream::eval_triplets}) {
    seen.insert(stream_seed(0, s));
  }
  CHECK(seen.size() == 6);
  CHECK(stream_seed(1, SeedStream::init) != stream_seed(0, SeedStream::init));
}

}  // TEST_SUITE
