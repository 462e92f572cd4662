// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "tbigan/config.hpp"
#include "tbigan/error.hpp"
#include "tbigan/experiment.hpp"

using namespace tbigan;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("tbigan_exp_" + name);
  fs::remove_all(dir);
  return dir;
}

// A run that takes a fraction of a second.
KeyValues quick(const fs::path& out) {
  return {{"out", out.string()},
          {"arch.m", "4"},
          {"synthetic.class_count", "2"},
          {"synthetic.per_class", "24"},
          {"synthetic.test_per_class", "10"},
          {"train.n_per_class", "6"},
          {"train.epochs", "2"},
          {"train.warmup_epochs", "1"},
          {"train.batch_size", "16"},
          {"train.eval_triplets", "20"}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("config") {

TEST_CASE("key-value parsing with sections and comments") {
  const auto kv = parse_key_values(
      "# comment\n"
      "dataset = synthetic\n"
      "[train]\n"
      "lambda = 0.5   # trailing\n"
      "\n"
      "epochs=3\n"
      "[arch]\n"
      "m = 16\n");
  CHECK(kv.at("dataset") == "synthetic");
  CHECK(kv.at("train.lambda") == "0.5");
  CHECK(kv.at("train.epochs") == "3");
  CHECK(kv.at("arch.m") == "16");
  CHECK_THROWS_AS(parse_key_values("no equals sign\n"), UsageError);
}

TEST_CASE("defaults depend on the model") {
  const auto tb = resolve_config({});
  CHECK(tb.train.model == ModelTag::triplet_bigan);
  CHECK(tb.train.lambda == 1.0);
  CHECK(tb.train.warmup_epochs == 10);
  CHECK(tb.arch.image_shape == ImageShape{3, 16, 16});
  CHECK(tb.arch.width == 8);
  const auto bigan = resolve_config({{"model", "bigan"}});
  CHECK(bigan.train.lambda == 0.0);
  const auto triplet = resolve_config({{"model", "triplet"}});
  CHECK(triplet.train.warmup_epochs == 0);
  const auto cifar = resolve_config({{"dataset", "cifar10"}});
  CHECK(cifar.arch.image_shape == ImageShape{3, 32, 32});
  CHECK(cifar.arch.width == 32);
}

TEST_CASE("conflicting model settings are usage errors") {
  CHECK_THROWS_AS(resolve_config({{"model", "bigan"}, {"train.lambda", "0.5"}}), UsageError);
  CHECK(resolve_config({{"model", "bigan"}, {"train.lambda", "0"}}).train.lambda == 0.0);
  CHECK_THROWS_AS(resolve_config({{"model", "triplet"}, {"train.warmup_epochs", "3"}}),
                  UsageError);
  CHECK_THROWS_AS(resolve_config({{"train.lambda", "-1"}}), UsageError);
}

TEST_CASE("invalid fields are named in the error") {
  auto message = [](const KeyValues& kv) {
    try {
      resolve_config(kv);
    } catch (const UsageError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message({{"train.epochz", "3"}}).find("train.epochz") != std::string::npos);
  CHECK(message({{"train.batch_size", "many"}}).find("train.batch_size") != std::string::npos);
  CHECK(message({{"train.hard_negatives", "perhaps"}}).find("train.hard_negatives") !=
        std::string::npos);
  CHECK(message({{"arch.m", "0"}}).find("arch.m") != std::string::npos);
}

TEST_CASE("resolved config round trips through its text form") {
  const auto c = resolve_config({{"model", "bigan"},
                                 {"arch.m", "32"},
                                 {"train.lr", "0.0002"},
                                 {"train.hard_negatives", "true"},
                                 {"eval.weighting", "uniform"}});
  const auto text = render_config(c);
  const auto again = resolve_config(parse_key_values(text));
  CHECK(to_key_values(again) == to_key_values(c));
  CHECK(render_config(again) == text);
  nlohmann::json j = c;
  CHECK(to_key_values(j.get<ExperimentConfig>()) == to_key_values(c));
  CHECK(known_config_keys().size() == to_key_values(c).size());
}

TEST_CASE("train, eval, embed and grid through the experiment layer") {
  const auto dir = fresh_dir("run");
  const auto config = resolve_config(quick(dir));
  const auto result = run_train(config);
  const RunPaths paths{dir};
  CHECK(result.history.size() == 2);
  CHECK(fs::exists(paths.final_checkpoint()));
  CHECK(fs::exists(paths.config()));
  CHECK_FALSE(fs::exists(paths.lock()));
  std::istringstream metrics(slurp(paths.metrics()));
  int lines = 0;
  for (std::string l; std::getline(metrics, l);) ++lines;
  CHECK(lines == 2);

  // The snapshot alone reproduces the run byte for byte.
  const auto dir2 = fresh_dir("run_again");
  auto kv = read_config_file(paths.config());
  kv["out"] = dir2.string();
  run_train(resolve_config(kv));
  CHECK(slurp(paths.metrics()) == slurp(RunPaths{dir2}.metrics()));

  // An existing run is not overwritten.
  CHECK_THROWS_AS(run_train(config), UsageError);

  const auto r1 = run_eval(dir);
  const auto r2 = run_eval(paths.final_checkpoint());
  CHECK(r1.accuracy == r2.accuracy);
  CHECK(r1.map == r2.map);
  CHECK(r1.per_class_ap == r2.per_class_ap);
  CHECK(r1.consistent());
  CHECK(r1.m == 4);
  CHECK(r1.n_per_class == 6);
  CHECK(fs::exists(paths.report_json()));
  CHECK(slurp(paths.report_txt()).find("mAP") != std::string::npos);

  const auto emb = dir / "embeddings.tsv";
  run_embed(dir, EmbeddingSource::test, emb);
  CHECK(import_embeddings(emb).count() == 20);
  run_embed(dir, EmbeddingSource::train_labeled, emb);
  CHECK(import_embeddings(emb).count() == 12);

  const auto grid = dir / "retrieval_grid.ppm";
  run_retrieve_grid(dir, 5, 5, 0, grid);
  CHECK(fs::exists(grid));

  CHECK_THROWS_AS(run_eval(dir / "missing"), DataError);
}

TEST_CASE("resume continues a run and rewrites the metrics log") {
  const auto a = fresh_dir("uninterrupted");
  auto kv = quick(a);
  kv["train.epochs"] = "3";
  run_train(resolve_config(kv));

  const auto b = fresh_dir("interrupted");
  kv = quick(b);
  kv["train.epochs"] = "3";
  kv["train.checkpoint_every"] = "1";
  run_train(resolve_config(kv));
  const RunPaths pb{b};
  // Pretend the process died after epoch 2.
  std::ofstream(pb.metrics(), std::ios::app) << "{\"garbage\":true}\n";
  fs::remove(pb.final_checkpoint());
  resume_train(pb.epoch_checkpoint(2));
  CHECK(slurp(pb.metrics()) == slurp(RunPaths{a}.metrics()));

  // Extending the budget continues from the final checkpoint.
  ResumeOptions more;
  more.total_epochs = 4;
  const auto extended = resume_train(pb.final_checkpoint(), more);
  CHECK(extended.history.size() == 4);
}

TEST_CASE("a held lock blocks a second run") {
  const auto dir = fresh_dir("locked");
  fs::create_directories(dir);
  RunLock hold(RunPaths{dir}.lock());
  CHECK_THROWS_AS(run_train(resolve_config(quick(dir))), UsageError);
}

TEST_CASE("sweep aggregates a 2x2 grid and skips finished cells") {
  const auto dir = fresh_dir("sweep");
  auto base = quick(dir);
  base.erase("arch.m");
  base.erase("train.n_per_class");
  base.erase("out");
  base["eval.k"] = "3";
  SweepSpec spec{{ModelTag::bigan, ModelTag::triplet_bigan}, {4}, {4, 6}};
  const auto first = run_sweep(base, spec, dir);
  CHECK(first.failures.empty());
  CHECK(first.reports.size() == 4);
  CHECK(fs::exists(dir / "tables.txt"));
  const auto mtime = fs::last_write_time(dir / "bigan_m4_n4" / "report.json");
  const auto second = run_sweep(base, spec, dir);
  CHECK(second.reports.size() == 4);
  CHECK(fs::last_write_time(dir / "bigan_m4_n4" / "report.json") == mtime);
  CHECK(second.tables == first.tables);
  CHECK(render_tables(collect_reports({dir})) == first.tables);

  // A failing cell is recorded and the sweep continues.
  SweepSpec bad{{ModelTag::bigan}, {4}, {4, 1000}};
  const auto partial = run_sweep(base, bad, fresh_dir("sweep_bad"));
  CHECK(partial.reports.size() == 1);
  CHECK(partial.failures.size() == 1);
}

}  // TEST_SUITE
