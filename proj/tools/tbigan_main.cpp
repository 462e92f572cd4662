// SPDX-License-Identifier: Apache-2.0
//
// tbigan command-line tool.
//   exit 0 success, 2 usage or contract error, 3 data or checkpoint error,
//   4 numerical failure during training.

#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tbigan/config.hpp"
#include "tbigan/error.hpp"
#include "tbigan/experiment.hpp"

namespace fs = std::filesystem;
using namespace tbigan;

namespace {

// Flags that map one-to-one onto config keys.
struct KeyFlag {
  const char* flag;
  const char* key;
  const char* help;
};

const KeyFlag kTrainFlags[] = {
    {"--dataset", "dataset", "cifar10, svhn or synthetic"},
    {"--data-root", "data_root", "dataset directory (default $TBIGAN_DATA_ROOT or ./data)"},
    {"--model", "model", "triplet, bigan or triplet-bigan"},
    {"--m", "arch.m", "latent dimension"},
    {"--width", "arch.width", "channel width multiplier"},
    {"--n-per-class", "train.n_per_class", "labeled examples per class"},
    {"--lambda", "train.lambda", "triplet loss weight"},
    {"--warmup-epochs", "train.warmup_epochs", "epochs of plain BiGAN training"},
    {"--epochs", "train.epochs", "total epochs"},
    {"--batch-size", "train.batch_size", "minibatch size"},
    {"--lr", "train.lr", "Adam learning rate"},
    {"--seed", "train.seed", "run seed"},
    {"--checkpoint-every", "train.checkpoint_every", "epochs between checkpoints (0: final only)"},
    {"--eval-triplets", "train.eval_triplets", "fixed triplets for the per-epoch accuracy"},
    {"--k", "eval.k", "neighbours for k-NN"},
    {"--out", "out", "run directory"},
};

// Keys that a resumed run may change.
bool resumable_override(const std::string& key) {
  return key == "out" || key == "data_root" || key == "train.epochs";
}

struct KeyOptions {
  std::map<std::string, std::string> values;
  bool hard_negatives = false;
  bool nondeterministic = false;
  std::optional<fs::path> config_file;

  void add_to(CLI::App* app) {
    for (const auto& f : kTrainFlags) {
      app->add_option(f.flag, values[f.key], f.help);
    }
    app->add_flag("--hard-negatives", hard_negatives, "mine the hardest labeled negative");
    app->add_flag("--nondeterministic", nondeterministic,
                  "multi-threaded kernels; records wall time");
    app->add_option("--config", config_file, "key = value config file");
  }

  // File values first, then flags given on the command line.
  KeyValues explicit_values(const CLI::App* app) const {
    KeyValues kv;
    if (config_file) kv = read_config_file(*config_file);
    for (const auto& f : kTrainFlags) {
      if (app->count(f.flag) > 0) kv[f.key] = values.at(f.key);
    }
    if (hard_negatives) kv["train.hard_negatives"] = "true";
    if (nondeterministic) kv["train.deterministic"] = "false";
    return kv;
  }
};

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int64_t> int_list(const std::string& s, const char* name) {
  std::vector<int64_t> out;
  for (const auto& item : split_list(s)) {
    try {
      size_t used = 0;
      out.push_back(std::stoll(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError(std::string("invalid ") + name + " entry '" + item + "'");
    }
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"Triplet BiGAN: semi-supervised feature learning and retrieval"};
  app.require_subcommand(1);

  KeyOptions train_opts;
  std::optional<fs::path> resume;
  auto* train = app.add_subcommand("train", "train a model");
  train_opts.add_to(train);
  train->add_option("--resume", resume, "checkpoint to continue from");

  std::string eval_ckpt;
  std::optional<fs::path> eval_root, eval_out;
  std::optional<int64_t> eval_k;
  std::optional<std::string> eval_queries;
  auto* eval = app.add_subcommand("eval", "k-NN accuracy and retrieval mAP of a checkpoint");
  eval->add_option("checkpoint", eval_ckpt, "checkpoint file or run directory")->required();
  eval->add_option("--data-root", eval_root, "dataset directory override");
  eval->add_option("--k", eval_k, "neighbours for k-NN (default: from the run config)");
  eval->add_option("--queries", eval_queries, "test (default) or validation");
  eval->add_option("--out", eval_out, "directory for report.json (default: run directory)");

  std::string embed_ckpt, embed_source = "test";
  fs::path embed_out = "embeddings.tsv";
  std::optional<fs::path> embed_root;
  auto* embed_cmd = app.add_subcommand("embed", "export encoder features");
  embed_cmd->add_option("checkpoint", embed_ckpt, "checkpoint file or run directory")->required();
  embed_cmd->add_option("--split", embed_source, "train-labeled, validation or test (default)");
  embed_cmd->add_option("--out", embed_out, "output TSV (default embeddings.tsv)");
  embed_cmd->add_option("--data-root", embed_root, "dataset directory override");

  std::string grid_ckpt;
  int64_t grid_queries = 8, grid_top = 5;
  uint64_t grid_seed = 0;
  fs::path grid_out = "retrieval_grid.ppm";
  std::optional<fs::path> grid_root;
  auto* grid = app.add_subcommand("retrieve-grid", "image grid of query neighbours");
  grid->add_option("checkpoint", grid_ckpt, "checkpoint file or run directory")->required();
  grid->add_option("--queries", grid_queries, "test images to query (default 8)");
  grid->add_option("--top", grid_top, "neighbours per query (default 5)");
  grid->add_option("--seed", grid_seed, "query selection seed");
  grid->add_option("--out", grid_out, "output PPM (default retrieval_grid.ppm)");
  grid->add_option("--data-root", grid_root, "dataset directory override");

  std::vector<fs::path> report_inputs;
  std::optional<fs::path> report_out;
  auto* report = app.add_subcommand("report", "tables from report.json files");
  report->add_option("inputs", report_inputs, "report files or directories")->required();
  report->add_option("--out", report_out, "also write the tables to this file");

  KeyOptions sweep_opts;
  std::string sweep_models = "triplet,bigan,triplet-bigan", sweep_ms = "16,32,64",
              sweep_ns = "10,25,50,100";
  auto* sweep = app.add_subcommand("sweep", "train and evaluate a model x m x n grid");
  sweep_opts.add_to(sweep);
  sweep->add_option("--models", sweep_models, "comma-separated model tags");
  sweep->add_option("--ms", sweep_ms, "comma-separated latent dimensions (default 16,32,64)");
  sweep->add_option("--ns", sweep_ns, "comma-separated labeled counts (default 10,25,50,100)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (train->parsed()) {
    const auto kv = train_opts.explicit_values(train);
    if (resume) {
      const auto checkpoint = resolve_checkpoint(*resume);
      const auto stored = to_key_values(checkpoint_config(checkpoint));
      ResumeOptions ro;
      for (const auto& [key, value] : kv) {
        if (resumable_override(key)) continue;
        // Compare resolved forms so "1" and "1.0" agree.
        auto probe = stored;
        probe[key] = value;
        if (to_key_values(resolve_config(probe)).at(key) != stored.at(key)) {
          throw UsageError("'" + key + "' conflicts with the checkpoint configuration");
        }
      }
      if (kv.count("train.epochs")) ro.total_epochs = std::stoll(kv.at("train.epochs"));
      if (kv.count("out")) ro.output_dir = kv.at("out");
      if (kv.count("data_root")) ro.data_root = kv.at("data_root");
      resume_train(checkpoint, ro, &std::cout);
    } else {
      const auto result = run_train(resolve_config(kv), &std::cout);
      std::cout << "final checkpoint: " << result.paths.final_checkpoint().string() << "\n";
    }
  } else if (eval->parsed()) {
    EvalOverrides o;
    o.data_root = eval_root;
    o.k = eval_k;
    o.output_dir = eval_out;
    if (eval_queries) o.queries = parse_embedding_source(*eval_queries);
    std::cout << render_report(run_eval(eval_ckpt, o));
  } else if (embed_cmd->parsed()) {
    run_embed(embed_ckpt, parse_embedding_source(embed_source), embed_out, embed_root);
  } else if (grid->parsed()) {
    run_retrieve_grid(grid_ckpt, grid_queries, grid_top, grid_seed, grid_out, grid_root);
  } else if (report->parsed()) {
    const auto tables = render_tables(collect_reports(report_inputs));
    if (report_out) {
      std::ofstream(*report_out) << tables;
    }
    std::cout << tables;
  } else if (sweep->parsed()) {
    auto kv = sweep_opts.explicit_values(sweep);
    const fs::path dir = kv.count("out") ? fs::path(kv.at("out")) : fs::path("runs/sweep");
    SweepSpec spec;
    for (const auto& m : split_list(sweep_models)) spec.models.push_back(parse_model_tag(m));
    spec.latent_dims = int_list(sweep_ms, "--ms");
    spec.n_per_class = int_list(sweep_ns, "--ns");
    const auto result = run_sweep(kv, spec, dir, &std::cout);
    std::cout << result.tables;
    if (!result.failures.empty()) {
      std::cerr << result.failures.size() << " sweep cell(s) failed; see "
                << (dir / "failures.txt").string() << "\n";
      return 1;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: invalid number: " << e.what() << "\n";
    return 2;
  } catch (const c10::Error& e) {
    std::cerr << "error: " << e.what_without_backtrace() << "\n";
    return 1;
  }
}
