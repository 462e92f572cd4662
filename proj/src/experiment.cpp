// SPDX-License-Identifier: Apache-2.0

#include "tbigan/experiment.hpp"

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "tbigan/error.hpp"

namespace tbigan {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << text;
    out.flush();
    if (!out) throw DataError("cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

class MetricsWriter {
 public:
  MetricsWriter(const fs::path& path, const std::vector<EpochRecord>& history) {
    std::string text;
    for (const auto& r : history) text += metrics_line(r) + "\n";
    write_text(path, text);
    out_.open(path, std::ios::app);
    if (!out_) throw DataError("cannot open " + path.string());
  }

  void append(const EpochRecord& r) {
    out_ << metrics_line(r) << '\n';
    out_.flush();
    if (!out_) throw DataError("write to metrics.jsonl failed");
  }

 private:
  std::ofstream out_;
};

nlohmann::json checkpoint_metadata(const ExperimentConfig& config) {
  return {{"experiment", config}};
}

void log_epoch(std::ostream* log, const EpochRecord& r, int64_t total) {
  if (!log) return;
  std::ostringstream line;
  line << std::fixed << std::setprecision(4) << "epoch " << r.epoch << "/" << total
       << " l_d=" << r.l_d << " l_eg=" << r.l_eg;
  if (r.l_t) line << " l_t=" << *r.l_t;
  line << " d+=" << r.d_plus_mean << " d-=" << r.d_minus_mean
       << " triplet_acc=" << r.triplet_accuracy;
  *log << line.str() << std::endl;
}

TrainResult train_loop(Trainer& trainer, const ExperimentConfig& config,
                       const RunPaths& paths, std::ostream* log) {
  MetricsWriter metrics(paths.metrics(), trainer.history());
  const auto metadata = checkpoint_metadata(config);
  const auto every = trainer.config().checkpoint_every;
  trainer.fit([&](const EpochRecord& r, Trainer& t) {
    metrics.append(r);
    log_epoch(log, r, t.config().total_epochs);
    if (every > 0 && r.epoch % every == 0) {
      t.save_checkpoint(paths.epoch_checkpoint(r.epoch), metadata);
    }
  });
  trainer.save_checkpoint(paths.final_checkpoint(), metadata);
  return {paths, trainer.history()};
}

EmbeddingSet embed_labeled(ModelParams& params, const DatasetSplit& split,
                           const LabeledIndex& index, int64_t batch) {
  const auto rows = index.flat();
  return embed(params, split.train.subset(rows), batch, EmbeddingSource::train_labeled);
}

const LabeledImages& images_for(const DatasetSplit& split, EmbeddingSource source) {
  switch (source) {
    case EmbeddingSource::validation: return split.validation;
    case EmbeddingSource::test: return split.test;
    case EmbeddingSource::train_labeled: break;
  }
  throw ContractError("train_labeled images need the labeled index");
}

}  // namespace

fs::path RunPaths::epoch_checkpoint(int64_t epoch) const {
  std::ostringstream name;
  name << "epoch_" << std::setw(4) << std::setfill('0') << epoch << ".ckpt";
  return checkpoints() / name.str();
}

RunLock::RunLock(fs::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) {
    if (errno == EEXIST) {
      throw UsageError("run directory is locked by another process (" + path_.string() +
                       "); remove the lock file if no run is active");
    }
    throw DataError("cannot create lock " + path_.string() + ": " + std::strerror(errno));
  }
  std::fclose(f);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

DatasetSplit load_split(const ExperimentConfig& config) {
  return load_dataset(config.dataset, config.data_root, config.synthetic);
}

TrainResult run_train(const ExperimentConfig& config, std::ostream* log) {
  const RunPaths paths{config.output_dir};
  RunLock lock(paths.lock());
  if (fs::exists(paths.final_checkpoint()) ||
      (fs::exists(paths.metrics()) && fs::file_size(paths.metrics()) > 0)) {
    throw UsageError("output directory " + paths.dir.string() +
                     " already holds a run; use --resume or another --out");
  }
  write_text(paths.config(), render_config(config));
  const auto split = load_split(config);
  auto index = select_labeled_subset(split, config.train.n_per_class, config.train.seed);
  Trainer trainer(config.arch, config.train, split, std::move(index));
  return train_loop(trainer, config, paths, log);
}

ExperimentConfig checkpoint_config(const fs::path& checkpoint) {
  const auto meta = Trainer::read_metadata(checkpoint);
  if (!meta.contains("experiment")) {
    throw CheckpointError(checkpoint.string() + ": no experiment configuration stored");
  }
  return meta.at("experiment").get<ExperimentConfig>();
}

fs::path resolve_checkpoint(const fs::path& path) {
  if (fs::is_directory(path)) {
    const RunPaths paths{path};
    if (!fs::exists(paths.final_checkpoint())) {
      throw DataError("no final checkpoint in " + path.string());
    }
    return paths.final_checkpoint();
  }
  if (!fs::exists(path)) throw DataError("checkpoint not found: " + path.string());
  return path;
}

TrainResult resume_train(const fs::path& checkpoint, const ResumeOptions& options,
                         std::ostream* log) {
  auto config = checkpoint_config(checkpoint);
  if (options.data_root) config.data_root = *options.data_root;
  if (options.output_dir) config.output_dir = *options.output_dir;
  if (options.total_epochs) config.train.total_epochs = *options.total_epochs;
  const RunPaths paths{config.output_dir};
  RunLock lock(paths.lock());
  const auto split = load_split(config);
  auto trainer = Trainer::resume(checkpoint, split);
  trainer.set_total_epochs(config.train.total_epochs);
  write_text(paths.config(), render_config(config));
  return train_loop(trainer, config, paths, log);
}

EvalReport evaluate(ModelParams& params, const DatasetSplit& split,
                    const LabeledIndex& index, const ExperimentConfig& config) {
  const auto db = embed_labeled(params, split, index, config.eval.batch_size);
  if (config.eval.queries == EmbeddingSource::train_labeled) {
    throw UsageError("eval.queries must be validation or test");
  }
  const auto queries = embed(params, images_for(split, config.eval.queries),
                             config.eval.batch_size, config.eval.queries);
  const auto predicted = knn_classify(db, queries, config.eval.k, config.eval.weighting);
  const auto retrieval = retrieval_map(db, queries);

  EvalReport report;
  report.dataset = std::string(to_string(config.dataset));
  report.model_tag = config.model();
  report.m = config.arch.latent_dim;
  report.n_per_class = index.n_per_class;
  report.k = config.eval.k;
  report.accuracy = accuracy(predicted, queries.labels);
  report.map = retrieval.map;
  report.per_class_ap.assign(static_cast<size_t>(split.class_count), 0.0);
  report.per_class_queries.assign(static_cast<size_t>(split.class_count), 0);
  for (const auto& [c, ap] : retrieval.per_class_ap) report.per_class_ap.at(c) = ap;
  for (const auto& [c, n] : retrieval.per_class_queries) report.per_class_queries.at(c) = n;
  report.queries_without_relevant = retrieval.queries_without_relevant;
  return report;
}

std::string render_report(const EvalReport& r) {
  std::ostringstream out;
  out << "dataset: " << r.dataset << "\n"
      << "model: " << display_name(r.model_tag) << "\n"
      << "m: " << r.m << "\n"
      << "labeled per class: " << r.n_per_class << "\n"
      << std::fixed << std::setprecision(2)
      << "kNN accuracy (k=" << r.k << "): " << 100.0 * r.accuracy << "%\n"
      << std::setprecision(4) << "mAP: " << r.map << "\n"
      << "per-class AP:\n";
  for (size_t c = 0; c < r.per_class_ap.size(); ++c) {
    out << "  class " << c << ": " << r.per_class_ap[c] << " (" << r.per_class_queries[c]
        << " queries)\n";
  }
  if (r.queries_without_relevant > 0) {
    out << "queries without relevant items: " << r.queries_without_relevant << "\n";
  }
  return out.str();
}

EvalReport run_eval(const fs::path& checkpoint_or_dir, const EvalOverrides& o) {
  const auto checkpoint = resolve_checkpoint(checkpoint_or_dir);
  auto config = checkpoint_config(checkpoint);
  if (o.data_root) config.data_root = *o.data_root;
  if (o.k) {
    if (*o.k < 1) throw UsageError("invalid k: must be >= 1");
    config.eval.k = *o.k;
  }
  if (o.queries) config.eval.queries = *o.queries;
  const auto split = load_split(config);
  auto trainer = Trainer::resume(checkpoint, split);
  auto report = evaluate(trainer.params(), split, trainer.index(), config);

  fs::path dir = o.output_dir.value_or(checkpoint.parent_path().filename() == "checkpoints"
                                           ? checkpoint.parent_path().parent_path()
                                           : checkpoint.parent_path());
  const RunPaths paths{dir};
  write_text(paths.report_json(), nlohmann::json(report).dump(2) + "\n");
  write_text(paths.report_txt(), render_report(report));
  return report;
}

void run_embed(const fs::path& checkpoint_or_dir, EmbeddingSource source,
               const fs::path& out, const std::optional<fs::path>& data_root) {
  const auto checkpoint = resolve_checkpoint(checkpoint_or_dir);
  auto config = checkpoint_config(checkpoint);
  if (data_root) config.data_root = *data_root;
  const auto split = load_split(config);
  auto trainer = Trainer::resume(checkpoint, split);
  const auto set =
      source == EmbeddingSource::train_labeled
          ? embed_labeled(trainer.params(), split, trainer.index(), config.eval.batch_size)
          : embed(trainer.params(), images_for(split, source), config.eval.batch_size, source);
  export_embeddings(set, out);
}

void run_retrieve_grid(const fs::path& checkpoint_or_dir, int64_t queries, int64_t top,
                       uint64_t seed, const fs::path& out,
                       const std::optional<fs::path>& data_root) {
  if (queries < 1 || top < 1) throw UsageError("queries and top must be >= 1");
  const auto checkpoint = resolve_checkpoint(checkpoint_or_dir);
  auto config = checkpoint_config(checkpoint);
  if (data_root) config.data_root = *data_root;
  const auto split = load_split(config);
  auto trainer = Trainer::resume(checkpoint, split);
  const auto rows = trainer.index().flat();
  const auto db_images = split.train.subset(rows);
  const auto db = embed(trainer.params(), db_images, config.eval.batch_size,
                        EmbeddingSource::train_labeled);

  std::vector<int64_t> all(static_cast<size_t>(split.test.size()));
  for (size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int64_t>(i);
  std::vector<int64_t> picked;
  std::mt19937_64 rng(seed);
  std::sample(all.begin(), all.end(), std::back_inserter(picked),
              std::min<int64_t>(queries, split.test.size()), rng);
  const auto query_images = split.test.subset(picked);
  const auto query_set =
      embed(trainer.params(), query_images, config.eval.batch_size, EmbeddingSource::test);
  retrieval_grid(db_images, db, query_images, query_set, top).write_ppm(out);
}

std::vector<EvalReport> collect_reports(const std::vector<fs::path>& paths) {
  std::vector<fs::path> files;
  for (const auto& p : paths) {
    if (fs::is_directory(p)) {
      for (const auto& e : fs::recursive_directory_iterator(p)) {
        if (e.is_regular_file() && e.path().filename() == "report.json") {
          files.push_back(e.path());
        }
      }
    } else if (fs::exists(p)) {
      files.push_back(p);
    } else {
      throw DataError("report not found: " + p.string());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<EvalReport> reports;
  for (const auto& f : files) {
    std::ifstream in(f);
    try {
      reports.push_back(nlohmann::json::parse(in).get<EvalReport>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError(f.string() + ": malformed report (" + e.what() + ")");
    }
  }
  return reports;
}

SweepResult run_sweep(const KeyValues& base, const SweepSpec& spec, const fs::path& dir,
                      std::ostream* log) {
  if (spec.models.empty() || spec.latent_dims.empty() || spec.n_per_class.empty()) {
    throw UsageError("sweep needs at least one model, m and n");
  }
  SweepResult result;
  for (auto model : spec.models) {
    for (auto m : spec.latent_dims) {
      for (auto n : spec.n_per_class) {
        std::ostringstream cell_name;
        cell_name << to_string(model) << "_m" << m << "_n" << n;
        const RunPaths paths{dir / cell_name.str()};
        if (log) *log << "== " << cell_name.str() << std::endl;
        try {
          if (fs::exists(paths.report_json())) {
            std::ifstream in(paths.report_json());
            result.reports.push_back(nlohmann::json::parse(in).get<EvalReport>());
            if (log) *log << "   reusing " << paths.report_json().string() << std::endl;
            continue;
          }
          auto kv = base;
          kv["model"] = std::string(to_string(model));
          kv["arch.m"] = std::to_string(m);
          kv["train.n_per_class"] = std::to_string(n);
          kv["out"] = paths.dir.string();
          if (model == ModelTag::bigan) kv.erase("train.lambda");
          if (model == ModelTag::triplet) kv.erase("train.warmup_epochs");
          for (const auto* k : {"arch.encoder_channels", "arch.generator_channels",
                                "arch.dx_channels", "arch.dz_channels", "arch.dxz_channels"}) {
            kv.erase(k);
          }
          const auto config = resolve_config(kv);
          if (!fs::exists(paths.final_checkpoint())) {
            if (fs::exists(paths.metrics())) fs::remove(paths.metrics());
            run_train(config, log);
          }
          result.reports.push_back(run_eval(paths.final_checkpoint()));
        } catch (const Error& e) {
          result.failures.push_back(cell_name.str() + ": " + e.what());
          if (log) *log << "   failed: " << e.what() << std::endl;
        }
      }
    }
  }
  result.tables = render_tables(result.reports);
  write_text(dir / "tables.txt", result.tables);
  std::string failures;
  for (const auto& f : result.failures) failures += f + "\n";
  write_text(dir / "failures.txt", failures);
  return result;
}

}  // namespace tbigan
