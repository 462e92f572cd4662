// SPDX-License-Identifier: Apache-2.0
//
// Evaluation of encoder embeddings: distance-weighted k-NN classification,
// retrieval mean average precision over the full ranked database, retrieval
// neighbour grids, and a plain-text embedding export for external t-SNE tools.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tbigan/datasets.hpp"
#include "tbigan/models.hpp"

namespace tbigan {

enum class EmbeddingSource { train_labeled, validation, test };
std::string_view to_string(EmbeddingSource s);
EmbeddingSource parse_embedding_source(std::string_view s);

/// Row-major [count, m] feature vectors with aligned labels.
struct EmbeddingSet {
  std::vector<float> vectors;
  std::vector<int64_t> labels;
  int64_t m = 0;
  EmbeddingSource source = EmbeddingSource::test;
  bool deterministic = true;

  int64_t count() const { return static_cast<int64_t>(labels.size()); }
  std::span<const float> row(int64_t i) const {
    return {vectors.data() + i * m, static_cast<size_t>(m)};
  }
};

/// Deterministic-mode codes (z = mu) computed in batches of `batch_size`.
EmbeddingSet embed(ModelParams& params, const LabeledImages& images,
                   int64_t batch_size, EmbeddingSource source);

enum class KnnWeighting { inverse_distance, uniform };
KnnWeighting parse_knn_weighting(std::string_view s);
std::string_view to_string(KnnWeighting w);

/// Predicted class per query. Neighbours are the k nearest db rows under the
/// Euclidean distance (ties: lower db index); each votes with weight 1/d.
/// A zero-distance neighbour decides the class outright. Vote ties go to the
/// smallest class id.
std::vector<int64_t> knn_classify(const EmbeddingSet& db,
                                  const EmbeddingSet& queries, int64_t k = 9,
                                  KnnWeighting weighting =
                                      KnnWeighting::inverse_distance);

double accuracy(std::span<const int64_t> predicted,
                std::span<const int64_t> truth);

/// AP over the full ranking: (1/R) * sum of precision@i over relevant ranks.
/// Returns 0 when nothing is relevant and bumps `no_relevant` if given.
double average_precision(std::span<const uint8_t> relevance,
                         int64_t* no_relevant = nullptr);

struct RetrievalResult {
  double map = 0.0;
  std::map<int64_t, double> per_class_ap;        // mean AP of class queries
  std::map<int64_t, int64_t> per_class_queries;
  int64_t queries_without_relevant = 0;
};

/// Ranks every db row for each query by ascending distance (ties: lower
/// index); relevance is label equality.
RetrievalResult retrieval_map(const EmbeddingSet& db, const EmbeddingSet& queries);

/// Indices of the `top` nearest db rows for one query, nearest first.
std::vector<int64_t> nearest(const EmbeddingSet& db, std::span<const float> query,
                             int64_t top);

/// 8-bit RGB raster.
struct Raster {
  int64_t width = 0;
  int64_t height = 0;
  std::vector<uint8_t> rgb;

  /// Binary PPM (P6).
  void write_ppm(const std::filesystem::path& path) const;
};

/// One row per query: the query image, then its `top` nearest db images.
Raster retrieval_grid(const LabeledImages& db_images, const EmbeddingSet& db,
                      const LabeledImages& query_images,
                      const EmbeddingSet& queries, int64_t top = 5);

/// Text format:
///   # tbigan-embeddings m=<m> count=<count> source=<source>
///   <v_1> <TAB> ... <v_m> <TAB> <label>        (one row per vector, %.9g)
void export_embeddings(const EmbeddingSet& set, const std::filesystem::path& path);
EmbeddingSet import_embeddings(const std::filesystem::path& path);

struct EvalReport {
  std::string dataset;
  ModelTag model_tag = ModelTag::triplet_bigan;
  int64_t m = 0;
  int64_t n_per_class = 0;
  int64_t k = 9;
  double accuracy = 0.0;
  double map = 0.0;
  std::vector<double> per_class_ap;
  std::vector<int64_t> per_class_queries;
  int64_t queries_without_relevant = 0;

  /// map == query-weighted mean of per_class_ap, to 1e-9.
  bool consistent() const;
};

void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

enum class ReportMetric { accuracy, map };
enum class ReportAxis { m, n };

/// Aligned text tables with one row per model and one column per value of
/// `axis`; one table per value of the other axis. Accuracy is in percent.
std::string render_table(const std::vector<EvalReport>& reports,
                         ReportMetric metric, ReportAxis axis);
/// All four tables (metric x axis).
std::string render_tables(const std::vector<EvalReport>& reports);

}  // namespace tbigan
