// SPDX-License-Identifier: Apache-2.0

#include "tbigan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <torch/torch.h>

#include "tbigan/error.hpp"

namespace tbigan {

namespace fs = std::filesystem;

std::string_view to_string(EmbeddingSource s) {
  switch (s) {
    case EmbeddingSource::train_labeled: return "train-labeled";
    case EmbeddingSource::validation: return "validation";
    case EmbeddingSource::test: return "test";
  }
  return "?";
}

EmbeddingSource parse_embedding_source(std::string_view s) {
  if (s == "train-labeled") return EmbeddingSource::train_labeled;
  if (s == "validation") return EmbeddingSource::validation;
  if (s == "test") return EmbeddingSource::test;
  throw UsageError("unknown embedding source '" + std::string(s) + "'");
}

KnnWeighting parse_knn_weighting(std::string_view s) {
  if (s == "inverse-distance") return KnnWeighting::inverse_distance;
  if (s == "uniform") return KnnWeighting::uniform;
  throw UsageError("unknown knn weighting '" + std::string(s) +
                   "' (expected inverse-distance or uniform)");
}

std::string_view to_string(KnnWeighting w) {
  return w == KnnWeighting::uniform ? "uniform" : "inverse-distance";
}

EmbeddingSet embed(ModelParams& params, const LabeledImages& images,
                   int64_t batch_size, EmbeddingSource source) {
  if (batch_size < 1) throw ContractError("embed batch_size must be positive");
  torch::NoGradGuard no_grad;
  EmbeddingSet out;
  out.m = params.config.latent_dim;
  out.labels = images.labels;
  out.source = source;
  out.deterministic = true;
  out.vectors.reserve(static_cast<size_t>(images.size() * out.m));
  for (int64_t start = 0; start < images.size(); start += batch_size) {
    const auto n = std::min(batch_size, images.size() - start);
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), start);
    auto code = encode(params, images.batch(idx, params.dtype()),
                       EncodeMode::deterministic)
                    .z.to(torch::kFloat32)
                    .contiguous();
    const float* p = code.data_ptr<float>();
    out.vectors.insert(out.vectors.end(), p, p + code.numel());
  }
  for (auto v : out.vectors) {
    if (!std::isfinite(v)) throw NumericalError("non-finite embedding");
  }
  return out;
}

namespace {

void check_pair(const EmbeddingSet& db, const EmbeddingSet& queries) {
  if (db.count() == 0) throw ContractError("embedding database is empty");
  if (db.m != queries.m) {
    throw ContractError("embedding width mismatch: db m=" + std::to_string(db.m) +
                        ", queries m=" + std::to_string(queries.m));
  }
}

double distance(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

std::vector<double> distances_to(const EmbeddingSet& db, std::span<const float> q) {
  std::vector<double> d(static_cast<size_t>(db.count()));
  for (int64_t i = 0; i < db.count(); ++i) d[static_cast<size_t>(i)] = distance(db.row(i), q);
  return d;
}

std::vector<int64_t> full_ranking(const std::vector<double>& d) {
  std::vector<int64_t> order(d.size());
  std::iota(order.begin(), order.end(), int64_t{0});
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return d[static_cast<size_t>(a)] < d[static_cast<size_t>(b)];
  });
  return order;
}

}  // namespace

std::vector<int64_t> nearest(const EmbeddingSet& db, std::span<const float> query,
                             int64_t top) {
  if (top < 1 || top > db.count()) {
    throw ContractError("top must lie in [1, db count]");
  }
  const auto d = distances_to(db, query);
  std::vector<int64_t> order(d.size());
  std::iota(order.begin(), order.end(), int64_t{0});
  std::partial_sort(order.begin(), order.begin() + top, order.end(),
                    [&](int64_t a, int64_t b) {
                      const auto da = d[static_cast<size_t>(a)];
                      const auto db_ = d[static_cast<size_t>(b)];
                      return da < db_ || (da == db_ && a < b);
                    });
  order.resize(static_cast<size_t>(top));
  return order;
}

std::vector<int64_t> knn_classify(const EmbeddingSet& db,
                                  const EmbeddingSet& queries, int64_t k,
                                  KnnWeighting weighting) {
  check_pair(db, queries);
  if (k < 1 || k > db.count()) {
    throw ContractError("k = " + std::to_string(k) + " must lie in [1, " +
                        std::to_string(db.count()) + "]");
  }
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(queries.count()));
  for (int64_t q = 0; q < queries.count(); ++q) {
    const auto row = queries.row(q);
    const auto neighbours = nearest(db, row, k);
    std::map<int64_t, double> votes;
    std::map<int64_t, int64_t> exact;
    for (auto i : neighbours) {
      const double d = distance(db.row(i), row);
      const auto cls = db.labels[static_cast<size_t>(i)];
      if (d == 0.0) {
        ++exact[cls];
      } else {
        votes[cls] += weighting == KnnWeighting::uniform ? 1.0 : 1.0 / d;
      }
    }
    int64_t best = -1;
    if (!exact.empty()) {
      int64_t best_count = 0;
      for (auto [cls, n] : exact) {
        if (n > best_count) best = cls, best_count = n;
      }
    } else {
      double best_w = -1.0;
      for (auto [cls, w] : votes) {
        if (w > best_w) best = cls, best_w = w;
      }
    }
    out.push_back(best);
  }
  return out;
}

double accuracy(std::span<const int64_t> predicted, std::span<const int64_t> truth) {
  if (predicted.size() != truth.size()) {
    throw ContractError("prediction and label counts differ");
  }
  if (predicted.empty()) return 0.0;
  int64_t hits = 0;
  for (size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double average_precision(std::span<const uint8_t> relevance, int64_t* no_relevant) {
  double sum = 0.0;
  int64_t hits = 0;
  for (size_t i = 0; i < relevance.size(); ++i) {
    if (relevance[i]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(i + 1);
    }
  }
  if (hits == 0) {
    if (no_relevant) ++*no_relevant;
    return 0.0;
  }
  return sum / static_cast<double>(hits);
}

RetrievalResult retrieval_map(const EmbeddingSet& db, const EmbeddingSet& queries) {
  check_pair(db, queries);
  if (queries.count() == 0) throw ContractError("no retrieval queries");
  RetrievalResult out;
  std::map<int64_t, double> class_sum;
  double total = 0.0;
  std::vector<uint8_t> rel(static_cast<size_t>(db.count()));
  for (int64_t q = 0; q < queries.count(); ++q) {
    const auto cls = queries.labels[static_cast<size_t>(q)];
    const auto order = full_ranking(distances_to(db, queries.row(q)));
    for (size_t r = 0; r < order.size(); ++r) {
      rel[r] = db.labels[static_cast<size_t>(order[r])] == cls;
    }
    const double ap = average_precision(rel, &out.queries_without_relevant);
    total += ap;
    class_sum[cls] += ap;
    ++out.per_class_queries[cls];
  }
  out.map = total / static_cast<double>(queries.count());
  for (auto [cls, s] : class_sum) {
    out.per_class_ap[cls] = s / static_cast<double>(out.per_class_queries[cls]);
  }
  return out;
}

void Raster::write_ppm(const fs::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P6\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()),
            static_cast<std::streamsize>(rgb.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Raster retrieval_grid(const LabeledImages& db_images, const EmbeddingSet& db,
                      const LabeledImages& query_images,
                      const EmbeddingSet& queries, int64_t top) {
  check_pair(db, queries);
  if (db_images.size() != db.count() || query_images.size() != queries.count()) {
    throw ContractError("retrieval grid images and embeddings are not aligned");
  }
  const auto shape = db_images.shape();
  constexpr int64_t kPad = 2;
  const int64_t cell_w = shape.width + kPad;
  const int64_t cell_h = shape.height + kPad;
  Raster r;
  r.width = (top + 1) * cell_w + kPad;
  r.height = queries.count() * cell_h + kPad;
  r.rgb.assign(static_cast<size_t>(r.width * r.height * 3), 255);

  auto blit = [&](const LabeledImages& src, int64_t index, int64_t row, int64_t col) {
    auto img = src.images[index].contiguous();
    const uint8_t* p = img.data_ptr<uint8_t>();
    const int64_t c = shape.channels;
    const int64_t x0 = kPad + col * cell_w;
    const int64_t y0 = kPad + row * cell_h;
    for (int64_t y = 0; y < shape.height; ++y) {
      for (int64_t x = 0; x < shape.width; ++x) {
        for (int64_t ch = 0; ch < 3; ++ch) {
          const int64_t sc = c == 1 ? 0 : std::min(ch, c - 1);
          r.rgb[static_cast<size_t>(((y0 + y) * r.width + (x0 + x)) * 3 + ch)] =
              p[(sc * shape.height + y) * shape.width + x];
        }
      }
    }
  };

  for (int64_t q = 0; q < queries.count(); ++q) {
    blit(query_images, q, q, 0);
    const auto nn = nearest(db, queries.row(q), top);
    for (int64_t j = 0; j < top; ++j) blit(db_images, nn[static_cast<size_t>(j)], q, j + 1);
  }
  return r;
}

void export_embeddings(const EmbeddingSet& set, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# tbigan-embeddings m=" << set.m << " count=" << set.count()
      << " source=" << to_string(set.source) << '\n';
  char buf[64];
  for (int64_t i = 0; i < set.count(); ++i) {
    for (auto v : set.row(i)) {
      std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
      out << buf << '\t';
    }
    out << set.labels[static_cast<size_t>(i)] << '\n';
  }
  if (!out) throw DataError("write failed: " + path.string());
}

EmbeddingSet import_embeddings(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string header;
  std::getline(in, header);
  EmbeddingSet set;
  int64_t count = -1;
  std::istringstream hs(header);
  std::string token;
  hs >> token >> token;
  if (token != "tbigan-embeddings") {
    throw DataError(path.string() + ": not an embedding export");
  }
  while (hs >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) continue;
    const auto key = token.substr(0, eq);
    const auto value = token.substr(eq + 1);
    if (key == "m") set.m = std::stoll(value);
    if (key == "count") count = std::stoll(value);
    if (key == "source") set.source = parse_embedding_source(value);
  }
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    for (int64_t k = 0; k < set.m; ++k) {
      float v;
      if (!(ls >> v)) throw DataError(path.string() + ": short embedding row");
      set.vectors.push_back(v);
    }
    int64_t label;
    if (!(ls >> label)) throw DataError(path.string() + ": missing label");
    set.labels.push_back(label);
  }
  if (count != set.count()) {
    throw DataError(path.string() + ": header count does not match rows");
  }
  return set;
}

bool EvalReport::consistent() const {
  if (per_class_ap.size() != per_class_queries.size()) return false;
  double sum = 0.0;
  int64_t n = 0;
  for (size_t c = 0; c < per_class_ap.size(); ++c) {
    sum += per_class_ap[c] * static_cast<double>(per_class_queries[c]);
    n += per_class_queries[c];
  }
  return n > 0 && std::abs(sum / static_cast<double>(n) - map) <= 1e-9;
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"dataset", r.dataset},
                     {"model", std::string(to_string(r.model_tag))},
                     {"m", r.m},
                     {"n_per_class", r.n_per_class},
                     {"k", r.k},
                     {"accuracy", r.accuracy},
                     {"map", r.map},
                     {"per_class_ap", r.per_class_ap},
                     {"per_class_queries", r.per_class_queries},
                     {"queries_without_relevant", r.queries_without_relevant}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("dataset").get_to(r.dataset);
  r.model_tag = parse_model_tag(j.at("model").get<std::string>());
  j.at("m").get_to(r.m);
  j.at("n_per_class").get_to(r.n_per_class);
  j.at("k").get_to(r.k);
  j.at("accuracy").get_to(r.accuracy);
  j.at("map").get_to(r.map);
  j.at("per_class_ap").get_to(r.per_class_ap);
  j.at("per_class_queries").get_to(r.per_class_queries);
  r.queries_without_relevant = j.value("queries_without_relevant", int64_t{0});
}

namespace {

std::string pad_left(const std::string& s, size_t w) {
  return s.size() >= w ? s : std::string(w - s.size(), ' ') + s;
}
std::string pad_right(const std::string& s, size_t w) {
  return s.size() >= w ? s : s + std::string(w - s.size(), ' ');
}

std::string format_metric(double v, ReportMetric metric) {
  char buf[32];
  if (metric == ReportMetric::accuracy) {
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  } else {
    std::snprintf(buf, sizeof buf, "%.4f", v);
  }
  return buf;
}

}  // namespace

std::string render_table(const std::vector<EvalReport>& reports,
                         ReportMetric metric, ReportAxis axis) {
  auto col_of = [&](const EvalReport& r) { return axis == ReportAxis::m ? r.m : r.n_per_class; };
  auto fixed_of = [&](const EvalReport& r) { return axis == ReportAxis::m ? r.n_per_class : r.m; };
  const char* col_name = axis == ReportAxis::m ? "m" : "n";
  const char* fixed_name = axis == ReportAxis::m ? "n" : "m";

  std::set<int64_t> fixed_values;
  for (const auto& r : reports) fixed_values.insert(fixed_of(r));

  std::ostringstream out;
  for (auto fixed : fixed_values) {
    std::set<int64_t> cols;
    std::set<ModelTag> models;
    std::map<std::pair<ModelTag, int64_t>, double> cells;
    std::string dataset;
    for (const auto& r : reports) {
      if (fixed_of(r) != fixed) continue;
      cols.insert(col_of(r));
      models.insert(r.model_tag);
      cells[{r.model_tag, col_of(r)}] = metric == ReportMetric::accuracy ? r.accuracy : r.map;
      dataset = r.dataset;
    }
    out << (metric == ReportMetric::accuracy ? "Classification accuracy (%)"
                                             : "Image retrieval mAP")
        << " on " << dataset << " by " << col_name << ", " << fixed_name
        << " = " << fixed << '\n';
    constexpr size_t kFirst = 15;
    constexpr size_t kCell = 9;
    out << pad_right("Model", kFirst);
    for (auto c : cols) {
      out << " | " << pad_left(std::string(col_name) + "=" + std::to_string(c), kCell);
    }
    out << '\n' << std::string(kFirst, '-');
    for (size_t i = 0; i < cols.size(); ++i) out << "-+-" << std::string(kCell, '-');
    out << '\n';
    for (auto model : {ModelTag::triplet, ModelTag::bigan, ModelTag::triplet_bigan}) {
      if (!models.count(model)) continue;
      out << pad_right(std::string(display_name(model)), kFirst);
      for (auto c : cols) {
        auto it = cells.find({model, c});
        out << " | "
            << pad_left(it == cells.end() ? "-" : format_metric(it->second, metric), kCell);
      }
      out << '\n';
    }
    out << '\n';
  }
  return out.str();
}

std::string render_tables(const std::vector<EvalReport>& reports) {
  std::string s;
  for (auto metric : {ReportMetric::accuracy, ReportMetric::map}) {
    for (auto axis : {ReportAxis::m, ReportAxis::n}) {
      s += render_table(reports, metric, axis);
    }
  }
  return s;
}

}  // namespace tbigan
