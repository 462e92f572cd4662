// SPDX-License-Identifier: Apache-2.0
//
// Brute-force reference implementations used only by tests.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// All db indices ordered by (distance, index).
inline std::vector<int64_t> ranking(const Matrix& db, const std::vector<double>& q) {
  std::vector<std::pair<double, int64_t>> all;
  for (size_t i = 0; i < db.size(); ++i) {
    all.emplace_back(distance(db[i], q), static_cast<int64_t>(i));
  }
  std::sort(all.begin(), all.end());
  std::vector<int64_t> out;
  for (const auto& p : all) out.push_back(p.second);
  return out;
}

inline int64_t knn(const Matrix& db, const std::vector<int64_t>& labels,
                   const std::vector<double>& q, int64_t k) {
  const auto order = ranking(db, q);
  const auto kk = std::min<size_t>(static_cast<size_t>(k), order.size());
  std::map<int64_t, int64_t> zeros;
  std::map<int64_t, double> votes;
  for (size_t r = 0; r < kk; ++r) {
    const auto i = static_cast<size_t>(order[r]);
    const double d = distance(db[i], q);
    if (d == 0.0) {
      ++zeros[labels[i]];
    } else {
      votes[labels[i]] += 1.0 / d;
    }
  }
  int64_t best = -1;
  if (!zeros.empty()) {
    int64_t most = 0;
    for (const auto& [c, n] : zeros) {
      if (n > most) most = n, best = c;
    }
    return best;
  }
  double top = -1.0;
  for (const auto& [c, v] : votes) {
    if (v > top) top = v, best = c;
  }
  return best;
}

/// Textbook AP: mean over relevant ranks i of (#relevant in 1..i) / i.
inline double average_precision(const std::vector<uint8_t>& rel) {
  double sum = 0.0;
  int64_t relevant = 0;
  for (size_t i = 0; i < rel.size(); ++i) {
    if (!rel[i]) continue;
    ++relevant;
    int64_t hits = 0;
    for (size_t j = 0; j <= i; ++j) hits += rel[j] ? 1 : 0;
    sum += static_cast<double>(hits) / static_cast<double>(i + 1);
  }
  return relevant == 0 ? 0.0 : sum / static_cast<double>(relevant);
}

inline double mean_average_precision(const Matrix& db, const std::vector<int64_t>& db_labels,
                                     const Matrix& queries,
                                     const std::vector<int64_t>& q_labels) {
  double total = 0.0;
  for (size_t q = 0; q < queries.size(); ++q) {
    std::vector<uint8_t> rel;
    for (auto i : ranking(db, queries[q])) {
      rel.push_back(db_labels[static_cast<size_t>(i)] == q_labels[q] ? 1 : 0);
    }
    total += average_precision(rel);
  }
  return total / static_cast<double>(queries.size());
}

/// For each point, the index of the closest point of another class by
/// squared Euclidean distance; ties go to the lowest index.
inline std::vector<int64_t> hard_negatives(const Matrix& codes,
                                           const std::vector<int64_t>& labels) {
  std::vector<int64_t> out(codes.size(), -1);
  for (size_t i = 0; i < codes.size(); ++i) {
    double best = INFINITY;
    for (size_t j = 0; j < codes.size(); ++j) {
      if (labels[j] == labels[i]) continue;
      double s = 0.0;
      for (size_t k = 0; k < codes[i].size(); ++k) {
        s += (codes[i][k] - codes[j][k]) * (codes[i][k] - codes[j][k]);
      }
      if (s < best) best = s, out[i] = static_cast<int64_t>(j);
    }
  }
  return out;
}

/// Central finite difference of f at x along one coordinate.
template <typename F>
double central_difference(F&& f, double& coordinate, double h) {
  const double saved = coordinate;
  coordinate = saved + h;
  const double up = f();
  coordinate = saved - h;
  const double down = f();
  coordinate = saved;
  return (up - down) / (2.0 * h);
}

}  // namespace oracle
