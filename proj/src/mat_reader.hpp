// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace tbigan::detail {

/// A real numeric MAT array in column-major order.
struct MatArray {
  std::string name;
  uint32_t mx_class = 0;
  std::vector<int32_t> dims;
  bool stored_as_bytes = false;
  std::vector<uint8_t> bytes;   // when stored as (u)int8
  std::vector<double> values;   // any other storage type

  int64_t numel() const;
  double at(int64_t i) const;
};

std::map<std::string, MatArray> read_mat_file(const std::filesystem::path& path);

}  // namespace tbigan::detail
