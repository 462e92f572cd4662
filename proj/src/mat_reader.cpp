// SPDX-License-Identifier: Apache-2.0
//
// Minimal MATLAB level-5 MAT-file reader: enough for numeric matrices stored
// either raw or inside zlib-compressed elements, which covers the published
// SVHN cropped-digit files.

#include "mat_reader.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <iterator>
#include <span>

#include "tbigan/error.hpp"

namespace tbigan::detail {
namespace {

enum MiType : uint32_t {
  kMiInt8 = 1,
  kMiUint8 = 2,
  kMiInt16 = 3,
  kMiUint16 = 4,
  kMiInt32 = 5,
  kMiUint32 = 6,
  kMiSingle = 7,
  kMiDouble = 9,
  kMiInt64 = 12,
  kMiUint64 = 13,
  kMiMatrix = 14,
  kMiCompressed = 15,
};

struct Element {
  uint32_t type = 0;
  std::span<const uint8_t> data;
  size_t next = 0;  // offset of the following element
};

template <typename T>
T load(const uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

Element read_element(std::span<const uint8_t> buf, size_t offset,
                     const std::string& file, bool pad) {
  if (offset + 8 > buf.size()) {
    throw DataError(file + ": truncated MAT element tag");
  }
  const auto first = load<uint32_t>(buf.data() + offset);
  Element e;
  if ((first >> 16) != 0) {
    // Small data element: type and size packed into the first word.
    e.type = first & 0xFFFF;
    const uint32_t n = first >> 16;
    if (n > 4) throw DataError(file + ": malformed small MAT element");
    e.data = buf.subspan(offset + 4, n);
    e.next = offset + 8;
    return e;
  }
  e.type = first;
  const uint64_t n = load<uint32_t>(buf.data() + offset + 4);
  if (offset + 8 + n > buf.size()) {
    throw DataError(file + ": truncated MAT element payload");
  }
  e.data = buf.subspan(offset + 8, n);
  uint64_t end = offset + 8 + n;
  if (pad) end = (end + 7) & ~uint64_t{7};
  e.next = static_cast<size_t>(end);
  return e;
}

std::vector<uint8_t> inflate_all(std::span<const uint8_t> in,
                                 const std::string& file) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw DataError(file + ": zlib init failed");
  std::vector<uint8_t> out;
  out.resize(std::max<size_t>(in.size() * 4, 4096));
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    if (zs.total_out == out.size()) out.resize(out.size() * 2);
    zs.next_out = out.data() + zs.total_out;
    zs.avail_out = static_cast<uInt>(out.size() - zs.total_out);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError(file + ": corrupt compressed MAT element");
    }
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw DataError(file + ": truncated compressed MAT element");
    }
  }
  out.resize(zs.total_out);
  inflateEnd(&zs);
  return out;
}

std::vector<double> to_doubles(const Element& e, const std::string& file) {
  const auto* p = e.data.data();
  const size_t n = e.data.size();
  std::vector<double> v;
  auto convert = [&]<typename T>() {
    v.resize(n / sizeof(T));
    for (size_t i = 0; i < v.size(); ++i) {
      v[i] = static_cast<double>(load<T>(p + i * sizeof(T)));
    }
  };
  switch (e.type) {
    case kMiInt8: convert.template operator()<int8_t>(); break;
    case kMiUint8: convert.template operator()<uint8_t>(); break;
    case kMiInt16: convert.template operator()<int16_t>(); break;
    case kMiUint16: convert.template operator()<uint16_t>(); break;
    case kMiInt32: convert.template operator()<int32_t>(); break;
    case kMiUint32: convert.template operator()<uint32_t>(); break;
    case kMiSingle: convert.template operator()<float>(); break;
    case kMiDouble: convert.template operator()<double>(); break;
    case kMiInt64: convert.template operator()<int64_t>(); break;
    case kMiUint64: convert.template operator()<uint64_t>(); break;
    default:
      throw DataError(file + ": unsupported MAT numeric storage type " +
                      std::to_string(e.type));
  }
  return v;
}

MatArray parse_matrix(std::span<const uint8_t> body, const std::string& file) {
  MatArray a;
  size_t off = 0;
  const Element flags = read_element(body, off, file, true);
  if (flags.data.size() < 8) throw DataError(file + ": malformed array flags");
  a.mx_class = load<uint32_t>(flags.data.data()) & 0xFF;
  const bool complex = (load<uint32_t>(flags.data.data()) & 0x0800) != 0;
  off = flags.next;

  const Element dims = read_element(body, off, file, true);
  for (size_t i = 0; i + 4 <= dims.data.size(); i += 4) {
    a.dims.push_back(load<int32_t>(dims.data.data() + i));
  }
  off = dims.next;

  const Element name = read_element(body, off, file, true);
  a.name.assign(reinterpret_cast<const char*>(name.data.data()),
                name.data.size());
  off = name.next;

  if (complex) throw DataError(file + ": complex MAT arrays are unsupported");
  const Element real = read_element(body, off, file, true);
  if (real.type == kMiUint8 || real.type == kMiInt8) {
    a.bytes.assign(real.data.begin(), real.data.end());
    a.stored_as_bytes = true;
  } else {
    a.values = to_doubles(real, file);
  }
  return a;
}

}  // namespace

int64_t MatArray::numel() const {
  int64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

double MatArray::at(int64_t i) const {
  return stored_as_bytes ? static_cast<double>(bytes[static_cast<size_t>(i)])
                         : values[static_cast<size_t>(i)];
}

std::map<std::string, MatArray> read_mat_file(
    const std::filesystem::path& path) {
  const std::string file = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(file + ": cannot open MAT file");
  std::vector<uint8_t> buf((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
  if (buf.size() < 128) throw DataError(file + ": not a MAT v5 file");
  if (buf[126] != 'I' || buf[127] != 'M') {
    throw DataError(file + ": unsupported MAT byte order or version");
  }

  std::map<std::string, MatArray> out;
  const std::span<const uint8_t> all(buf);
  size_t off = 128;
  while (off < buf.size()) {
    const Element e = read_element(all, off, file, true);
    if (e.type == kMiCompressed) {
      const auto raw = inflate_all(e.data, file);
      const Element inner = read_element(raw, 0, file, false);
      if (inner.type == kMiMatrix) {
        auto m = parse_matrix(inner.data, file);
        out.emplace(m.name, std::move(m));
      }
      // Compressed elements are not padded to 8 bytes.
      off = off + 8 + e.data.size();
    } else {
      if (e.type == kMiMatrix && !e.data.empty()) {
        auto m = parse_matrix(e.data, file);
        out.emplace(m.name, std::move(m));
      }
      off = e.next;
    }
  }
  return out;
}

}  // namespace tbigan::detail
