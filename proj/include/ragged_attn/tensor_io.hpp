// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary tensor files.
//
//   RGT1: "RGT1" | u32 rank | rank x u64 dims | f32 payload (row-major)
//   RGI1: "RGI1" | u32 rank | rank x u64 dims | i64 payload (row-major)
//
// All multi-byte fields are little-endian.
//
// Named tensor bundles (model weights) reuse the RGT1 magic with the rank
// field set to kBundleMarker:
//
//   "RGT1" | u32 0xFFFFFFFF | u64 manifest_bytes | manifest JSON | f32 payload
//
// The manifest is {"tensors": [{"name", "shape", "offset"}, ...]} where
// offset counts f32 elements from the start of the payload.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "ragged_attn/core.hpp"

namespace ragged_attn {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io_detail {

inline constexpr std::uint32_t kBundleMarker = 0xFFFFFFFFu;
inline constexpr std::uint32_t kMaxRank = 16;

template <typename T>
T byteswap_if_needed(T v) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return v;
  } else {
    std::array<unsigned char, sizeof(T)> b;
    std::memcpy(b.data(), &v, sizeof(T));
    std::reverse(b.begin(), b.end());
    std::memcpy(&v, b.data(), sizeof(T));
    return v;
  }
}

template <typename T>
void put(std::ostream& os, T v) {
  v = byteswap_if_needed(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError(std::string("truncated tensor file while reading ") + what);
  return byteswap_if_needed(v);
}

template <typename T>
void put_payload(std::ostream& os, std::span<const T> data) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size_bytes()));
  } else {
    for (T v : data) put(os, v);
  }
}

template <typename T>
void get_payload(std::istream& is, std::span<T> out) {
  is.read(reinterpret_cast<char*>(out.data()),
          static_cast<std::streamsize>(out.size_bytes()));
  if (!is) throw IoError("truncated tensor payload");
  if constexpr (std::endian::native != std::endian::little) {
    for (T& v : out) v = byteswap_if_needed(v);
  }
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::array<char, 4> m{};
  is.read(m.data(), 4);
  if (!is) throw IoError("truncated tensor file: missing magic");
  if (std::string_view(m.data(), 4) != magic) {
    throw IoError("bad magic '" + std::string(m.data(), 4) + "', expected '" +
                  std::string(magic) + "'");
  }
}

template <typename T>
void write_tensor(std::ostream& os, std::string_view magic, const Tensor<T>& t) {
  os.write(magic.data(), 4);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
  put_payload<T>(os, t.data());
  if (!os) throw IoError("failed writing tensor");
}

template <typename T>
Tensor<T> read_tensor(std::istream& is, std::string_view magic) {
  expect_magic(is, magic);
  auto rank = get<std::uint32_t>(is, "rank");
  if (rank > kMaxRank) {
    throw IoError("unsupported tensor rank " + std::to_string(rank));
  }
  Shape shape(rank);
  for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(is, "dims"));
  Tensor<T> t(shape);
  get_payload<T>(is, t.data());
  return t;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "' for reading");
  return is;
}

}  // namespace io_detail

inline void write_rgt1(std::ostream& os, const FloatTensor& t) {
  io_detail::write_tensor(os, "RGT1", t);
}
inline FloatTensor read_rgt1(std::istream& is) {
  return io_detail::read_tensor<float>(is, "RGT1");
}
inline void write_rgi1(std::ostream& os, const Tensor<std::int64_t>& t) {
  io_detail::write_tensor(os, "RGI1", t);
}
inline Tensor<std::int64_t> read_rgi1(std::istream& is) {
  return io_detail::read_tensor<std::int64_t>(is, "RGI1");
}

inline void save_rgt1(const std::string& path, const FloatTensor& t) {
  auto os = io_detail::open_out(path);
  write_rgt1(os, t);
}
inline FloatTensor load_rgt1(const std::string& path) {
  auto is = io_detail::open_in(path);
  return read_rgt1(is);
}
inline void save_rgi1(const std::string& path, const Tensor<std::int64_t>& t) {
  auto os = io_detail::open_out(path);
  write_rgi1(os, t);
}
inline Tensor<std::int64_t> load_rgi1(const std::string& path) {
  auto is = io_detail::open_in(path);
  return read_rgi1(is);
}

using NamedTensors = std::vector<std::pair<std::string, FloatTensor>>;

inline void write_bundle(std::ostream& os, const NamedTensors& tensors) {
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    entries.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size();
  }
  const std::string manifest = nlohmann::json{{"tensors", entries}}.dump();
  os.write("RGT1", 4);
  io_detail::put<std::uint32_t>(os, io_detail::kBundleMarker);
  io_detail::put<std::uint64_t>(os, manifest.size());
  os.write(manifest.data(), static_cast<std::streamsize>(manifest.size()));
  for (const auto& [name, t] : tensors) io_detail::put_payload<float>(os, t.data());
  if (!os) throw IoError("failed writing tensor bundle");
}

inline NamedTensors read_bundle(std::istream& is) {
  io_detail::expect_magic(is, "RGT1");
  if (io_detail::get<std::uint32_t>(is, "marker") != io_detail::kBundleMarker) {
    throw IoError("RGT1 file is a plain tensor, not a named bundle");
  }
  const auto len = io_detail::get<std::uint64_t>(is, "manifest length");
  std::string manifest(static_cast<std::size_t>(len), '\0');
  is.read(manifest.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("truncated bundle manifest");

  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(manifest);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("bad bundle manifest: ") + e.what());
  }

  NamedTensors out;
  std::size_t expected_offset = 0;
  for (const auto& entry : doc.at("tensors")) {
    Shape shape = entry.at("shape").get<Shape>();
    if (entry.at("offset").get<std::size_t>() != expected_offset) {
      throw IoError("bundle manifest offsets are not contiguous at '" +
                    entry.at("name").get<std::string>() + "'");
    }
    FloatTensor t(shape);
    io_detail::get_payload<float>(is, t.data());
    expected_offset += t.size();
    out.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

inline void save_bundle(const std::string& path, const NamedTensors& tensors) {
  auto os = io_detail::open_out(path);
  write_bundle(os, tensors);
}
inline NamedTensors load_bundle(const std::string& path) {
  auto is = io_detail::open_in(path);
  return read_bundle(is);
}

}  // namespace ragged_attn
