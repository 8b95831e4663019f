/*
 * Copyright 2026 The roast Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "roast/errors.hpp"
#include "roast/store.hpp"

namespace roast {

// Layout: "ROAST1" | m:u64 | C:f64 | master_seed:u64 | m x f64, all little-endian.
inline constexpr std::array<char, 6> kSnapshotMagic = {'R', 'O', 'A', 'S', 'T', '1'};

namespace detail {

inline void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

template <class T>
std::vector<unsigned char> encode_snapshot(const CompressedStore<T>& store) {
  std::vector<unsigned char> out;
  out.reserve(kSnapshotMagic.size() + 24 + 8 * store.size());
  out.insert(out.end(), kSnapshotMagic.begin(), kSnapshotMagic.end());
  detail::put_u64(out, store.size());
  detail::put_u64(out, std::bit_cast<std::uint64_t>(store.init_scale()));
  detail::put_u64(out, store.master_seed());
  for (T v : store.values()) detail::put_u64(out, std::bit_cast<std::uint64_t>(static_cast<double>(v)));
  return out;
}

/// Decodes into a global-mode store with zero gradients.
template <class T = double>
CompressedStore<T> decode_snapshot(const std::vector<unsigned char>& bytes) {
  constexpr std::size_t header = kSnapshotMagic.size() + 24;
  if (bytes.size() < kSnapshotMagic.size()) throw FormatError("snapshot truncated before magic");
  if (std::memcmp(bytes.data(), kSnapshotMagic.data(), 5) != 0) throw FormatError("bad snapshot magic");
  if (bytes[5] != static_cast<unsigned char>(kSnapshotMagic[5]))
    throw FormatError("unsupported snapshot version '" + std::string(1, static_cast<char>(bytes[5])) + "'");
  if (bytes.size() < header) throw FormatError("snapshot truncated in header");
  const unsigned char* p = bytes.data() + kSnapshotMagic.size();
  const std::uint64_t m = detail::get_u64(p);
  const double c = std::bit_cast<double>(detail::get_u64(p + 8));
  const std::uint64_t seed = detail::get_u64(p + 16);
  if (m == 0) throw FormatError("snapshot declares an empty store");
  if ((bytes.size() - header) / 8 != m || (bytes.size() - header) % 8 != 0)
    throw FormatError("snapshot payload length does not match m");
  if (!(c > 0)) throw FormatError("snapshot has a non-positive init scale");

  CompressedStore<T> store(static_cast<std::size_t>(m), c, seed, SharingMode::global);
  std::vector<T> values(m);
  for (std::uint64_t i = 0; i < m; ++i)
    values[i] = static_cast<T>(std::bit_cast<double>(detail::get_u64(bytes.data() + header + 8 * i)));
  store.assign_values(values);
  return store;
}

template <class T>
void save_snapshot(const CompressedStore<T>& store, const std::filesystem::path& path) {
  const auto bytes = encode_snapshot(store);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for " + path.string());
}

template <class T = double>
CompressedStore<T> load_snapshot(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return decode_snapshot<T>(bytes);
}

}  // namespace roast
