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
#include <cstddef>
#include <cstdint>

#include "roast/errors.hpp"

namespace roast::hashing {

inline constexpr std::uint64_t kMersenne61 = (std::uint64_t{1} << 61) - 1;

/// Tile coordinates are packed into one key; each must stay below this bound.
inline constexpr std::uint64_t kMaxCoordinate = std::uint64_t{1} << 30;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Fixed mixing function used to derive every dependent seed from a parent.
constexpr std::uint64_t mix_seed(std::uint64_t parent, std::uint64_t child) noexcept {
  return splitmix64(parent ^ splitmix64(child * 0xd1b54a32d192ed03ULL + 0x8cb92ba72f3d8dd7ULL));
}

class SplitMix64 {
 public:
  explicit constexpr SplitMix64(std::uint64_t seed) noexcept : state_(seed) {}
  constexpr std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

namespace detail {

constexpr std::uint64_t mod61(unsigned __int128 v) noexcept {
  std::uint64_t lo = static_cast<std::uint64_t>(v & kMersenne61);
  std::uint64_t hi = static_cast<std::uint64_t>(v >> 61);
  std::uint64_t r = lo + hi;
  // valid for v < 2^124: two folds bring the value below 2 * (2^61 - 1)
  r = (r & kMersenne61) + (r >> 61);
  return r >= kMersenne61 ? r - kMersenne61 : r;
}

constexpr std::uint64_t mulmod61(std::uint64_t a, std::uint64_t b) noexcept {
  return mod61(static_cast<unsigned __int128>(a) * b);
}

}  // namespace detail

enum class HashKind : std::uint8_t { chunk1d, tile2d, sign };

/// A seeded member of a universal family.
///
/// degree 4: cubic polynomial over GF(2^61 - 1), 4-wise independent. Used by the
/// estimator lab and for sign hashes whose second moments must match theory.
/// degree 2: multiply-add-shift on 128-bit state, 2-universal and cheaper.
/// Coefficients are drawn once from the seed, so evaluation is a pure function of
/// (seed, key).
class HashFamily {
 public:
  HashFamily() : HashFamily(0, 4, HashKind::chunk1d) {}

  HashFamily(std::uint64_t seed, int degree, HashKind kind) : seed_(seed), degree_(degree), kind_(kind) {
    if (degree != 2 && degree != 4) throw ConfigError("hash degree must be 2 or 4");
    SplitMix64 gen(seed);
    if (degree == 4) {
      for (auto& c : coeffs_) {
        do {
          c = gen.next() >> 3;
        } while (c >= kMersenne61);
      }
    } else {
      for (auto& c : coeffs_) c = gen.next();
      coeffs_[0] |= 1;  // odd multiplier
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }
  int degree() const noexcept { return degree_; }
  HashKind kind() const noexcept { return kind_; }

  /// Unreduced hash value: in [0, 2^61 - 1) for degree 4, full 64 bits for degree 2.
  std::uint64_t raw(std::uint64_t key) const noexcept {
    if (degree_ == 4) {
      const std::uint64_t x = key >= kMersenne61 ? key % kMersenne61 : key;
      std::uint64_t h = coeffs_[3];
      h = detail::mulmod61(h, x) + coeffs_[2];
      h = detail::mulmod61(h, x) + coeffs_[1];
      h = detail::mulmod61(h, x) + coeffs_[0];
      return h >= kMersenne61 ? h - kMersenne61 : h;
    }
    const unsigned __int128 a = (static_cast<unsigned __int128>(coeffs_[1]) << 64) | coeffs_[0];
    const unsigned __int128 b = (static_cast<unsigned __int128>(coeffs_[3]) << 64) | coeffs_[2];
    return static_cast<std::uint64_t>((a * key + b) >> 64);
  }

  /// One pseudo-random bit per key.
  bool bit(std::uint64_t key) const noexcept {
    const std::uint64_t v = raw(key);
    return degree_ == 4 ? (v & 1U) != 0 : (v >> 63) != 0;
  }

 private:
  std::uint64_t seed_;
  int degree_;
  HashKind kind_;
  std::array<std::uint64_t, 4> coeffs_{};
};

inline std::uint64_t pack_pair(std::uint64_t x, std::uint64_t y) {
  if (x >= kMaxCoordinate || y >= kMaxCoordinate) throw GeometryError("tile coordinate exceeds 2^30");
  return (x << 31) | y;
}

/// Offset of a chunk of `chunk_len` elements inside a store of `store_len`;
/// always in [0, store_len - chunk_len].
inline std::size_t hash_chunk(const HashFamily& family, std::uint64_t chunk_index, std::size_t store_len,
                              std::size_t chunk_len) {
  if (family.kind() != HashKind::chunk1d) throw ConfigError("hash_chunk requires a chunk1d family");
  if (chunk_len == 0 || chunk_len > store_len) throw GeometryError("chunk does not fit the store");
  const std::uint64_t range = store_len - chunk_len + 1;
  return static_cast<std::size_t>(family.raw(chunk_index) % range);
}

/// Offset of a row-major tile of `tile_elems` elements keyed on tile coordinates (x, y).
inline std::size_t hash_tile(const HashFamily& family, std::uint64_t x, std::uint64_t y, std::size_t store_len,
                             std::size_t tile_elems) {
  if (family.kind() != HashKind::tile2d) throw ConfigError("hash_tile requires a tile2d family");
  if (tile_elems == 0 || tile_elems > store_len) throw GeometryError("tile does not fit the store");
  const std::uint64_t range = store_len - tile_elems + 1;
  return static_cast<std::size_t>(family.raw(pack_pair(x, y)) % range);
}

inline int sign_hash(const HashFamily& family, std::uint64_t coord) {
  if (family.kind() != HashKind::sign) throw ConfigError("sign_hash requires a sign family");
  return family.bit(coord) ? 1 : -1;
}

inline int sign_hash(const HashFamily& family, std::uint64_t x, std::uint64_t y) {
  if (family.kind() != HashKind::sign) throw ConfigError("sign_hash requires a sign family");
  return family.bit(pack_pair(x, y)) ? 1 : -1;
}

}  // namespace roast::hashing
