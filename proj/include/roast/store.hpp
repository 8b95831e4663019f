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

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "roast/errors.hpp"
#include "roast/hashing.hpp"

namespace roast {

enum class SharingMode : std::uint8_t { global, local };
enum class ModuleKind : std::uint8_t { lookup, matmul };

struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
  bool operator==(const Segment&) const = default;
};

/// Tile/chunk geometry. chunk_len applies to lookups; z0 x z1 x z2 to matmuls, where z0
/// only tiles the input batch and never changes the weight mapping.
struct TileConfig {
  std::size_t chunk_len = 16;  // one 64-byte cache line of f32
  std::size_t z0 = 32;
  std::size_t z1 = 32;
  std::size_t z2 = 32;

  std::size_t tile_elems() const noexcept { return z1 * z2; }
  bool operator==(const TileConfig&) const = default;
};

/// One logical weight tensor's view into the shared store.
struct ModuleBinding {
  int module_id = 0;
  ModuleKind kind = ModuleKind::lookup;
  std::vector<std::size_t> logical_shape;
  std::size_t fan_in = 1;
  double lambda = 1.0;
  TileConfig tiles;
  std::uint64_t location_seed = 0;
  std::uint64_t sign_seed = 0;
  Segment segment;
  bool use_sign_hash = true;
  hashing::HashFamily location_hash;
  hashing::HashFamily sign_family;

  std::size_t param_count() const noexcept {
    return std::accumulate(logical_shape.begin(), logical_shape.end(), std::size_t{1}, std::multiplies<>());
  }
  // lookup: (rows, row_len); matmul: (H, O). A 1-D lookup shape is a single row.
  std::size_t rows() const noexcept { return logical_shape.size() == 2 ? logical_shape[0] : 1; }
  std::size_t cols() const noexcept { return logical_shape.back(); }
};

struct BindingOptions {
  bool use_sign_hash = true;
  int hash_degree = 4;
  /// Local mode only: explicit segment length; otherwise the next planned segment is used.
  std::size_t segment_len = 0;
};

/// Splits m into segments proportional to counts: floor(f_i * m) with the remainder on the last.
inline std::vector<std::size_t> proportional_segments(std::size_t m, std::span<const std::size_t> counts) {
  if (counts.empty()) throw ConfigError("proportional_segments: no counts");
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (total <= 0) throw ConfigError("proportional_segments: zero total count");
  std::vector<std::size_t> out(counts.size());
  std::size_t used = 0;
  for (std::size_t i = 0; i + 1 < counts.size(); ++i) {
    out[i] = static_cast<std::size_t>(std::floor(static_cast<double>(counts[i]) / total * static_cast<double>(m)));
    used += out[i];
  }
  if (used >= m) throw CapacityError("proportional_segments: memory too small for the layout");
  out.back() = m - used;
  for (auto len : out)
    if (len == 0) throw CapacityError("proportional_segments: a segment would be empty");
  return out;
}

/// The shared compressed parameter array M, its gradient buffer and the registry of segments.
template <class T = double>
class CompressedStore {
 public:
  using value_type = T;

  CompressedStore(std::size_t m, double init_scale, std::uint64_t master_seed, SharingMode mode,
                  std::vector<std::size_t> local_plan = {})
      : values_(m), grads_(m, T{0}), scale_(init_scale), seed_(master_seed), mode_(mode),
        plan_(std::move(local_plan)) {
    if (m == 0) throw GeometryError("store size must be positive");
    if (!(init_scale > 0)) throw ConfigError("init scale C must be positive");
    if (mode_ == SharingMode::global && !plan_.empty()) throw ConfigError("local plan given for a global store");
    std::size_t planned = 0;
    for (auto len : plan_) {
      if (len == 0) throw GeometryError("empty local segment in plan");
      planned += len;
    }
    if (planned > m) throw CapacityError("local plan exceeds store size");
    fill_uniform();
  }

  std::size_t size() const noexcept { return values_.size(); }
  double init_scale() const noexcept { return scale_; }
  std::uint64_t master_seed() const noexcept { return seed_; }
  SharingMode mode() const noexcept { return mode_; }

  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  std::span<T> grads() noexcept { return grads_; }
  std::span<const T> grads() const noexcept { return grads_; }

  const std::vector<Segment>& local_segments() const noexcept { return segments_; }

  void zero_grads() noexcept { std::fill(grads_.begin(), grads_.end(), T{0}); }

  ModuleBinding register_module(ModuleKind kind, std::vector<std::size_t> shape, std::size_t fan_in,
                                const TileConfig& tiles, const BindingOptions& options = {}) {
    validate_shape(kind, shape);
    if (fan_in == 0) throw ConfigError("fan_in must be positive");
    if (tiles.chunk_len == 0 || tiles.z0 == 0 || tiles.z1 == 0 || tiles.z2 == 0)
      throw GeometryError("tile sizes must be positive");

    Segment seg{0, size()};
    if (mode_ == SharingMode::local) {
      std::size_t len = options.segment_len;
      if (len == 0) {
        if (next_planned_ >= plan_.size()) throw CapacityError("local store has no planned segment left");
        len = plan_[next_planned_];
      }
      if (used_ + len > size()) throw CapacityError("local store capacity exhausted");
      seg = {used_, len};
    }

    const std::size_t need = kind == ModuleKind::lookup ? tiles.chunk_len : tiles.tile_elems();
    if (need > seg.length) throw GeometryError("tile does not fit the bound segment");
    if (kind == ModuleKind::matmul) {
      const auto gx = (shape[0] + tiles.z1 - 1) / tiles.z1;
      const auto gy = (shape[1] + tiles.z2 - 1) / tiles.z2;
      if (gx >= hashing::kMaxCoordinate || gy >= hashing::kMaxCoordinate)
        throw GeometryError("tile grid too large for coordinate hashing");
    }

    ModuleBinding b;
    b.module_id = next_module_id_;
    b.kind = kind;
    b.logical_shape = std::move(shape);
    b.fan_in = fan_in;
    b.lambda = scale_ / std::sqrt(static_cast<double>(fan_in));
    b.tiles = tiles;
    const auto module_seed = hashing::mix_seed(seed_, static_cast<std::uint64_t>(b.module_id));
    b.location_seed = hashing::mix_seed(module_seed, 0);
    b.sign_seed = hashing::mix_seed(module_seed, 1);
    b.segment = seg;
    b.use_sign_hash = options.use_sign_hash;
    b.location_hash = hashing::HashFamily(
        b.location_seed, options.hash_degree,
        kind == ModuleKind::lookup ? hashing::HashKind::chunk1d : hashing::HashKind::tile2d);
    b.sign_family = hashing::HashFamily(b.sign_seed, options.hash_degree, hashing::HashKind::sign);

    ++next_module_id_;
    if (mode_ == SharingMode::local) {
      segments_.push_back(seg);
      used_ += seg.length;
      if (options.segment_len == 0) ++next_planned_;
    }
    return b;
  }

  /// Replaces the contents; used by snapshot loading and tests.
  void assign_values(std::span<const T> v) {
    if (v.size() != size()) throw ShapeError("assign_values: size mismatch");
    std::copy(v.begin(), v.end(), values_.begin());
  }

 private:
  static void validate_shape(ModuleKind kind, const std::vector<std::size_t>& shape) {
    if (shape.empty()) throw ShapeError("logical shape is empty");
    for (auto d : shape)
      if (d == 0) throw ShapeError("logical shape has a zero dimension");
    if (kind == ModuleKind::matmul && shape.size() != 2) throw ShapeError("matmul binding needs a 2-D shape");
    if (kind == ModuleKind::lookup && shape.size() > 2) throw ShapeError("lookup binding needs a 1-D or 2-D shape");
  }

  // Uniform(-1/C, 1/C), open at both ends, from mt19937_64 (sequence fixed by the standard).
  void fill_uniform() {
    std::mt19937_64 gen(seed_);
    const double bound = 1.0 / scale_;
    for (auto& v : values_) {
      for (;;) {
        const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
        const T candidate = static_cast<T>((2.0 * u - 1.0) * bound);
        if (std::abs(static_cast<double>(candidate)) < bound) {
          v = candidate;
          break;
        }
      }
    }
  }

  std::vector<T> values_;
  std::vector<T> grads_;
  double scale_;
  std::uint64_t seed_;
  SharingMode mode_;
  std::vector<std::size_t> plan_;
  std::vector<Segment> segments_;
  std::size_t next_planned_ = 0;
  std::size_t used_ = 0;
  int next_module_id_ = 0;
};

template <class T = double>
CompressedStore<T> create_store(std::size_t m, double init_scale, std::uint64_t master_seed,
                                SharingMode mode = SharingMode::global, std::vector<std::size_t> local_plan = {}) {
  return CompressedStore<T>(m, init_scale, master_seed, mode, std::move(local_plan));
}

template <class T>
ModuleBinding register_module(CompressedStore<T>& store, ModuleKind kind, std::vector<std::size_t> shape,
                              std::size_t fan_in, const TileConfig& tiles, const BindingOptions& options = {}) {
  return store.register_module(kind, std::move(shape), fan_in, tiles, options);
}

template <class T>
void zero_grads(CompressedStore<T>& store) noexcept {
  store.zero_grads();
}

struct ExpressivityCount {
  double global_log_count = 0;  // n ln m
  double local_log_count = 0;   // sum n_i ln |M_i|
  double gap = 0;               // sum n_i ln(m / |M_i|), computed termwise so it is never negative
};

/// Natural-log count of distinct functions reachable by random mappings under global vs
/// local sharing, where m = sum of segment sizes.
inline ExpressivityCount expressivity_log_count(std::span<const std::size_t> param_counts,
                                                std::span<const std::size_t> segment_sizes) {
  if (param_counts.size() != segment_sizes.size() || param_counts.empty())
    throw ShapeError("expressivity_log_count: counts and segments differ in length");
  std::size_t m = 0;
  for (auto s : segment_sizes) {
    if (s == 0) throw GeometryError("expressivity_log_count: empty segment");
    m += s;
  }
  ExpressivityCount out;
  const double log_m = std::log(static_cast<double>(m));
  for (std::size_t i = 0; i < param_counts.size(); ++i) {
    const double n_i = static_cast<double>(param_counts[i]);
    out.global_log_count += n_i * log_m;
    out.local_log_count += n_i * std::log(static_cast<double>(segment_sizes[i]));
    out.gap += n_i * std::log(static_cast<double>(m) / static_cast<double>(segment_sizes[i]));
  }
  return out;
}

/// Store-level form. Local stores use their carved segments; a global store is compared
/// against the proportional local split it would otherwise get.
template <class T>
ExpressivityCount expressivity_log_count(const CompressedStore<T>& store, std::span<const ModuleBinding> bindings) {
  std::vector<std::size_t> counts;
  std::vector<std::size_t> sizes;
  for (const auto& b : bindings) {
    counts.push_back(b.param_count());
    sizes.push_back(b.segment.length);
  }
  if (store.mode() == SharingMode::global) sizes = proportional_segments(store.size(), counts);
  return expressivity_log_count(counts, sizes);
}

}  // namespace roast
