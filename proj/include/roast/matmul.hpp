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

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "roast/errors.hpp"
#include "roast/hashing.hpp"
#include "roast/lookup.hpp"
#include "roast/matrix.hpp"
#include "roast/parallel.hpp"
#include "roast/store.hpp"
#include "roast/timing.hpp"

namespace roast {

/// A matmul binding with its derived tile grid. W is H x O and the op computes X * W.
struct MatmulPlan {
  ModuleBinding binding;
  std::size_t grid_rows = 0;  // ceil(H / Z1)
  std::size_t grid_cols = 0;  // ceil(O / Z2)

  std::size_t in_dim() const noexcept { return binding.logical_shape[0]; }
  std::size_t out_dim() const noexcept { return binding.logical_shape[1]; }
  const TileConfig& tiles() const noexcept { return binding.tiles; }
};

inline MatmulPlan make_plan(const ModuleBinding& binding) {
  if (binding.kind != ModuleKind::matmul) throw ConfigError("make_plan: binding is not a matmul binding");
  MatmulPlan p{binding, 0, 0};
  p.grid_rows = (p.in_dim() + binding.tiles.z1 - 1) / binding.tiles.z1;
  p.grid_cols = (p.out_dim() + binding.tiles.z2 - 1) / binding.tiles.z2;
  return p;
}

/// Same binding (same seeds and segment) under a different tile geometry.
inline MatmulPlan with_tiles(const MatmulPlan& plan, const TileConfig& tiles) {
  if (tiles.z0 == 0 || tiles.z1 == 0 || tiles.z2 == 0) throw GeometryError("tile sizes must be positive");
  if (tiles.tile_elems() > plan.binding.segment.length) throw GeometryError("tile does not fit the bound segment");
  ModuleBinding b = plan.binding;
  b.tiles = tiles;
  return make_plan(b);
}

/// How backward merges weight-tile gradients into store.grads.
enum class Accumulation : std::uint8_t {
  deterministic,  // tile gradients computed in parallel, scattered in fixed tile order
  atomic,         // scattered concurrently; reproducible only up to reassociation
};

namespace detail {

struct TilePlacement {
  std::size_t base;
  int sign;
};

inline TilePlacement place_tile(const ModuleBinding& b, std::size_t tx, std::size_t ty) {
  const std::size_t off = hashing::hash_tile(b.location_hash, tx, ty, b.segment.length, b.tiles.tile_elems());
  const int sign = b.use_sign_hash ? hashing::sign_hash(b.sign_family, tx, ty) : 1;
  return {b.segment.offset + off, sign};
}

// acc[r][c] += sum_kk (s * x[r][kk]) * tile[kk][c]; tile rows have stride ld.
template <class T>
inline void tile_accumulate(T* acc, std::size_t acc_ld, const T* x, std::size_t x_ld, const T* tile,
                            std::size_t tile_ld, std::size_t rows, std::size_t depth, std::size_t cols, T s) {
  for (std::size_t r = 0; r < rows; ++r) {
    T* __restrict__ arow = acc + r * acc_ld;
    const T* xrow = x + r * x_ld;
    for (std::size_t kk = 0; kk < depth; ++kk) {
      const T a = s * xrow[kk];
      const T* __restrict__ trow = tile + kk * tile_ld;
      for (std::size_t c = 0; c < cols; ++c) arow[c] += a * trow[c];
    }
  }
}

template <class T>
void check_x(const MatmulPlan& plan, const Matrix<T>& x) {
  if (x.cols() != plan.in_dim())
    throw ShapeError("matmul: X has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(plan.in_dim()));
}

// Shared driver: tile_source(kb, jb, scratch) returns a pointer to a Z1 x Z2 row-major tile
// and its sign. The roast kernel points straight into the store; hashednet gathers.
template <class T, class TileSource>
Matrix<T> tiled_forward(const MatmulPlan& plan, const Matrix<T>& x, TileSource&& tile_source) {
  check_x(plan, x);
  const auto& t = plan.tiles();
  const std::size_t rows = x.rows();
  const std::size_t h = plan.in_dim();
  const std::size_t o = plan.out_dim();
  const std::size_t row_blocks = (rows + t.z0 - 1) / t.z0;
  const std::size_t n_tiles = row_blocks * plan.grid_cols;
  const T lambda = static_cast<T>(plan.binding.lambda);
  Matrix<T> out(rows, o);

#pragma omp parallel
  {
    std::vector<T> acc(t.z0 * t.z2);
    std::vector<T> scratch(t.tile_elems());
#pragma omp for schedule(static)
    for (std::ptrdiff_t tile = 0; tile < static_cast<std::ptrdiff_t>(n_tiles); ++tile) {
      const std::size_t ib = static_cast<std::size_t>(tile) / plan.grid_cols;
      const std::size_t jb = static_cast<std::size_t>(tile) % plan.grid_cols;
      const std::size_t i0 = ib * t.z0;
      const std::size_t j0 = jb * t.z2;
      const std::size_t nr = std::min(t.z0, rows - i0);
      const std::size_t nc = std::min(t.z2, o - j0);
      std::fill(acc.begin(), acc.end(), T{0});
      for (std::size_t kb = 0; kb < plan.grid_rows; ++kb) {
        const std::size_t k0 = kb * t.z1;
        const std::size_t nk = std::min(t.z1, h - k0);
        const auto [tile_ptr, sign] = tile_source(kb, jb, scratch.data());
        tile_accumulate(acc.data(), t.z2, x.data() + i0 * h + k0, h, tile_ptr, t.z2, nr, nk, nc,
                        static_cast<T>(sign));
      }
      for (std::size_t r = 0; r < nr; ++r) {
        T* orow = out.data() + (i0 + r) * o + j0;
        const T* arow = acc.data() + r * t.z2;
        for (std::size_t c = 0; c < nc; ++c) orow[c] = lambda * arow[c];
      }
    }
  }
  return out;
}

}  // namespace detail

/// Tiled X * W where each Z1 x Z2 weight tile is one contiguous block of the store located by
/// hashing its tile coordinates. lambda is applied once per output tile.
template <class T>
Matrix<T> roast_mm_forward(const CompressedStore<T>& store, const MatmulPlan& plan, const Matrix<T>& x) {
  const T* values = store.values().data();
  const ModuleBinding& b = plan.binding;
  return detail::tiled_forward(plan, x, [&](std::size_t kb, std::size_t jb, T*) {
    const auto place = detail::place_tile(b, kb, jb);
    return std::pair<const T*, int>(values + place.base, place.sign);
  });
}

/// Per-element hashing baseline: W[i][j] = lambda * g(i,j) * M[h(i,j)], one hash per weight.
/// Tiles only organise the arithmetic; each tile is gathered element by element.
template <class T>
Matrix<T> hashednet_mm_forward(const CompressedStore<T>& store, const MatmulPlan& plan, const Matrix<T>& x) {
  const T* values = store.values().data();
  const ModuleBinding& b = plan.binding;
  const auto& t = plan.tiles();
  const std::size_t h = plan.in_dim();
  const std::size_t o = plan.out_dim();
  return detail::tiled_forward(plan, x, [&](std::size_t kb, std::size_t jb, T* scratch) {
    const std::size_t k0 = kb * t.z1;
    const std::size_t j0 = jb * t.z2;
    const std::size_t nk = std::min(t.z1, h - k0);
    const std::size_t nc = std::min(t.z2, o - j0);
    for (std::size_t kk = 0; kk < nk; ++kk) {
      for (std::size_t c = 0; c < nc; ++c) {
        const std::size_t i = k0 + kk;
        const std::size_t j = j0 + c;
        const std::size_t off = hashing::hash_tile(b.location_hash, i, j, b.segment.length, 1);
        const int sign = b.use_sign_hash ? hashing::sign_hash(b.sign_family, i, j) : 1;
        scratch[kk * t.z2 + c] = static_cast<T>(sign) * values[b.segment.offset + off];
      }
    }
    return std::pair<const T*, int>(scratch, 1);
  });
}

/// Returns grad_X = grad_Y * W^T and adds lambda * s * (X^T grad_Y) into store.grads tile by
/// tile. Extra memory is a bounded number of tiles; W is never materialised.
template <class T>
Matrix<T> roast_mm_backward(CompressedStore<T>& store, const MatmulPlan& plan, const Matrix<T>& x,
                            const Matrix<T>& grad_y, Accumulation mode = Accumulation::deterministic) {
  detail::check_x(plan, x);
  if (grad_y.rows() != x.rows() || grad_y.cols() != plan.out_dim())
    throw ShapeError("roast_mm_backward: grad_Y shape does not match the forward output");
  const ModuleBinding& b = plan.binding;
  const auto& t = plan.tiles();
  const std::size_t rows = x.rows();
  const std::size_t h = plan.in_dim();
  const std::size_t o = plan.out_dim();
  const T lambda = static_cast<T>(b.lambda);
  const T* values = store.values().data();
  T* grads = store.grads().data();

  // grad_X, one (row-block, k-block) output tile per task.
  Matrix<T> grad_x(rows, h);
  const std::size_t row_blocks = (rows + t.z0 - 1) / t.z0;
  const std::size_t gx_tiles = row_blocks * plan.grid_rows;
#pragma omp parallel
  {
    std::vector<T> acc(t.z0 * t.z1);
#pragma omp for schedule(static)
    for (std::ptrdiff_t task = 0; task < static_cast<std::ptrdiff_t>(gx_tiles); ++task) {
      const std::size_t ib = static_cast<std::size_t>(task) / plan.grid_rows;
      const std::size_t kb = static_cast<std::size_t>(task) % plan.grid_rows;
      const std::size_t i0 = ib * t.z0;
      const std::size_t k0 = kb * t.z1;
      const std::size_t nr = std::min(t.z0, rows - i0);
      const std::size_t nk = std::min(t.z1, h - k0);
      std::fill(acc.begin(), acc.end(), T{0});
      for (std::size_t jb = 0; jb < plan.grid_cols; ++jb) {
        const std::size_t j0 = jb * t.z2;
        const std::size_t nc = std::min(t.z2, o - j0);
        const auto place = detail::place_tile(b, kb, jb);
        const T* tile = values + place.base;
        const T s = static_cast<T>(place.sign);
        for (std::size_t r = 0; r < nr; ++r) {
          const T* gy = grad_y.data() + (i0 + r) * o + j0;
          T* arow = acc.data() + r * t.z1;
          for (std::size_t kk = 0; kk < nk; ++kk) {
            const T* trow = tile + kk * t.z2;
            T dot{0};
            for (std::size_t c = 0; c < nc; ++c) dot += gy[c] * trow[c];
            arow[kk] += s * dot;
          }
        }
      }
      for (std::size_t r = 0; r < nr; ++r) {
        T* grow = grad_x.data() + (i0 + r) * h + k0;
        const T* arow = acc.data() + r * t.z1;
        for (std::size_t kk = 0; kk < nk; ++kk) grow[kk] = lambda * arow[kk];
      }
    }
  }

  // Weight gradients: G = X[:, k-block]^T grad_Y[:, j-block] per weight tile.
  const std::size_t w_tiles = plan.grid_rows * plan.grid_cols;
  const std::size_t tile_elems = t.tile_elems();
  auto weight_tile_grad = [&](std::size_t tile, T* g) {
    const std::size_t kb = tile / plan.grid_cols;
    const std::size_t jb = tile % plan.grid_cols;
    const std::size_t k0 = kb * t.z1;
    const std::size_t j0 = jb * t.z2;
    const std::size_t nk = std::min(t.z1, h - k0);
    const std::size_t nc = std::min(t.z2, o - j0);
    std::fill(g, g + tile_elems, T{0});
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xrow = x.data() + r * h + k0;
      const T* gy = grad_y.data() + r * o + j0;
      for (std::size_t kk = 0; kk < nk; ++kk) {
        const T a = xrow[kk];
        T* __restrict__ grow = g + kk * t.z2;
        for (std::size_t c = 0; c < nc; ++c) grow[c] += a * gy[c];
      }
    }
    return std::pair<std::size_t, std::size_t>(nk, nc);
  };

  if (mode == Accumulation::atomic) {
#pragma omp parallel
    {
      std::vector<T> g(tile_elems);
#pragma omp for schedule(static)
      for (std::ptrdiff_t tile = 0; tile < static_cast<std::ptrdiff_t>(w_tiles); ++tile) {
        const auto [nk, nc] = weight_tile_grad(static_cast<std::size_t>(tile), g.data());
        const auto place = detail::place_tile(b, static_cast<std::size_t>(tile) / plan.grid_cols,
                                              static_cast<std::size_t>(tile) % plan.grid_cols);
        const T scale = lambda * static_cast<T>(place.sign);
        for (std::size_t kk = 0; kk < nk; ++kk)
          for (std::size_t c = 0; c < nc; ++c) {
#pragma omp atomic
            grads[place.base + kk * t.z2 + c] += scale * g[kk * t.z2 + c];
          }
      }
    }
    return grad_x;
  }

  const std::size_t batch = std::max<std::size_t>(1, 4 * static_cast<std::size_t>(parallel::num_threads()));
  std::vector<T> staged(batch * tile_elems);
  std::vector<std::pair<std::size_t, std::size_t>> extents(batch);
  for (std::size_t first = 0; first < w_tiles; first += batch) {
    const std::size_t count = std::min(batch, w_tiles - first);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t q = 0; q < static_cast<std::ptrdiff_t>(count); ++q) {
      const auto uq = static_cast<std::size_t>(q);
      extents[uq] = weight_tile_grad(first + uq, staged.data() + uq * tile_elems);
    }
    for (std::size_t q = 0; q < count; ++q) {
      const std::size_t tile = first + q;
      const auto place = detail::place_tile(b, tile / plan.grid_cols, tile % plan.grid_cols);
      const T scale = lambda * static_cast<T>(place.sign);
      const T* g = staged.data() + q * tile_elems;
      const auto [nk, nc] = extents[q];
      for (std::size_t kk = 0; kk < nk; ++kk) {
        T* dst = grads + place.base + kk * t.z2;
        const T* src = g + kk * t.z2;
        for (std::size_t c = 0; c < nc; ++c) dst[c] += scale * src[c];
      }
    }
  }
  return grad_x;
}

/// Store slot and sign backing logical element (r, c) of a binding.
struct SlotRef {
  std::size_t slot;
  int sign;
};

inline SlotRef slot_of(const ModuleBinding& b, std::size_t r, std::size_t c) {
  if (b.kind == ModuleKind::lookup) {
    const std::size_t z = b.tiles.chunk_len;
    const auto place = detail::place_chunk(b, r * detail::chunks_per_row(b) + c / z);
    return {place.base + c % z, place.scale < 0 ? -1 : 1};
  }
  const auto& t = b.tiles;
  const auto place = detail::place_tile(b, r / t.z1, c / t.z2);
  return {place.base + t.z2 * (r % t.z1) + (c % t.z2), place.sign};
}

/// Largest logical tensor materialize() will build.
inline constexpr std::size_t kMaterializeCap = std::size_t{1} << 24;

/// Dense copy of a binding's logical weights through its mapping (test and oracle support).
template <class T>
Matrix<T> materialize(const CompressedStore<T>& store, const ModuleBinding& b, std::size_t cap = kMaterializeCap) {
  if (b.param_count() > cap)
    throw RefusalError("materialize: " + std::to_string(b.param_count()) + " elements exceeds the cap");
  const T* values = store.values().data();
  const T lambda = static_cast<T>(b.lambda);
  Matrix<T> w(b.rows(), b.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      const auto ref = slot_of(b, i, j);
      w(i, j) = lambda * static_cast<T>(ref.sign) * values[ref.slot];
    }
  return w;
}

template <class T>
Matrix<T> materialize(const CompressedStore<T>& store, const MatmulPlan& plan, std::size_t cap = kMaterializeCap) {
  return materialize(store, plan.binding, cap);
}

/// Dense copy of the weights the per-element baseline recovers: lambda * g(i,j) * M[h(i,j)].
template <class T>
Matrix<T> materialize_hashednet(const CompressedStore<T>& store, const ModuleBinding& b,
                                std::size_t cap = kMaterializeCap) {
  if (b.kind != ModuleKind::matmul) throw ConfigError("materialize_hashednet requires a matmul binding");
  if (b.param_count() > cap)
    throw RefusalError("materialize: " + std::to_string(b.param_count()) + " elements exceeds the cap");
  const T* values = store.values().data();
  const T lambda = static_cast<T>(b.lambda);
  Matrix<T> w(b.rows(), b.cols());
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      const auto off = hashing::hash_tile(b.location_hash, i, j, b.segment.length, 1);
      const int sign = b.use_sign_hash ? hashing::sign_hash(b.sign_family, i, j) : 1;
      w(i, j) = lambda * static_cast<T>(sign) * values[b.segment.offset + off];
    }
  return w;
}

enum class TuneStrategy : std::uint8_t { inference, training };

struct TileTiming {
  TileConfig tiles;
  double median_ms = 0;
};

struct TuneResult {
  TileConfig best;
  std::vector<TileTiming> timings;
};

/// Z0, Z1, Z2 in {8, 16, 32, 64}.
inline std::vector<TileConfig> default_tile_candidates() {
  std::vector<TileConfig> out;
  for (std::size_t z0 : {8, 16, 32, 64})
    for (std::size_t z1 : {8, 16, 32, 64})
      for (std::size_t z2 : {8, 16, 32, 64}) out.push_back(TileConfig{16, z0, z1, z2});
  return out;
}

/// Fastest candidate; equal times go to the smaller Z1*Z2 footprint, then to the earlier entry.
inline TileConfig select_fastest(std::span<const TileTiming> timings) {
  if (timings.empty()) throw ConfigError("select_fastest: no timings");
  const TileTiming* best = &timings[0];
  for (const auto& cand : timings.subspan(1)) {
    if (cand.median_ms < best->median_ms ||
        (cand.median_ms == best->median_ms && cand.tiles.tile_elems() < best->tiles.tile_elems()))
      best = &cand;
  }
  return best->tiles;
}

/// Times every geometrically feasible candidate (median of `runs` after one warm-up) on a
/// random X with x_rows rows. The training strategy times forward + backward; store.grads is
/// restored afterwards.
template <class T>
TuneResult autotune_tiles(CompressedStore<T>& store, const MatmulPlan& plan, std::size_t x_rows,
                          std::span<const TileConfig> candidates, TuneStrategy strategy,
                          std::uint64_t seed = 0, int runs = 5) {
  if (candidates.empty()) throw ConfigError("autotune_tiles: empty candidate set");
  std::vector<TileConfig> feasible;
  for (const auto& c : candidates)
    if (c.z0 > 0 && c.z1 > 0 && c.z2 > 0 && c.tile_elems() <= plan.binding.segment.length) feasible.push_back(c);
  if (feasible.empty()) throw ConfigError("autotune_tiles: no candidate fits the segment");

  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Matrix<T> x(x_rows, plan.in_dim());
  for (auto& v : x.values()) v = static_cast<T>(dist(gen));
  Matrix<T> gy(x_rows, plan.out_dim());
  for (auto& v : gy.values()) v = static_cast<T>(dist(gen));

  std::vector<T> saved_grads;
  if (strategy == TuneStrategy::training) saved_grads.assign(store.grads().begin(), store.grads().end());

  TuneResult result;
  for (const auto& c : feasible) {
    const MatmulPlan p = with_tiles(plan, c);
    const double ms = median_time_ms(
        [&] {
          auto y = roast_mm_forward(store, p, x);
          if (strategy == TuneStrategy::training) {
            auto gx = roast_mm_backward(store, p, x, gy);
            (void)gx;
          }
          (void)y;
        },
        1, runs);
    result.timings.push_back({c, ms});
  }
  if (strategy == TuneStrategy::training) std::copy(saved_grads.begin(), saved_grads.end(), store.grads().begin());
  result.best = select_fastest(result.timings);
  return result;
}

}  // namespace roast
