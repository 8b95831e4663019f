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
#include <string>
#include <span>

#include "roast/errors.hpp"
#include "roast/hashing.hpp"
#include "roast/matrix.hpp"
#include "roast/store.hpp"

namespace roast {

/// Rows of a lookup binding to recover. Duplicate indices are allowed.
struct LookupRequest {
  const ModuleBinding& binding;
  std::span<const std::size_t> indices;

  std::size_t row_len() const noexcept { return binding.cols(); }
};

namespace detail {

// Rows are padded to a whole number of chunks, so a chunk never straddles two rows.
inline std::size_t chunks_per_row(const ModuleBinding& b) noexcept {
  return (b.cols() + b.tiles.chunk_len - 1) / b.tiles.chunk_len;
}

struct ChunkPlacement {
  std::size_t base;  // absolute offset of the chunk in the store
  double scale;      // lambda * sign
};

inline ChunkPlacement place_chunk(const ModuleBinding& b, std::uint64_t chunk_id) {
  const std::size_t off = hashing::hash_chunk(b.location_hash, chunk_id, b.segment.length, b.tiles.chunk_len);
  const int sign = b.use_sign_hash ? hashing::sign_hash(b.sign_family, chunk_id) : 1;
  return {b.segment.offset + off, b.lambda * sign};
}

inline void check_lookup(const LookupRequest& req) {
  if (req.binding.kind != ModuleKind::lookup) throw ConfigError("lookup on a non-lookup binding");
  const std::size_t rows = req.binding.rows();
  for (auto idx : req.indices)
    if (idx >= rows) throw BoundsError("lookup index " + std::to_string(idx) + " out of range");
}

}  // namespace detail

/// out[r][e] = lambda * s(C) * M[h1(C) + O] for the chunk C holding element e of row indices[r].
template <class T>
Matrix<T> lookup_forward(const CompressedStore<T>& store, const LookupRequest& req) {
  detail::check_lookup(req);
  const ModuleBinding& b = req.binding;
  const std::size_t row_len = b.cols();
  const std::size_t z = b.tiles.chunk_len;
  const std::size_t cpr = detail::chunks_per_row(b);
  const T* values = store.values().data();
  Matrix<T> out(req.indices.size(), row_len);
  const auto n = static_cast<std::ptrdiff_t>(req.indices.size());

#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t r = 0; r < n; ++r) {
    T* orow = out.row(static_cast<std::size_t>(r)).data();
    const std::uint64_t first_chunk = req.indices[static_cast<std::size_t>(r)] * cpr;
    for (std::size_t c = 0; c < cpr; ++c) {
      const auto place = detail::place_chunk(b, first_chunk + c);
      const T scale = static_cast<T>(place.scale);
      const std::size_t begin = c * z;
      const std::size_t end = std::min(row_len, begin + z);
      for (std::size_t e = begin; e < end; ++e) orow[e] = scale * values[place.base + (e - begin)];
    }
  }
  return out;
}

/// Scatter-adds lambda * s * grad_out into store.grads. Runs sequentially in index order,
/// so accumulation is bitwise reproducible.
template <class T>
void lookup_backward(CompressedStore<T>& store, const LookupRequest& req, const Matrix<T>& grad_out) {
  detail::check_lookup(req);
  const ModuleBinding& b = req.binding;
  const std::size_t row_len = b.cols();
  if (grad_out.rows() != req.indices.size() || grad_out.cols() != row_len)
    throw ShapeError("lookup_backward: grad_out shape does not match the forward output");
  const std::size_t z = b.tiles.chunk_len;
  const std::size_t cpr = detail::chunks_per_row(b);
  T* grads = store.grads().data();
  for (std::size_t r = 0; r < req.indices.size(); ++r) {
    const T* grow = grad_out.row(r).data();
    const std::uint64_t first_chunk = req.indices[r] * cpr;
    for (std::size_t c = 0; c < cpr; ++c) {
      const auto place = detail::place_chunk(b, first_chunk + c);
      const T scale = static_cast<T>(place.scale);
      const std::size_t begin = c * z;
      const std::size_t end = std::min(row_len, begin + z);
      for (std::size_t e = begin; e < end; ++e) grads[place.base + (e - begin)] += scale * grow[e];
    }
  }
}

}  // namespace roast
