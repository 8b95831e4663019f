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

#include <cstddef>
#include <cstdint>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "roast/csv.hpp"
#include "roast/errors.hpp"
#include "roast/matmul.hpp"
#include "roast/store.hpp"
#include "roast/timing.hpp"

namespace roast::bench {

enum class Kernel : std::uint8_t { dense, hashednet, roast };

inline const char* to_string(Kernel k) {
  switch (k) {
    case Kernel::dense: return "dense";
    case Kernel::hashednet: return "hashednet";
    case Kernel::roast: return "roast";
  }
  return "?";
}

inline Kernel kernel_from_string(const std::string& s) {
  if (s == "dense") return Kernel::dense;
  if (s == "hashednet") return Kernel::hashednet;
  if (s == "roast") return Kernel::roast;
  throw ConfigError("unknown kernel '" + s + "'");
}

struct BenchConfig {
  std::vector<std::size_t> dims{1024};
  std::vector<std::size_t> store_bytes{std::size_t{128} << 20};
  std::vector<Kernel> kernels{Kernel::dense, Kernel::hashednet, Kernel::roast};
  std::size_t batch = 128;
  TileConfig tiles{16, 64, 32, 32};
  int warmup = 2;
  int runs = 9;
  std::uint64_t seed = 0;

  void validate() const {
    if (dims.empty() || store_bytes.empty() || kernels.empty()) throw ConfigError("bench: empty dims, stores or kernels");
    for (auto d : dims)
      if (d == 0) throw ConfigError("bench: dims must be positive");
    for (auto b : store_bytes)
      if (b / sizeof(float) < tiles.tile_elems()) throw ConfigError("bench: store smaller than one tile");
    if (batch == 0) throw ConfigError("bench: batch must be positive");
    if (runs < 1 || warmup < 0) throw ConfigError("bench: runs must be >= 1 and warmup >= 0");
  }
};

struct BenchRow {
  Kernel kernel = Kernel::dense;
  std::size_t dim = 0;
  std::size_t store_bytes = 0;
  TileConfig tiles;
  double median_ms = 0;
  int runs = 0;
};

/// Dense W packed tile-major so the dense baseline runs the same tiled driver as roast.
inline std::vector<float> pack_tiles(const Matrix<float>& w, const MatmulPlan& plan) {
  const auto& t = plan.tiles();
  std::vector<float> packed(plan.grid_rows * plan.grid_cols * t.tile_elems(), 0.0f);
  for (std::size_t i = 0; i < w.rows(); ++i)
    for (std::size_t j = 0; j < w.cols(); ++j) {
      const std::size_t tile = (i / t.z1) * plan.grid_cols + j / t.z2;
      packed[tile * t.tile_elems() + (i % t.z1) * t.z2 + j % t.z2] = w(i, j);
    }
  return packed;
}

inline Matrix<float> dense_packed_forward(const std::vector<float>& packed, const MatmulPlan& plan,
                                          const Matrix<float>& x) {
  const std::size_t te = plan.tiles().tile_elems();
  return detail::tiled_forward(plan, x, [&](std::size_t kb, std::size_t jb, float*) {
    return std::pair<const float*, int>(packed.data() + (kb * plan.grid_cols + jb) * te, 1);
  });
}

/// Median forward time per (dim, store, kernel) in f32 with degree-2 hashes. The dense kernel
/// does not read the store; its time is measured once per dim and repeated on each store row.
inline std::vector<BenchRow> run_bench(const BenchConfig& cfg) {
  cfg.validate();
  std::vector<BenchRow> rows;
  for (auto dim : cfg.dims) {
    Matrix<float> x(cfg.batch, dim);
    std::mt19937_64 gen(hashing::mix_seed(cfg.seed, dim));
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    for (auto& v : x.values()) v = u(gen);
    double dense_ms = -1;
    for (auto bytes : cfg.store_bytes) {
      auto store = create_store<float>(bytes / sizeof(float), 1.0, cfg.seed);
      const BindingOptions opt{true, 2, 0};
      const auto plan = make_plan(store.register_module(ModuleKind::matmul, {dim, dim}, dim, cfg.tiles, opt));
      volatile float sink = 0;
      for (auto k : cfg.kernels) {
        double ms = 0;
        switch (k) {
          case Kernel::dense:
            if (dense_ms < 0) {
              Matrix<float> w(dim, dim);
              for (auto& v : w.values()) v = u(gen) / static_cast<float>(dim);
              const auto packed = pack_tiles(w, plan);
              dense_ms = median_time_ms([&] { sink = sink + dense_packed_forward(packed, plan, x)(0, 0); },
                                        cfg.warmup, cfg.runs);
            }
            ms = dense_ms;
            break;
          case Kernel::hashednet:
            ms = median_time_ms([&] { sink = sink + hashednet_mm_forward(store, plan, x)(0, 0); }, cfg.warmup,
                                cfg.runs);
            break;
          case Kernel::roast:
            ms = median_time_ms([&] { sink = sink + roast_mm_forward(store, plan, x)(0, 0); }, cfg.warmup, cfg.runs);
            break;
        }
        rows.push_back({k, dim, bytes, cfg.tiles, ms, cfg.runs});
      }
    }
  }
  return rows;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  csv::write_row(os, {"kernel", "dim", "store_bytes", "tile_Z0", "tile_Z1", "tile_Z2", "median_ms", "runs"});
  for (const auto& r : rows)
    csv::write_row(os, {to_string(r.kernel), csv::fmt(r.dim), csv::fmt(r.store_bytes), csv::fmt(r.tiles.z0),
                        csv::fmt(r.tiles.z1), csv::fmt(r.tiles.z2), csv::fmt(r.median_ms), csv::fmt(r.runs)});
}

/// roast-over-hashednet speedup per (dim, store); empty when either kernel is missing.
inline std::map<std::pair<std::size_t, std::size_t>, double> speedups(const std::vector<BenchRow>& rows) {
  std::map<std::pair<std::size_t, std::size_t>, double> roast_ms, hashed_ms, out;
  for (const auto& r : rows) {
    if (r.kernel == Kernel::roast) roast_ms[{r.dim, r.store_bytes}] = r.median_ms;
    if (r.kernel == Kernel::hashednet) hashed_ms[{r.dim, r.store_bytes}] = r.median_ms;
  }
  for (const auto& [key, ms] : roast_ms) {
    const auto it = hashed_ms.find(key);
    if (it != hashed_ms.end() && ms > 0) out[key] = it->second / ms;
  }
  return out;
}

inline std::string summary(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  for (const auto& r : rows)
    os << to_string(r.kernel) << " dim=" << r.dim << " store=" << (r.store_bytes >> 20) << "MiB median=" << r.median_ms
       << "ms\n";
  for (const auto& [key, s] : speedups(rows))
    os << "speedup roast/hashednet dim=" << key.first << " store=" << (key.second >> 20) << "MiB: " << s << "x\n";
  return os.str();
}

}  // namespace roast::bench
