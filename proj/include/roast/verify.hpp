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
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "roast/lookup.hpp"
#include "roast/matmul.hpp"
#include "roast/matrix.hpp"
#include "roast/snapshot.hpp"
#include "roast/store.hpp"
#include "roast/trainer.hpp"

namespace roast::verify {

struct CheckResult {
  std::string name;
  double max_error = 0;
  double tolerance = 0;
  std::size_t cases = 0;
  bool passed() const { return max_error < tolerance; }
};

struct Report {
  std::vector<CheckResult> checks;
  bool all_passed() const {
    return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed(); });
  }
};

inline void print(std::ostream& os, const Report& r) {
  for (const auto& c : r.checks)
    os << (c.passed() ? "PASS " : "FAIL ") << c.name << " cases=" << c.cases << " max_error=" << c.max_error
       << " tol=" << c.tolerance << '\n';
}

inline Matrix<double> random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix<double> m(rows, cols);
  for (auto& v : m.values()) v = u(gen);
  return m;
}

inline double frobenius_rel_error(const Matrix<double>& got, const Matrix<double>& want) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double d = got.values()[i] - want.values()[i];
    num += d * d;
    den += want.values()[i] * want.values()[i];
  }
  return den == 0 ? std::sqrt(num) : std::sqrt(num / den);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double rel(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
}

/// One random matmul instance: H, O in [33, 257] and not multiples of 8, Z1, Z2 in {8, 16, 32},
/// m a power of two in [2^10, 2^16].
struct MatmulCase {
  std::size_t h = 0, o = 0, rows = 0, m = 0;
  TileConfig tiles;
  std::uint64_t seed = 0;
};

inline MatmulCase random_matmul_case(std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  auto pick_dim = [&] {
    std::uniform_int_distribution<std::size_t> d(33, 257);
    std::size_t v;
    do v = d(gen);
    while (v % 8 == 0);
    return v;
  };
  const std::size_t z[] = {8, 16, 32};
  std::uniform_int_distribution<int> zi(0, 2), mi(10, 16), ri(1, 70);
  MatmulCase c;
  c.h = pick_dim();
  c.o = pick_dim();
  c.rows = static_cast<std::size_t>(ri(gen));
  c.tiles = {16, 16, z[zi(gen)], z[zi(gen)]};
  c.m = std::size_t{1} << mi(gen);
  c.seed = seed;
  return c;
}

struct MatmulFixture {
  CompressedStore<double> store;
  MatmulPlan plan;
  Matrix<double> x;
};

inline MatmulFixture make_fixture(const MatmulCase& c) {
  auto store = create_store<double>(c.m, 1.0, c.seed);
  const auto b = store.register_module(ModuleKind::matmul, {c.h, c.o}, c.h, c.tiles);
  auto plan = make_plan(b);
  return {std::move(store), std::move(plan), random_matrix(c.rows, c.h, hashing::mix_seed(c.seed, 1))};
}

/// Forward kernels against X * materialize(W).
inline std::vector<CheckResult> matmul_oracle(std::size_t cases, std::uint64_t seed) {
  CheckResult roast{"matmul_oracle_roast", 0, 1e-6, cases};
  CheckResult hashed{"matmul_oracle_hashednet", 0, 1e-6, cases};
  for (std::size_t i = 0; i < cases; ++i) {
    const auto c = random_matmul_case(hashing::mix_seed(seed, i));
    auto f = make_fixture(c);
    const auto want = dense_matmul(f.x, materialize(f.store, f.plan));
    roast.max_error = std::max(roast.max_error, frobenius_rel_error(roast_mm_forward(f.store, f.plan, f.x), want));

    hashed.max_error =
        std::max(hashed.max_error, frobenius_rel_error(hashednet_mm_forward(f.store, f.plan, f.x),
                                                     dense_matmul(f.x, materialize_hashednet(f.store, f.plan.binding))));
  }
  return {roast, hashed};
}

/// <Y(X), G> = <X, grad_X> and <Y(v), G> = <v, grad_v> for the store values v; both maps are linear.
inline std::vector<CheckResult> adjoint_checks(std::size_t cases, std::uint64_t seed) {
  CheckResult mm_x{"matmul_adjoint_input", 0, 1e-10, cases};
  CheckResult mm_w{"matmul_adjoint_store", 0, 1e-10, cases};
  CheckResult lk{"lookup_adjoint_store", 0, 1e-10, cases};
  for (std::size_t i = 0; i < cases; ++i) {
    const std::uint64_t s = hashing::mix_seed(seed, 100 + i);
    auto c = random_matmul_case(s);
    c.h = 7 + c.h % 60;
    c.o = 5 + c.o % 60;
    c.m = std::max<std::size_t>(c.m >> 4, c.tiles.tile_elems());
    auto f = make_fixture(c);
    const auto y = roast_mm_forward(f.store, f.plan, f.x);
    const auto g = random_matrix(y.rows(), y.cols(), hashing::mix_seed(s, 2));
    f.store.zero_grads();
    const auto gx = roast_mm_backward(f.store, f.plan, f.x, g);
    const double lhs = dot(y.values(), g.values());
    mm_x.max_error = std::max(mm_x.max_error, rel(lhs, dot(f.x.values(), gx.values())));
    mm_w.max_error = std::max(mm_w.max_error, rel(lhs, dot(f.store.values(), f.store.grads())));

    auto store = create_store<double>(64 + i * 13, 1.0, s);
    const std::size_t rows = 9 + i, cols = 5 + i % 11;
    const auto b = store.register_module(ModuleKind::lookup, {rows, cols}, cols, {1 + i % 7, 1, 1, 1});
    std::mt19937_64 gen(s);
    std::vector<std::size_t> idx(20);
    for (auto& v : idx) v = gen() % rows;
    const auto out = lookup_forward(store, {b, idx});
    const auto go = random_matrix(out.rows(), out.cols(), hashing::mix_seed(s, 3));
    store.zero_grads();
    lookup_backward(store, {b, idx}, go);
    lk.max_error = std::max(lk.max_error, rel(dot(out.values(), go.values()), dot(store.values(), store.grads())));
  }
  return {mm_x, mm_w, lk};
}

/// Central differences of a scalar loss with respect to every store entry; relative error per
/// entry with an absolute floor for near-zero gradients.
template <class LossFn>
double fd_max_rel_error(CompressedStore<double>& store, std::span<const double> analytic, LossFn&& loss,
                        double h = 1e-5, double floor = 1e-6) {
  auto v = store.values();
  double worst = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double keep = v[i];
    v[i] = keep + h;
    const double up = loss();
    v[i] = keep - h;
    const double down = loss();
    v[i] = keep;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), floor}));
  }
  return worst;
}

/// Finite-difference checks of a full compressed model (one shared store over an embedding and
/// three matmul layers with biases) and of the bare matmul op.
inline std::vector<CheckResult> finite_difference_checks(std::size_t cases, std::uint64_t seed) {
  CheckResult model{"model_finite_difference", 0, 1e-4, cases};
  CheckResult mm{"matmul_finite_difference", 0, 1e-5, cases};
  for (std::size_t i = 0; i < cases; ++i) {
    const std::uint64_t s = hashing::mix_seed(seed, 200 + i);
    train::ModelSpec spec;
    spec.vocab_size = 20;
    spec.embed_dim = 8;
    spec.hidden_dims = {10, 10};
    spec.num_classes = 3;
    spec.compression_ratio = 2.0;
    spec.seed = s;
    spec.sharing = i % 2 == 0 ? SharingMode::global : SharingMode::local;
    // Local segments for the 3-wide bias hold a single slot at this ratio.
    spec.tiles = {spec.sharing == SharingMode::local ? 1u : 4u, 8, 4, 4};
    auto net = train::build_model(spec);
    train::SynthOptions o;
    o.vocab_size = 20;
    o.seq_len = 5;
    o.signature_tokens = 4;
    const auto batch = train::synth_dataset(train::DatasetKind::sparse_tokens, 16, 3, s, o);
    net.zero_grads();
    net.loss_and_grad(batch);
    const std::vector<double> g(net.store().grads().begin(), net.store().grads().end());
    model.max_error = std::max(model.max_error, fd_max_rel_error(net.store(), g, [&] {
      return train::cross_entropy(net.logits(batch), batch.labels, false).loss;
    }));

    MatmulCase c{11 + i, 9 + 2 * i, 4, 128, {16, 4, 4, 8}, s};
    auto f = make_fixture(c);
    const auto w = random_matrix(f.x.rows(), c.o, hashing::mix_seed(s, 4));
    // L = sum(Y .* Wt) + 0.5 |Y|^2, so dL/dY = Wt + Y.
    auto loss = [&] {
      const auto y = roast_mm_forward(f.store, f.plan, f.x);
      return dot(y.values(), w.values()) + 0.5 * dot(y.values(), y.values());
    };
    auto y = roast_mm_forward(f.store, f.plan, f.x);
    Matrix<double> gy(y.rows(), y.cols());
    for (std::size_t k = 0; k < y.size(); ++k) gy.values()[k] = w.values()[k] + y.values()[k];
    f.store.zero_grads();
    roast_mm_backward(f.store, f.plan, f.x, gy);
    const std::vector<double> gs(f.store.grads().begin(), f.store.grads().end());
    mm.max_error = std::max(mm.max_error, fd_max_rel_error(f.store, gs, loss));
  }
  return {model, mm};
}

/// Snapshot encode/decode equality, as a count of mismatching values.
inline CheckResult snapshot_check(std::uint64_t seed) {
  auto store = create_store<double>(4099, 2.5, seed);
  const auto bytes = encode_snapshot(store);
  const auto back = decode_snapshot<double>(bytes);
  double mismatches = back.size() == store.size() ? 0.0 : 1e300;
  for (std::size_t i = 0; i < std::min(back.size(), store.size()); ++i)
    if (std::bit_cast<std::uint64_t>(back.values()[i]) != std::bit_cast<std::uint64_t>(store.values()[i]))
      mismatches += 1;
  return {"snapshot_round_trip", mismatches, 0.5, 1};
}

/// Full suite: 25 oracle instances, 25 adjoint instances, 4 finite-difference models. `quick`
/// runs 5 / 5 / 1.
inline Report run_all(bool quick, std::uint64_t seed) {
  Report r;
  auto append = [&](std::vector<CheckResult> v) { r.checks.insert(r.checks.end(), v.begin(), v.end()); };
  append(matmul_oracle(quick ? 5 : 25, seed));
  append(adjoint_checks(quick ? 5 : 25, seed));
  append(finite_difference_checks(quick ? 1 : 4, seed));
  r.checks.push_back(snapshot_check(seed));
  return r;
}

}  // namespace roast::verify
