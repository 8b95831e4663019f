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
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "roast/csv.hpp"
#include "roast/errors.hpp"
#include "roast/hashing.hpp"
#include "roast/lookup.hpp"
#include "roast/matmul.hpp"
#include "roast/matrix.hpp"
#include "roast/store.hpp"

namespace roast::train {

// ---------------------------------------------------------------------------------------------
// Data

enum class DatasetKind : std::uint8_t { clusters, moons, sparse_tokens };

inline const char* to_string(DatasetKind k) {
  switch (k) {
    case DatasetKind::clusters: return "clusters";
    case DatasetKind::moons: return "moons";
    case DatasetKind::sparse_tokens: return "sparse_tokens";
  }
  return "?";
}

/// Labeled samples: dense features (seq_len == 0) or fixed-length token sequences.
struct Dataset {
  std::size_t num_classes = 0;
  std::size_t feature_dim = 0;
  std::size_t seq_len = 0;
  Matrix<double> features;
  std::vector<std::size_t> tokens;  // size() * seq_len ids, row-major
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  bool tokenized() const noexcept { return seq_len > 0; }
};

struct DatasetSplit {
  Dataset train;
  Dataset test;
};

struct SynthOptions {
  std::size_t feature_dim = 16;  // clusters / moons
  double separation = 4.0;       // clusters: distance of each center from the origin
  double noise = 1.0;            // clusters: per-coordinate std dev; moons: scaled by 0.1
  std::size_t vocab_size = 256;  // sparse_tokens
  std::size_t seq_len = 8;
  std::size_t signature_tokens = 8;  // class-specific ids per class
  double signal = 0.5;               // probability a token comes from the class signature
};

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> idx) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.feature_dim = ds.feature_dim;
  out.seq_len = ds.seq_len;
  out.labels.reserve(idx.size());
  if (ds.tokenized()) {
    out.tokens.reserve(idx.size() * ds.seq_len);
    for (auto i : idx)
      out.tokens.insert(out.tokens.end(), ds.tokens.begin() + static_cast<std::ptrdiff_t>(i * ds.seq_len),
                        ds.tokens.begin() + static_cast<std::ptrdiff_t>((i + 1) * ds.seq_len));
  } else {
    out.features = Matrix<double>(idx.size(), ds.feature_dim);
    for (std::size_t r = 0; r < idx.size(); ++r)
      std::copy_n(ds.features.row(idx[r]).begin(), ds.feature_dim, out.features.row(r).begin());
  }
  for (auto i : idx) out.labels.push_back(ds.labels[i]);
  return out;
}

/// Reproducible synthetic classification data. Labels cycle through the classes before a
/// seeded shuffle, so class counts differ by at most one.
inline Dataset synth_dataset(DatasetKind kind, std::size_t size, std::size_t num_classes, std::uint64_t seed,
                             const SynthOptions& opt = {}) {
  if (num_classes < 2) throw ConfigError("synth_dataset: need at least two classes");
  if (size < num_classes) throw ConfigError("synth_dataset: fewer samples than classes");
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset ds;
  ds.num_classes = num_classes;
  ds.labels.resize(size);
  for (std::size_t i = 0; i < size; ++i) ds.labels[i] = static_cast<int>(i % num_classes);
  std::shuffle(ds.labels.begin(), ds.labels.end(), gen);

  switch (kind) {
    case DatasetKind::clusters: {
      if (opt.feature_dim == 0) throw ConfigError("synth_dataset: feature_dim must be positive");
      ds.feature_dim = opt.feature_dim;
      Matrix<double> centers(num_classes, opt.feature_dim);
      for (std::size_t c = 0; c < num_classes; ++c) {
        double norm = 0;
        for (auto& v : centers.row(c)) {
          v = normal(gen);
          norm += v * v;
        }
        for (auto& v : centers.row(c)) v *= opt.separation / std::sqrt(norm);
      }
      ds.features = Matrix<double>(size, opt.feature_dim);
      for (std::size_t i = 0; i < size; ++i) {
        const auto c = static_cast<std::size_t>(ds.labels[i]);
        for (std::size_t d = 0; d < opt.feature_dim; ++d) ds.features(i, d) = centers(c, d) + opt.noise * normal(gen);
      }
      break;
    }
    case DatasetKind::moons: {
      if (opt.feature_dim < 2) throw ConfigError("synth_dataset: moons need feature_dim >= 2");
      ds.feature_dim = opt.feature_dim;
      ds.features = Matrix<double>(size, opt.feature_dim);
      const double pi = std::acos(-1.0);
      for (std::size_t i = 0; i < size; ++i) {
        const auto c = static_cast<std::size_t>(ds.labels[i]);
        const double t = pi * unit(gen);
        const double shift = static_cast<double>(c / 2) * 2.0;
        double px = std::cos(t) + shift, py = std::sin(t);
        if (c % 2 == 1) {
          px = 1.0 - std::cos(t) + shift;
          py = 0.5 - std::sin(t);
        }
        ds.features(i, 0) = px + 0.1 * opt.noise * normal(gen);
        ds.features(i, 1) = py + 0.1 * opt.noise * normal(gen);
        for (std::size_t d = 2; d < opt.feature_dim; ++d) ds.features(i, d) = 0.1 * opt.noise * normal(gen);
      }
      break;
    }
    case DatasetKind::sparse_tokens: {
      if (opt.seq_len == 0 || opt.signature_tokens == 0) throw ConfigError("synth_dataset: empty sequences");
      if (opt.vocab_size < num_classes * opt.signature_tokens)
        throw ConfigError("synth_dataset: vocabulary too small for the class signatures");
      ds.seq_len = opt.seq_len;
      ds.feature_dim = 0;
      ds.tokens.resize(size * opt.seq_len);
      std::uniform_int_distribution<std::size_t> any(0, opt.vocab_size - 1);
      std::uniform_int_distribution<std::size_t> sig(0, opt.signature_tokens - 1);
      for (std::size_t i = 0; i < size; ++i) {
        const auto c = static_cast<std::size_t>(ds.labels[i]);
        for (std::size_t p = 0; p < opt.seq_len; ++p)
          ds.tokens[i * opt.seq_len + p] = unit(gen) < opt.signal ? c * opt.signature_tokens + sig(gen) : any(gen);
      }
      break;
    }
  }
  return ds;
}

/// Seeded shuffle, then the first (1 - test_fraction) share becomes the training set.
inline DatasetSplit split_dataset(const Dataset& ds, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("test fraction must lie in (0, 1)");
  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 gen(seed);
  std::shuffle(idx.begin(), idx.end(), gen);
  const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::round(test_fraction * ds.size())));
  if (n_test >= ds.size()) throw ConfigError("test split leaves no training data");
  const std::span<const std::size_t> all(idx);
  return {subset(ds, all.subspan(n_test)), subset(ds, all.first(n_test))};
}

// ---------------------------------------------------------------------------------------------
// Optimizers

enum class OptimizerKind : std::uint8_t { sgd, adagrad, adam };

inline const char* to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adagrad: return "adagrad";
    case OptimizerKind::adam: return "adam";
  }
  return "?";
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0;  // 0 selects default_learning_rate(kind)
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double adagrad_eps = 1e-10;

  static double default_learning_rate(OptimizerKind k) { return k == OptimizerKind::adam ? 1e-3 : 1e-2; }
  double lr() const { return learning_rate > 0 ? learning_rate : default_learning_rate(kind); }
};

/// A trainable array and its gradient.
struct ParamBlock {
  std::span<double> values;
  std::span<const double> grads;
};

/// Optimizer state lives per block and is sized exactly like the block, so for a compressed
/// model the store block carries m entries of state, never one per logical parameter.
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, std::span<const std::size_t> block_sizes) : cfg_(cfg) {
    if (cfg.learning_rate < 0) throw ConfigError("learning rate must be positive");
    for (auto n : block_sizes) {
      first_.emplace_back(cfg.kind == OptimizerKind::adam ? n : 0, 0.0);
      second_.emplace_back(cfg.kind == OptimizerKind::sgd ? 0 : n, 0.0);
    }
  }

  const OptimizerConfig& config() const noexcept { return cfg_; }
  std::span<const double> first_moment(std::size_t block) const { return first_.at(block); }
  /// Adagrad accumulator or Adam second moment.
  std::span<const double> second_moment(std::size_t block) const { return second_.at(block); }

  /// One update; step_index starts at 1 and drives Adam's bias correction.
  void step(std::span<const ParamBlock> blocks, std::size_t step_index) {
    if (blocks.size() != first_.size()) throw ShapeError("optimizer: block count changed");
    if (step_index == 0) throw ConfigError("optimizer step index starts at 1");
    const double lr = cfg_.lr();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      auto v = blocks[b].values;
      auto g = blocks[b].grads;
      if (v.size() != g.size()) throw ShapeError("optimizer: values and grads differ in length");
      switch (cfg_.kind) {
        case OptimizerKind::sgd:
          for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
          break;
        case OptimizerKind::adagrad: {
          auto& acc = second_[b];
          check_len(acc, v.size());
          for (std::size_t i = 0; i < v.size(); ++i) {
            acc[i] += g[i] * g[i];
            v[i] -= lr * g[i] / (std::sqrt(acc[i]) + cfg_.adagrad_eps);
          }
          break;
        }
        case OptimizerKind::adam: {
          auto& m1 = first_[b];
          auto& m2 = second_[b];
          check_len(m1, v.size());
          const double t = static_cast<double>(step_index);
          const double c1 = 1.0 - std::pow(cfg_.beta1, t);
          const double c2 = 1.0 - std::pow(cfg_.beta2, t);
          for (std::size_t i = 0; i < v.size(); ++i) {
            m1[i] = cfg_.beta1 * m1[i] + (1 - cfg_.beta1) * g[i];
            m2[i] = cfg_.beta2 * m2[i] + (1 - cfg_.beta2) * g[i] * g[i];
            v[i] -= lr * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + cfg_.eps);
          }
          break;
        }
      }
    }
  }

 private:
  static void check_len(const std::vector<double>& s, std::size_t n) {
    if (s.size() != n) throw ShapeError("optimizer: block size changed");
  }

  OptimizerConfig cfg_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

/// Steps an optimizer whose single block is the store.
template <class T>
void optimizer_step(Optimizer& opt, CompressedStore<T>& store, std::size_t step_index) {
  const ParamBlock block{store.values(), store.grads()};
  opt.step(std::span<const ParamBlock>(&block, 1), step_index);
}

// ---------------------------------------------------------------------------------------------
// Loss

struct LossResult {
  double loss = 0;
  std::size_t correct = 0;
  Matrix<double> grad;  // d mean-loss / d logits
};

inline std::size_t argmax_row(const Matrix<double>& m, std::size_t r) {
  const auto row = m.row(r);
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

/// Mean softmax cross-entropy over the batch.
inline LossResult cross_entropy(const Matrix<double>& logits, std::span<const int> labels, bool want_grad = true) {
  if (logits.rows() != labels.size()) throw ShapeError("cross_entropy: one label per row required");
  LossResult out;
  if (want_grad) out.grad = Matrix<double>(logits.rows(), logits.cols());
  const double inv_b = 1.0 / static_cast<double>(std::max<std::size_t>(1, logits.rows()));
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0;
    for (double v : row) z += std::exp(v - mx);
    const auto y = static_cast<std::size_t>(labels[r]);
    if (y >= logits.cols()) throw BoundsError("cross_entropy: label out of range");
    out.loss += (std::log(z) + mx - row[y]) * inv_b;
    if (argmax_row(logits, r) == y) ++out.correct;
    if (want_grad) {
      for (std::size_t c = 0; c < logits.cols(); ++c)
        out.grad(r, c) = (std::exp(row[c] - mx) / z - (c == y ? 1.0 : 0.0)) * inv_b;
    }
  }
  return out;
}

namespace detail {

inline void add_bias(Matrix<double>& z, std::span<const double> bias) {
  for (std::size_t r = 0; r < z.rows(); ++r)
    for (std::size_t c = 0; c < z.cols(); ++c) z(r, c) += bias[c];
}

inline void relu_inplace(Matrix<double>& z) {
  for (auto& v : z.values()) v = v > 0 ? v : 0.0;
}

inline void relu_backward(Matrix<double>& grad, const Matrix<double>& activated) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(activated.values()[i] > 0)) grad.values()[i] = 0;
}

inline std::vector<double> column_sums(const Matrix<double>& g) {
  std::vector<double> s(g.cols(), 0.0);
  for (std::size_t r = 0; r < g.rows(); ++r)
    for (std::size_t c = 0; c < g.cols(); ++c) s[c] += g(r, c);
  return s;
}

inline void check_ids(const Dataset& batch, std::size_t vocab) {
  for (auto id : batch.tokens)
    if (id >= vocab) throw BoundsError("token id outside the vocabulary");
}

}  // namespace detail

// ---------------------------------------------------------------------------------------------
// Models

/// vocab_size == 0 means dense inputs of width embed_dim; otherwise inputs are token sequences
/// averaged through an embedding table of vocab_size x embed_dim.
struct ModelSpec {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 16;
  std::vector<std::size_t> hidden_dims{32};
  std::size_t num_classes = 2;
  double compression_ratio = 1.0;
  SharingMode sharing = SharingMode::global;
  std::uint64_t seed = 0;
  double init_scale = 1.0;
  TileConfig tiles{8, 32, 8, 8};
  bool keep_dense_bias = false;
  bool use_sign_hash = true;
  bool deterministic = true;  // false: atomic gradient accumulation in matmul backward

  std::vector<std::size_t> layer_dims() const {
    std::vector<std::size_t> d{embed_dim};
    d.insert(d.end(), hidden_dims.begin(), hidden_dims.end());
    d.push_back(num_classes);
    return d;
  }

  void validate() const {
    if (embed_dim == 0 || num_classes < 2) throw ConfigError("model: embed_dim > 0 and num_classes >= 2 required");
    for (auto h : hidden_dims)
      if (h == 0) throw ConfigError("model: hidden widths must be positive");
    if (!(compression_ratio >= 1)) throw ConfigError("model: compression ratio must be at least 1");
    if (!(init_scale > 0)) throw ConfigError("model: init scale must be positive");
  }
};

/// Logical shapes in registration order: embedding, then per layer (weight, bias).
struct ParamInventory {
  std::vector<std::size_t> counts;       // every logical tensor
  std::vector<bool> compressed;          // false for dense-kept biases
  std::size_t total = 0;                 // all logical parameters
  std::size_t compressed_total = 0;      // parameters recovered from the store
};

inline ParamInventory inventory(const ModelSpec& spec) {
  ParamInventory inv;
  auto add = [&](std::size_t n, bool c) {
    inv.counts.push_back(n);
    inv.compressed.push_back(c);
    inv.total += n;
    if (c) inv.compressed_total += n;
  };
  if (spec.vocab_size > 0) add(spec.vocab_size * spec.embed_dim, true);
  const auto dims = spec.layer_dims();
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    add(dims[l] * dims[l + 1], true);
    add(dims[l + 1], !spec.keep_dense_bias);
  }
  return inv;
}

/// m = ceil(compressed params / ratio).
inline std::size_t memory_size(const ModelSpec& spec) {
  const auto inv = inventory(spec);
  return static_cast<std::size_t>(std::ceil(static_cast<double>(inv.compressed_total) / spec.compression_ratio));
}

/// Store sized for the spec; local mode receives segments proportional to binding sizes.
inline CompressedStore<double> make_store(const ModelSpec& spec) {
  spec.validate();
  const std::size_t m = memory_size(spec);
  if (spec.sharing == SharingMode::global) return create_store<double>(m, spec.init_scale, spec.seed);
  const auto inv = inventory(spec);
  std::vector<std::size_t> counts;
  for (std::size_t i = 0; i < inv.counts.size(); ++i)
    if (inv.compressed[i]) counts.push_back(inv.counts[i]);
  return create_store<double>(m, spec.init_scale, spec.seed, SharingMode::local, proportional_segments(m, counts));
}

struct StepResult {
  double loss = 0;
  std::size_t correct = 0;
};

/// Embedding-bag + MLP whose weights are all recovered from one compressed store.
class CompressedMlp {
 public:
  CompressedMlp(const ModelSpec& spec, CompressedStore<double> store) : spec_(spec), store_(std::move(store)) {
    spec_.validate();
    const auto dims = spec_.layer_dims();
    const BindingOptions opt{spec_.use_sign_hash, 4, 0};
    if (spec_.vocab_size > 0) {
      TileConfig t = spec_.tiles;
      t.chunk_len = std::min(t.chunk_len, spec_.embed_dim);
      embedding_ = store_.register_module(ModuleKind::lookup, {spec_.vocab_size, spec_.embed_dim}, spec_.embed_dim,
                                          t, opt);
    }
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      TileConfig t = spec_.tiles;
      t.z1 = std::min(t.z1, dims[l]);
      t.z2 = std::min(t.z2, dims[l + 1]);
      plans_.push_back(make_plan(store_.register_module(ModuleKind::matmul, {dims[l], dims[l + 1]}, dims[l], t, opt)));
      if (spec_.keep_dense_bias) {
        dense_bias_.emplace_back(dims[l + 1], 0.0);
        dense_bias_grad_.emplace_back(dims[l + 1], 0.0);
      } else {
        TileConfig bt = spec_.tiles;
        bt.chunk_len = std::min(bt.chunk_len, dims[l + 1]);
        bias_.push_back(store_.register_module(ModuleKind::lookup, {dims[l + 1]}, dims[l], bt, opt));
      }
    }
  }

  const ModelSpec& spec() const noexcept { return spec_; }
  CompressedStore<double>& store() noexcept { return store_; }
  const CompressedStore<double>& store() const noexcept { return store_; }
  const std::optional<ModuleBinding>& embedding() const noexcept { return embedding_; }
  const std::vector<MatmulPlan>& layers() const noexcept { return plans_; }
  const std::vector<ModuleBinding>& bias_bindings() const noexcept { return bias_; }
  std::size_t num_layers() const noexcept { return plans_.size(); }

  /// Sum of logical tensor sizes over every binding plus dense-kept biases.
  std::size_t logical_params() const {
    std::size_t n = embedding_ ? embedding_->param_count() : 0;
    for (const auto& p : plans_) n += p.binding.param_count();
    for (const auto& b : bias_) n += b.param_count();
    for (const auto& b : dense_bias_) n += b.size();
    return n;
  }

  double achieved_ratio() const {
    std::size_t compressed = logical_params();
    for (const auto& b : dense_bias_) compressed -= b.size();
    return static_cast<double>(compressed) / static_cast<double>(store_.size());
  }

  /// Bias of layer l, recovered from the store or read from the dense copy.
  std::vector<double> bias(std::size_t l) const {
    if (spec_.keep_dense_bias) return dense_bias_.at(l);
    const std::size_t zero = 0;
    const auto row = lookup_forward(store_, LookupRequest{bias_.at(l), std::span<const std::size_t>(&zero, 1)});
    return {row.values().begin(), row.values().end()};
  }

  std::vector<ParamBlock> blocks() {
    std::vector<ParamBlock> out{{store_.values(), store_.grads()}};
    for (std::size_t l = 0; l < dense_bias_.size(); ++l) out.push_back({dense_bias_[l], dense_bias_grad_[l]});
    return out;
  }

  void zero_grads() {
    store_.zero_grads();
    for (auto& g : dense_bias_grad_) std::fill(g.begin(), g.end(), 0.0);
  }

  Matrix<double> logits(const Dataset& batch) const {
    std::vector<Matrix<double>> acts;
    return forward(batch, acts);
  }

  /// Forward + backward on one batch; gradients accumulate into the store (and dense biases).
  StepResult loss_and_grad(const Dataset& batch) {
    std::vector<Matrix<double>> acts;
    const auto out = forward(batch, acts);
    auto ce = cross_entropy(out, batch.labels);
    Matrix<double> g = std::move(ce.grad);
    for (std::size_t l = plans_.size(); l-- > 0;) {
      if (l + 1 < plans_.size()) detail::relu_backward(g, acts[l + 1]);
      const auto gb = detail::column_sums(g);
      if (spec_.keep_dense_bias) {
        for (std::size_t c = 0; c < gb.size(); ++c) dense_bias_grad_[l][c] += gb[c];
      } else {
        Matrix<double> gbm(1, gb.size());
        std::copy(gb.begin(), gb.end(), gbm.values().begin());
        const std::size_t zero = 0;
        lookup_backward(store_, LookupRequest{bias_[l], std::span<const std::size_t>(&zero, 1)}, gbm);
      }
      g = roast_mm_backward(store_, plans_[l], acts[l], g,
                            spec_.deterministic ? Accumulation::deterministic : Accumulation::atomic);
    }
    if (embedding_) {
      const std::size_t L = batch.seq_len;
      Matrix<double> ge(batch.size() * L, spec_.embed_dim);
      const double inv = 1.0 / static_cast<double>(L);
      for (std::size_t r = 0; r < batch.size(); ++r)
        for (std::size_t p = 0; p < L; ++p)
          for (std::size_t c = 0; c < spec_.embed_dim; ++c) ge(r * L + p, c) = g(r, c) * inv;
      lookup_backward(store_, LookupRequest{*embedding_, batch.tokens}, ge);
    }
    return {ce.loss, ce.correct};
  }

 private:
  Matrix<double> embed(const Dataset& batch) const {
    if (!embedding_) {
      if (batch.tokenized() || batch.feature_dim != spec_.embed_dim)
        throw ShapeError("model expects dense inputs of width embed_dim");
      return batch.features;
    }
    if (!batch.tokenized()) throw ShapeError("model expects token sequences");
    detail::check_ids(batch, spec_.vocab_size);
    const auto rows = lookup_forward(store_, LookupRequest{*embedding_, batch.tokens});
    const std::size_t L = batch.seq_len;
    Matrix<double> e(batch.size(), spec_.embed_dim);
    const double inv = 1.0 / static_cast<double>(L);
    for (std::size_t r = 0; r < batch.size(); ++r)
      for (std::size_t p = 0; p < L; ++p)
        for (std::size_t c = 0; c < spec_.embed_dim; ++c) e(r, c) += rows(r * L + p, c) * inv;
    return e;
  }

  // acts[l] is the input of layer l.
  Matrix<double> forward(const Dataset& batch, std::vector<Matrix<double>>& acts) const {
    acts.clear();
    acts.push_back(embed(batch));
    for (std::size_t l = 0; l < plans_.size(); ++l) {
      Matrix<double> z = roast_mm_forward(store_, plans_[l], acts.back());
      detail::add_bias(z, bias(l));
      if (l + 1 < plans_.size()) {
        detail::relu_inplace(z);
        acts.push_back(std::move(z));
      } else {
        return z;
      }
    }
    return {};
  }

  ModelSpec spec_;
  CompressedStore<double> store_;
  std::optional<ModuleBinding> embedding_;
  std::vector<MatmulPlan> plans_;
  std::vector<ModuleBinding> bias_;
  std::vector<std::vector<double>> dense_bias_;
  std::vector<std::vector<double>> dense_bias_grad_;
};

inline CompressedMlp build_model(const ModelSpec& spec, CompressedStore<double> store) {
  return CompressedMlp(spec, std::move(store));
}

inline CompressedMlp build_model(const ModelSpec& spec) { return CompressedMlp(spec, make_store(spec)); }

/// Uncompressed reference with the same architecture and explicit weight tensors.
class DenseMlp {
 public:
  /// Xavier-style Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases.
  explicit DenseMlp(const ModelSpec& spec) : spec_(spec) {
    spec_.validate();
    std::mt19937_64 gen(hashing::mix_seed(spec.seed, 0xde5e));
    auto fill = [&](Matrix<double>& w, std::size_t fan_in) {
      std::uniform_real_distribution<double> u(-1.0 / std::sqrt(static_cast<double>(fan_in)),
                                               1.0 / std::sqrt(static_cast<double>(fan_in)));
      for (auto& v : w.values()) v = u(gen);
    };
    const auto dims = spec_.layer_dims();
    if (spec_.vocab_size > 0) {
      embedding_ = Matrix<double>(spec_.vocab_size, spec_.embed_dim);
      fill(embedding_, spec_.embed_dim);
    }
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
      weights_.emplace_back(dims[l], dims[l + 1]);
      fill(weights_.back(), dims[l]);
      biases_.emplace_back(dims[l + 1], 0.0);
    }
    alloc_grads();
  }

  /// Copies the logical tensors of a compressed model.
  explicit DenseMlp(const CompressedMlp& net) : spec_(net.spec()) {
    if (net.embedding()) embedding_ = materialize(net.store(), *net.embedding());
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
      weights_.push_back(materialize(net.store(), net.layers()[l]));
      biases_.push_back(net.bias(l));
    }
    alloc_grads();
  }

  const Matrix<double>& embedding_table() const noexcept { return embedding_; }
  const std::vector<Matrix<double>>& weights() const noexcept { return weights_; }
  const std::vector<std::vector<double>>& biases() const noexcept { return biases_; }

  std::size_t logical_params() const {
    std::size_t n = embedding_.size();
    for (const auto& w : weights_) n += w.size();
    for (const auto& b : biases_) n += b.size();
    return n;
  }

  std::vector<ParamBlock> blocks() {
    std::vector<ParamBlock> out;
    if (spec_.vocab_size > 0) out.push_back({embedding_.values(), g_embedding_.values()});
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      out.push_back({weights_[l].values(), g_weights_[l].values()});
      out.push_back({biases_[l], g_biases_[l]});
    }
    return out;
  }

  void zero_grads() {
    for (auto& v : g_embedding_.values()) v = 0;
    for (auto& g : g_weights_)
      for (auto& v : g.values()) v = 0;
    for (auto& g : g_biases_) std::fill(g.begin(), g.end(), 0.0);
  }

  Matrix<double> logits(const Dataset& batch) const {
    std::vector<Matrix<double>> acts;
    return forward(batch, acts);
  }

  StepResult loss_and_grad(const Dataset& batch) {
    std::vector<Matrix<double>> acts;
    const auto out = forward(batch, acts);
    auto ce = cross_entropy(out, batch.labels);
    Matrix<double> g = std::move(ce.grad);
    for (std::size_t l = weights_.size(); l-- > 0;) {
      if (l + 1 < weights_.size()) detail::relu_backward(g, acts[l + 1]);
      const auto gb = detail::column_sums(g);
      for (std::size_t c = 0; c < gb.size(); ++c) g_biases_[l][c] += gb[c];
      const auto& a = acts[l];
      const auto& w = weights_[l];
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t i = 0; i < w.rows(); ++i) {
          const double av = a(r, i);
          if (av == 0) continue;
          for (std::size_t j = 0; j < w.cols(); ++j) g_weights_[l](i, j) += av * g(r, j);
        }
      Matrix<double> ga(a.rows(), w.rows());
      for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t i = 0; i < w.rows(); ++i) {
          double s = 0;
          for (std::size_t j = 0; j < w.cols(); ++j) s += g(r, j) * w(i, j);
          ga(r, i) = s;
        }
      g = std::move(ga);
    }
    if (spec_.vocab_size > 0) {
      const std::size_t L = batch.seq_len;
      const double inv = 1.0 / static_cast<double>(L);
      for (std::size_t r = 0; r < batch.size(); ++r)
        for (std::size_t p = 0; p < L; ++p) {
          const auto id = batch.tokens[r * L + p];
          for (std::size_t c = 0; c < spec_.embed_dim; ++c) g_embedding_(id, c) += g(r, c) * inv;
        }
    }
    return {ce.loss, ce.correct};
  }

 private:
  void alloc_grads() {
    g_embedding_ = Matrix<double>(embedding_.rows(), embedding_.cols());
    for (const auto& w : weights_) g_weights_.emplace_back(w.rows(), w.cols());
    for (const auto& b : biases_) g_biases_.emplace_back(b.size(), 0.0);
  }

  Matrix<double> forward(const Dataset& batch, std::vector<Matrix<double>>& acts) const {
    acts.clear();
    if (spec_.vocab_size > 0) {
      if (!batch.tokenized()) throw ShapeError("model expects token sequences");
      detail::check_ids(batch, spec_.vocab_size);
      const std::size_t L = batch.seq_len;
      Matrix<double> e(batch.size(), spec_.embed_dim);
      const double inv = 1.0 / static_cast<double>(L);
      for (std::size_t r = 0; r < batch.size(); ++r)
        for (std::size_t p = 0; p < L; ++p)
          for (std::size_t c = 0; c < spec_.embed_dim; ++c) e(r, c) += embedding_(batch.tokens[r * L + p], c) * inv;
      acts.push_back(std::move(e));
    } else {
      if (batch.tokenized() || batch.feature_dim != spec_.embed_dim)
        throw ShapeError("model expects dense inputs of width embed_dim");
      acts.push_back(batch.features);
    }
    for (std::size_t l = 0; l < weights_.size(); ++l) {
      Matrix<double> z = dense_matmul(acts.back(), weights_[l]);
      detail::add_bias(z, biases_[l]);
      if (l + 1 == weights_.size()) return z;
      detail::relu_inplace(z);
      acts.push_back(std::move(z));
    }
    return {};
  }

  ModelSpec spec_;
  Matrix<double> embedding_;
  std::vector<Matrix<double>> weights_;
  std::vector<std::vector<double>> biases_;
  Matrix<double> g_embedding_;
  std::vector<Matrix<double>> g_weights_;
  std::vector<std::vector<double>> g_biases_;
};

// ---------------------------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;  // batch order
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::string split;  // "train" or "test"
  double loss = 0;
  double accuracy = 0;
  double wall_ms = 0;
};

struct TrainReport {
  std::vector<EpochRecord> history;
  double initial_test_loss = 0;
  double initial_test_accuracy = 0;
  double first_step_loss = NAN;
  double ratio = 1;
  std::string sharing = "dense";
  std::string optimizer;
  std::uint64_t seed = 0;

  double final_test_accuracy() const {
    for (auto it = history.rbegin(); it != history.rend(); ++it)
      if (it->split == "test") return it->accuracy;
    return initial_test_accuracy;
  }
  std::vector<double> losses(const std::string& split) const {
    std::vector<double> out;
    for (const auto& r : history)
      if (r.split == split) out.push_back(r.loss);
    return out;
  }
};

struct Evaluation {
  double loss = 0;
  double accuracy = 0;
};

template <class Net>
Evaluation evaluate(const Net& net, const Dataset& data, std::size_t chunk = 512) {
  if (data.size() == 0) return {};
  double loss = 0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t n = std::min(chunk, data.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    const auto batch = subset(data, idx);
    const auto ce = cross_entropy(net.logits(batch), batch.labels, false);
    loss += ce.loss * static_cast<double>(n);
    correct += ce.correct;
  }
  const double total = static_cast<double>(data.size());
  return {loss / total, static_cast<double>(correct) / total};
}

/// Minibatch loop: zero grads, forward, loss, backward, optimizer step. Batch order per epoch
/// is a Fisher-Yates shuffle seeded from (seed, epoch).
template <class Net>
TrainReport train(Net& net, const DatasetSplit& data, const TrainConfig& cfg) {
  if (cfg.batch_size == 0) throw ConfigError("batch size must be positive");
  if (data.train.size() == 0) throw ConfigError("empty training set");
  auto blocks = net.blocks();
  std::vector<std::size_t> sizes;
  for (const auto& b : blocks) sizes.push_back(b.values.size());
  Optimizer opt(cfg.optimizer, sizes);

  TrainReport report;
  report.optimizer = to_string(cfg.optimizer.kind);
  report.seed = cfg.seed;
  const auto initial = evaluate(net, data.test);
  report.initial_test_loss = initial.loss;
  report.initial_test_accuracy = initial.accuracy;

  std::vector<std::size_t> order(data.train.size());
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 gen(hashing::mix_seed(cfg.seed, epoch));
    std::shuffle(order.begin(), order.end(), gen);
    double loss_sum = 0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t n = std::min(cfg.batch_size, order.size() - start);
      const auto batch = subset(data.train, std::span<const std::size_t>(order).subspan(start, n));
      net.zero_grads();
      const auto r = net.loss_and_grad(batch);
      if (!std::isfinite(r.loss))
        throw TrainingError("loss became non-finite at epoch " + std::to_string(epoch) + ", step " +
                            std::to_string(step + 1) + "; lower the learning rate (currently " +
                            std::to_string(cfg.optimizer.lr()) + ")");
      if (step == 0) report.first_step_loss = r.loss;
      opt.step(blocks, ++step);
      loss_sum += r.loss * static_cast<double>(n);
      correct += r.correct;
    }
    const double train_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    const double n_train = static_cast<double>(order.size());
    report.history.push_back({epoch, "train", loss_sum / n_train, static_cast<double>(correct) / n_train, train_ms});
    const auto t1 = std::chrono::steady_clock::now();
    const auto ev = evaluate(net, data.test);
    const double test_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t1).count();
    report.history.push_back({epoch, "test", ev.loss, ev.accuracy, test_ms});
  }
  return report;
}

inline TrainReport train_compressed(CompressedMlp& net, const DatasetSplit& data, const TrainConfig& cfg) {
  auto report = train(net, data, cfg);
  report.ratio = net.achieved_ratio();
  report.sharing = net.spec().sharing == SharingMode::global ? "global" : "local";
  return report;
}

inline const std::vector<std::string>& train_csv_header() {
  static const std::vector<std::string> h{"epoch", "split", "loss", "accuracy", "wall_ms",
                                          "ratio", "sharing", "optimizer", "seed"};
  return h;
}

/// Writes report rows; with include_timing = false wall_ms is emitted as 0 so reruns are
/// byte-identical.
inline void write_train_csv(std::ostream& os, const TrainReport& r, bool include_timing, bool header = true) {
  if (header) csv::write_row(os, train_csv_header());
  for (const auto& e : r.history)
    csv::write_row(os, {csv::fmt(e.epoch), e.split, csv::fmt(e.loss), csv::fmt(e.accuracy),
                        csv::fmt(include_timing ? e.wall_ms : 0.0), csv::fmt(r.ratio), r.sharing, r.optimizer,
                        csv::fmt(r.seed)});
}

// ---------------------------------------------------------------------------------------------
// Global vs local sweep

/// True when a model with this spec can be built (tiles fit every segment).
inline bool feasible(const ModelSpec& spec) {
  try {
    (void)build_model(spec);
    return true;
  } catch (const GeometryError&) {
    return false;
  } catch (const CapacityError&) {
    return false;
  }
}

/// Largest compression ratio at which both sharing modes build with m >= 4 * largest tile.
inline double max_feasible_ratio(const ModelSpec& base) {
  const auto dims = base.layer_dims();
  std::size_t max_tile = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l)
    max_tile = std::max(max_tile, std::min(base.tiles.z1, dims[l]) * std::min(base.tiles.z2, dims[l + 1]));
  const auto total = static_cast<double>(inventory(base).compressed_total);
  for (std::size_t m = std::max<std::size_t>(1, 4 * max_tile); m <= inventory(base).compressed_total; ++m) {
    ModelSpec s = base;
    // Nudge above total/m so ceil(total / ratio) lands exactly on m.
    s.compression_ratio = std::max(1.0, total / static_cast<double>(m) * (1 + 1e-12));
    if (memory_size(s) != m) continue;
    s.sharing = SharingMode::global;
    if (!feasible(s)) continue;
    s.sharing = SharingMode::local;
    if (feasible(s)) return s.compression_ratio;
  }
  return 1.0;
}

struct ExperimentRow {
  double ratio = 1;           // requested
  double achieved_ratio = 1;  // logical / m
  std::string sharing;
  std::string seed;  // seed value, or "summary"
  double accuracy = 0;  // final test accuracy, or mean over seeds
  double std_dev = 0;   // summary rows only
};

/// For each ratio, sharing mode and seed: build, train, record final test accuracy; one
/// summary row (mean, sample std) per (ratio, sharing). The data seed stays fixed.
inline std::vector<ExperimentRow> gms_vs_lms_experiment(const ModelSpec& base, const DatasetSplit& data,
                                                        std::span<const double> ratios,
                                                        std::span<const std::uint64_t> seeds,
                                                        const TrainConfig& cfg) {
  if (ratios.empty() || seeds.empty()) throw ConfigError("experiment needs ratios and seeds");
  std::vector<ExperimentRow> rows;
  for (double ratio : ratios) {
    for (auto mode : {SharingMode::global, SharingMode::local}) {
      std::vector<double> acc;
      double achieved = 0;
      for (auto seed : seeds) {
        ModelSpec s = base;
        s.compression_ratio = ratio;
        s.sharing = mode;
        s.seed = seed;
        auto net = build_model(s);
        TrainConfig c = cfg;
        c.seed = seed;
        const auto rep = train_compressed(net, data, c);
        achieved = net.achieved_ratio();
        acc.push_back(rep.final_test_accuracy());
        rows.push_back({ratio, achieved, rep.sharing, std::to_string(seed), acc.back(), 0});
      }
      const double mean = std::accumulate(acc.begin(), acc.end(), 0.0) / static_cast<double>(acc.size());
      double var = 0;
      for (double a : acc) var += (a - mean) * (a - mean);
      const double sd = acc.size() > 1 ? std::sqrt(var / static_cast<double>(acc.size() - 1)) : 0.0;
      rows.push_back({ratio, achieved, mode == SharingMode::global ? "global" : "local", "summary", mean, sd});
    }
  }
  return rows;
}

inline void write_experiment_csv(std::ostream& os, std::span<const ExperimentRow> rows) {
  csv::write_row(os, {"ratio", "achieved_ratio", "sharing", "seed", "accuracy", "std"});
  for (const auto& r : rows)
    csv::write_row(os, {csv::fmt(r.ratio), csv::fmt(r.achieved_ratio), r.sharing, r.seed, csv::fmt(r.accuracy),
                        csv::fmt(r.std_dev)});
}

}  // namespace roast::train
