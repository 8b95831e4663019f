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
#include <span>
#include <string>
#include <vector>

#include "roast/csv.hpp"
#include "roast/errors.hpp"
#include "roast/hashing.hpp"

namespace roast::estimator {

/// A vector split into k consecutive pieces, each hashed into its own share of m slots.
struct PieceLayout {
  std::vector<std::size_t> piece_sizes;
  std::vector<double> fractions;
  std::size_t memory_m = 0;

  std::size_t k() const noexcept { return piece_sizes.size(); }

  std::size_t total_n() const noexcept {
    std::size_t n = 0;
    for (auto s : piece_sizes) n += s;
    return n;
  }

  std::size_t piece_offset(std::size_t l) const noexcept {
    std::size_t off = 0;
    for (std::size_t i = 0; i < l; ++i) off += piece_sizes[i];
    return off;
  }

  /// floor(f_l * m) slots; the last piece also takes the remainder so the shares sum to m.
  std::size_t piece_memory(std::size_t l) const noexcept {
    auto share = [&](std::size_t i) {
      return static_cast<std::size_t>(std::floor(fractions[i] * static_cast<double>(memory_m)));
    };
    if (l + 1 < k()) return share(l);
    std::size_t used = 0;
    for (std::size_t i = 0; i + 1 < k(); ++i) used += share(i);
    return memory_m - used;
  }

  /// Fraction of m the piece actually receives.
  double effective_fraction(std::size_t l) const noexcept {
    return static_cast<double>(piece_memory(l)) / static_cast<double>(memory_m);
  }

  void validate() const {
    if (piece_sizes.empty()) throw ConfigError("layout needs at least one piece");
    if (fractions.size() != piece_sizes.size()) throw ConfigError("layout: one fraction per piece required");
    if (memory_m == 0) throw ConfigError("layout: memory must be positive");
    double sum = 0;
    for (std::size_t l = 0; l < k(); ++l) {
      if (piece_sizes[l] == 0) throw ConfigError("layout: piece sizes must be positive");
      if (!(fractions[l] > 0) || fractions[l] > 1) throw ConfigError("layout: fractions must lie in (0, 1]");
      if (std::floor(fractions[l] * static_cast<double>(memory_m)) < 1)
        throw ConfigError("layout: every piece needs at least one memory slot");
      sum += fractions[l];
    }
    if (std::abs(sum - 1.0) > 1e-12) throw ConfigError("layout: fractions must sum to 1");
  }
};

inline PieceLayout make_layout(std::vector<std::size_t> piece_sizes, std::vector<double> fractions,
                               std::size_t m) {
  PieceLayout layout{std::move(piece_sizes), std::move(fractions), m};
  layout.validate();
  return layout;
}

/// k pieces of equal size and equal memory fraction.
inline PieceLayout uniform_layout(std::size_t k, std::size_t piece_size, std::size_t m) {
  return make_layout(std::vector<std::size_t>(k, piece_size), std::vector<double>(k, 1.0 / static_cast<double>(k)),
                     m);
}

/// Seeds of piece l under an LMS draw keyed on `seed`; piece 0 reuses the seed itself.
inline std::vector<std::uint64_t> piece_seeds(std::uint64_t seed, std::size_t k) {
  std::vector<std::uint64_t> out(k);
  for (std::size_t l = 0; l < k; ++l) out[l] = l == 0 ? seed : hashing::mix_seed(seed, l);
  return out;
}

namespace detail {

inline void check_same_length(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("x and y lengths differ");
}

inline void check_layout(std::span<const double> x, const PieceLayout& layout) {
  if (x.size() != layout.total_n()) throw ShapeError("vector length does not match the layout");
}

/// One hashed inner product draw with h = family(seed, 0), g = family(seed, 1).
/// `bx`, `by` are scratch buffers of at least m entries.
inline double hashed_inner(std::span<const double> x, std::span<const double> y, std::size_t m,
                           std::uint64_t seed, std::span<double> bx, std::span<double> by) {
  const hashing::HashFamily h(hashing::mix_seed(seed, 0), 4, hashing::HashKind::chunk1d);
  const hashing::HashFamily g(hashing::mix_seed(seed, 1), 4, hashing::HashKind::sign);
  std::fill_n(bx.begin(), m, 0.0);
  std::fill_n(by.begin(), m, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t b = static_cast<std::size_t>(h.raw(i) % m);
    const double s = g.bit(i) ? 1.0 : -1.0;
    bx[b] += s * x[i];
    by[b] += s * y[i];
  }
  double acc = 0;
  for (std::size_t j = 0; j < m; ++j) acc += bx[j] * by[j];
  return acc;
}

inline double lms_with_scratch(std::span<const double> x, std::span<const double> y, const PieceLayout& layout,
                               std::span<const std::uint64_t> seeds, std::span<double> bx, std::span<double> by) {
  double acc = 0;
  std::size_t off = 0;
  for (std::size_t l = 0; l < layout.k(); ++l) {
    const std::size_t n = layout.piece_sizes[l];
    acc += hashed_inner(x.subspan(off, n), y.subspan(off, n), layout.piece_memory(l), seeds[l], bx, by);
    off += n;
  }
  return acc;
}

inline double norm2(std::span<const double> a) {
  double s = 0;
  for (double v : a) s += v * v;
  return s;
}

inline double inner(std::span<const double> a, std::span<const double> b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace detail

/// Global sharing: all n coordinates hashed into one memory of m buckets (chunk size 1).
inline double gms_estimate(std::span<const double> x, std::span<const double> y, std::size_t m,
                           std::uint64_t seed) {
  detail::check_same_length(x, y);
  if (m == 0) throw ConfigError("memory must be positive");
  std::vector<double> bx(m), by(m);
  return detail::hashed_inner(x, y, m, seed, bx, by);
}

/// Local sharing: sum of per-piece global estimates, piece l using piece_memory(l) buckets and seeds[l].
inline double lms_estimate(std::span<const double> x, std::span<const double> y, const PieceLayout& layout,
                           std::span<const std::uint64_t> seeds) {
  detail::check_same_length(x, y);
  detail::check_layout(x, layout);
  if (seeds.size() != layout.k()) throw ShapeError("one seed per piece required");
  std::vector<double> bx(layout.memory_m), by(layout.memory_m);
  return detail::lms_with_scratch(x, y, layout, seeds, bx, by);
}

inline double lms_estimate(std::span<const double> x, std::span<const double> y, const PieceLayout& layout,
                           std::uint64_t seed) {
  const auto seeds = piece_seeds(seed, layout.k());
  return lms_estimate(x, y, layout, seeds);
}

/// V_l by its defining double sum over ordered pairs i != j, memory f*m.
inline double analytic_variance_piece(std::span<const double> a, std::span<const double> b, double f,
                                      std::size_t m) {
  detail::check_same_length(a, b);
  const double fm = f * static_cast<double>(m);
  if (!(fm >= 1.0 - 1e-12)) throw ConfigError("piece memory f*m must be at least 1");
  double s1 = 0, s2 = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a.size(); ++j) {
      if (i == j) continue;
      s1 += a[i] * a[i] * b[j] * b[j];
      s2 += a[i] * b[i] * a[j] * b[j];
    }
  return (s1 + s2) / fm;
}

/// Same quantity, O(n): (|a|^2 |b|^2 + <a,b>^2 - 2 sum a_i^2 b_i^2) / (f m).
inline double analytic_variance_piece_closed(std::span<const double> a, std::span<const double> b, double f,
                                             std::size_t m) {
  detail::check_same_length(a, b);
  const double fm = f * static_cast<double>(m);
  if (!(fm >= 1.0 - 1e-12)) throw ConfigError("piece memory f*m must be at least 1");
  double diag = 0;
  for (std::size_t i = 0; i < a.size(); ++i) diag += a[i] * a[i] * b[i] * b[i];
  const double ab = detail::inner(a, b);
  return (detail::norm2(a) * detail::norm2(b) + ab * ab - 2.0 * diag) / fm;
}

/// Exact variance of the global estimator from the whole vectors:
/// (1/m) sum_{i != j} (x_i^2 y_j^2 + x_i y_i x_j y_j).
inline double whole_vector_variance(std::span<const double> x, std::span<const double> y, std::size_t m) {
  return analytic_variance_piece(x, y, 1.0, m);
}

/// Piece-decomposed global variance:
/// sum_l f_l V_l + (1/m) sum_{l1 != l2} (|x_l1|^2 |y_l2|^2 + <x_l1,y_l1><x_l2,y_l2>).
inline double analytic_variance_gms(std::span<const double> x, std::span<const double> y,
                                    const PieceLayout& layout) {
  detail::check_same_length(x, y);
  detail::check_layout(x, layout);
  const std::size_t k = layout.k();
  std::vector<double> nx(k), ny(k), ip(k);
  double within = 0;
  for (std::size_t l = 0; l < k; ++l) {
    const auto xl = x.subspan(layout.piece_offset(l), layout.piece_sizes[l]);
    const auto yl = y.subspan(layout.piece_offset(l), layout.piece_sizes[l]);
    nx[l] = detail::norm2(xl);
    ny[l] = detail::norm2(yl);
    ip[l] = detail::inner(xl, yl);
    within += layout.fractions[l] * analytic_variance_piece(xl, yl, layout.fractions[l], layout.memory_m);
  }
  double cross = 0;
  for (std::size_t l1 = 0; l1 < k; ++l1)
    for (std::size_t l2 = 0; l2 < k; ++l2)
      if (l1 != l2) cross += nx[l1] * ny[l2] + ip[l1] * ip[l2];
  return within + cross / static_cast<double>(layout.memory_m);
}

/// Local variance: sum of piece variances at each piece's effective memory share.
inline double analytic_variance_lms(std::span<const double> x, std::span<const double> y,
                                    const PieceLayout& layout) {
  detail::check_same_length(x, y);
  detail::check_layout(x, layout);
  double acc = 0;
  for (std::size_t l = 0; l < layout.k(); ++l) {
    const auto xl = x.subspan(layout.piece_offset(l), layout.piece_sizes[l]);
    const auto yl = y.subspan(layout.piece_offset(l), layout.piece_sizes[l]);
    acc += analytic_variance_piece(xl, yl, layout.effective_fraction(l), layout.memory_m);
  }
  return acc;
}

enum class Estimator : std::uint8_t { gms, lms };

inline const char* to_string(Estimator e) { return e == Estimator::gms ? "gms" : "lms"; }

struct MomentReport {
  double estimator_mean = 0;
  double estimator_variance = 0;
  std::size_t trials = 0;
  double std_error_mean = 0;
  double std_error_var = 0;
  double analytic_expectation = 0;
  double analytic_variance = 0;

  /// |mean - E| measured in standard errors (0 when the estimate is constant and exact).
  double mean_z() const {
    const double d = std::abs(estimator_mean - analytic_expectation);
    return std_error_mean > 0 ? d / std_error_mean : (d < 1e-12 ? 0.0 : INFINITY);
  }
  double variance_z() const {
    const double d = std::abs(estimator_variance - analytic_variance);
    return std_error_var > 0 ? d / std_error_var : (d < 1e-12 ? 0.0 : INFINITY);
  }
};

inline constexpr std::size_t kMinTrials = 1000;

/// Sample moments of one estimator over independent hash draws, seed of trial t = mix(master, t).
/// Estimates are computed in parallel and reduced in trial order, so the report is deterministic.
inline MomentReport monte_carlo_moments(Estimator which, std::span<const double> x, std::span<const double> y,
                                        const PieceLayout& layout, std::size_t trials,
                                        std::uint64_t master_seed) {
  if (trials < kMinTrials) throw ConfigError("monte carlo needs at least 1000 trials");
  detail::check_same_length(x, y);
  detail::check_layout(x, layout);
  layout.validate();
  std::vector<double> est(trials);
  const std::size_t m = layout.memory_m;
  const std::int64_t n_trials = static_cast<std::int64_t>(trials);
#pragma omp parallel
  {
    std::vector<double> bx(m), by(m);
    std::vector<std::uint64_t> seeds(layout.k());
#pragma omp for schedule(static)
    for (std::int64_t t = 0; t < n_trials; ++t) {
      const std::uint64_t seed = hashing::mix_seed(master_seed, static_cast<std::uint64_t>(t));
      if (which == Estimator::gms) {
        est[t] = detail::hashed_inner(x, y, m, seed, bx, by);
      } else {
        for (std::size_t l = 0; l < seeds.size(); ++l) seeds[l] = l == 0 ? seed : hashing::mix_seed(seed, l);
        est[t] = detail::lms_with_scratch(x, y, layout, seeds, bx, by);
      }
    }
  }
  const double N = static_cast<double>(trials);
  double mean = 0;
  for (double e : est) mean += e;
  mean /= N;
  double m2 = 0, m4 = 0;
  for (double e : est) {
    const double d = (e - mean) * (e - mean);
    m2 += d;
    m4 += d * d;
  }
  MomentReport r;
  r.trials = trials;
  r.estimator_mean = mean;
  r.estimator_variance = m2 / (N - 1);
  r.std_error_mean = std::sqrt(r.estimator_variance / N);
  const double c2 = m2 / N, c4 = m4 / N;
  r.std_error_var = std::sqrt(std::max(c4 - c2 * c2, 0.0) / N);
  r.analytic_expectation = detail::inner(x, y);
  r.analytic_variance = which == Estimator::gms ? analytic_variance_gms(x, y, layout)
                                                : analytic_variance_lms(x, y, layout);
  return r;
}

// ---------------------------------------------------------------------------------------------
// Gap study

enum class NormProfile : std::uint8_t { equal_norm, gaussian };
enum class FractionMode : std::uint8_t { equal, random };

inline const char* to_string(NormProfile p) { return p == NormProfile::equal_norm ? "equal_norm" : "gaussian"; }
inline const char* to_string(FractionMode f) { return f == FractionMode::equal ? "equal" : "random"; }

struct GapStudyConfig {
  std::size_t k = 8;
  std::size_t piece_size = 32;
  std::size_t m = 64;
  std::size_t draws = 10000;
  NormProfile profile = NormProfile::equal_norm;
  FractionMode fractions = FractionMode::random;
  double alpha = 1.0;              // squared piece norm under equal_norm
  std::size_t sample_trials = 0;   // 0 skips the Monte Carlo columns
  std::uint64_t seed = 0;
};

struct GapRow {
  std::size_t layout_id = 0;
  PieceLayout layout;
  double v_g = 0;
  double v_l = 0;
  double sample_v_g = NAN;
  double sample_v_l = NAN;
  double neglected = 0;       // -2 sum x_i^2 y_i^2 / m over the whole vector
  double approx_residual = 0; // V_G - (k^2/m)(alpha^2 + beta^2), beta the mean piece inner product
  double gap() const { return v_l - v_g; }
};

struct GapStudyResult {
  GapStudyConfig config;
  std::vector<GapRow> rows;
  std::vector<std::size_t> exceptions;  // layout ids with V_L < V_G
  double fraction_l_ge_g() const {
    return rows.empty() ? 0.0 : 1.0 - static_cast<double>(exceptions.size()) / static_cast<double>(rows.size());
  }
};

namespace detail {

/// Dirichlet(1,...,1) fractions, redrawn until every piece gets at least one slot.
inline std::vector<double> random_fractions(std::size_t k, std::size_t m, std::mt19937_64& gen) {
  if (k > m) throw ConfigError("more pieces than memory slots");
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> f(k);
  while (true) {
    double sum = 0;
    for (auto& v : f) sum += (v = expo(gen));
    for (auto& v : f) v /= sum;
    double total = 0;
    for (std::size_t l = 0; l + 1 < k; ++l) total += f[l];
    f.back() = 1.0 - total;
    bool ok = true;
    for (double v : f) ok = ok && std::floor(v * static_cast<double>(m)) >= 1;
    if (ok) return f;
  }
}

inline std::vector<double> draw_piece(std::size_t n, NormProfile profile, double alpha, std::mt19937_64& gen) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& e : v) e = normal(gen);
  if (profile == NormProfile::equal_norm) {
    const double scale = std::sqrt(alpha / norm2(v));
    for (auto& e : v) e *= scale;
  }
  return v;
}

}  // namespace detail

/// Draws `draws` random (x, y, layout) triples and evaluates analytic V_G and V_L for each.
inline GapStudyResult gms_lms_gap_study(const GapStudyConfig& cfg) {
  if (cfg.k == 0 || cfg.piece_size == 0 || cfg.m == 0) throw ConfigError("gap study: k, piece size and m must be positive");
  if (cfg.k > cfg.m) throw ConfigError("gap study: more pieces than memory slots");
  if (!(cfg.alpha > 0)) throw ConfigError("gap study: alpha must be positive");
  if (cfg.sample_trials != 0 && cfg.sample_trials < kMinTrials)
    throw ConfigError("gap study: sample trials must be 0 or at least 1000");
  GapStudyResult result;
  result.config = cfg;
  result.rows.resize(cfg.draws);
  const std::int64_t draws = static_cast<std::int64_t>(cfg.draws);
  const double m = static_cast<double>(cfg.m);
  const double k = static_cast<double>(cfg.k);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::int64_t d = 0; d < draws; ++d) {
    const std::uint64_t seed = hashing::mix_seed(cfg.seed, static_cast<std::uint64_t>(d));
    std::mt19937_64 gen(seed);
    std::vector<double> x, y;
    for (std::size_t l = 0; l < cfg.k; ++l) {
      auto xl = detail::draw_piece(cfg.piece_size, cfg.profile, cfg.alpha, gen);
      auto yl = detail::draw_piece(cfg.piece_size, cfg.profile, cfg.alpha, gen);
      x.insert(x.end(), xl.begin(), xl.end());
      y.insert(y.end(), yl.begin(), yl.end());
    }
    std::vector<double> f = cfg.fractions == FractionMode::equal ? std::vector<double>(cfg.k, 1.0 / k)
                                                                 : detail::random_fractions(cfg.k, cfg.m, gen);
    GapRow& row = result.rows[static_cast<std::size_t>(d)];
    row.layout_id = static_cast<std::size_t>(d);
    row.layout = make_layout(std::vector<std::size_t>(cfg.k, cfg.piece_size), std::move(f), cfg.m);
    row.v_g = analytic_variance_gms(x, y, row.layout);
    row.v_l = analytic_variance_lms(x, y, row.layout);
    double diag = 0, beta = 0;
    for (std::size_t i = 0; i < x.size(); ++i) diag += x[i] * x[i] * y[i] * y[i];
    for (std::size_t l = 0; l < cfg.k; ++l)
      beta += detail::inner(std::span<const double>(x).subspan(l * cfg.piece_size, cfg.piece_size),
                            std::span<const double>(y).subspan(l * cfg.piece_size, cfg.piece_size));
    beta /= k;
    row.neglected = -2.0 * diag / m;
    row.approx_residual = row.v_g - (k * k / m) * (cfg.alpha * cfg.alpha + beta * beta);
    if (cfg.sample_trials > 0) {
      row.sample_v_g = monte_carlo_moments(Estimator::gms, x, y, row.layout, cfg.sample_trials, seed)
                           .estimator_variance;
      row.sample_v_l = monte_carlo_moments(Estimator::lms, x, y, row.layout, cfg.sample_trials, seed)
                           .estimator_variance;
    }
  }
  for (const auto& row : result.rows)
    if (row.v_l < row.v_g) result.exceptions.push_back(row.layout_id);
  return result;
}

inline const std::vector<std::string>& study_csv_header() {
  static const std::vector<std::string> h{"layout_id",    "k",            "m",          "n",
                                          "profile",      "V_G_analytic", "V_L_analytic", "sample_V_G",
                                          "sample_V_L",   "trials",       "seed"};
  return h;
}

inline void write_gap_csv(std::ostream& os, const GapStudyResult& r) {
  csv::write_row(os, study_csv_header());
  for (const auto& row : r.rows) {
    csv::write_row(os, {csv::fmt(row.layout_id), csv::fmt(row.layout.k()), csv::fmt(row.layout.memory_m),
                        csv::fmt(row.layout.total_n()), to_string(r.config.profile), csv::fmt(row.v_g),
                        csv::fmt(row.v_l), csv::fmt(row.sample_v_g), csv::fmt(row.sample_v_l),
                        csv::fmt(r.config.sample_trials), csv::fmt(r.config.seed)});
  }
}

/// Ratio V_L(after) / V_L(before) when piece 0's fraction is divided by `shrink` and the other
/// pieces share the freed memory in proportion to their fractions. V_G is returned for both layouts.
struct ShrinkResult {
  double v_l_before = 0, v_l_after = 0;
  double v_g_before = 0, v_g_after = 0;
  double v_piece_before = 0, v_piece_after = 0;
  double growth() const { return v_l_after / v_l_before; }
  double piece_growth() const { return v_piece_after / v_piece_before; }
};

inline ShrinkResult shrink_smallest_fraction(std::span<const double> x, std::span<const double> y,
                                             const PieceLayout& layout, double shrink) {
  if (!(shrink >= 1)) throw ConfigError("shrink factor must be at least 1");
  const auto smallest = static_cast<std::size_t>(
      std::min_element(layout.fractions.begin(), layout.fractions.end()) - layout.fractions.begin());
  PieceLayout after = layout;
  const double old_f = layout.fractions[smallest];
  const double new_f = old_f / shrink;
  for (std::size_t l = 0; l < after.k(); ++l)
    after.fractions[l] = l == smallest ? new_f : layout.fractions[l] * (1.0 - new_f) / (1.0 - old_f);
  after.validate();
  const auto off = layout.piece_offset(smallest);
  const auto n = layout.piece_sizes[smallest];
  ShrinkResult r;
  r.v_l_before = analytic_variance_lms(x, y, layout);
  r.v_l_after = analytic_variance_lms(x, y, after);
  r.v_g_before = analytic_variance_gms(x, y, layout);
  r.v_g_after = analytic_variance_gms(x, y, after);
  r.v_piece_before = analytic_variance_piece(x.subspan(off, n), y.subspan(off, n),
                                             layout.effective_fraction(smallest), layout.memory_m);
  r.v_piece_after = analytic_variance_piece(x.subspan(off, n), y.subspan(off, n),
                                            after.effective_fraction(smallest), after.memory_m);
  return r;
}

// ---------------------------------------------------------------------------------------------
// Norm preservation

struct NormPreservationResult {
  double global_success_rate = 0;
  double local_success_rate = 0;
  std::size_t trials = 0;
  /// Standard error of (global - local) treating the two rates as independent.
  double difference_std_error() const {
    const double n = static_cast<double>(trials);
    const double g = global_success_rate, l = local_success_rate;
    return std::sqrt((g * (1 - g) + l * (1 - l)) / n);
  }
};

/// Each trial draws a Gaussian x and one hash instance per scheme. Global succeeds when the
/// norm estimate into m slots is within eps*|x|^2; local succeeds when every piece's estimate
/// into m/k slots is within eps*|x_l|^2 of its own norm. Piece seeds follow piece_seeds(), so
/// k = 1 repeats the global experiment exactly.
inline NormPreservationResult norm_preservation_study(std::size_t n, std::size_t k, std::size_t m, double epsilon,
                                                      std::size_t trials, std::uint64_t seed) {
  if (k == 0 || n % k != 0) throw ConfigError("k must divide n");
  if (m < k) throw ConfigError("memory must give every piece a slot");
  if (trials == 0) throw ConfigError("trials must be positive");
  if (!(epsilon >= 0)) throw ConfigError("epsilon must be non-negative");
  const auto layout = uniform_layout(k, n / k, m);
  std::vector<unsigned char> g_ok(trials), l_ok(trials);
  const std::int64_t T = static_cast<std::int64_t>(trials);
#pragma omp parallel
  {
    std::vector<double> bx(m), by(m), x(n);
    std::normal_distribution<double> normal(0.0, 1.0);
#pragma omp for schedule(static)
    for (std::int64_t t = 0; t < T; ++t) {
      const std::uint64_t ts = hashing::mix_seed(seed, static_cast<std::uint64_t>(t));
      std::mt19937_64 gen(ts);
      for (auto& v : x) v = normal(gen);
      const std::span<const double> xs(x);
      const double full = detail::norm2(xs);
      const std::uint64_t gseed = hashing::mix_seed(ts, 1);
      const double est = detail::hashed_inner(xs, xs, m, gseed, bx, by);
      g_ok[t] = std::abs(est - full) <= epsilon * full;
      bool all = true;
      for (std::size_t l = 0; l < k && all; ++l) {
        const auto xl = xs.subspan(layout.piece_offset(l), layout.piece_sizes[l]);
        const double nl = detail::norm2(xl);
        const double el = detail::hashed_inner(xl, xl, layout.piece_memory(l),
                                               l == 0 ? gseed : hashing::mix_seed(gseed, l), bx, by);
        all = std::abs(el - nl) <= epsilon * nl;
      }
      l_ok[t] = all;
    }
  }
  NormPreservationResult r;
  r.trials = trials;
  double g = 0, l = 0;
  for (std::size_t t = 0; t < trials; ++t) {
    g += g_ok[t];
    l += l_ok[t];
  }
  r.global_success_rate = g / static_cast<double>(trials);
  r.local_success_rate = l / static_cast<double>(trials);
  return r;
}

}  // namespace roast::estimator
