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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <set>
#include <vector>

#include "roast/hashing.hpp"

namespace {

using roast::hashing::HashFamily;
using roast::hashing::HashKind;
using roast::hashing::hash_chunk;
using roast::hashing::hash_tile;
using roast::hashing::sign_hash;

// Upper chi-square quantile via the Wilson-Hilferty cube approximation.
double chi_square_critical(double df, double z) {
  const double a = 2.0 / (9.0 * df);
  return df * std::pow(1.0 - a + z * std::sqrt(a), 3.0);
}

constexpr double kZ001 = 3.090232;  // one-sided standard normal quantile at 0.001

class HashDegree : public ::testing::TestWithParam<int> {};

TEST_P(HashDegree, ChunkOffsetInRangeAndDeterministic) {
  const HashFamily f(7, GetParam(), HashKind::chunk1d);
  const auto v = hash_chunk(f, 0, 1024, 8);
  EXPECT_LE(v, 1016u);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(hash_chunk(f, 0, 1024, 8), v);
  EXPECT_EQ(hash_chunk(HashFamily(7, GetParam(), HashKind::chunk1d), 0, 1024, 8), v);
}

TEST_P(HashDegree, ChunkWithOneLegalOffsetIsZero) {
  const HashFamily f(7, GetParam(), HashKind::chunk1d);
  for (std::uint64_t c = 0; c < 1000; ++c) EXPECT_EQ(hash_chunk(f, c * 977, 8, 8), 0u);
}

TEST_P(HashDegree, ChunkUniformityPassesChiSquare) {
  const HashFamily f(11, GetParam(), HashKind::chunk1d);
  const std::size_t store_len = 264, chunk_len = 8;
  const std::size_t buckets = store_len - chunk_len + 1;
  std::vector<double> counts(buckets, 0.0);
  const std::size_t n = 1'000'000;
  for (std::uint64_t c = 0; c < n; ++c) counts[hash_chunk(f, c, store_len, chunk_len)] += 1;
  const double expected = static_cast<double>(n) / static_cast<double>(buckets);
  double chi2 = 0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, chi_square_critical(static_cast<double>(buckets - 1), kZ001));
}

TEST_P(HashDegree, TileCollisionsMatchBirthdayModel) {
  const HashFamily f(3, GetParam(), HashKind::tile2d);
  std::mt19937_64 gen(99);
  std::set<std::pair<std::uint64_t, std::uint64_t>> pairs;
  while (pairs.size() < 100'000) pairs.insert({gen() % (1u << 30), gen() % (1u << 30)});
  const std::size_t range = std::size_t{1} << 20;
  std::vector<std::size_t> offsets;
  for (auto [x, y] : pairs) offsets.push_back(hash_tile(f, x, y, range, 1));
  std::sort(offsets.begin(), offsets.end());
  double colliding_pairs = 0;
  for (std::size_t i = 0; i < offsets.size();) {
    std::size_t j = i;
    while (j < offsets.size() && offsets[j] == offsets[i]) ++j;
    const double run = static_cast<double>(j - i);
    colliding_pairs += run * (run - 1) / 2;
    i = j;
  }
  const double n = static_cast<double>(pairs.size());
  const double expected = n * (n - 1) / 2 / static_cast<double>(range);
  EXPECT_NEAR(colliding_pairs, expected, 3 * std::sqrt(expected));
}

TEST_P(HashDegree, SeedChangeMovesAlmostEveryTile) {
  const HashFamily a(1, GetParam(), HashKind::tile2d);
  const HashFamily b(2, GetParam(), HashKind::tile2d);
  std::mt19937_64 gen(5);
  int differ = 0;
  for (int i = 0; i < 10'000; ++i) {
    const auto x = gen() % 4096, y = gen() % 4096;
    differ += hash_tile(a, x, y, 1u << 20, 64) != hash_tile(b, x, y, 1u << 20, 64);
  }
  EXPECT_GE(differ, 9900);
}

TEST_P(HashDegree, SignIsBalancedAndSquaresToOne) {
  const HashFamily g(42, GetParam(), HashKind::sign);
  long long sum = 0;
  const long long n = 1'000'000;
  for (long long i = 0; i < n; ++i) {
    const int s = sign_hash(g, static_cast<std::uint64_t>(i));
    ASSERT_TRUE(s == 1 || s == -1);
    ASSERT_EQ(s * s, 1);
    sum += s;
  }
  EXPECT_LE(std::abs(static_cast<double>(sum)), 3.0 * std::sqrt(static_cast<double>(n)));
  EXPECT_EQ(sign_hash(g, 17, 4), sign_hash(g, 17, 4));
}

TEST_P(HashDegree, FuzzedOutputsStayInRange) {
  std::mt19937_64 gen(2024);
  for (int i = 0; i < 1'000'000; ++i) {
    const HashFamily f(gen(), GetParam(), i % 2 ? HashKind::chunk1d : HashKind::tile2d);
    const std::size_t store_len = 1 + gen() % 100'000;
    const std::size_t len = 1 + gen() % store_len;
    if (i % 2) {
      ASSERT_LE(hash_chunk(f, gen() >> 4, store_len, len) + len, store_len);
    } else {
      ASSERT_LE(hash_tile(f, gen() % (1u << 30), gen() % (1u << 30), store_len, len) + len, store_len);
    }
  }
}

TEST_P(HashDegree, ChunkLengthOnlyChangesTheModulus) {
  const HashFamily f(8, GetParam(), HashKind::chunk1d);
  for (std::uint64_t c = 0; c < 5000; ++c) {
    // same range store_len - chunk_len + 1 = 993
    EXPECT_EQ(hash_chunk(f, c, 1000, 8), hash_chunk(f, c, 1024, 32));
  }
}

INSTANTIATE_TEST_SUITE_P(Degrees, HashDegree, ::testing::Values(2, 4));

TEST(Hashing, FourWiseSignMomentsMatchIndependence) {
  // Over fresh families and random distinct 4-tuples, E[g(a)g(b)g(c)g(d)] = 0 and
  // E[g(a)g(b)] = 0, as under full independence.
  std::mt19937_64 gen(31337);
  const int trials = 200'000;
  double prod4 = 0, prod2 = 0, prod_sq = 0;
  for (int t = 0; t < trials; ++t) {
    const HashFamily g(gen(), 4, HashKind::sign);
    std::uint64_t k[4];
    do {
      for (auto& v : k) v = gen() % 1000;
    } while (k[0] == k[1] || k[0] == k[2] || k[0] == k[3] || k[1] == k[2] || k[1] == k[3] || k[2] == k[3]);
    const int s0 = sign_hash(g, k[0]), s1 = sign_hash(g, k[1]), s2 = sign_hash(g, k[2]), s3 = sign_hash(g, k[3]);
    prod4 += s0 * s1 * s2 * s3;
    prod2 += s0 * s1;
    prod_sq += s0 * s0 * s1 * s1;
  }
  const double se = 1.0 / std::sqrt(static_cast<double>(trials));
  EXPECT_LE(std::abs(prod4 / trials), 4 * se);
  EXPECT_LE(std::abs(prod2 / trials), 4 * se);
  EXPECT_DOUBLE_EQ(prod_sq / trials, 1.0);
}

TEST(Hashing, ErrorPaths) {
  EXPECT_THROW(HashFamily(1, 3, HashKind::sign), roast::ConfigError);
  const HashFamily chunk(1, 4, HashKind::chunk1d);
  const HashFamily tile(1, 4, HashKind::tile2d);
  EXPECT_THROW(hash_chunk(chunk, 0, 4, 8), roast::GeometryError);
  EXPECT_THROW(hash_tile(tile, 0, 0, 4, 8), roast::GeometryError);
  EXPECT_THROW(hash_tile(tile, std::uint64_t{1} << 30, 0, 64, 8), roast::GeometryError);
  EXPECT_THROW(hash_tile(chunk, 0, 0, 64, 8), roast::ConfigError);
  EXPECT_THROW(sign_hash(chunk, 0), roast::ConfigError);
}

TEST(Hashing, DerivedSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t module = 0; module < 1000; ++module) seen.insert(roast::hashing::mix_seed(123, module));
  EXPECT_EQ(seen.size(), 1000u);
}

}  // namespace
