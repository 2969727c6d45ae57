// Copyright 2026 The lssl Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include "lssl/report.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <stdexcept>

#include "lssl/linalg.hpp"

namespace lssl {
namespace {

TEST(ParallelFor, EverySlotOnceForAnyWorkerCount) {
  for (int workers : {1, 2, 5, 64}) {
    std::vector<int> hits(37, 0);
    parallel_for(hits.size(), workers, [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) EXPECT_EQ(h, 1);
  }
  parallel_for(0, 4, [](std::size_t) { FAIL(); });
}

TEST(ParallelFor, LowestFailingIndexRethrown) {
  for (int workers : {1, 3}) {
    std::atomic<int> ran{0};
    try {
      parallel_for(20, workers, [&](std::size_t i) {
        ++ran;
        if (i == 4 || i == 11) throw std::runtime_error("index " + std::to_string(i));
      });
      FAIL();
    } catch (const std::runtime_error& e) {
      EXPECT_STREQ(e.what(), "index 4");
    }
  }
}

TEST(Format, ShortestRoundTrip) {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const double x = rng.normal() * std::pow(10.0, rng.uniform(-30, 30));
    EXPECT_EQ(std::strtod(fmt(x).c_str(), nullptr), x);
  }
  EXPECT_EQ(fmt(0.1), "0.1");
  EXPECT_EQ(fmt(1.0), "1");
  EXPECT_EQ(fmt(std::nan("")), "nan");
  EXPECT_EQ(fmt(-std::numeric_limits<double>::infinity()), "-inf");
  EXPECT_TRUE(json_number(std::nan("")).is_null());
}

TEST(Report, CsvLayoutAndLookup) {
  AlignmentReport r;
  r.rows.push_back(make_row("full", 1, {1.0, 1.0}, {0.0, 0.0}, {{"seed", "0"}}));
  r.rows.push_back(make_row("full", 2, {0.5, 0.7}, {1.0, 3.0}, {{"seed", "0"}}));
  EXPECT_EQ(r.alignment_csv().substr(0, r.alignment_csv().find('\n')),
            "condition,layer,cosine_mean,ci_low,ci_high,frob_dist,seed");
  EXPECT_EQ(r.at("full", 2).frob_dist, 2.0);
  EXPECT_EQ(r.find("full", 3), nullptr);
  EXPECT_NE(r.find("full", 2, "seed", "0"), nullptr);
  EXPECT_EQ(r.find("full", 2, "seed", "1"), nullptr);
  EXPECT_THROW(r.at("relu", 1), ConfigError);
}

TEST(Report, CiBracketsMean) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> v;
    for (int i = 0; i < 2 + t; ++i) v.push_back(rng.uniform(-1, 1));
    const AlignmentRow row = make_row("c", 1, v, v);
    EXPECT_LE(row.cosine.ci_low, row.cosine.mean);
    EXPECT_GE(row.cosine.ci_high, row.cosine.mean);
  }
}

TEST(Report, PassedIgnoresAdvisoryChecks) {
  AlignmentReport r;
  r.add_check("a", true, "");
  r.add_check("advisory", false, "", false);
  EXPECT_TRUE(r.passed());
  r.add_check("b", false, "");
  EXPECT_FALSE(r.passed());
  EXPECT_FALSE(r.to_json()["passed"].get<bool>());
  ASSERT_NE(r.check("advisory"), nullptr);
  EXPECT_FALSE(r.check("advisory")->gating);
}

TEST(Report, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a_hex(""), "cbf29ce484222325");
  EXPECT_EQ(fnv1a_hex("a"), "af63dc4c8601ec8c");
}

}  // namespace
}  // namespace lssl
