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


// Alignment reports (per condition and layer), pass/fail checks, CSV/JSON
// output and a worker pool whose results do not depend on its size.

#ifndef LSSL_REPORT_HPP_
#define LSSL_REPORT_HPP_

#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lssl/stats.hpp"

namespace lssl {

/// Runs fn(0..n-1) on `workers` threads. Every index writes only its own
/// output slot, so results are identical for any worker count. The first
/// exception (lowest index) is rethrown after all workers finish.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
  for (std::size_t w = 0; w < count; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Shortest round-trip decimal text of a double ("nan" / "inf" spelled out).
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline nlohmann::json json_number(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

struct AlignmentRow {
  std::string condition;
  int layer = 0;  // 1-based
  Summary cosine;
  double frob_dist = 0.0;  // mean Frobenius distance to the BP update
  std::vector<std::pair<std::string, std::string>> extra;  // extra CSV columns
  std::vector<double> samples;  // per-batch (or per-seed) cosines
};

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
  bool gating = true;  // false: recorded measurement only
};

struct AlignmentReport {
  std::string experiment;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;
  std::string config_hash;
  std::vector<AlignmentRow> rows;
  std::vector<Check> checks;
  nlohmann::json metadata = nlohmann::json::object();

  bool passed() const {
    for (const auto& c : checks)
      if (c.gating && !c.passed) return false;
    return true;
  }

  const AlignmentRow* find(const std::string& condition, int layer) const {
    for (const auto& r : rows)
      if (r.condition == condition && r.layer == layer) return &r;
    return nullptr;
  }

  /// Row whose extra column `key` equals `value`.
  const AlignmentRow* find(const std::string& condition, int layer, const std::string& key,
                           const std::string& value) const {
    for (const auto& r : rows) {
      if (r.condition != condition || r.layer != layer) continue;
      for (const auto& [k, v] : r.extra)
        if (k == key && v == value) return &r;
    }
    return nullptr;
  }

  const AlignmentRow& at(const std::string& condition, int layer) const {
    const AlignmentRow* r = find(condition, layer);
    require(r != nullptr, "report: no row for " + condition + " layer " + std::to_string(layer));
    return *r;
  }

  const AlignmentRow& at(const std::string& condition, int layer, const std::string& key,
                         const std::string& value) const {
    const AlignmentRow* r = find(condition, layer, key, value);
    require(r != nullptr, "report: no row for " + condition + " layer " + std::to_string(layer) +
                              " with " + key + "=" + value);
    return *r;
  }

  const Check* check(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }

  void add_check(std::string name, bool ok, std::string detail, bool gating = true) {
    checks.push_back({std::move(name), ok, std::move(detail), gating});
  }

  /// condition, layer, cosine_mean, ci_low, ci_high, frob_dist, then the
  /// extra columns of the first row (all rows share them).
  std::string alignment_csv() const {
    std::ostringstream out;
    out << "condition,layer,cosine_mean,ci_low,ci_high,frob_dist";
    if (!rows.empty())
      for (const auto& [k, v] : rows.front().extra) out << ',' << k;
    out << '\n';
    for (const auto& r : rows) {
      out << r.condition << ',' << r.layer << ',' << fmt(r.cosine.mean) << ',' << fmt(r.cosine.ci_low)
          << ',' << fmt(r.cosine.ci_high) << ',' << fmt(r.frob_dist);
      for (const auto& [k, v] : r.extra) out << ',' << v;
      out << '\n';
    }
    return out.str();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["experiment"] = experiment;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    j["config"] = nlohmann::json::object();
    for (const auto& [k, v] : config) j["config"][k] = v;
    j["passed"] = passed();
    j["checks"] = nlohmann::json::array();
    for (const auto& c : checks)
      j["checks"].push_back({{"name", c.name}, {"passed", c.passed}, {"gating", c.gating}, {"detail", c.detail}});
    j["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json row{{"condition", r.condition},
                         {"layer", r.layer},
                         {"cosine_mean", json_number(r.cosine.mean)},
                         {"ci_low", json_number(r.cosine.ci_low)},
                         {"ci_high", json_number(r.cosine.ci_high)},
                         {"n", r.cosine.n},
                         {"frob_dist", json_number(r.frob_dist)}};
      for (const auto& [k, v] : r.extra) row[k] = v;
      nlohmann::json s = nlohmann::json::array();
      for (double x : r.samples) s.push_back(json_number(x));
      row["samples"] = s;
      j["rows"].push_back(row);
    }
    j["metadata"] = metadata;
    return j;
  }
};

/// Builds a row from per-batch cosines and Frobenius distances.
inline AlignmentRow make_row(std::string condition, int layer, const std::vector<double>& cosines,
                             const std::vector<double>& frob,
                             std::vector<std::pair<std::string, std::string>> extra = {}) {
  AlignmentRow r;
  r.condition = std::move(condition);
  r.layer = layer;
  r.cosine = summarize(cosines);
  r.frob_dist = frob.empty() ? 0.0 : pairwise_sum(frob) / static_cast<double>(frob.size());
  r.extra = std::move(extra);
  r.samples = cosines;
  return r;
}

/// 64-bit FNV-1a, hex encoded.
inline std::string fnv1a_hex(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace lssl

#endif  // LSSL_REPORT_HPP_
