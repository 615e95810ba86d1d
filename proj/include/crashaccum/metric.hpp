// Copyright 2026 The Crashaccum Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


// Stacktrace similarity and distance.
//
// Frames are compared through string keys (see FrameKey). The similarity of
// two key sequences A and B is a positionally weighted longest common
// subsequence: frame i carries weight decay^i, so frames near the crash site
// dominate. With W(X) the total weight of X,
//
//   similarity(A, B) = max_M sum_{(i,j) in M} min(w(i), w(j)) / max(W(A), W(B))
//
// where M ranges over common subsequences (strictly increasing index pairs
// with A[i] == B[j]). The value is 1 exactly when the key sequences are
// equal, and the distance is 1 - similarity.
//
// Everything that clusters or accumulates is written against an id-based
// metric (any callable `double(const std::string&, const std::string&)`), so
// tests can substitute a TableMetric for real stacktraces.

#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crashaccum/error.hpp"
#include "crashaccum/frame.hpp"

namespace crashaccum {

enum class KeyMode { kFunctionName, kFunctionOrModuleOffset };

inline std::string_view KeyModeName(KeyMode mode) {
  return mode == KeyMode::kFunctionName ? "function" : "module-offset";
}

inline KeyMode ParseKeyMode(std::string_view name) {
  if (name == "function") return KeyMode::kFunctionName;
  if (name == "module-offset") return KeyMode::kFunctionOrModuleOffset;
  throw Error(ErrorCode::kInvalidConfig, "unknown key mode '" + std::string(name) + "'");
}

struct MetricConfig {
  double decay = 0.9;
  KeyMode key_mode = KeyMode::kFunctionName;

  void validate() const {
    if (!(decay > 0.0 && decay <= 1.0)) {
      throw Error(ErrorCode::kInvalidConfig, "decay must lie in (0, 1]");
    }
  }

  friend bool operator==(const MetricConfig&, const MetricConfig&) = default;
};

struct ClusterFuzzConfig {
  int same_frame_threshold = 3;
  double compare_threshold = 0.7;

  void validate() const {
    if (same_frame_threshold < 1) {
      throw Error(ErrorCode::kInvalidConfig, "same_frame_threshold must be >= 1");
    }
    if (!(compare_threshold > 0.0 && compare_threshold <= 1.0)) {
      throw Error(ErrorCode::kInvalidConfig, "compare_threshold must lie in (0, 1]");
    }
  }
};

namespace detail {

inline std::string HexAddress(std::uint64_t address) {
  static constexpr char kHex[] = "0123456789abcdef";
  if (address == 0) return "0x0";
  std::string digits;
  while (address != 0) {
    digits.push_back(kHex[address & 0xf]);
    address >>= 4;
  }
  std::reverse(digits.begin(), digits.end());
  return "0x" + digits;
}

inline std::string ModuleOffsetKey(const Frame& frame) {
  return frame.module + "+" + HexAddress(frame.address);
}

}  // namespace detail

inline std::string FrameKey(const Frame& frame, KeyMode mode) {
  if (mode == KeyMode::kFunctionName) {
    return frame.function.empty() ? detail::ModuleOffsetKey(frame) : frame.function;
  }
  if (!frame.module.empty() || frame.function.empty()) {
    return detail::ModuleOffsetKey(frame);
  }
  return frame.function;
}

inline std::vector<std::string> KeySequence(const Stacktrace& trace, KeyMode mode) {
  std::vector<std::string> keys;
  keys.reserve(trace.size());
  for (const Frame& frame : trace.frames) keys.push_back(FrameKey(frame, mode));
  return keys;
}

// Positional weights decay^0, decay^1, ... for a sequence of length n.
inline std::vector<double> PositionWeights(std::size_t n, double decay) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = std::pow(decay, static_cast<double>(i));
  return w;
}

inline double KeySimilarity(std::span<const std::string> a, std::span<const std::string> b,
                            double decay) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::kEmptyTrace, "similarity of an empty trace");
  if (std::ranges::equal(a, b)) return 1.0;
  // Canonical argument order makes the floating-point evaluation symmetric.
  if (std::ranges::lexicographical_compare(b, a)) std::swap(a, b);

  const std::size_t n = a.size();
  const std::size_t m = b.size();
  const std::vector<double> w = PositionWeights(std::max(n, m), decay);

  // best[j] holds the optimum for prefixes a[0..i) and b[0..j).
  std::vector<double> prev(m + 1, 0.0);
  std::vector<double> cur(m + 1, 0.0);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = 0.0;
    for (std::size_t j = 1; j <= m; ++j) {
      double best = std::max(prev[j], cur[j - 1]);
      if (a[i - 1] == b[j - 1]) best = std::max(best, prev[j - 1] + std::min(w[i - 1], w[j - 1]));
      cur[j] = best;
    }
    std::swap(prev, cur);
  }

  double total_a = 0.0;
  double total_b = 0.0;
  for (std::size_t i = 0; i < n; ++i) total_a += w[i];
  for (std::size_t j = 0; j < m; ++j) total_b += w[j];
  const double s = prev[m] / std::max(total_a, total_b);
  // Unequal sequences never reach 1, even when tiny weights underflow.
  return std::min(s, std::nextafter(1.0, 0.0));
}

inline double Similarity(const Stacktrace& a, const Stacktrace& b, const MetricConfig& cfg = {}) {
  const auto ka = KeySequence(a, cfg.key_mode);
  const auto kb = KeySequence(b, cfg.key_mode);
  return KeySimilarity(ka, kb, cfg.decay);
}

inline double Dist(const Stacktrace& a, const Stacktrace& b, const MetricConfig& cfg = {}) {
  return 1.0 - Similarity(a, b, cfg);
}

inline std::size_t Levenshtein(std::string_view s1, std::string_view s2) {
  std::vector<std::size_t> prev(s2.size() + 1);
  std::vector<std::size_t> cur(s2.size() + 1);
  for (std::size_t j = 0; j <= s2.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= s1.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= s2.size(); ++j) {
      const std::size_t substitute = prev[j - 1] + (s1[i - 1] == s2[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, substitute});
    }
    std::swap(prev, cur);
  }
  return prev[s2.size()];
}

// Plain (unweighted) longest common subsequence length of two key sequences.
inline std::size_t LongestCommonSubsequence(std::span<const std::string> a,
                                            std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0);
  std::vector<std::size_t> cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Mean over aligned frames of (|f1| + |f2| - lev(f1, f2)) / (|f1| + |f2|).
// Two empty keys count as a perfect match.
inline double ClusterFuzzMeanRatio(std::span<const std::string> a,
                                   std::span<const std::string> b) {
  const std::size_t n = std::min(a.size(), b.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double total = static_cast<double>(a[i].size() + b[i].size());
    if (total == 0.0) {
      sum += 1.0;
      continue;
    }
    sum += (total - static_cast<double>(Levenshtein(a[i], b[i]))) / total;
  }
  return sum / static_cast<double>(n);
}

// ClusterFuzz-style "same crash" predicate over frame keys.
inline bool ClusterFuzzSameKeys(std::span<const std::string> a, std::span<const std::string> b,
                                const ClusterFuzzConfig& cfg = {}) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::kEmptyTrace, "comparison of an empty trace");
  const std::size_t top = std::min<std::size_t>({a.size(), b.size(), 3});
  if (std::equal(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(top), b.begin()) &&
      std::ranges::equal(a, b)) {
    return true;
  }
  if (LongestCommonSubsequence(a, b) > static_cast<std::size_t>(cfg.same_frame_threshold)) {
    return true;
  }
  return ClusterFuzzMeanRatio(a, b) > cfg.compare_threshold;
}

inline bool ClusterFuzzSame(const Stacktrace& a, const Stacktrace& b,
                            const ClusterFuzzConfig& cfg = {},
                            KeyMode mode = KeyMode::kFunctionName) {
  return ClusterFuzzSameKeys(KeySequence(a, mode), KeySequence(b, mode), cfg);
}

// Condensed upper-triangular distance matrix.
class DistanceMatrix {
 public:
  DistanceMatrix() = default;
  explicit DistanceMatrix(std::size_t n) : n_(n), values_(n < 2 ? 0 : n * (n - 1) / 2, 0.0) {}

  std::size_t size() const { return n_; }
  std::span<const double> values() const { return values_; }

  static std::size_t Index(std::size_t n, std::size_t i, std::size_t j) {
    if (i > j) std::swap(i, j);
    return i * n - i * (i + 1) / 2 + (j - i - 1);
  }

  double operator()(std::size_t i, std::size_t j) const {
    return i == j ? 0.0 : values_[Index(n_, i, j)];
  }

  void set(std::size_t i, std::size_t j, double value) {
    if (value < 0.0 || value > 1.0) {
      throw Error(ErrorCode::kInvalidConfig, "distance outside [0, 1]");
    }
    values_[Index(n_, i, j)] = value;
  }

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;
};

inline DistanceMatrix BuildDistanceMatrix(std::span<const Stacktrace> traces,
                                          const MetricConfig& cfg = {}) {
  std::vector<std::vector<std::string>> keys;
  keys.reserve(traces.size());
  for (const Stacktrace& t : traces) {
    if (t.empty()) throw Error(ErrorCode::kEmptyTrace, "distance matrix over an empty trace");
    keys.push_back(KeySequence(t, cfg.key_mode));
  }
  DistanceMatrix m(traces.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    for (std::size_t j = i + 1; j < keys.size(); ++j) {
      m.set(i, j, 1.0 - KeySimilarity(keys[i], keys[j], cfg.decay));
    }
  }
  return m;
}

// A distance over element ids.
template <class M>
concept IdMetric = requires(const M& metric, const std::string& a, const std::string& b) {
  { metric(a, b) } -> std::convertible_to<double>;
};

template <IdMetric M>
DistanceMatrix BuildDistanceMatrix(std::span<const std::string> ids, const M& metric) {
  DistanceMatrix m(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    for (std::size_t j = i + 1; j < ids.size(); ++j) m.set(i, j, metric(ids[i], ids[j]));
  }
  return m;
}

// Explicit symmetric table of distances; d(x, x) = 0 implicitly.
class TableMetric {
 public:
  TableMetric() = default;
  TableMetric(std::initializer_list<std::tuple<std::string, std::string, double>> entries) {
    for (const auto& [a, b, d] : entries) set(a, b, d);
  }

  void set(const std::string& a, const std::string& b, double d) { table_[Key(a, b)] = d; }

  double operator()(const std::string& a, const std::string& b) const {
    if (a == b) return 0.0;
    const auto it = table_.find(Key(a, b));
    if (it == table_.end()) {
      throw Error(ErrorCode::kInvalidConfig, "no distance for (" + a + ", " + b + ")");
    }
    return it->second;
  }

 private:
  static std::pair<std::string, std::string> Key(const std::string& a, const std::string& b) {
    return a < b ? std::pair{a, b} : std::pair{b, a};
  }

  std::map<std::pair<std::string, std::string>, double> table_;
};

// Stacktrace distance keyed by report id, memoized per unordered pair.
// Not thread-safe: the cache is mutated on lookup.
class TraceMetric {
 public:
  explicit TraceMetric(MetricConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const MetricConfig& config() const { return cfg_; }

  void add(const std::string& id, const Stacktrace& trace) {
    if (trace.empty()) throw Error(ErrorCode::kEmptyTrace, "trace " + id + " has no frames");
    keys_[id] = KeySequence(trace, cfg_.key_mode);
  }

  bool contains(const std::string& id) const { return keys_.contains(id); }

  double operator()(const std::string& a, const std::string& b) const {
    if (a == b) return 0.0;
    auto key = a < b ? std::pair{a, b} : std::pair{b, a};
    if (const auto it = cache_.find(key); it != cache_.end()) return it->second;
    const double d = 1.0 - KeySimilarity(lookup(key.first), lookup(key.second), cfg_.decay);
    cache_.emplace(std::move(key), d);
    return d;
  }

 private:
  struct PairHash {
    std::size_t operator()(const std::pair<std::string, std::string>& p) const {
      const std::size_t h = std::hash<std::string>{}(p.first);
      return h ^ (std::hash<std::string>{}(p.second) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2));
    }
  };

  const std::vector<std::string>& lookup(const std::string& id) const {
    const auto it = keys_.find(id);
    if (it == keys_.end()) throw Error(ErrorCode::kInvalidStore, "unknown trace id " + id);
    return it->second;
  }

  MetricConfig cfg_;
  std::unordered_map<std::string, std::vector<std::string>> keys_;
  mutable std::unordered_map<std::pair<std::string, std::string>, double, PairHash> cache_;
};

}  // namespace crashaccum
