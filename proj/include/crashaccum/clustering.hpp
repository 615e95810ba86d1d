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


// Complete-linkage agglomerative clustering with a strict threshold cut,
// cluster geometry, exact and crashline deduplication, and silhouette.

#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crashaccum/error.hpp"
#include "crashaccum/metric.hpp"
#include "crashaccum/report.hpp"

namespace crashaccum {

inline constexpr double kDefaultThreshold = 0.3;

struct Cluster {
  std::uint64_t id = 0;
  std::vector<std::string> members;
  double diameter = 0.0;

  friend bool operator==(const Cluster&, const Cluster&) = default;
};

struct DendrogramStep {
  std::size_t left = 0;  // node ids: leaves 0..n-1, step k creates node n+k
  std::size_t right = 0;
  double height = 0.0;
  std::size_t size = 0;
};

using Dendrogram = std::vector<DendrogramStep>;

struct FlatClustering {
  std::vector<std::uint64_t> assignment;        // element index -> cluster id (1-based)
  std::vector<std::vector<std::size_t>> groups;  // groups[id - 1] = sorted element indices
  Dendrogram dendrogram;
};

inline void ValidateThreshold(double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::kInvalidThreshold, "threshold must lie in (0, 1]");
  }
}

template <IdMetric M>
double Diameter(std::span<const std::string> members, const M& metric) {
  double diameter = 0.0;
  for (std::size_t i = 0; i < members.size(); ++i) {
    for (std::size_t j = i + 1; j < members.size(); ++j) {
      diameter = std::max(diameter, static_cast<double>(metric(members[i], members[j])));
    }
  }
  return diameter;
}

// Largest distance between an element of `a` and an element of `b`.
template <IdMetric M>
double ClusterDistance(std::span<const std::string> a, std::span<const std::string> b,
                       const M& metric) {
  double distance = 0.0;
  for (const auto& x : a) {
    for (const auto& y : b) distance = std::max(distance, static_cast<double>(metric(x, y)));
  }
  return distance;
}

// Agglomerates all n elements (n - 1 merges) and cuts the dendrogram so that
// only merges with height < threshold are kept. At each step the pair of
// active clusters with the smallest linkage is merged; ties go to the pair
// with the smallest (i, j) where a cluster is named by its smallest element.
// Flat cluster ids are numbered by smallest element index.
inline FlatClustering HierarchicalCluster(const DistanceMatrix& matrix, double threshold) {
  ValidateThreshold(threshold);
  const std::size_t n = matrix.size();
  FlatClustering result;
  if (n == 0) return result;

  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> link(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) link[i * n + j] = link[j * n + i] = matrix(i, j);
  }
  std::vector<bool> active(n, true);
  std::vector<std::size_t> node(n);
  std::vector<std::size_t> size(n, 1);
  std::iota(node.begin(), node.end(), 0);

  // Nearest active partner with a larger index, per row.
  std::vector<std::size_t> nearest(n, n);
  std::vector<double> nearest_dist(n, kInf);
  auto refresh = [&](std::size_t i) {
    nearest[i] = n;
    nearest_dist[i] = kInf;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (active[j] && link[i * n + j] < nearest_dist[i]) {
        nearest_dist[i] = link[i * n + j];
        nearest[i] = j;
      }
    }
  };
  for (std::size_t i = 0; i < n; ++i) refresh(i);

  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };

  for (std::size_t step = 0; step + 1 < n; ++step) {
    std::size_t a = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (active[i] && nearest[i] != n && (a == n || nearest_dist[i] < nearest_dist[a])) a = i;
    }
    const std::size_t b = nearest[a];
    const double height = nearest_dist[a];

    result.dendrogram.push_back({node[a], node[b], height, size[a] + size[b]});
    if (height < threshold) parent[find(b)] = find(a);

    active[b] = false;
    node[a] = n + step;
    size[a] += size[b];
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == a) continue;
      const double merged = std::max(link[a * n + k], link[b * n + k]);
      link[a * n + k] = link[k * n + a] = merged;
    }
    refresh(a);
    for (std::size_t k = 0; k < a; ++k) {
      if (active[k] && (nearest[k] == a || nearest[k] == b)) refresh(k);
    }
    for (std::size_t k = a + 1; k < b; ++k) {
      if (active[k] && nearest[k] == b) refresh(k);
    }
  }

  std::map<std::size_t, std::uint64_t> root_id;
  result.assignment.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [it, inserted] = root_id.try_emplace(find(i), root_id.size() + 1);
    if (inserted) result.groups.emplace_back();
    result.assignment[i] = it->second;
    result.groups[it->second - 1].push_back(i);
  }
  return result;
}

// Clusters `ids` under `metric` and returns the flat clusters with ids
// first_id, first_id + 1, ... in order of their smallest element.
template <IdMetric M>
std::vector<Cluster> ClusterIds(std::span<const std::string> ids, const M& metric,
                                double threshold, std::uint64_t first_id = 1) {
  const FlatClustering flat = HierarchicalCluster(BuildDistanceMatrix(ids, metric), threshold);
  std::vector<Cluster> clusters;
  for (const auto& group : flat.groups) {
    Cluster cluster;
    cluster.id = first_id + clusters.size();
    for (std::size_t index : group) cluster.members.push_back(ids[index]);
    cluster.diameter = Diameter(std::span<const std::string>(cluster.members), metric);
    clusters.push_back(std::move(cluster));
  }
  return clusters;
}

struct DedupResult {
  std::vector<CrashReport> unique;
  std::map<std::string, std::string> dup_map;  // dropped id -> representative id
};

// One representative per fingerprint, first occurrence wins. Reports share
// an id exactly when their fingerprints agree, so a dropped report maps to a
// representative with the same id.
inline DedupResult DedupExact(std::span<const CrashReport> reports) {
  DedupResult result;
  std::set<std::string> seen;
  for (const CrashReport& report : reports) {
    if (seen.insert(report.id).second) {
      result.unique.push_back(report);
    } else {
      result.dup_map[report.id] = report.id;
    }
  }
  return result;
}

inline std::vector<CrashReport> CrashlineDedup(std::span<const CrashReport> members) {
  std::vector<CrashReport> retained;
  std::set<std::string> seen;
  for (const CrashReport& report : members) {
    if (report.crashline.empty() || seen.insert(report.crashline).second) {
      retained.push_back(report);
    }
  }
  return retained;
}

struct SilhouetteReport {
  double score = 0.0;
  std::vector<double> cluster_means;  // mean s(x) per input cluster
};

// Mean silhouette over all elements. Singletons score 0, and the whole
// score is 0 with fewer than two clusters or two elements.
template <IdMetric M>
SilhouetteReport SilhouetteDetail(std::span<const Cluster> clusters, const M& metric) {
  SilhouetteReport report;
  report.cluster_means.assign(clusters.size(), 0.0);
  std::size_t total = 0;
  for (const Cluster& c : clusters) total += c.members.size();
  if (clusters.size() < 2 || total < 2) return report;

  double sum = 0.0;
  for (std::size_t ci = 0; ci < clusters.size(); ++ci) {
    const auto& own = clusters[ci].members;
    double cluster_sum = 0.0;
    for (const auto& x : own) {
      if (own.size() < 2) continue;
      double a = 0.0;
      for (const auto& y : own) {
        if (&y != &x) a += metric(x, y);
      }
      a /= static_cast<double>(own.size() - 1);
      double b = std::numeric_limits<double>::infinity();
      for (std::size_t cj = 0; cj < clusters.size(); ++cj) {
        if (cj == ci || clusters[cj].members.empty()) continue;
        double mean = 0.0;
        for (const auto& y : clusters[cj].members) mean += metric(x, y);
        b = std::min(b, mean / static_cast<double>(clusters[cj].members.size()));
      }
      const double denom = std::max(a, b);
      const double s = denom == 0.0 ? 0.0 : (b - a) / denom;
      cluster_sum += s;
    }
    if (!own.empty()) report.cluster_means[ci] = cluster_sum / static_cast<double>(own.size());
    sum += cluster_sum;
  }
  report.score = sum / static_cast<double>(total);
  return report;
}

template <IdMetric M>
double Silhouette(std::span<const Cluster> clusters, const M& metric) {
  return SilhouetteDetail(clusters, metric).score;
}

}  // namespace crashaccum
